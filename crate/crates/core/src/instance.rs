//! Problem instances, experiment samplers, and reductions from Subset Sum
//! and Partition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised when constructing or sampling instances.
#[derive(Debug, Error, PartialEq)]
pub enum InstanceError {
    #[error("weights and values differ in length ({weights} vs {values})")]
    LengthMismatch { weights: usize, values: usize },
    #[error("weight {weight} at index {index} outside 1..={w_max}")]
    WeightOutOfRange {
        index: usize,
        weight: u32,
        w_max: u32,
    },
    #[error("value {value} at index {index} is negative or non-finite")]
    NegativeOrNonFiniteValue { index: usize, value: f64 },
    #[error("capacity {capacity} is negative")]
    NegativeCapacity { capacity: i64 },
    #[error("w_max must be at least 1")]
    InvalidWMax,
    #[error("declared n={declared} does not match {actual} weights")]
    DeclaredCountMismatch { declared: usize, actual: usize },
    #[error("invalid sampler config: {0}")]
    InvalidSamplerConfig(String),
}

/// A 0/1 knapsack instance: integer weights bounded by `w_max`, real
/// non-negative values, and an integer capacity.
///
/// Instances are immutable once constructed and always satisfy
/// `weights.len() == values.len()`, `1 <= weights[i] <= w_max`,
/// `values[i] >= 0` and finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceRecord", into = "InstanceRecord")]
pub struct KnapsackInstance {
    id: String,
    weights: Vec<u32>,
    values: Vec<f64>,
    capacity: u64,
    w_max: u32,
}

/// Wire form of an instance, one object per JSONL line.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    id: String,
    n: usize,
    capacity: i64,
    w_max: u32,
    weights: Vec<u32>,
    values: Vec<f64>,
}

impl TryFrom<InstanceRecord> for KnapsackInstance {
    type Error = InstanceError;

    fn try_from(rec: InstanceRecord) -> Result<Self, InstanceError> {
        if rec.n != rec.weights.len() {
            return Err(InstanceError::DeclaredCountMismatch {
                declared: rec.n,
                actual: rec.weights.len(),
            });
        }
        KnapsackInstance::new(rec.id, rec.weights, rec.values, rec.capacity, rec.w_max)
    }
}

impl From<KnapsackInstance> for InstanceRecord {
    fn from(inst: KnapsackInstance) -> Self {
        InstanceRecord {
            n: inst.n(),
            id: inst.id,
            capacity: inst.capacity as i64,
            w_max: inst.w_max,
            weights: inst.weights,
            values: inst.values,
        }
    }
}

impl KnapsackInstance {
    /// Validates and builds an instance. `capacity` is taken as a signed
    /// integer so that negative inputs surface as a typed error rather
    /// than a deserialization failure.
    pub fn new(
        id: impl Into<String>,
        weights: Vec<u32>,
        values: Vec<f64>,
        capacity: i64,
        w_max: u32,
    ) -> Result<Self, InstanceError> {
        if weights.len() != values.len() {
            return Err(InstanceError::LengthMismatch {
                weights: weights.len(),
                values: values.len(),
            });
        }
        if w_max < 1 {
            return Err(InstanceError::InvalidWMax);
        }
        if capacity < 0 {
            return Err(InstanceError::NegativeCapacity { capacity });
        }
        for (index, &weight) in weights.iter().enumerate() {
            if weight < 1 || weight > w_max {
                return Err(InstanceError::WeightOutOfRange {
                    index,
                    weight,
                    w_max,
                });
            }
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(InstanceError::NegativeOrNonFiniteValue { index, value });
            }
        }
        Ok(KnapsackInstance {
            id: id.into(),
            weights,
            values,
            capacity: capacity as u64,
            w_max,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Number of items.
    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[u32] {
        &self.weights
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn w_max(&self) -> u32 {
        self.w_max
    }

    /// Capacity clamp `min(n * w_max, capacity)`. All DP tables use this
    /// value as their column extent.
    pub fn effective_capacity(&self) -> usize {
        let bound = self.n() * self.w_max as usize;
        bound.min(self.capacity as usize)
    }
}

/// A (possibly fractional-free) selection of items with its totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    /// One bit per item, 1 = selected.
    pub selected: Vec<u8>,
    pub total_weight: u64,
    pub total_value: f64,
}

impl Solution {
    /// Builds a solution from a selection bit vector, summing weights and
    /// values in increasing item order (the same order the DP accumulates
    /// them, so totals match table entries bit for bit).
    pub fn from_selection(instance: &KnapsackInstance, selected: Vec<u8>) -> Self {
        debug_assert_eq!(selected.len(), instance.n());
        let mut total_weight = 0u64;
        let mut total_value = 0.0f64;
        for (i, &bit) in selected.iter().enumerate() {
            if bit == 1 {
                total_weight += u64::from(instance.weights[i]);
                total_value += instance.values[i];
            }
        }
        Solution {
            selected,
            total_weight,
            total_value,
        }
    }

    pub fn empty(n: usize) -> Self {
        Solution {
            selected: vec![0; n],
            total_weight: 0,
            total_value: 0.0,
        }
    }
}

/// Configuration for the uniform experiment sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub n: usize,
    pub capacity: u64,
    pub w_max: u32,
    pub value_low: f64,
    pub value_high: f64,
    /// Multiplier applied to the value interval (e.g. 10 for scaled-value
    /// generalization experiments).
    pub value_scale: f64,
    pub num_samples: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n: 16,
            capacity: 16,
            w_max: 8,
            value_low: 0.0,
            value_high: 1.0,
            value_scale: 1.0,
            num_samples: 64,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), InstanceError> {
        if self.num_samples < 1 {
            return Err(InstanceError::InvalidSamplerConfig(
                "num_samples must be >= 1".into(),
            ));
        }
        if self.w_max < 1 {
            return Err(InstanceError::InvalidSamplerConfig(
                "w_max must be >= 1".into(),
            ));
        }
        if !self.value_low.is_finite() || !self.value_high.is_finite() || self.value_low < 0.0 {
            return Err(InstanceError::InvalidSamplerConfig(
                "value interval must be finite and non-negative".into(),
            ));
        }
        if self.value_low >= self.value_high {
            return Err(InstanceError::InvalidSamplerConfig(
                "value_low must be < value_high".into(),
            ));
        }
        if !self.value_scale.is_finite() || self.value_scale <= 0.0 {
            return Err(InstanceError::InvalidSamplerConfig(
                "value_scale must be positive and finite".into(),
            ));
        }
        Ok(())
    }
}

/// splitmix64 finalizer. Sub-seed for sample `k` is
/// `mix(seed ^ (k + 1) * 0x9E3779B97F4A7C15)`, giving each sample an
/// independent stream regardless of generation order.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ (index.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `num_samples` instances: weights i.i.d. uniform on `1..=w_max`,
/// values i.i.d. uniform on `[value_low * value_scale, value_high * value_scale)`.
/// Fully deterministic given `config.seed`; each sample uses its own
/// sub-seeded generator.
pub fn sample_instances(config: &SamplerConfig) -> Result<Vec<KnapsackInstance>, InstanceError> {
    config.validate()?;
    let low = config.value_low * config.value_scale;
    let high = config.value_high * config.value_scale;
    let mut out = Vec::with_capacity(config.num_samples);
    for k in 0..config.num_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(config.seed, k as u64));
        let weights: Vec<u32> = (0..config.n)
            .map(|_| rng.gen_range(1..=config.w_max))
            .collect();
        let values: Vec<f64> = (0..config.n).map(|_| rng.gen_range(low..high)).collect();
        let id = format!(
            "n{}-c{}-s{}-{}",
            config.n, config.capacity, config.seed, k
        );
        out.push(KnapsackInstance::new(
            id,
            weights,
            values,
            config.capacity as i64,
            config.w_max,
        )?);
    }
    Ok(out)
}

/// Reduces a Subset Sum instance to knapsack: weights and values are the
/// numbers themselves, capacity is the target. The subset-sum instance is
/// solvable iff the optimal knapsack value equals `target`.
pub fn reduce_subset_sum(
    id: impl Into<String>,
    numbers: &[u32],
    target: u64,
) -> Result<KnapsackInstance, InstanceError> {
    let w_max = numbers.iter().copied().max().unwrap_or(1).max(1);
    KnapsackInstance::new(
        id,
        numbers.to_vec(),
        numbers.iter().map(|&x| f64::from(x)).collect(),
        target as i64,
        w_max,
    )
}

/// Reduces a Partition instance to knapsack via Subset Sum with target
/// `sum / 2`. The returned flag is 0 when the total is odd, in which case
/// the instance targets `floor(sum / 2)` and is provably unsolvable as a
/// partition; it is 1 otherwise.
pub fn reduce_partition(
    id: impl Into<String>,
    numbers: &[u32],
) -> Result<(KnapsackInstance, u8), InstanceError> {
    let sum: u64 = numbers.iter().map(|&x| u64::from(x)).sum();
    let feasible_parity = u8::from(sum.is_multiple_of(2));
    let instance = reduce_subset_sum(id, numbers, sum / 2)?;
    Ok((instance, feasible_parity))
}
