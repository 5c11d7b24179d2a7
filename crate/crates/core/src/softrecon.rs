//! Deterministic differentiable reconstruction: a mass-splitting relaxation
//! of classical backtracking, its analytic reverse-mode gradient, and a
//! finite-difference oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{sample_instances, KnapsackInstance, SamplerConfig};
use crate::oracle::DpTables;

#[derive(Debug, Error, PartialEq)]
pub enum SoftReconError {
    #[error("probability table is {got_rows}x{got_cols}, instance needs {rows}x{cols}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error("probability {value} at row {row}, column {col} outside [0, 1]")]
    ProbOutOfRange { row: usize, col: usize, value: f64 },
    #[error("cotangent has {got} entries, instance has {expected} items")]
    CotangentLengthMismatch { expected: usize, got: usize },
    #[error("finite-difference step must be in (0, 0.5), got {0}")]
    InvalidStepSize(f64),
}

/// Real-valued decision probabilities in `[0, 1]`, one row per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct DecisionProbTable {
    probs: Vec<Vec<f64>>,
}

impl DecisionProbTable {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self, SoftReconError> {
        for (row, cells) in probs.iter().enumerate() {
            if cells.len() != probs[0].len() {
                return Err(SoftReconError::DimensionMismatch {
                    rows: probs.len(),
                    cols: probs[0].len(),
                    got_rows: probs.len(),
                    got_cols: cells.len(),
                });
            }
            for (col, &value) in cells.iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    return Err(SoftReconError::ProbOutOfRange { row, col, value });
                }
            }
        }
        Ok(DecisionProbTable { probs })
    }

    /// Casts an oracle bit table to probabilities.
    pub fn from_bits(decision_table: &[Vec<u8>]) -> Self {
        DecisionProbTable {
            probs: decision_table
                .iter()
                .map(|row| row.iter().map(|&b| f64::from(b)).collect())
                .collect(),
        }
    }

    /// Uniformly random table shaped for `instance`, entries in `[low, high)`.
    pub fn random(
        instance: &KnapsackInstance,
        low: f64,
        high: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols = instance.effective_capacity() + 1;
        DecisionProbTable {
            probs: (0..instance.n())
                .map(|_| (0..cols).map(|_| rng.gen_range(low..high)).collect())
                .collect(),
        }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.probs
    }

    fn check_shape(&self, instance: &KnapsackInstance) -> Result<(), SoftReconError> {
        let rows = instance.n();
        let cols = instance.effective_capacity() + 1;
        let got_rows = self.probs.len();
        let got_cols = self.probs.first().map_or(cols, Vec::len);
        if got_rows != rows || (rows > 0 && got_cols != cols) {
            return Err(SoftReconError::DimensionMismatch {
                rows,
                cols,
                got_rows,
                got_cols,
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<Vec<f64>>> for DecisionProbTable {
    type Error = SoftReconError;

    fn try_from(probs: Vec<Vec<f64>>) -> Result<Self, SoftReconError> {
        DecisionProbTable::new(probs)
    }
}

impl From<DecisionProbTable> for Vec<Vec<f64>> {
    fn from(table: DecisionProbTable) -> Self {
        table.probs
    }
}

/// Output of the forward relaxation.
///
/// `reach_mass` is `(n + 1) x (C_eff + 1)`: row `n` is the start row with
/// all mass at `C_eff`, row 0 is the terminal row, and every row sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftReconResult {
    /// Expected inclusion of each item, in `[0, 1]`.
    pub soft_selected: Vec<f64>,
    pub reach_mass: Vec<Vec<f64>>,
}

impl SoftReconResult {
    /// Largest deviation of any row sum from 1.
    pub fn row_mass_error(&self) -> f64 {
        self.reach_mass
            .iter()
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

// Inclusion probability at (item row i0, capacity c): the table entry with
// infeasible inclusions masked to 0 so no mass leaves the column range.
#[inline]
fn masked_prob(probs: &[Vec<f64>], weights: &[u32], i0: usize, c: usize) -> f64 {
    if (weights[i0] as usize) <= c {
        probs[i0][c]
    } else {
        0.0
    }
}

/// Forward mass-splitting recursion.
///
/// Starting from unit mass at `(n, C_eff)`, each item row splits the mass
/// at every reachable state between the include branch (shift left by the
/// item weight) and the exclude branch, proportionally to the decision
/// probability. Uses only additions and multiplications of the inputs, so
/// every output is polynomial in the probability entries.
pub fn soft_reconstruct(
    instance: &KnapsackInstance,
    probs: &DecisionProbTable,
) -> Result<SoftReconResult, SoftReconError> {
    probs.check_shape(instance)?;
    let n = instance.n();
    let cap = instance.effective_capacity();
    let weights = instance.weights();
    let table = probs.rows();

    let mut reach_mass = vec![vec![0.0f64; cap + 1]; n + 1];
    reach_mass[n][cap] = 1.0;
    let mut soft_selected = vec![0.0f64; n];

    for i in (1..=n).rev() {
        let w = weights[i - 1] as usize;
        let mut expected = 0.0f64;
        for c in 0..=cap {
            let mass = reach_mass[i][c];
            if mass == 0.0 {
                continue;
            }
            let d = masked_prob(table, weights, i - 1, c);
            let include = mass * d;
            if w <= c {
                reach_mass[i - 1][c - w] += include;
            }
            reach_mass[i - 1][c] += mass * (1.0 - d);
            expected += include;
        }
        soft_selected[i - 1] = expected;
    }

    Ok(SoftReconResult {
        soft_selected,
        reach_mass,
    })
}

/// Vector-Jacobian product of the relaxation.
///
/// Returns `d(sum_i cotangent[i] * soft_selected[i]) / d probs[i][c]` via
/// an exact reverse sweep over the forward recursion: reach-mass adjoints
/// propagate from row 0 back to row `n`, and each feasible cell's gradient
/// is its forward mass times the local sensitivity. Infeasible cells are
/// exactly zero.
pub fn soft_reconstruct_vjp(
    instance: &KnapsackInstance,
    probs: &DecisionProbTable,
    cotangent: &[f64],
) -> Result<Vec<Vec<f64>>, SoftReconError> {
    probs.check_shape(instance)?;
    let n = instance.n();
    if cotangent.len() != n {
        return Err(SoftReconError::CotangentLengthMismatch {
            expected: n,
            got: cotangent.len(),
        });
    }
    let cap = instance.effective_capacity();
    let weights = instance.weights();
    let table = probs.rows();

    let forward = soft_reconstruct(instance, probs)?;
    let reach = &forward.reach_mass;

    let mut grad = vec![vec![0.0f64; cap + 1]; n];
    // adjoint of the row below the one being processed; row 0 is terminal
    let mut adj_below = vec![0.0f64; cap + 1];
    for i in 1..=n {
        let w = weights[i - 1] as usize;
        let lambda = cotangent[i - 1];
        let mut adj_here = vec![0.0f64; cap + 1];
        for c in 0..=cap {
            if w <= c {
                let d = table[i - 1][c];
                grad[i - 1][c] = reach[i][c] * (lambda + adj_below[c - w] - adj_below[c]);
                adj_here[c] = d * (lambda + adj_below[c - w]) + (1.0 - d) * adj_below[c];
            } else {
                // masked cell: the probability entry has no effect and the
                // state can only take the exclude branch
                adj_here[c] = adj_below[c];
            }
        }
        adj_below = adj_here;
    }

    Ok(grad)
}

/// Finite-difference gradient with its skip report.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDiffGrad {
    /// Central-difference estimates; skipped entries hold 0.
    pub grad: Vec<Vec<f64>>,
    /// Entries whose probability was not inside `(h, 1 - h)` and could not
    /// be perturbed without leaving `[0, 1]`.
    pub skipped: Vec<(usize, usize)>,
}

/// Central finite differences of `sum_i cotangent[i] * soft_selected[i]`
/// with step `h`, one entry at a time. Entries outside `(h, 1 - h)` are
/// skipped rather than clipped.
pub fn finite_difference_grad(
    instance: &KnapsackInstance,
    probs: &DecisionProbTable,
    cotangent: &[f64],
    h: f64,
) -> Result<FiniteDiffGrad, SoftReconError> {
    if !(h > 0.0 && h < 0.5) {
        return Err(SoftReconError::InvalidStepSize(h));
    }
    probs.check_shape(instance)?;
    let n = instance.n();
    if cotangent.len() != n {
        return Err(SoftReconError::CotangentLengthMismatch {
            expected: n,
            got: cotangent.len(),
        });
    }
    let cap = instance.effective_capacity();

    let objective = |table: &DecisionProbTable| -> Result<f64, SoftReconError> {
        let result = soft_reconstruct(instance, table)?;
        Ok(result
            .soft_selected
            .iter()
            .zip(cotangent)
            .map(|(s, l)| s * l)
            .sum())
    };

    let mut grad = vec![vec![0.0f64; cap + 1]; n];
    let mut skipped = Vec::new();
    let mut work = probs.clone();
    for (i, grad_row) in grad.iter_mut().enumerate() {
        for (c, slot) in grad_row.iter_mut().enumerate() {
            let p = probs.rows()[i][c];
            if p <= h || p >= 1.0 - h {
                skipped.push((i, c));
                continue;
            }
            work.probs[i][c] = p + h;
            let plus = objective(&work)?;
            work.probs[i][c] = p - h;
            let minus = objective(&work)?;
            work.probs[i][c] = p;
            *slot = (plus - minus) / (2.0 * h);
        }
    }

    Ok(FiniteDiffGrad { grad, skipped })
}

/// Thresholds a probability table to bits; entries `>= threshold` become 1.
pub fn harden(probs: &DecisionProbTable, threshold: f64) -> Vec<Vec<u8>> {
    probs
        .rows()
        .iter()
        .map(|row| row.iter().map(|&p| u8::from(p >= threshold)).collect())
        .collect()
}

/// Casts an oracle decision table into the relaxation's input type.
pub fn probs_from_tables(tables: &DpTables) -> DecisionProbTable {
    DecisionProbTable::from_bits(&tables.decision_table)
}

/// Result of a randomized gradient check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub max_rel_err: f64,
    pub skipped_entries: usize,
}

/// Per-entry error between the analytic and finite-difference gradients,
/// relative to the larger magnitude. Entries where both sides are exactly
/// zero (masked or unreachable cells) score 0.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-12);
    (analytic - numeric).abs() / denom
}

/// Runs `trials` randomized comparisons of [`soft_reconstruct_vjp`] against
/// [`finite_difference_grad`] with a cotangent of ones. Instances draw
/// `n in 1..=max_n` and `capacity in 1..=max_capacity`; probabilities are
/// uniform on `[0.1, 0.9]`.
pub fn gradient_check(
    max_n: usize,
    max_capacity: u64,
    trials: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport, SoftReconError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel_err = 0.0f64;
    let mut skipped_entries = 0usize;

    for trial in 0..trials {
        let config = SamplerConfig {
            n: rng.gen_range(1..=max_n.max(1)),
            capacity: rng.gen_range(1..=max_capacity.max(1)),
            num_samples: 1,
            seed: rng.gen(),
            ..SamplerConfig::default()
        };
        let instance = sample_instances(&config)
            .expect("sampler config is valid by construction")
            .remove(0);
        let probs = DecisionProbTable::random(&instance, 0.1, 0.9, seed ^ trial as u64);
        let cotangent = vec![1.0; instance.n()];

        let analytic = soft_reconstruct_vjp(&instance, &probs, &cotangent)?;
        let numeric = finite_difference_grad(&instance, &probs, &cotangent, h)?;
        skipped_entries += numeric.skipped.len();

        let mut skip = numeric.skipped.iter().peekable();
        for (i, analytic_row) in analytic.iter().enumerate() {
            for (c, &entry) in analytic_row.iter().enumerate() {
                if skip.peek() == Some(&&(i, c)) {
                    skip.next();
                    continue;
                }
                let err = relative_error(entry, numeric.grad[i][c]);
                max_rel_err = max_rel_err.max(err);
            }
        }
    }

    Ok(GradCheckReport {
        trials,
        max_rel_err,
        skipped_entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::sample_instances;
    use crate::oracle::{backtrack, build_dp};
    use proptest::prelude::*;

    fn instance_a() -> KnapsackInstance {
        KnapsackInstance::new("a", vec![2, 3], vec![0.6, 0.7], 4, 8).unwrap()
    }

    fn single_item_instance() -> KnapsackInstance {
        KnapsackInstance::new("s", vec![1], vec![0.5], 1, 8).unwrap()
    }

    #[test]
    fn hard_table_reproduces_backtracking() {
        let inst = instance_a();
        let tables = build_dp(&inst);
        let result = soft_reconstruct(&inst, &probs_from_tables(&tables)).unwrap();
        assert_eq!(result.soft_selected, vec![0.0, 1.0]);
        assert_eq!(result.reach_mass[1], vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        let sol = backtrack(&inst, &tables).unwrap();
        let rounded: Vec<u8> = result
            .soft_selected
            .iter()
            .map(|&s| u8::from(s >= 0.5))
            .collect();
        assert_eq!(rounded, sol.selected);
    }

    #[test]
    fn zero_probs_exclude_everything() {
        let inst = instance_a();
        let probs = DecisionProbTable::new(vec![vec![0.0; 5]; 2]).unwrap();
        let result = soft_reconstruct(&inst, &probs).unwrap();
        assert_eq!(result.soft_selected, vec![0.0, 0.0]);
        // mass flows straight down the C_eff column
        for row in &result.reach_mass {
            assert_eq!(row[4], 1.0);
            assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn single_item_splits_mass() {
        let inst = single_item_instance();
        let probs = DecisionProbTable::new(vec![vec![0.0, 0.5]]).unwrap();
        let result = soft_reconstruct(&inst, &probs).unwrap();
        assert_eq!(result.soft_selected, vec![0.5]);
        assert_eq!(result.reach_mass[0], vec![0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_shapes_and_ranges() {
        let inst = instance_a();
        let narrow = DecisionProbTable::new(vec![vec![0.5; 4]; 2]).unwrap();
        assert!(matches!(
            soft_reconstruct(&inst, &narrow),
            Err(SoftReconError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            DecisionProbTable::new(vec![vec![1.5; 5]; 2]),
            Err(SoftReconError::ProbOutOfRange { .. })
        ));
        assert!(matches!(
            DecisionProbTable::new(vec![vec![f64::NAN; 5]; 2]),
            Err(SoftReconError::ProbOutOfRange { .. })
        ));
        let probs = DecisionProbTable::new(vec![vec![0.5; 5]; 2]).unwrap();
        assert!(matches!(
            soft_reconstruct_vjp(&inst, &probs, &[1.0]),
            Err(SoftReconError::CotangentLengthMismatch { .. })
        ));
    }

    #[test]
    fn vjp_single_cell_is_linear() {
        let inst = single_item_instance();
        let probs = DecisionProbTable::new(vec![vec![0.0, 0.5]]).unwrap();
        let grad = soft_reconstruct_vjp(&inst, &probs, &[1.0]).unwrap();
        assert_eq!(grad[0][1], 1.0);
        // the c=0 cell is masked (w=1 > 0)
        assert_eq!(grad[0][0], 0.0);
    }

    #[test]
    fn vjp_zero_cotangent_is_zero() {
        let inst = instance_a();
        let probs = DecisionProbTable::random(&inst, 0.1, 0.9, 5);
        let grad = soft_reconstruct_vjp(&inst, &probs, &[0.0, 0.0]).unwrap();
        assert!(grad.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn fd_single_cell_matches_slope() {
        let inst = single_item_instance();
        let probs = DecisionProbTable::new(vec![vec![0.0, 0.5]]).unwrap();
        let fd = finite_difference_grad(&inst, &probs, &[1.0], 1e-6).unwrap();
        assert!((fd.grad[0][1] - 1.0).abs() <= 1e-6);
        // p=0 entry cannot be perturbed
        assert_eq!(fd.skipped, vec![(0, 0)]);
    }

    #[test]
    fn fd_rejects_bad_step() {
        let inst = single_item_instance();
        let probs = DecisionProbTable::new(vec![vec![0.0, 0.5]]).unwrap();
        assert!(matches!(
            finite_difference_grad(&inst, &probs, &[1.0], 0.0),
            Err(SoftReconError::InvalidStepSize(_))
        ));
    }

    #[test]
    fn vjp_matches_fd_on_instance_a_at_half() {
        let inst = instance_a();
        let probs = DecisionProbTable::new(vec![vec![0.5; 5]; 2]).unwrap();
        let cotangent = [1.0, 1.0];
        let analytic = soft_reconstruct_vjp(&inst, &probs, &cotangent).unwrap();
        let numeric = finite_difference_grad(&inst, &probs, &cotangent, 1e-6).unwrap();
        assert!(numeric.skipped.is_empty());
        for (i, analytic_row) in analytic.iter().enumerate() {
            for (c, &entry) in analytic_row.iter().enumerate() {
                let err = relative_error(entry, numeric.grad[i][c]);
                assert!(
                    err < 1e-5,
                    "entry ({i},{c}): analytic {entry} vs fd {}",
                    numeric.grad[i][c]
                );
            }
        }
    }

    #[test]
    fn gradient_check_passes() {
        let report = gradient_check(4, 8, 10, 1e-6, 99).unwrap();
        assert_eq!(report.trials, 10);
        assert!(report.max_rel_err < 1e-5, "max err {}", report.max_rel_err);
    }

    #[test]
    fn harden_thresholds() {
        let probs = DecisionProbTable::new(vec![vec![0.4, 0.6]]).unwrap();
        assert_eq!(harden(&probs, 0.5), vec![vec![0, 1]]);
        let boundary = DecisionProbTable::new(vec![vec![0.5]]).unwrap();
        assert_eq!(harden(&boundary, 0.5), vec![vec![1]]);

        let inst = instance_a();
        let tables = build_dp(&inst);
        assert_eq!(
            harden(&probs_from_tables(&tables), 0.5),
            tables.decision_table
        );
    }

    #[test]
    fn forward_is_polynomial_in_probs() {
        // n=1: soft_selected[0] = p, so scaling the entry scales the output
        let inst = single_item_instance();
        for &p in &[0.125, 0.25, 0.5] {
            let probs = DecisionProbTable::new(vec![vec![0.0, p]]).unwrap();
            let result = soft_reconstruct(&inst, &probs).unwrap();
            assert_eq!(result.soft_selected[0], p);
        }
    }

    proptest! {
        #[test]
        fn mass_is_conserved(
            n in 1usize..8,
            cap in 1u64..14,
            seed in 0u64..500,
        ) {
            let config = SamplerConfig {
                n,
                capacity: cap,
                num_samples: 1,
                seed,
                ..SamplerConfig::default()
            };
            let inst = &sample_instances(&config).unwrap()[0];
            let probs = DecisionProbTable::random(inst, 0.0, 1.0, seed ^ 0xABCD);
            let result = soft_reconstruct(inst, &probs).unwrap();
            prop_assert!(result.row_mass_error() <= 1e-9);
            for &s in &result.soft_selected {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
            }
        }

        #[test]
        fn hard_tables_stay_hard(
            n in 1usize..10,
            cap in 0u64..16,
            seed in 0u64..500,
        ) {
            let config = SamplerConfig {
                n,
                capacity: cap,
                num_samples: 1,
                seed,
                ..SamplerConfig::default()
            };
            let inst = &sample_instances(&config).unwrap()[0];
            let tables = build_dp(inst);
            let sol = backtrack(inst, &tables).unwrap();
            let result = soft_reconstruct(inst, &probs_from_tables(&tables)).unwrap();
            for (s, &bit) in result.soft_selected.iter().zip(&sol.selected) {
                prop_assert_eq!(*s, f64::from(bit));
            }
        }
    }
}
