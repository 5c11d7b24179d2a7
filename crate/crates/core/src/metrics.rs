//! Evaluation: micro-F1 over item selections, greedy discretization, and
//! exact-match accuracy against the canonical backtracking solution.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{PredictionRecord, SolvedInstance};
use crate::instance::{KnapsackInstance, Solution};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("prediction and truth lengths differ ({predicted} vs {truth})")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("probability at index {index} is not finite")]
    NonFiniteProb { index: usize },
    #[error("no truth record for prediction id {0:?}")]
    MissingTruth(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
}

/// Globally aggregated positive-class counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct F1Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl F1Counts {
    pub fn add_sample(&mut self, predicted: &[u8], truth: &[u8]) -> Result<(), MetricsError> {
        if predicted.len() != truth.len() {
            return Err(MetricsError::LengthMismatch {
                predicted: predicted.len(),
                truth: truth.len(),
            });
        }
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p != 0, t != 0) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => {}
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: F1Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    /// `2TP / (2TP + FP + FN)`; 1.0 when no positives exist anywhere, so
    /// an all-correct empty prediction is not penalized.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

/// Micro-F1 over flat selection bits, positive class = item selected.
pub fn micro_f1(predicted: &[u8], truth: &[u8]) -> Result<f64, MetricsError> {
    let mut counts = F1Counts::default();
    counts.add_sample(predicted, truth)?;
    Ok(counts.f1())
}

/// How the greedy pass treats an item that no longer fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GreedyMode {
    /// Skip it and keep scanning; later smaller items may still enter.
    #[default]
    SkipAndContinue,
    /// Stop at the first item that does not fit.
    StopAtFirstMisfit,
}

/// Greedily selects items in descending probability order (ties prefer the
/// lower index) while they fit the effective capacity.
pub fn greedy_discretize(
    instance: &KnapsackInstance,
    item_probs: &[f64],
) -> Result<Solution, MetricsError> {
    greedy_discretize_with(instance, item_probs, GreedyMode::SkipAndContinue)
}

pub fn greedy_discretize_with(
    instance: &KnapsackInstance,
    item_probs: &[f64],
    mode: GreedyMode,
) -> Result<Solution, MetricsError> {
    let n = instance.n();
    if item_probs.len() != n {
        return Err(MetricsError::LengthMismatch {
            predicted: item_probs.len(),
            truth: n,
        });
    }
    if let Some(index) = item_probs.iter().position(|p| !p.is_finite()) {
        return Err(MetricsError::NonFiniteProb { index });
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps equal probabilities in index order
    order.sort_by(|&a, &b| item_probs[b].partial_cmp(&item_probs[a]).expect("finite"));

    let mut selected = vec![0u8; n];
    let mut remaining = instance.effective_capacity() as u64;
    for idx in order {
        let w = u64::from(instance.weights()[idx]);
        if w <= remaining {
            selected[idx] = 1;
            remaining -= w;
        } else if mode == GreedyMode::StopAtFirstMisfit {
            break;
        }
    }
    Ok(Solution::from_selection(instance, selected))
}

/// Scores for one `(n, C)` configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigScores {
    pub micro_f1: f64,
    pub exact_match: f64,
    pub num_samples: usize,
}

/// Aggregate evaluation over a prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro_f1: f64,
    pub exact_match: f64,
    pub num_samples: usize,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub per_config: BTreeMap<String, ConfigScores>,
}

fn config_key(instance: &KnapsackInstance) -> String {
    format!("n={},C={}", instance.n(), instance.capacity())
}

/// Evaluates predictions against solved ground truth. Each prediction is
/// greedily discretized; micro-F1 aggregates counts over all items of all
/// samples and exact match counts bitwise-identical selections against
/// the canonical backtracking solution (alternate optima count as
/// mismatches).
pub fn evaluate(
    truths: &[SolvedInstance],
    predictions: &[PredictionRecord],
    mode: GreedyMode,
) -> Result<EvalReport, MetricsError> {
    let mut by_id: BTreeMap<&str, &SolvedInstance> = BTreeMap::new();
    for truth in truths {
        if by_id.insert(truth.instance.id(), truth).is_some() {
            return Err(MetricsError::DuplicateId(truth.instance.id().to_string()));
        }
    }

    let mut seen: HashSet<&str> = HashSet::new();
    let mut totals = F1Counts::default();
    let mut matches = 0usize;
    let mut per_config: BTreeMap<String, (F1Counts, usize, usize)> = BTreeMap::new();

    for prediction in predictions {
        let id = prediction.id.as_str();
        if !seen.insert(id) {
            return Err(MetricsError::DuplicateId(id.to_string()));
        }
        let truth = by_id
            .get(id)
            .ok_or_else(|| MetricsError::MissingTruth(id.to_string()))?;
        let discretized = greedy_discretize_with(&truth.instance, &prediction.item_probs, mode)?;

        let mut counts = F1Counts::default();
        counts.add_sample(&discretized.selected, &truth.solution.selected)?;
        let exact = discretized.selected == truth.solution.selected;

        totals.merge(counts);
        matches += usize::from(exact);
        let entry = per_config
            .entry(config_key(&truth.instance))
            .or_insert((F1Counts::default(), 0, 0));
        entry.0.merge(counts);
        entry.1 += usize::from(exact);
        entry.2 += 1;
    }

    let num_samples = predictions.len();
    Ok(EvalReport {
        micro_f1: totals.f1(),
        exact_match: if num_samples == 0 {
            1.0
        } else {
            matches as f64 / num_samples as f64
        },
        num_samples,
        tp: totals.tp,
        fp: totals.fp,
        fn_: totals.fn_,
        per_config: per_config
            .into_iter()
            .map(|(key, (counts, exact, count))| {
                (
                    key,
                    ConfigScores {
                        micro_f1: counts.f1(),
                        exact_match: exact as f64 / count as f64,
                        num_samples: count,
                    },
                )
            })
            .collect(),
    })
}
