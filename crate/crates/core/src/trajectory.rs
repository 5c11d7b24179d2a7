//! CLRS-style hint trajectories for the construction and reconstruction
//! phases, plus a structural validator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::KnapsackInstance;
use crate::oracle::DpTables;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("inconsistent tables: {0}")]
    InconsistentTables(String),
}

/// One construction step: the item presented as input plus the DP and
/// decision rows it produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructionStep {
    /// 1-based item index.
    pub t: usize,
    pub weight_onehot: Vec<u8>,
    pub value: f64,
    pub dp_row: Vec<f64>,
    pub decision_row: Vec<u8>,
}

/// Hint sequence for DP table construction: one step per item over the
/// `C_eff + 1` capacity nodes. Row 0 of the value table is never emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstructionTrajectory {
    pub id: String,
    pub num_nodes: usize,
    pub steps: Vec<ConstructionStep>,
}

/// One reconstruction step. Selection updates happen on alteration 0,
/// capacity updates on alteration 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionStep {
    #[serde(rename = "alt")]
    pub alteration_type: u8,
    /// Node index of the item under consideration.
    #[serde(rename = "cur_item")]
    pub current_item: usize,
    /// Node index of the remaining capacity, in `0..=C_eff`.
    #[serde(rename = "rem_cap")]
    pub remaining_capacity: usize,
    pub selected: Vec<u8>,
}

/// Hint sequence for solution reconstruction: two steps per item over the
/// capacity-plus-item node set, items processed from `n` down to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructionTrajectory {
    pub id: String,
    pub num_nodes: usize,
    pub steps: Vec<ReconstructionStep>,
    pub output: Vec<u8>,
}

/// A trajectory of either phase, tagged by `kind` on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TrajectoryRecord {
    #[serde(rename = "construct")]
    Construct(ConstructionTrajectory),
    #[serde(rename = "reconstruct")]
    Reconstruct(ReconstructionTrajectory),
}

fn weight_one_hot(weight: u32, w_max: u32) -> Vec<u8> {
    let mut slot = vec![0u8; w_max as usize + 1];
    slot[weight as usize] = 1;
    slot
}

/// Emits the construction hint sequence from oracle tables: step `t`
/// carries item `t`'s one-hot weight and value plus DP and decision rows
/// `t`.
pub fn construction_trajectory(
    instance: &KnapsackInstance,
    tables: &DpTables,
) -> Result<ConstructionTrajectory, TrajectoryError> {
    let n = instance.n();
    let cap = instance.effective_capacity();
    if tables.n() != n || tables.value_table.len() != n + 1 || tables.capacity() != cap {
        return Err(TrajectoryError::DimensionMismatch(format!(
            "tables do not match instance (n={n}, C_eff={cap})"
        )));
    }

    let steps = (1..=n)
        .map(|t| ConstructionStep {
            t,
            weight_onehot: weight_one_hot(instance.weights()[t - 1], instance.w_max()),
            value: instance.values()[t - 1],
            dp_row: tables.value_table[t].clone(),
            decision_row: tables.decision_table[t - 1].clone(),
        })
        .collect();

    Ok(ConstructionTrajectory {
        id: instance.id().to_string(),
        num_nodes: cap + 1,
        steps,
    })
}

/// Simulates classical backtracking over a bit decision table and emits
/// two steps per item: the selection update (alteration 0) followed by the
/// capacity update (alteration 1).
pub fn reconstruction_trajectory(
    instance: &KnapsackInstance,
    decision_bits: &[Vec<u8>],
) -> Result<ReconstructionTrajectory, TrajectoryError> {
    let n = instance.n();
    let cap = instance.effective_capacity();
    if decision_bits.len() != n {
        return Err(TrajectoryError::DimensionMismatch(format!(
            "decision table has {} rows, instance has {n} items",
            decision_bits.len()
        )));
    }
    for (i, row) in decision_bits.iter().enumerate() {
        if row.len() != cap + 1 {
            return Err(TrajectoryError::DimensionMismatch(format!(
                "decision row {i} has {} columns, expected {}",
                row.len(),
                cap + 1
            )));
        }
        if row.iter().any(|&b| b > 1) {
            return Err(TrajectoryError::DimensionMismatch(format!(
                "decision row {i} contains a non-bit entry"
            )));
        }
    }

    let mut steps = Vec::with_capacity(2 * n);
    let mut selected = vec![0u8; n];
    let mut c = cap;
    for i in (1..=n).rev() {
        let item_node = cap + i;
        let included = decision_bits[i - 1][c] == 1;
        if included {
            selected[i - 1] = 1;
        }
        steps.push(ReconstructionStep {
            alteration_type: 0,
            current_item: item_node,
            remaining_capacity: c,
            selected: selected.clone(),
        });
        if included {
            let w = instance.weights()[i - 1] as usize;
            if w > c {
                return Err(TrajectoryError::InconsistentTables(format!(
                    "item {i} selected at capacity {c} but weighs {w}"
                )));
            }
            c -= w;
        }
        steps.push(ReconstructionStep {
            alteration_type: 1,
            current_item: item_node,
            remaining_capacity: c,
            selected: selected.clone(),
        });
    }

    Ok(ReconstructionTrajectory {
        id: instance.id().to_string(),
        num_nodes: cap + 1 + n,
        steps,
        output: selected,
    })
}

/// Outcome of a structural validation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub pass: bool,
    pub first_violation: Option<String>,
}

impl ValidationReport {
    fn ok() -> Self {
        ValidationReport {
            pass: true,
            first_violation: None,
        }
    }

    fn fail(message: impl Into<String>) -> Self {
        ValidationReport {
            pass: false,
            first_violation: Some(message.into()),
        }
    }
}

/// Checks the structural claims a trajectory must satisfy: step counts,
/// row shapes, hint alternation, monotone selection, and non-increasing
/// capacity. Returns the first violation found.
pub fn validate_trajectory(record: &TrajectoryRecord) -> ValidationReport {
    match record {
        TrajectoryRecord::Construct(traj) => validate_construction(traj),
        TrajectoryRecord::Reconstruct(traj) => validate_reconstruction(traj),
    }
}

fn validate_construction(traj: &ConstructionTrajectory) -> ValidationReport {
    if traj.num_nodes == 0 {
        return ValidationReport::fail("num_nodes must be at least 1");
    }
    let mut onehot_width = None;
    for (k, step) in traj.steps.iter().enumerate() {
        if step.t != k + 1 {
            return ValidationReport::fail(format!("step {k} has t={}, expected {}", step.t, k + 1));
        }
        let width = *onehot_width.get_or_insert(step.weight_onehot.len());
        if step.weight_onehot.len() != width {
            return ValidationReport::fail(format!("step {k}: weight one-hot width changed"));
        }
        if step.weight_onehot.iter().any(|&b| b > 1) {
            return ValidationReport::fail(format!("step {k}: weight one-hot has a non-bit"));
        }
        if step.weight_onehot.iter().map(|&b| b as usize).sum::<usize>() != 1 {
            return ValidationReport::fail(format!("step {k}: weight one-hot is not one-hot"));
        }
        if step.weight_onehot.first() == Some(&1) {
            return ValidationReport::fail(format!("step {k}: item uses the padding weight slot"));
        }
        if !step.value.is_finite() {
            return ValidationReport::fail(format!("step {k}: value is not finite"));
        }
        if step.dp_row.len() != traj.num_nodes {
            return ValidationReport::fail(format!(
                "step {k}: dp row has {} entries, expected {}",
                step.dp_row.len(),
                traj.num_nodes
            ));
        }
        if step.decision_row.len() != traj.num_nodes {
            return ValidationReport::fail(format!(
                "step {k}: decision row has {} entries, expected {}",
                step.decision_row.len(),
                traj.num_nodes
            ));
        }
        if step.decision_row.iter().any(|&b| b > 1) {
            return ValidationReport::fail(format!("step {k}: decision row has a non-bit"));
        }
        if step.dp_row.iter().any(|v| !v.is_finite()) {
            return ValidationReport::fail(format!("step {k}: dp row has a non-finite entry"));
        }
        if step.dp_row.windows(2).any(|w| w[0] > w[1]) {
            return ValidationReport::fail(format!(
                "step {k}: dp row decreases along the capacity axis"
            ));
        }
    }
    ValidationReport::ok()
}

fn validate_reconstruction(traj: &ReconstructionTrajectory) -> ValidationReport {
    let n = traj.output.len();
    if traj.num_nodes < n + 1 {
        return ValidationReport::fail("num_nodes too small for the output length");
    }
    let cap = traj.num_nodes - n - 1;
    if traj.steps.len() != 2 * n {
        return ValidationReport::fail(format!(
            "expected {} steps for {n} items, found {}",
            2 * n,
            traj.steps.len()
        ));
    }
    if traj.output.iter().any(|&b| b > 1) {
        return ValidationReport::fail("output has a non-bit entry");
    }

    let mut prev_selected: Option<&[u8]> = None;
    let mut prev_cap = cap;
    for (k, step) in traj.steps.iter().enumerate() {
        if step.alteration_type != (k % 2) as u8 {
            return ValidationReport::fail(format!(
                "step {k}: alteration type {} breaks the alternating pattern",
                step.alteration_type
            ));
        }
        // items are visited n down to 1; both steps of a pair share a node
        let expected_item = cap + n - k / 2;
        if step.current_item != expected_item {
            return ValidationReport::fail(format!(
                "step {k}: current item node {} out of order, expected {expected_item}",
                step.current_item
            ));
        }
        if step.remaining_capacity > prev_cap {
            return ValidationReport::fail(format!("step {k}: remaining capacity increased"));
        }
        if step.alteration_type == 0 && step.remaining_capacity != prev_cap {
            return ValidationReport::fail(format!(
                "step {k}: capacity changed during a selection step"
            ));
        }
        prev_cap = step.remaining_capacity;
        if step.selected.len() != n {
            return ValidationReport::fail(format!("step {k}: selection has wrong length"));
        }
        if step.selected.iter().any(|&b| b > 1) {
            return ValidationReport::fail(format!("step {k}: selection has a non-bit"));
        }
        if let Some(prev) = prev_selected {
            if prev.iter().zip(&step.selected).any(|(&a, &b)| a > b) {
                return ValidationReport::fail(format!("step {k}: a selected bit was cleared"));
            }
        }
        prev_selected = Some(&step.selected);
    }
    if let Some(last) = prev_selected {
        if last != traj.output.as_slice() {
            return ValidationReport::fail("output differs from the final selection");
        }
    }
    ValidationReport::ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{sample_instances, SamplerConfig};
    use crate::oracle::{backtrack, build_dp};

    fn instance_a() -> KnapsackInstance {
        KnapsackInstance::new("a", vec![2, 3], vec![0.6, 0.7], 4, 8).unwrap()
    }

    #[test]
    fn construction_trajectory_instance_a() {
        let inst = instance_a();
        let tables = build_dp(&inst);
        let traj = construction_trajectory(&inst, &tables).unwrap();
        assert_eq!(traj.num_nodes, 5);
        assert_eq!(traj.steps.len(), 2);
        assert_eq!(traj.steps[1].dp_row, vec![0.0, 0.0, 0.6, 0.7, 0.7]);
        assert_eq!(traj.steps[1].decision_row, vec![0, 0, 0, 1, 1]);
        // stacked decision rows reproduce the oracle table
        let stacked: Vec<Vec<u8>> = traj.steps.iter().map(|s| s.decision_row.clone()).collect();
        assert_eq!(stacked, tables.decision_table);
    }

    #[test]
    fn construction_trajectory_empty() {
        let inst = KnapsackInstance::new("e", vec![], vec![], 0, 8).unwrap();
        let traj = construction_trajectory(&inst, &build_dp(&inst)).unwrap();
        assert!(traj.steps.is_empty());
        assert_eq!(traj.num_nodes, 1);
    }

    #[test]
    fn construction_trajectory_rejects_foreign_tables() {
        let inst = instance_a();
        let other = KnapsackInstance::new("o", vec![1], vec![0.2], 2, 8).unwrap();
        let tables = build_dp(&other);
        assert!(construction_trajectory(&inst, &tables).is_err());
    }

    #[test]
    fn reconstruction_trajectory_instance_a() {
        let inst = instance_a();
        let tables = build_dp(&inst);
        let traj = reconstruction_trajectory(&inst, &tables.decision_table).unwrap();
        assert_eq!(traj.steps.len(), 4);
        assert_eq!(traj.num_nodes, 7);
        // item 2's pair: selection first, then the capacity drops to 1
        assert_eq!(traj.steps[0].current_item, 6);
        assert_eq!(traj.steps[0].remaining_capacity, 4);
        assert_eq!(traj.steps[0].selected, vec![0, 1]);
        assert_eq!(traj.steps[1].remaining_capacity, 1);
        assert_eq!(traj.output, vec![0, 1]);
        let alts: Vec<u8> = traj.steps.iter().map(|s| s.alteration_type).collect();
        assert_eq!(alts, vec![0, 1, 0, 1]);
    }

    #[test]
    fn reconstruction_all_zero_decisions() {
        let inst = instance_a();
        let traj = reconstruction_trajectory(&inst, &vec![vec![0u8; 5]; 2]).unwrap();
        assert!(traj.steps.iter().all(|s| s.remaining_capacity == 4));
        assert_eq!(traj.output, vec![0, 0]);
    }

    #[test]
    fn reconstruction_alternation_for_three_items() {
        let inst = KnapsackInstance::new("t", vec![1, 1, 1], vec![0.1, 0.2, 0.3], 3, 8).unwrap();
        let tables = build_dp(&inst);
        let traj = reconstruction_trajectory(&inst, &tables.decision_table).unwrap();
        let alts: Vec<u8> = traj.steps.iter().map(|s| s.alteration_type).collect();
        assert_eq!(alts, vec![0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn reconstruction_matches_backtrack_selection() {
        let config = SamplerConfig {
            n: 12,
            capacity: 14,
            num_samples: 24,
            seed: 5,
            ..SamplerConfig::default()
        };
        for inst in sample_instances(&config).unwrap() {
            let tables = build_dp(&inst);
            let sol = backtrack(&inst, &tables).unwrap();
            let traj = reconstruction_trajectory(&inst, &tables.decision_table).unwrap();
            assert_eq!(traj.output, sol.selected);
        }
    }

    #[test]
    fn generated_trajectories_validate() {
        let config = SamplerConfig {
            n: 9,
            capacity: 11,
            num_samples: 16,
            seed: 21,
            ..SamplerConfig::default()
        };
        for inst in sample_instances(&config).unwrap() {
            let tables = build_dp(&inst);
            let c = construction_trajectory(&inst, &tables).unwrap();
            let r = reconstruction_trajectory(&inst, &tables.decision_table).unwrap();
            assert!(validate_trajectory(&TrajectoryRecord::Construct(c)).pass);
            assert!(validate_trajectory(&TrajectoryRecord::Reconstruct(r)).pass);
        }
    }

    #[test]
    fn validator_flags_reversed_steps() {
        let inst = instance_a();
        let tables = build_dp(&inst);
        let mut traj = reconstruction_trajectory(&inst, &tables.decision_table).unwrap();
        traj.steps.reverse();
        let report = validate_trajectory(&TrajectoryRecord::Reconstruct(traj));
        assert!(!report.pass);
        assert!(report.first_violation.unwrap().contains("alternating"));
    }

    #[test]
    fn validator_flags_bad_shapes() {
        let inst = instance_a();
        let tables = build_dp(&inst);
        let mut traj = construction_trajectory(&inst, &tables).unwrap();
        traj.steps[0].dp_row.pop();
        let report = validate_trajectory(&TrajectoryRecord::Construct(traj));
        assert!(!report.pass);
        assert!(report.first_violation.unwrap().contains("dp row"));
    }

    #[test]
    fn validator_flags_cleared_selection() {
        let inst = instance_a();
        let tables = build_dp(&inst);
        let mut traj = reconstruction_trajectory(&inst, &tables.decision_table).unwrap();
        traj.steps[2].selected = vec![0, 0];
        traj.steps[3].selected = vec![0, 0];
        traj.output = vec![0, 0];
        let report = validate_trajectory(&TrajectoryRecord::Reconstruct(traj));
        assert!(!report.pass);
        assert!(report.first_violation.unwrap().contains("cleared"));
    }

    #[test]
    fn trajectory_record_json_shape() {
        let inst = instance_a();
        let tables = build_dp(&inst);
        let record =
            TrajectoryRecord::Construct(construction_trajectory(&inst, &tables).unwrap());
        let line = serde_json::to_string(&record).unwrap();
        assert!(line.contains("\"kind\":\"construct\""));
        assert!(line.contains("\"dp_row\""));
        let back: TrajectoryRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(record, back);

        let record = TrajectoryRecord::Reconstruct(
            reconstruction_trajectory(&inst, &tables.decision_table).unwrap(),
        );
        let line = serde_json::to_string(&record).unwrap();
        assert!(line.contains("\"kind\":\"reconstruct\""));
        assert!(line.contains("\"rem_cap\""));
        assert!(line.contains("\"cur_item\""));
    }
}
