//! JSON Lines serialization for every record kind the pipeline exchanges.
//!
//! One record per line, UTF-8, floats at round-trip precision. Reading
//! validates each line against its schema and the type invariants and
//! reports the offending line number on failure.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{KnapsackInstance, Solution};
use crate::oracle::DpTables;
use crate::softrecon::DecisionProbTable;
use crate::trajectory::{validate_trajectory, TrajectoryRecord};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A record kind that can live in a JSONL dataset. `validate` runs on
/// every record read, after deserialization.
pub trait DatasetRecord: Serialize + DeserializeOwned {
    fn validate(&self) -> Result<(), String> {
        Ok(())
    }
}

/// Writes one record per line; returns the record count.
pub fn write_dataset<R: DatasetRecord>(
    records: &[R],
    mut destination: impl Write,
) -> Result<usize, DatasetError> {
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| DatasetError::SchemaViolation {
                line: 0,
                message: format!("serialization failed: {e}"),
            })?;
        destination.write_all(line.as_bytes())?;
        destination.write_all(b"\n")?;
    }
    Ok(records.len())
}

/// Reads and validates a full JSONL stream. Blank lines are rejected; an
/// empty stream yields an empty sequence.
pub fn read_dataset<R: DatasetRecord>(source: impl BufRead) -> Result<Vec<R>, DatasetError> {
    let mut records = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line = line?;
        let record: R =
            serde_json::from_str(&line).map_err(|e| DatasetError::SchemaViolation {
                line: idx + 1,
                message: e.to_string(),
            })?;
        record.validate().map_err(|message| DatasetError::SchemaViolation {
            line: idx + 1,
            message,
        })?;
        records.push(record);
    }
    Ok(records)
}

impl DatasetRecord for KnapsackInstance {}

impl DatasetRecord for TrajectoryRecord {
    fn validate(&self) -> Result<(), String> {
        let report = validate_trajectory(self);
        if report.pass {
            Ok(())
        } else {
            Err(report
                .first_violation
                .unwrap_or_else(|| "invalid trajectory".into()))
        }
    }
}

/// An instance together with its ground-truth tables and canonical
/// optimal solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SolvedWire", into = "SolvedWire")]
pub struct SolvedInstance {
    pub instance: KnapsackInstance,
    pub tables: DpTables,
    pub solution: Solution,
}

impl SolvedInstance {
    /// Solves an instance with the exact oracle.
    pub fn solve(instance: KnapsackInstance) -> Self {
        let (tables, solution) = crate::oracle::solve(&instance);
        SolvedInstance {
            instance,
            tables,
            solution,
        }
    }
}

impl DatasetRecord for SolvedInstance {}

/// Flat wire form: instance fields plus optimum and tables. `dp` includes
/// the base-case row 0; `decision` does not.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolvedWire {
    id: String,
    n: usize,
    capacity: i64,
    w_max: u32,
    weights: Vec<u32>,
    values: Vec<f64>,
    optimal_value: f64,
    optimal_selection: Vec<u8>,
    dp: Vec<Vec<f64>>,
    decision: Vec<Vec<u8>>,
}

impl TryFrom<SolvedWire> for SolvedInstance {
    type Error = String;

    fn try_from(wire: SolvedWire) -> Result<Self, String> {
        if wire.n != wire.weights.len() {
            return Err(format!(
                "declared n={} does not match {} weights",
                wire.n,
                wire.weights.len()
            ));
        }
        let instance = KnapsackInstance::new(
            wire.id,
            wire.weights,
            wire.values,
            wire.capacity,
            wire.w_max,
        )
        .map_err(|e| e.to_string())?;
        let n = instance.n();
        let cap = instance.effective_capacity();

        if wire.dp.len() != n + 1 || wire.dp.iter().any(|row| row.len() != cap + 1) {
            return Err(format!("dp table must be {}x{}", n + 1, cap + 1));
        }
        if wire.dp[0].iter().any(|&v| v != 0.0) {
            return Err("dp base row must be all zeros".into());
        }
        if wire.dp.iter().flatten().any(|v| !v.is_finite()) {
            return Err("dp table has a non-finite entry".into());
        }
        if wire.decision.len() != n || wire.decision.iter().any(|row| row.len() != cap + 1) {
            return Err(format!("decision table must be {n}x{}", cap + 1));
        }
        if wire.decision.iter().flatten().any(|&b| b > 1) {
            return Err("decision table has a non-bit entry".into());
        }
        for (i, row) in wire.decision.iter().enumerate() {
            let w = instance.weights()[i] as usize;
            for (c, &bit) in row.iter().enumerate() {
                if bit == 1 && w > c {
                    return Err(format!(
                        "decision[{}][{c}] selects an item that does not fit",
                        i + 1
                    ));
                }
            }
        }
        if wire.optimal_selection.len() != n {
            return Err("optimal_selection length must equal n".into());
        }
        if wire.optimal_selection.iter().any(|&b| b > 1) {
            return Err("optimal_selection has a non-bit entry".into());
        }

        let solution = Solution::from_selection(&instance, wire.optimal_selection);
        if (solution.total_value - wire.optimal_value).abs() > 1e-9 {
            return Err(format!(
                "optimal_value {} disagrees with the selection total {}",
                wire.optimal_value, solution.total_value
            ));
        }
        if solution.total_weight > cap as u64 {
            return Err("optimal selection exceeds the effective capacity".into());
        }

        Ok(SolvedInstance {
            instance,
            tables: DpTables {
                value_table: wire.dp,
                decision_table: wire.decision,
            },
            solution,
        })
    }
}

impl From<SolvedInstance> for SolvedWire {
    fn from(solved: SolvedInstance) -> Self {
        SolvedWire {
            id: solved.instance.id().to_string(),
            n: solved.instance.n(),
            capacity: solved.instance.capacity() as i64,
            w_max: solved.instance.w_max(),
            weights: solved.instance.weights().to_vec(),
            values: solved.instance.values().to_vec(),
            optimal_value: solved.solution.total_value,
            optimal_selection: solved.solution.selected,
            dp: solved.tables.value_table,
            decision: solved.tables.decision_table,
        }
    }
}

/// Per-item inclusion probabilities predicted for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub item_probs: Vec<f64>,
}

impl DatasetRecord for PredictionRecord {
    fn validate(&self) -> Result<(), String> {
        match self.item_probs.iter().position(|p| !p.is_finite()) {
            Some(i) => Err(format!("item_probs[{i}] is not finite")),
            None => Ok(()),
        }
    }
}

/// Soft reconstruction output for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftReconRecord {
    pub id: String,
    pub soft_selected: Vec<f64>,
    /// Largest deviation of any reach-mass row sum from 1.
    pub row_mass_error: f64,
}

impl DatasetRecord for SoftReconRecord {
    fn validate(&self) -> Result<(), String> {
        if let Some(i) = self
            .soft_selected
            .iter()
            .position(|s| !s.is_finite() || !(-1e-12..=1.0 + 1e-12).contains(s))
        {
            return Err(format!("soft_selected[{i}] outside [0, 1]"));
        }
        if !self.row_mass_error.is_finite() || self.row_mass_error < 0.0 {
            return Err("row_mass_error must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// A predicted decision probability table, the input to soft
/// reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionTableRecord {
    pub id: String,
    pub probs: DecisionProbTable,
}

impl DatasetRecord for DecisionTableRecord {}

/// Input record for the subset-sum and partition reductions. `target` is
/// required for subset sum and ignored for partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionInputRecord {
    pub id: String,
    pub numbers: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<u64>,
}

impl DatasetRecord for ReductionInputRecord {
    fn validate(&self) -> Result<(), String> {
        match self.numbers.iter().position(|&x| x == 0) {
            Some(i) => Err(format!("numbers[{i}] must be positive")),
            None => Ok(()),
        }
    }
}
