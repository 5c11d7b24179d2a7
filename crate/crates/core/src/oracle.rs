//! Exact pseudo-polynomial DP construction, classical backtracking, and a
//! brute-force reference solver.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{KnapsackInstance, Solution};

/// Largest item count accepted by [`brute_force`].
pub const BRUTE_FORCE_MAX_ITEMS: usize = 24;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("instance has {n} items, brute force is capped at {max}")]
    TooLarge { n: usize, max: usize },
    #[error("inconsistent tables: {0}")]
    InconsistentTables(String),
}

/// Ground-truth DP state for one instance.
///
/// `value_table` has `n + 1` rows of `C_eff + 1` entries; row 0 is the
/// all-zero base case and `value_table[i][c]` is the best value using the
/// first `i` items at capacity `c`. `decision_table` has one row per item
/// (row `t - 1` is item `t`); a set bit means the item is included in the
/// optimum for that state. Ties resolve to exclude, so a set bit always
/// marks a strict improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpTables {
    pub value_table: Vec<Vec<f64>>,
    pub decision_table: Vec<Vec<u8>>,
}

impl DpTables {
    /// Number of item rows.
    pub fn n(&self) -> usize {
        self.decision_table.len()
    }

    /// Column extent, i.e. the instance's effective capacity.
    pub fn capacity(&self) -> usize {
        self.value_table[0].len() - 1
    }
}

/// Fills the value and decision tables bottom-up in Theta(n * C_eff) time.
pub fn build_dp(instance: &KnapsackInstance) -> DpTables {
    let n = instance.n();
    let cap = instance.effective_capacity();
    let weights = instance.weights();
    let values = instance.values();

    let mut value_table = Vec::with_capacity(n + 1);
    value_table.push(vec![0.0f64; cap + 1]);
    let mut decision_table = Vec::with_capacity(n);

    for i in 1..=n {
        let w = weights[i - 1] as usize;
        let v = values[i - 1];
        let prev = &value_table[i - 1];
        let mut row = vec![0.0f64; cap + 1];
        let mut dec = vec![0u8; cap + 1];
        for c in 0..=cap {
            let exclude = prev[c];
            if w <= c {
                let include = prev[c - w] + v;
                if include > exclude {
                    row[c] = include;
                    dec[c] = 1;
                    continue;
                }
            }
            row[c] = exclude;
        }
        value_table.push(row);
        decision_table.push(dec);
    }

    DpTables {
        value_table,
        decision_table,
    }
}

/// Recovers the canonical optimal selection by walking the decision table
/// from `(n, C_eff)` down to row 1.
pub fn backtrack(instance: &KnapsackInstance, tables: &DpTables) -> Result<Solution, OracleError> {
    let n = instance.n();
    let cap = instance.effective_capacity();
    if tables.n() != n || tables.value_table.len() != n + 1 || tables.capacity() != cap {
        return Err(OracleError::InconsistentTables(format!(
            "table shape does not match instance (n={n}, C_eff={cap})"
        )));
    }

    let mut selected = vec![0u8; n];
    let mut c = cap;
    for i in (1..=n).rev() {
        if tables.decision_table[i - 1][c] == 1 {
            let w = instance.weights()[i - 1] as usize;
            if w > c {
                return Err(OracleError::InconsistentTables(format!(
                    "item {i} selected at capacity {c} but weighs {w}"
                )));
            }
            selected[i - 1] = 1;
            c -= w;
        }
    }
    Ok(Solution::from_selection(instance, selected))
}

/// Builds the tables and backtracks in one call.
pub fn solve(instance: &KnapsackInstance) -> (DpTables, Solution) {
    let tables = build_dp(instance);
    let solution = backtrack(instance, &tables).expect("freshly built tables are consistent");
    (tables, solution)
}

/// Exhaustive reference solver over all `2^n` subsets.
///
/// Among equal-value optima this returns the selection that includes the
/// earliest-indexed items (the largest bit string with item 1 as the most
/// significant position), agreeing with [`backtrack`] on symmetric items.
pub fn brute_force(instance: &KnapsackInstance) -> Result<Solution, OracleError> {
    let n = instance.n();
    if n > BRUTE_FORCE_MAX_ITEMS {
        return Err(OracleError::TooLarge {
            n,
            max: BRUTE_FORCE_MAX_ITEMS,
        });
    }
    let cap = instance.effective_capacity() as u64;
    let weights = instance.weights();
    let values = instance.values();

    let mut best_value = f64::NEG_INFINITY;
    let mut best_mask = 0u32;
    // Ascending masks with item 1 as the most significant bit: a later mask
    // prefers earlier items, so `>=` keeps the canonical tie-break.
    for mask in 0..(1u32 << n) {
        let mut weight = 0u64;
        let mut feasible = true;
        for (i, &w) in weights.iter().enumerate() {
            if mask >> (n - 1 - i) & 1 == 1 {
                weight += u64::from(w);
                if weight > cap {
                    feasible = false;
                    break;
                }
            }
        }
        if !feasible {
            continue;
        }
        let mut value = 0.0f64;
        for (i, &v) in values.iter().enumerate() {
            if mask >> (n - 1 - i) & 1 == 1 {
                value += v;
            }
        }
        if value >= best_value {
            best_value = value;
            best_mask = mask;
        }
    }

    let selected: Vec<u8> = (0..n)
        .map(|i| (best_mask >> (n - 1 - i) & 1) as u8)
        .collect();
    Ok(Solution::from_selection(instance, selected))
}
