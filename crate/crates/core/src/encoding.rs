//! Graph construction for both pipeline phases: categorical edge length
//! encoding, one-hot weight features, and node positional encodings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::instance::KnapsackInstance;
use crate::softrecon::DecisionProbTable;

/// Default category count for the edge length encoding.
pub const DEFAULT_EDGE_CATEGORIES: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum EncodingError {
    #[error("decision table is {got_rows}x{got_cols}, instance needs {rows}x{cols}")]
    DimensionMismatch {
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
}

/// Categorical one-hot encoding of pairwise node distances.
///
/// Capacity-node pairs encode `min(|i - j|, M - 1)`; any pair touching an
/// item node gets the cutoff category `M - 1`. The dense `|V| x |V| x M`
/// tensor is always reconstructed from these three parameters, never
/// stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeLengthEncoding {
    num_nodes: usize,
    categories: usize,
    capacity_node_count: usize,
}

/// Builds the encoding for `num_nodes` nodes of which the first
/// `capacity_node_count` are capacity nodes. Requires `categories >= 2`
/// and `capacity_node_count <= num_nodes`.
pub fn edge_length_encoding(
    num_nodes: usize,
    categories: usize,
    capacity_node_count: usize,
) -> EdgeLengthEncoding {
    assert!(categories >= 2, "edge length encoding needs M >= 2");
    assert!(
        capacity_node_count <= num_nodes,
        "capacity nodes cannot exceed the node count"
    );
    EdgeLengthEncoding {
        num_nodes,
        categories,
        capacity_node_count,
    }
}

impl EdgeLengthEncoding {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn capacity_node_count(&self) -> usize {
        self.capacity_node_count
    }

    /// Category index for the pair `(i, j)`.
    pub fn category(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.num_nodes && j < self.num_nodes);
        if i < self.capacity_node_count && j < self.capacity_node_count {
            i.abs_diff(j).min(self.categories - 1)
        } else {
            self.categories - 1
        }
    }

    /// One-hot slice for the pair `(i, j)`, length `M`.
    pub fn one_hot(&self, i: usize, j: usize) -> Vec<u8> {
        let mut slot = vec![0u8; self.categories];
        slot[self.category(i, j)] = 1;
        slot
    }

    /// Materializes the full tensor; intended for feeding a processor, not
    /// for storage.
    pub fn dense(&self) -> Vec<Vec<Vec<u8>>> {
        (0..self.num_nodes)
            .map(|i| (0..self.num_nodes).map(|j| self.one_hot(i, j)).collect())
            .collect()
    }
}

/// Node positional encoding scheme.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodePositions {
    /// Deterministic linear spacing `i / (N - 1)`.
    Linear,
    /// Sorted uniform draws on `[0, 1)`, for randomized-position runs.
    RandomSorted { seed: u64 },
}

fn node_positions(count: usize, scheme: NodePositions) -> Vec<f64> {
    match scheme {
        NodePositions::Linear => {
            if count <= 1 {
                vec![0.0; count]
            } else {
                (0..count).map(|i| i as f64 / (count - 1) as f64).collect()
            }
        }
        NodePositions::RandomSorted { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pos: Vec<f64> = (0..count).map(|_| rng.gen_range(0.0..1.0)).collect();
            pos.sort_by(|a, b| a.partial_cmp(b).expect("draws are finite"));
            pos
        }
    }
}

fn weight_one_hot(weight: u32, w_max: u32) -> Vec<u8> {
    let mut slot = vec![0u8; w_max as usize + 1];
    slot[weight as usize] = 1;
    slot
}

/// Per-step graph-level input during table construction: the current
/// item's one-hot weight and raw value.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGraphInput {
    pub weight_onehot: Vec<u8>,
    pub value: f64,
}

/// Graph over the `C_eff + 1` capacity nodes for the construction phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstructionGraph {
    pub num_nodes: usize,
    pub node_pos: Vec<f64>,
    pub edge_length: EdgeLengthEncoding,
    pub per_step_graph_inputs: Vec<StepGraphInput>,
}

pub fn build_construction_graph(instance: &KnapsackInstance) -> ConstructionGraph {
    build_construction_graph_with(instance, NodePositions::Linear, DEFAULT_EDGE_CATEGORIES)
}

pub fn build_construction_graph_with(
    instance: &KnapsackInstance,
    positions: NodePositions,
    edge_categories: usize,
) -> ConstructionGraph {
    let num_nodes = instance.effective_capacity() + 1;
    ConstructionGraph {
        num_nodes,
        node_pos: node_positions(num_nodes, positions),
        edge_length: edge_length_encoding(num_nodes, edge_categories, num_nodes),
        per_step_graph_inputs: instance
            .weights()
            .iter()
            .zip(instance.values())
            .map(|(&w, &v)| StepGraphInput {
                weight_onehot: weight_one_hot(w, instance.w_max()),
                value: v,
            })
            .collect(),
    }
}

/// Graph over capacity plus item nodes for the reconstruction phase.
///
/// The first `C_eff + 1` nodes are capacity nodes (weight slot 0, the
/// padding category); node `C_eff + 1 + k` carries item `k + 1`'s one-hot
/// weight. Decision probabilities sit on capacity-to-item pairs and are
/// emitted symmetrically. There are no graph-level inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionGraph {
    pub num_nodes: usize,
    pub node_pos: Vec<f64>,
    pub node_weight_onehot: Vec<Vec<u8>>,
    pub node_is_item: Vec<u8>,
    /// `edge_decision[c][k]` is item `k + 1`'s decision probability at
    /// capacity `c`.
    pub edge_decision: Vec<Vec<f64>>,
    pub edge_length: EdgeLengthEncoding,
}

pub fn build_reconstruction_graph(
    instance: &KnapsackInstance,
    decision_probs: &DecisionProbTable,
) -> Result<ReconstructionGraph, EncodingError> {
    build_reconstruction_graph_with(
        instance,
        decision_probs,
        NodePositions::Linear,
        DEFAULT_EDGE_CATEGORIES,
    )
}

pub fn build_reconstruction_graph_with(
    instance: &KnapsackInstance,
    decision_probs: &DecisionProbTable,
    positions: NodePositions,
    edge_categories: usize,
) -> Result<ReconstructionGraph, EncodingError> {
    let n = instance.n();
    let cap = instance.effective_capacity();
    let rows = decision_probs.rows();
    let got_cols = rows.first().map_or(cap + 1, Vec::len);
    if rows.len() != n || (n > 0 && got_cols != cap + 1) {
        return Err(EncodingError::DimensionMismatch {
            rows: n,
            cols: cap + 1,
            got_rows: rows.len(),
            got_cols,
        });
    }

    let capacity_nodes = cap + 1;
    let num_nodes = capacity_nodes + n;
    let w_max = instance.w_max();

    let mut node_weight_onehot = Vec::with_capacity(num_nodes);
    let mut node_is_item = Vec::with_capacity(num_nodes);
    for _ in 0..capacity_nodes {
        node_weight_onehot.push(weight_one_hot(0, w_max));
        node_is_item.push(0);
    }
    for &w in instance.weights() {
        node_weight_onehot.push(weight_one_hot(w, w_max));
        node_is_item.push(1);
    }

    let edge_decision: Vec<Vec<f64>> = (0..capacity_nodes)
        .map(|c| (0..n).map(|k| rows[k][c]).collect())
        .collect();

    Ok(ReconstructionGraph {
        num_nodes,
        node_pos: node_positions(num_nodes, positions),
        node_weight_onehot,
        node_is_item,
        edge_decision,
        edge_length: edge_length_encoding(num_nodes, edge_categories, capacity_nodes),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::build_dp;
    use crate::softrecon::probs_from_tables;
    use proptest::prelude::*;

    fn instance_a() -> KnapsackInstance {
        KnapsackInstance::new("a", vec![2, 3], vec![0.6, 0.7], 4, 8).unwrap()
    }

    #[test]
    fn edge_length_categories() {
        let el = edge_length_encoding(5, 10, 5);
        assert_eq!(el.category(1, 4), 3);
        let hot = el.one_hot(1, 4);
        assert_eq!(hot.iter().sum::<u8>(), 1);
        assert_eq!(hot[3], 1);

        let el = edge_length_encoding(20, 10, 20);
        assert_eq!(el.category(0, 15), 9, "distances past the cutoff saturate");

        // any pair touching an item node takes the cutoff category
        let el = edge_length_encoding(7, 10, 5);
        assert_eq!(el.category(2, 5), 9);
        assert_eq!(el.category(5, 2), 9);
        assert_eq!(el.category(5, 6), 9);
        assert_eq!(el.category(0, 0), 0);
    }

    #[test]
    fn construction_graph_instance_a() {
        let graph = build_construction_graph(&instance_a());
        assert_eq!(graph.num_nodes, 5);
        assert_eq!(graph.node_pos, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(graph.per_step_graph_inputs.len(), 2);
        assert_eq!(graph.per_step_graph_inputs[0].weight_onehot[2], 1);
        assert_eq!(graph.per_step_graph_inputs[1].weight_onehot[3], 1);
        for step in &graph.per_step_graph_inputs {
            assert_eq!(step.weight_onehot.iter().sum::<u8>(), 1);
            assert_eq!(step.weight_onehot[0], 0, "real items never use slot 0");
            assert_eq!(step.weight_onehot.len(), 9);
        }
    }

    #[test]
    fn construction_graph_degenerate() {
        let inst = KnapsackInstance::new("e", vec![], vec![], 0, 8).unwrap();
        let graph = build_construction_graph(&inst);
        assert_eq!(graph.num_nodes, 1);
        assert_eq!(graph.node_pos, vec![0.0]);
        assert!(graph.per_step_graph_inputs.is_empty());
    }

    #[test]
    fn reconstruction_graph_instance_a() {
        let inst = instance_a();
        let tables = build_dp(&inst);
        let graph = build_reconstruction_graph(&inst, &probs_from_tables(&tables)).unwrap();
        assert_eq!(graph.num_nodes, 7);
        assert_eq!(graph.node_is_item, vec![0, 0, 0, 0, 0, 1, 1]);
        // item 2 is included at full capacity in the oracle table
        assert_eq!(graph.edge_decision[4][1], 1.0);
        // item nodes carry the item weights, capacity nodes the padding slot
        assert_eq!(graph.node_weight_onehot[5][2], 1);
        assert_eq!(graph.node_weight_onehot[6][3], 1);
        for c in 0..5 {
            assert_eq!(graph.node_weight_onehot[c][0], 1);
        }
        assert_eq!(graph.edge_length.capacity_node_count(), 5);
        assert_eq!(graph.edge_length.category(0, 5), 9);
    }

    #[test]
    fn reconstruction_graph_zero_probs() {
        let inst = instance_a();
        let probs = DecisionProbTable::new(vec![vec![0.0; 5]; 2]).unwrap();
        let graph = build_reconstruction_graph(&inst, &probs).unwrap();
        assert!(graph.edge_decision.iter().flatten().all(|&d| d == 0.0));
        assert_eq!(graph.num_nodes, 7);
    }

    #[test]
    fn reconstruction_graph_rejects_mismatched_probs() {
        let inst = instance_a();
        let probs = DecisionProbTable::new(vec![vec![0.0; 5]]).unwrap();
        assert!(matches!(
            build_reconstruction_graph(&inst, &probs),
            Err(EncodingError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn builders_honor_custom_cutoff_and_positions() {
        let inst = instance_a();
        let graph = build_construction_graph_with(
            &inst,
            NodePositions::RandomSorted { seed: 3 },
            6,
        );
        assert_eq!(graph.edge_length.categories(), 6);
        assert_eq!(graph.edge_length.category(0, 4), 4);
        assert!(graph.node_pos.windows(2).all(|w| w[0] <= w[1]));

        let tables = build_dp(&inst);
        let graph = build_reconstruction_graph_with(
            &inst,
            &probs_from_tables(&tables),
            NodePositions::Linear,
            6,
        )
        .unwrap();
        assert_eq!(graph.edge_length.categories(), 6);
        assert_eq!(graph.edge_length.category(0, 5), 5);
    }

    #[test]
    fn random_positions_are_sorted_and_seeded() {
        let a = node_positions(16, NodePositions::RandomSorted { seed: 9 });
        let b = node_positions(16, NodePositions::RandomSorted { seed: 9 });
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.iter().all(|&p| (0.0..1.0).contains(&p)));
    }

    proptest! {
        #[test]
        fn edge_length_one_hot_and_symmetric(
            num_nodes in 1usize..60,
            m in 2usize..12,
            cap_frac in 0.0f64..=1.0,
        ) {
            let cap_count = ((num_nodes as f64) * cap_frac) as usize;
            let el = edge_length_encoding(num_nodes, m, cap_count.min(num_nodes));
            for i in 0..num_nodes {
                for j in 0..num_nodes {
                    let hot = el.one_hot(i, j);
                    prop_assert_eq!(hot.len(), m);
                    prop_assert_eq!(hot.iter().map(|&b| b as usize).sum::<usize>(), 1);
                    prop_assert_eq!(el.category(i, j), el.category(j, i));
                    prop_assert!(el.category(i, j) < m);
                }
            }
            for i in 0..el.capacity_node_count() {
                prop_assert_eq!(el.category(i, i), 0);
            }
        }
    }
}
