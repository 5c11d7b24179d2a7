//! Minimal message-passing processor with probe encoders and switchable
//! bias, layer normalization, and gating, for verifying when the forward
//! pass is positively homogeneous.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProcessorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Message aggregation over neighbours.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Max,
    Sum,
}

/// Forward-pass switches. Positive homogeneity `f(ax) = a f(x)` holds
/// exactly when bias, layer normalization, and gating are all disabled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessorConfig {
    pub hidden_dim: usize,
    pub use_bias: bool,
    pub use_layer_norm: bool,
    pub use_gating: bool,
    pub aggregation: Aggregation,
}

impl Default for ProcessorConfig {
    fn default() -> Self {
        ProcessorConfig {
            hidden_dim: 128,
            use_bias: false,
            use_layer_norm: false,
            use_gating: false,
            aggregation: Aggregation::Max,
        }
    }
}

impl ProcessorConfig {
    pub fn homogeneous(&self) -> bool {
        !self.use_bias && !self.use_layer_norm && !self.use_gating
    }
}

/// Input feature widths for the three probe locations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputWidths {
    pub node: usize,
    pub edge: usize,
    pub graph: usize,
}

/// Row-major dense matrix mapping `rows` inputs to `cols` outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn random(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        Matrix {
            rows,
            cols,
            data: (0..rows * cols)
                .map(|_| rng.gen_range(-bound..bound))
                .collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `out[k] = sum_j input[j] * self[j][k]`, accumulated into `out`.
    fn apply_into(&self, input: &[f64], out: &mut [f64]) {
        debug_assert_eq!(input.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (j, &x) in input.iter().enumerate() {
            let row = &self.data[j * self.cols..(j + 1) * self.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
    }

    fn apply(&self, input: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.apply_into(input, &mut out);
        out
    }
}

/// Encoder and processor weights; optional parameter groups are present
/// exactly when the corresponding config switch is on.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessorParams {
    pub node_encoder: Matrix,
    pub edge_encoder: Matrix,
    pub graph_encoder: Matrix,
    /// Message transform over `[x_i || x_j || e_ij || g]`.
    pub message: Matrix,
    /// Update transform over `[x_i || m_i]`.
    pub update: Matrix,
    pub node_bias: Option<Vec<f64>>,
    pub edge_bias: Option<Vec<f64>>,
    pub graph_bias: Option<Vec<f64>>,
    pub message_bias: Option<Vec<f64>>,
    pub update_bias: Option<Vec<f64>>,
    pub layer_norm_scale: Option<Vec<f64>>,
    pub gate: Option<Matrix>,
    pub gate_bias: Option<Vec<f64>>,
}

impl ProcessorParams {
    pub fn hidden_dim(&self) -> usize {
        self.update.cols()
    }
}

/// Seeded uniform initialization on `[-1/sqrt(d), 1/sqrt(d))`. The same
/// seed always yields identical parameters.
pub fn init_params(config: &ProcessorConfig, widths: InputWidths, seed: u64) -> ProcessorParams {
    assert!(config.hidden_dim >= 1, "hidden dimension must be positive");
    assert!(
        widths.node >= 1 && widths.edge >= 1 && widths.graph >= 1,
        "input widths must be positive"
    );
    let d = config.hidden_dim;
    let bound = 1.0 / (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let node_encoder = Matrix::random(widths.node, d, bound, &mut rng);
    let edge_encoder = Matrix::random(widths.edge, d, bound, &mut rng);
    let graph_encoder = Matrix::random(widths.graph, d, bound, &mut rng);
    let message = Matrix::random(4 * d, d, bound, &mut rng);
    let update = Matrix::random(2 * d, d, bound, &mut rng);

    fn draw_vec(d: usize, bound: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..d).map(|_| rng.gen_range(-bound..bound)).collect()
    }
    let node_bias = config.use_bias.then(|| draw_vec(d, bound, &mut rng));
    let edge_bias = config.use_bias.then(|| draw_vec(d, bound, &mut rng));
    let graph_bias = config.use_bias.then(|| draw_vec(d, bound, &mut rng));
    let message_bias = config.use_bias.then(|| draw_vec(d, bound, &mut rng));
    let update_bias = config.use_bias.then(|| draw_vec(d, bound, &mut rng));
    let layer_norm_scale = config.use_layer_norm.then(|| draw_vec(d, bound, &mut rng));
    let gate = config
        .use_gating
        .then(|| Matrix::random(2 * d, d, bound, &mut rng));
    let gate_bias = (config.use_bias && config.use_gating).then(|| draw_vec(d, bound, &mut rng));

    ProcessorParams {
        node_encoder,
        edge_encoder,
        graph_encoder,
        message,
        update,
        node_bias,
        edge_bias,
        graph_bias,
        message_bias,
        update_bias,
        layer_norm_scale,
        gate,
        gate_bias,
    }
}

fn add_bias(out: &mut [f64], bias: Option<&Vec<f64>>) {
    if let Some(b) = bias {
        for (o, &x) in out.iter_mut().zip(b) {
            *o += x;
        }
    }
}

fn relu_inplace(v: &mut [f64]) {
    for x in v.iter_mut() {
        *x = x.max(0.0);
    }
}

/// Linearly encodes node, edge, and graph probes to the hidden dimension.
/// Bias is added only when the params carry one.
#[allow(clippy::type_complexity)]
pub fn encode_probes(
    params: &ProcessorParams,
    node_inputs: &[Vec<f64>],
    edge_inputs: &[Vec<Vec<f64>>],
    graph_inputs: &[f64],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>, Vec<f64>), ProcessorError> {
    let num_nodes = node_inputs.len();
    if edge_inputs.len() != num_nodes {
        return Err(ProcessorError::ShapeMismatch(format!(
            "edge inputs have {} rows for {num_nodes} nodes",
            edge_inputs.len()
        )));
    }
    let check_width = |got: usize, want: usize, what: &str| {
        if got == want {
            Ok(())
        } else {
            Err(ProcessorError::ShapeMismatch(format!(
                "{what} width {got}, encoder expects {want}"
            )))
        }
    };

    let mut node_feats = Vec::with_capacity(num_nodes);
    for input in node_inputs {
        check_width(input.len(), params.node_encoder.rows(), "node input")?;
        let mut out = params.node_encoder.apply(input);
        add_bias(&mut out, params.node_bias.as_ref());
        node_feats.push(out);
    }

    let mut edge_feats = Vec::with_capacity(num_nodes);
    for row in edge_inputs {
        if row.len() != num_nodes {
            return Err(ProcessorError::ShapeMismatch(
                "edge input matrix is not square".into(),
            ));
        }
        let mut feat_row = Vec::with_capacity(num_nodes);
        for input in row {
            check_width(input.len(), params.edge_encoder.rows(), "edge input")?;
            let mut out = params.edge_encoder.apply(input);
            add_bias(&mut out, params.edge_bias.as_ref());
            feat_row.push(out);
        }
        edge_feats.push(feat_row);
    }

    check_width(graph_inputs.len(), params.graph_encoder.rows(), "graph input")?;
    let mut graph_feat = params.graph_encoder.apply(graph_inputs);
    add_bias(&mut graph_feat, params.graph_bias.as_ref());

    Ok((node_feats, edge_feats, graph_feat))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One round of pairwise message passing.
///
/// Per node `i`: messages `relu(W_m [x_i || x_j || e_ij || g])` aggregated
/// over all `j` (self included), then `x'_i = relu(W_u [x_i || m_i])`.
/// Bias, layer normalization (per-node standardization with a learned
/// scale), and sigmoid gating against the previous state apply only when
/// the respective switches are on.
pub fn mp_step(
    params: &ProcessorParams,
    config: &ProcessorConfig,
    node_feats: &[Vec<f64>],
    edge_feats: &[Vec<Vec<f64>>],
    graph_feat: &[f64],
) -> Result<Vec<Vec<f64>>, ProcessorError> {
    let d = config.hidden_dim;
    if params.hidden_dim() != d {
        return Err(ProcessorError::ShapeMismatch(format!(
            "params built for d={}, config says d={d}",
            params.hidden_dim()
        )));
    }
    if config.use_bias && params.message_bias.is_none() {
        return Err(ProcessorError::ShapeMismatch(
            "config enables bias but params carry none".into(),
        ));
    }
    if config.use_layer_norm && params.layer_norm_scale.is_none() {
        return Err(ProcessorError::ShapeMismatch(
            "config enables layer norm but params carry no scale".into(),
        ));
    }
    if config.use_gating && params.gate.is_none() {
        return Err(ProcessorError::ShapeMismatch(
            "config enables gating but params carry no gate".into(),
        ));
    }
    let num_nodes = node_feats.len();
    if num_nodes == 0 {
        return Ok(Vec::new());
    }
    if graph_feat.len() != d {
        return Err(ProcessorError::ShapeMismatch(format!(
            "graph feature width {} != d={d}",
            graph_feat.len()
        )));
    }
    for feats in node_feats {
        if feats.len() != d {
            return Err(ProcessorError::ShapeMismatch(format!(
                "node feature width {} != d={d}",
                feats.len()
            )));
        }
    }
    if edge_feats.len() != num_nodes
        || edge_feats
            .iter()
            .any(|row| row.len() != num_nodes || row.iter().any(|e| e.len() != d))
    {
        return Err(ProcessorError::ShapeMismatch(
            "edge features must be |V| x |V| x d".into(),
        ));
    }

    let mut next = Vec::with_capacity(num_nodes);
    let mut pair_input = vec![0.0f64; 4 * d];
    let mut update_input = vec![0.0f64; 2 * d];
    for i in 0..num_nodes {
        pair_input[..d].copy_from_slice(&node_feats[i]);
        pair_input[3 * d..].copy_from_slice(graph_feat);

        let mut aggregated = match config.aggregation {
            Aggregation::Max => vec![f64::NEG_INFINITY; d],
            Aggregation::Sum => vec![0.0f64; d],
        };
        for j in 0..num_nodes {
            pair_input[d..2 * d].copy_from_slice(&node_feats[j]);
            pair_input[2 * d..3 * d].copy_from_slice(&edge_feats[i][j]);
            let mut message = params.message.apply(&pair_input);
            add_bias(&mut message, params.message_bias.as_ref());
            relu_inplace(&mut message);
            match config.aggregation {
                Aggregation::Max => {
                    for (a, m) in aggregated.iter_mut().zip(&message) {
                        *a = a.max(*m);
                    }
                }
                Aggregation::Sum => {
                    for (a, m) in aggregated.iter_mut().zip(&message) {
                        *a += m;
                    }
                }
            }
        }

        update_input[..d].copy_from_slice(&node_feats[i]);
        update_input[d..].copy_from_slice(&aggregated);
        let mut state = params.update.apply(&update_input);
        add_bias(&mut state, params.update_bias.as_ref());
        relu_inplace(&mut state);

        if config.use_layer_norm {
            let scale = params.layer_norm_scale.as_ref().expect("checked above");
            let mean = state.iter().sum::<f64>() / d as f64;
            let var = state.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d as f64;
            let denom = (var + 1e-5).sqrt();
            for (x, &s) in state.iter_mut().zip(scale) {
                *x = s * (*x - mean) / denom;
            }
        }

        if config.use_gating {
            let gate = params.gate.as_ref().expect("checked above");
            let mut gate_pre = gate.apply(&update_input);
            add_bias(&mut gate_pre, params.gate_bias.as_ref());
            for ((x, &pre), &prev) in state.iter_mut().zip(&gate_pre).zip(&node_feats[i]) {
                let gamma = sigmoid(pre);
                *x = gamma * *x + (1.0 - gamma) * prev;
            }
        }

        next.push(state);
    }
    Ok(next)
}

fn frobenius(rows: &[Vec<f64>]) -> f64 {
    rows.iter()
        .flat_map(|row| row.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Draws random features and reports the worst relative deviation of
/// `f(a * x)` from `a * f(x)` over all trials and scale factors.
pub fn homogeneity_check(
    params: &ProcessorParams,
    config: &ProcessorConfig,
    num_nodes: usize,
    trials: usize,
    alphas: &[f64],
    seed: u64,
) -> Result<f64, ProcessorError> {
    assert!(alphas.iter().all(|&a| a > 0.0), "scale factors must be positive");
    let d = config.hidden_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;

    for _ in 0..trials {
        let node_feats: Vec<Vec<f64>> = (0..num_nodes)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let edge_feats: Vec<Vec<Vec<f64>>> = (0..num_nodes)
            .map(|_| {
                (0..num_nodes)
                    .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let graph_feat: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let base = mp_step(params, config, &node_feats, &edge_feats, &graph_feat)?;
        for &alpha in alphas {
            let scaled_nodes: Vec<Vec<f64>> = node_feats
                .iter()
                .map(|row| row.iter().map(|x| alpha * x).collect())
                .collect();
            let scaled_edges: Vec<Vec<Vec<f64>>> = edge_feats
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|e| e.iter().map(|x| alpha * x).collect())
                        .collect()
                })
                .collect();
            let scaled_graph: Vec<f64> = graph_feat.iter().map(|x| alpha * x).collect();

            let scaled_out = mp_step(params, config, &scaled_nodes, &scaled_edges, &scaled_graph)?;
            let expected: Vec<Vec<f64>> = base
                .iter()
                .map(|row| row.iter().map(|x| alpha * x).collect())
                .collect();
            let diff: Vec<Vec<f64>> = scaled_out
                .iter()
                .zip(&expected)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect();
            let deviation = frobenius(&diff) / frobenius(&expected).max(1e-12);
            worst = worst.max(deviation);
        }
    }
    Ok(worst)
}
