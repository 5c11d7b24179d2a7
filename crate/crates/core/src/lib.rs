//! Non-neural computational core of a two-phase knapsack reasoning
//! pipeline.
//!
//! The crate covers the full data path around a neural algorithmic
//! reasoner for 0/1 knapsack without the training stack itself:
//!
//! - [`instance`]: validated problem instances, seeded uniform samplers,
//!   and reductions from Subset Sum and Partition
//! - [`oracle`]: exact pseudo-polynomial DP tables, classical
//!   backtracking, and a brute-force reference solver
//! - [`softrecon`]: a differentiable mass-splitting relaxation of
//!   backtracking with analytic reverse-mode gradients and a
//!   finite-difference oracle
//! - [`encoding`]: construction/reconstruction graphs, categorical edge
//!   length encoding, and one-hot weight features
//! - [`trajectory`]: per-step hint sequences for both phases plus a
//!   structural validator
//! - [`processor`]: a minimal message-passing network with switchable
//!   bias/layer-norm/gating for positive-homogeneity checks
//! - [`metrics`]: micro-F1, greedy discretization, and exact-match
//!   evaluation
//! - [`dataset`]: JSON Lines serialization for every record kind
//!
//! Everything is pure and deterministic under explicit seeds; instances
//! can be processed in parallel with no shared state.
//!
//! ## Example
//!
//! Solve an instance exactly, then reproduce the optimal selection with
//! the differentiable reconstruction running on the true decision table:
//!
//! ```
//! use knar_core::instance::KnapsackInstance;
//! use knar_core::oracle;
//! use knar_core::softrecon::{probs_from_tables, soft_reconstruct};
//!
//! let instance = KnapsackInstance::new(
//!     "demo",
//!     vec![2, 3],
//!     vec![0.6, 0.7],
//!     4,  // capacity
//!     8,  // w_max
//! )?;
//!
//! let (tables, solution) = oracle::solve(&instance);
//! assert_eq!(solution.selected, vec![0, 1]);
//! assert_eq!(solution.total_value, 0.7);
//!
//! let soft = soft_reconstruct(&instance, &probs_from_tables(&tables))?;
//! assert_eq!(soft.soft_selected, vec![0.0, 1.0]);
//! assert!(soft.row_mass_error() <= 1e-9);
//! # Ok::<(), Box<dyn std::error::Error>>(())
//! ```

pub mod dataset;
pub mod encoding;
pub mod instance;
pub mod metrics;
pub mod oracle;
pub mod processor;
pub mod softrecon;
pub mod trajectory;

pub use dataset::{read_dataset, write_dataset, SolvedInstance};
pub use instance::{KnapsackInstance, SamplerConfig, Solution};
pub use oracle::DpTables;
pub use softrecon::DecisionProbTable;
