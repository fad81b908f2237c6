//! Metric-learning screening for nonparametric variable selection.
//!
//! The crate maximizes between-minus-within class pair objectives over a
//! weighted `l1` ball and uses iterative rebalancing to uncover main effects,
//! hierarchical interactions and pure interactions.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod io;
pub mod kernels;
pub mod objective;
pub mod optimizer;
pub mod oracle;
pub mod rebalance;
pub mod screening;
pub mod simgen;

pub use error::{Error, Result};
pub use experiments::{run_plan, ExperimentPlan, Method, RecoveryReport};
pub use kernels::{pair_delta, Exponent, KernelFamily, KernelSpec, PairDelta};
pub use objective::{
    evaluate, evaluate_with_gradient, gradient, Objective, PairMass, SampleObjective,
    WeightedDataset,
};
pub use optimizer::{ascend, project, AscentConfig, AscentResult, ConstraintSet};
pub use rebalance::{compute_weights, fit_conditional, rebalance, BoostConfig, CondProbModel};
pub use screening::{screen, GammaMode, ScreenConfig, ScreenMode, ScreenResult};
pub use simgen::{generate, DiscreteDist, ModelSpec, RawDataset};
