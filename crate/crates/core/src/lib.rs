//! Spline-based Kolmogorov-Arnold network regression.
//!
//! The crate provides clamped B-spline bases and penalized univariate
//! least-squares fits (`spline`), single-hidden-layer KAN models with additive
//! and multiplicative nodes (`model`), least-squares backfitting training
//! (`train`), synthetic Sobolev-smooth regression targets (`targets`), and a
//! deterministic convergence-study harness (`experiment`).

pub mod experiment;
pub mod model;
pub mod spline;
pub mod targets;
pub mod train;

pub use model::{init_model, AggregationKind, KanModel, KanNode, Normalizer};
pub use spline::{fit_least_squares, knot_count_rule, KnotVector, SplineFunction};
pub use targets::{GenConfig, TargetKind, TargetSpec};
pub use train::{fit, training_mse, Dataset, FitTrace, TrainConfig};
