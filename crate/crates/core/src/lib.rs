//! Constrained multi-objective surrogate-assisted optimization.
//!
//! A single network learns objectives (regression head) and constraint
//! satisfaction probabilities (sigmoid head) from shared features. Its input
//! gradients steer candidates toward feasible, low-objective regions, and its
//! sensitivities shape the NSGA-II variation operators. The outer loop lives
//! in [`engine`].

pub mod domain;
pub mod engine;
pub mod error;
pub mod evaluator;
pub mod feasolve;
pub mod metrics;
pub mod moea;
pub mod problems;
pub mod rng;
pub mod sampling;
pub mod sensitivity;
pub mod surrogate;

pub use domain::{
    dominates, is_feasible, EpochMetrics, EvaluationRecord, InsertOutcome, ParameterSpace,
    ParetoArchive, Population, Provenance, RunHistory,
};
pub use error::{Error, Result};
pub use rng::RandomStream;
