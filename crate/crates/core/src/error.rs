//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LabError {
    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("inverse did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("invalid cone system: {0}")]
    InvalidCone(String),

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("exact enumeration needs {count} words, above the limit of {limit}")]
    EnumerationTooLarge { count: u128, limit: u128 },

    #[error("grid cell {cell:e} is larger than rho/8 for rho = {rho:e}")]
    ResolutionTooCoarse { cell: f64, rho: f64 },

    #[error("curvature contraction factor a = {a} is not below 1; increase n_probe")]
    ContractionFailure { a: f64 },

    #[error("tangent left the unstable cone at step {step}, node {node}")]
    ConeExit { step: usize, node: usize },

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("Newton refinement diverged from candidate ({x}, {y})")]
    NewtonDivergence { x: f64, y: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
