//! Numerical toolkit for random compositions of hyperbolic torus maps: cone
//! certification, random products, measures at scale, pushed curves, projective
//! distributions and equidistribution diagnostics.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cone;
pub mod curve;
pub mod equidist;
pub mod error;
pub mod harness;
pub mod measure;
pub mod projective;
pub mod random_system;
pub mod torus;

pub use error::{LabError, Result};
