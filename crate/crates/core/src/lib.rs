//! Deterministic particle solvers for the spatially homogeneous Landau
//! equation, with learned and kernel score estimates.

pub mod analytic;
pub mod diagnostics;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod sampling;
pub mod score;
mod simd;

pub use error::{Error, Result};
