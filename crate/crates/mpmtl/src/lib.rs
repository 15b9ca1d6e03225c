//! Model-protected multi-task learning.
//!
//! Joint training of linear multi-task models where the shared task
//! covariance is released only after Wishart perturbation, keeping each
//! task's model differentially private with respect to the other tasks.
//! Includes the privacy-budget accountant, the low-rank and group-sparse
//! private estimators, non-private and single-task baselines, synthetic
//! benchmark generators, and a replicated-experiment runner.

pub mod accountant;
pub mod config;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod losses;
pub mod model;
pub mod prox;
pub mod rng;
pub mod synthdata;
pub mod wishart;

pub use error::{Error, Result};
