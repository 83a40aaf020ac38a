//! Regularized unfolding with detector nuisance parameters, and covariance
//! estimates for the unfolded spectrum by inverse Hessian, frequentist
//! pseudo-experiments and hybrid pseudo-experiments.

pub mod cli;
pub mod covest;
pub mod error;
pub mod fit;
pub mod hist;
mod keyvalue;
pub mod objective;
pub mod simkit;

pub use error::{Error, Result};
