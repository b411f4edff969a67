//! Spectral analysis and simulation of age and trait structured
//! selection-mutation populations.
//!
//! The crate computes the growth rate and eigen-elements of the linear
//! renewal problem, the stationary state of the logistic problem, and runs
//! both the deterministic PDE and the stochastic individual-based model.

pub mod error;
pub mod ibm;
pub mod kernel;
pub mod model;
pub mod output;
pub mod quadrature;
pub mod malthus;
pub mod pde;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
