//! Physics-informed neural solvers for the Cahn-Hilliard and
//! Navier-Stokes-Cahn-Hilliard systems, with an empirical harness for the
//! rate of convergence and condition number of the residual-to-error map
//! against a manufactured exact solution.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod error;
pub mod loss;
pub mod netjet;
pub mod parallel;
pub mod plot;
pub mod problems;
pub mod sampling;
pub mod train;

pub use error::{Error, Result};
