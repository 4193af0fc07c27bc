//! Sup-norm estimation of the mean of functional data observed on a
//! discrete design: local polynomial and interpolation estimators,
//! theoretical rates, bandwidth selection, simultaneous confidence bands and
//! a Monte-Carlo harness.

pub mod bands;
pub mod bandwidth;
pub mod cli;
pub mod error;
pub mod estimation;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod rates;
pub mod simulation;
pub mod weights;

pub use error::{Error, Result};
