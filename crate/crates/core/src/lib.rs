//! Geometry-aware stationary subspace analysis.

pub mod cli;
pub mod covariance;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod gassa;
pub mod grassmann;
pub mod io;
pub mod optim;
pub mod spd;
pub mod ssa;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use nalgebra;
