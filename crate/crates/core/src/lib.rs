//! Quasi-periodic kicked rotor laboratory.

pub mod analysis;
pub mod baselines;
pub mod cli;
pub mod crit;
pub mod engine;
pub mod error;
pub mod io;
pub mod model;
pub mod numeric;
pub mod plot;
pub mod rng;
pub mod scaling;

pub use error::{Error, Result};
