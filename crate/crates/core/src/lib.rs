//! Benchmark harness for non-parametric two-sample tests.

pub mod dataio;
pub mod deformations;
pub mod ecdf;
pub mod error;
pub mod matrix;
pub mod models;
pub mod nulls;
pub mod rng;
pub mod scan;
pub mod sphere;
pub mod statistics;

pub use error::{Error, Result};
