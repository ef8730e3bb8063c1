//! Command-line front end for `obsgrass`: Gram-solver and distance
//! benchmarks, the Monte Carlo check of the rank-one cosine, pairwise SSM
//! distances and continual-learning runs.

pub mod app;
pub mod bench;
pub mod cl;
pub mod error;
pub mod mc;

pub use error::{CliError, ExitStatus, Result};
