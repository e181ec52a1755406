//! Metrics, evaluation and the command-line driver.

pub mod cli;
pub mod eval;
pub mod metrics;
pub mod pgm;
