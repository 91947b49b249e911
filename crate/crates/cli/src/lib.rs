//! Library surface of the experiment runner, used by the binary and by the
//! integration tests.

pub mod config;
pub mod runner;

pub use runner::{run_file, RunOptions};
