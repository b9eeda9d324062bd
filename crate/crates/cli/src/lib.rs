//! Batch runner for quantized Markov game experiments: config parsing, the
//! quantize → solve → certify pipeline, and result artifacts.

pub mod config;
pub mod run;

pub use config::{ConfigError, Mode, RunConfig};
pub use run::{run, run_file, write_artifacts, Overrides, RunError, RunResult};
