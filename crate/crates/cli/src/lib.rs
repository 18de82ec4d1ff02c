//! Reproducible end-to-end jobs over the surprise and serendipity library:
//! configuration, the subcommands, and their deterministic outputs.

pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{Family, Job, JobConfig, TuningConfig};
pub use error::{CliError, Result};
pub use pipeline::{run_job, Command};
