//! Batch front end for the two-asset American option solvers.

pub mod commands;
pub mod config;

pub use commands::{fmt9, run_command, write_artifacts, Artifact, Outcome};
pub use config::{parse_config, resolve, Command, ConfigError, RawConfig, RunConfig};

/// Exit status for invalid configurations and inputs.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit status for solver failures.
pub const EXIT_NUMERICAL: i32 = 2;

/// Exit status for an error raised while running a command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<pidcp::Error>() {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}
