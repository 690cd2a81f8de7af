//! Experiment runner for squared G-Bessel processes: configuration,
//! checks and report output behind the `gbesq` binary.

pub mod checks;
pub mod config;
pub mod payoff;
pub mod report;

pub use config::{ConfigError, ExperimentConfig};
pub use report::{Report, RunOutput};

/// Validates `cfg` and runs its check.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, ConfigError> {
    checks::run(cfg)
}
