//! One runner per command.

mod cir;
mod hitting;
mod laplace;
mod path_props;
mod pde_solve;
mod scaling;
mod simulate;

use gbesq::TimeGrid;

use crate::config::{Check, ConfigError, ExperimentConfig};
use crate::report::RunOutput;

pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, ConfigError> {
    cfg.validate()?;
    match &cfg.check {
        Check::Simulate(c) => simulate::run(cfg, c),
        Check::LaplaceCheck(c) => laplace::run(cfg, c),
        Check::HittingCheck(c) => hitting::run(cfg, c),
        Check::PathProps(c) => path_props::run(cfg, c),
        Check::CirCheck(c) => cir::run(cfg, c),
        Check::ScalingCheck(c) => scaling::run(cfg, c),
        Check::PdeSolve(c) => pde_solve::run(cfg, c),
    }
}

/// Index of a time that must be a node of `grid`.
pub(crate) fn node(grid: &TimeGrid, t: f64, field: &str) -> Result<usize, ConfigError> {
    grid.node_index(t)
        .ok_or_else(|| ConfigError::Invalid(format!("{field}: t = {t} is not a node of the grid")))
}

/// `sqrt(a^2 + b^2)`.
pub(crate) fn joint(a: f64, b: f64) -> f64 {
    a.hypot(b)
}
