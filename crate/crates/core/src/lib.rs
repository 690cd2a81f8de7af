//! Squared Bessel processes driven by a Brownian motion with uncertain
//! volatility.
//!
//! The sublinear expectation is represented as a supremum of ordinary
//! expectations over volatility controls with values in a band
//! `[sigma_lo_sq, sigma_hi_sq]`. Monte Carlo suprema over finite control
//! families are cross-checked against closed forms ([`analytics`]) and
//! explicit HJB solvers ([`pde`]).

pub mod analytics;
pub mod besq;
pub mod control;
pub mod control_opt;
pub mod error;
pub mod model;
pub mod paths;
pub mod pde;
pub mod stats;

pub use control::{ControlSpec, FeedbackPolicy};
pub use control_opt::{ControlFamily, Estimate, HittingRecord, MonitorMode};
pub use error::{Error, Result};
pub use model::{ModelParams, RngSpec, TimeGrid};
pub use paths::{PathBundle, PathWalker, Schedule};
pub use pde::PdeSolution;
pub use stats::Summary;
