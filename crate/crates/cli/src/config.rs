//! Experiment configuration. TOML is the primary encoding; a file whose
//! name ends in `.json` is read as JSON.

use std::path::{Path, PathBuf};

use gbesq::control_opt::{ControlFamily, CurveKind, MonitorMode};
use gbesq::{ControlSpec, ModelParams, RngSpec, TimeGrid};
use serde::{Deserialize, Serialize};

use crate::payoff::Payoff;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl From<gbesq::Error> for ConfigError {
    fn from(e: gbesq::Error) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub rng: RngSpec,
    pub model: ModelParams,
    pub grid: TimeGrid,
    #[serde(default = "default_family")]
    pub family: ControlFamily,
    #[serde(default)]
    pub monitor: MonitorMode,
    pub check: Check,
}

fn default_family() -> ControlFamily {
    ControlFamily::ConstantGrid { count: 5 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Check {
    Simulate(SimulateCheck),
    LaplaceCheck(LaplaceCheck),
    HittingCheck(HittingCheck),
    PathProps(PathProps),
    CirCheck(CirCheck),
    ScalingCheck(ScalingCheck),
    PdeSolve(PdeSolve),
}

impl Check {
    pub fn id(&self) -> &'static str {
        match self {
            Check::Simulate(_) => "simulate",
            Check::LaplaceCheck(_) => "laplace-check",
            Check::HittingCheck(_) => "hitting-check",
            Check::PathProps(_) => "path-props",
            Check::CirCheck(_) => "cir-check",
            Check::ScalingCheck(_) => "scaling-check",
            Check::PdeSolve(_) => "pde-solve",
        }
    }
}

fn three() -> f64 {
    3.0
}
fn four() -> f64 {
    4.0
}
fn two() -> f64 {
    2.0
}
fn one() -> usize {
    1
}
fn thousand() -> usize {
    1000
}
fn pde_slack() -> f64 {
    1e-3
}
fn per_unit() -> usize {
    128
}
fn yes() -> bool {
    true
}
fn half_order() -> (f64, f64) {
    (0.4, 0.6)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateCheck {
    pub n_paths: usize,
    pub control: ControlSpec,
    /// Number of sample paths written as CSV.
    #[serde(default = "one")]
    pub export_paths: usize,
    #[serde(default = "four")]
    pub tolerance_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaplaceCheck {
    pub lambdas: Vec<f64>,
    pub times: Vec<f64>,
    /// Empty means the model dimension only.
    #[serde(default)]
    pub dims: Vec<f64>,
    /// Empty means the model start only.
    #[serde(default)]
    pub starts: Vec<f64>,
    pub n_paths: usize,
    #[serde(default = "three")]
    pub tolerance_se: f64,
    #[serde(default = "yes")]
    pub pde: bool,
    #[serde(default = "per_unit")]
    pub pde_per_unit: usize,
    /// Absolute slack of the PDE value against the bounds.
    #[serde(default = "pde_slack")]
    pub pde_slack: f64,
    /// Relative PDE tolerance against the classical transform when the band is degenerate.
    #[serde(default = "pde_slack")]
    pub classical_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HittingCheck {
    pub a: f64,
    pub b: f64,
    pub n_paths: usize,
    /// Defaults to the members of the configured family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controls: Option<Vec<ControlSpec>>,
    #[serde(default = "three")]
    pub tolerance_se: f64,
    #[serde(default = "hitting_abs")]
    pub tolerance_abs: f64,
    /// Step counts (on the configured horizon) for the grid-only bias study.
    #[serde(default)]
    pub refinement: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinement_paths: Option<usize>,
}

fn hitting_abs() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PathProps {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tail: Option<TailSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub curves: Vec<CurveSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modulus: Option<ModulusSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bessel: Option<BesselSection>,
}

/// Sections that may replace the top-level model, grid and family.
pub trait Overridable {
    fn model(&self) -> Option<ModelParams>;
    fn grid(&self) -> Option<TimeGrid>;
    fn family(&self) -> Option<&ControlFamily>;

    fn resolve(&self, cfg: &ExperimentConfig) -> (ModelParams, TimeGrid, ControlFamily) {
        (
            self.model().unwrap_or(cfg.model),
            self.grid().unwrap_or(cfg.grid),
            self.family().unwrap_or(&cfg.family).clone(),
        )
    }
}

macro_rules! overridable {
    ($($t:ty),*) => {$(
        impl Overridable for $t {
            fn model(&self) -> Option<ModelParams> {
                self.model
            }
            fn grid(&self) -> Option<TimeGrid> {
                self.grid
            }
            fn family(&self) -> Option<&ControlFamily> {
                self.family.as_ref()
            }
        }
    )*};
}

overridable!(DriftSection, TailSection, CurveSection, ModulusSection, BesselSection);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub controls: Vec<ControlSpec>,
    pub n_paths: usize,
    #[serde(default = "four")]
    pub tolerance_se: f64,
    /// Grid of the Laplace martingale; its horizon is the `T` in `M_0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub laplace_grid: Option<TimeGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<TimeGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<ControlFamily>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailSection {
    pub b: f64,
    pub times: Vec<f64>,
    pub n_paths: usize,
    #[serde(default = "three")]
    pub tolerance_se: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<TimeGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<ControlFamily>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CurveExpectation {
    /// Each estimate at most the previous one plus `joint_se` joint standard errors.
    Decreasing { joint_se: f64 },
    /// Each estimate at most the closed-form capacity plus `se` standard errors.
    BelowClosedForm { se: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSection {
    pub name: String,
    pub curve: CurveKind,
    pub sweep: Vec<f64>,
    pub n_paths: usize,
    pub expect: Vec<CurveExpectation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<TimeGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<ControlFamily>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulusSection {
    /// Step counts on the configured horizon, coarse to fine.
    pub steps: Vec<usize>,
    #[serde(default = "thousand")]
    pub n_paths: usize,
    pub control: ControlSpec,
    #[serde(default = "half_order")]
    pub order_range: (f64, f64),
    /// Bound on the RMS sup-distance at the finest grid.
    pub max_rms: f64,
    /// Allowed RMS ratio per halving of the step.
    #[serde(default = "halving_ratio")]
    pub ratio_range: (f64, f64),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<TimeGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<ControlFamily>,
}

fn halving_ratio() -> (f64, f64) {
    (1.2, 1.7)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesselSection {
    pub steps: Vec<usize>,
    #[serde(default = "thousand")]
    pub n_paths: usize,
    pub control: ControlSpec,
    /// Bound on the residual RMS at the finest grid.
    pub max_rms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<TimeGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<ControlFamily>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CirCheck {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub control: ControlSpec,
    pub times: Vec<f64>,
    pub n_paths: usize,
    /// Step counts on the configured horizon for the residual study.
    pub refinement: Vec<usize>,
    #[serde(default = "thousand")]
    pub residual_paths: usize,
    #[serde(default = "half_order")]
    pub order_range: (f64, f64),
    #[serde(default = "three")]
    pub tolerance_se: f64,
    #[serde(default = "qv_rel")]
    pub qv_rel: f64,
}

fn qv_rel() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingCheck {
    pub lambda: f64,
    pub control: ControlSpec,
    pub n_paths: usize,
    #[serde(default = "three")]
    pub tolerance_se: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inversion: Option<InversionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay: Option<DecaySection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionSection {
    pub t_min: f64,
    pub t_max: f64,
    pub n_out: usize,
    /// Steps on `[0, 1/t_min]`.
    pub n_steps: usize,
    pub n_paths: usize,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    pub horizon: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub d: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PdeSolve {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub heat: Vec<HeatCase>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub besq: Vec<BesqCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit: Option<ExitCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<RandomPayoffs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enlargement: Option<Enlargement>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatCase {
    pub payoff: Payoff,
    pub half_width: f64,
    pub n_x: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_t: Option<usize>,
    #[serde(default)]
    pub x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
    #[serde(default = "pde_slack")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesqCase {
    pub payoff: Payoff,
    #[serde(default = "per_unit")]
    pub per_unit: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_t: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<gbesq::pde::BesqScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
    #[serde(default = "pde_slack")]
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitCase {
    pub a: f64,
    pub b: f64,
    pub z: f64,
    pub dims: Vec<f64>,
    pub n_z: usize,
    #[serde(default = "exit_tol")]
    pub tolerance: f64,
}

fn exit_tol() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomPayoffs {
    pub count: usize,
    #[serde(default = "two")]
    pub half_width: f64,
    #[serde(default = "small_grid")]
    pub n_x: usize,
}

fn small_grid() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Enlargement {
    pub count: usize,
    /// Band containing the model band.
    pub sigma_lo_sq: f64,
    pub sigma_hi_sq: f64,
    #[serde(default = "two")]
    pub half_width: f64,
    #[serde(default = "small_grid")]
    pub n_x: usize,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let parse_err = |message: String| ConfigError::Parse {
            path: path.to_owned(),
            message,
        };
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))
        } else {
            Self::from_toml(&text).map_err(|e| parse_err(e.to_string()))
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every block that can be checked before running.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate()?;
        self.grid.validate()?;
        self.family.members(&self.model, self.grid.horizon)?;
        let ordered = |name: &str, v: &[f64]| -> Result<(), ConfigError> {
            if v.is_empty() {
                return Err(ConfigError::Invalid(format!("{name} must not be empty")));
            }
            if v.windows(2).any(|w| !(w[0] < w[1])) && v.windows(2).any(|w| !(w[0] > w[1])) {
                return Err(ConfigError::Invalid(format!("{name} must be strictly ordered")));
            }
            Ok(())
        };
        let overrides = |o: &dyn Overridable| -> Result<(), ConfigError> {
            let (model, grid, family) = o.resolve(self);
            model.validate()?;
            let grid = grid.validate()?;
            family.members(&model, grid.horizon)?;
            Ok(())
        };
        match &self.check {
            Check::Simulate(_) => {}
            Check::LaplaceCheck(c) => {
                ordered("lambdas", &c.lambdas)?;
                ordered("times", &c.times)?;
            }
            Check::HittingCheck(c) => {
                if !(c.a > 0.0 && c.a < self.model.z && self.model.z < c.b) {
                    return Err(ConfigError::Invalid(format!(
                        "levels need 0 < a < z < b, got a={}, z={}, b={}",
                        c.a, self.model.z, c.b
                    )));
                }
            }
            Check::PathProps(p) => {
                if let Some(d) = &p.drift {
                    overrides(d)?;
                }
                if let Some(t) = &p.tail {
                    ordered("tail.times", &t.times)?;
                    overrides(t)?;
                }
                for c in &p.curves {
                    ordered(&format!("curves.{}.sweep", c.name), &c.sweep)?;
                    overrides(c)?;
                }
                if let Some(m) = &p.modulus {
                    overrides(m)?;
                }
                if let Some(b) = &p.bessel {
                    overrides(b)?;
                }
            }
            Check::CirCheck(c) => {
                ordered("times", &c.times)?;
                gbesq::besq::CirSpec { a: c.a, b: c.b, c: c.c }.validate(self.model.d)?;
            }
            Check::ScalingCheck(s) => {
                if let Some(inv) = &s.inversion {
                    if !(inv.t_min > 0.0) {
                        return Err(ConfigError::Invalid("inversion.t_min must be positive".into()));
                    }
                }
            }
            Check::PdeSolve(_) => {}
        }
        Ok(())
    }

    /// Caps every path count, for quick reruns of a configuration.
    pub fn cap_paths(&mut self, max: usize) {
        let cap = |n: &mut usize| *n = (*n).min(max);
        match &mut self.check {
            Check::Simulate(c) => cap(&mut c.n_paths),
            Check::LaplaceCheck(c) => cap(&mut c.n_paths),
            Check::HittingCheck(c) => {
                cap(&mut c.n_paths);
                if let Some(n) = c.refinement_paths.as_mut() {
                    cap(n);
                }
            }
            Check::PathProps(p) => {
                if let Some(d) = p.drift.as_mut() {
                    cap(&mut d.n_paths);
                }
                if let Some(t) = p.tail.as_mut() {
                    cap(&mut t.n_paths);
                }
                p.curves.iter_mut().for_each(|c| cap(&mut c.n_paths));
                if let Some(m) = p.modulus.as_mut() {
                    cap(&mut m.n_paths);
                }
                if let Some(b) = p.bessel.as_mut() {
                    cap(&mut b.n_paths);
                }
            }
            Check::CirCheck(c) => {
                cap(&mut c.n_paths);
                cap(&mut c.residual_paths);
            }
            Check::ScalingCheck(s) => {
                cap(&mut s.n_paths);
                if let Some(i) = s.inversion.as_mut() {
                    cap(&mut i.n_paths);
                }
                if let Some(d) = s.decay.as_mut() {
                    cap(&mut d.n_paths);
                }
            }
            Check::PdeSolve(_) => {}
        }
    }
}
