//! Monte Carlo G-expectations and capacities as suprema over finite control
//! families, exit-time detection on discrete paths and martingale drift checks.
//!
//! Every member of a family is simulated with the same [`RngSpec`], so the
//! members share their Gaussian draws (common random numbers). Reported
//! suprema are lower estimates of the true sublinear expectation: the family
//! is a finite subset of all admissible measures.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::ScaleFunction;
use crate::control::{ControlSpec, FeedbackPolicy};
use crate::error::{invalid, Error, Result};
use crate::model::{ModelParams, RngSpec};
use crate::paths::{map_paths, PathWalker, Schedule};
use crate::stats::Summary;

/// Relative size of the level standing in for the origin.
pub const TAU0_PROXY: f64 = 1e-6;

const LANE_LOWER: u64 = 0;
const LANE_UPPER: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub ci95: (f64, f64),
    pub best_control: ControlSpec,
}

impl Estimate {
    fn from_summary(s: &Summary, control: &ControlSpec) -> Self {
        Self {
            value: s.mean,
            stderr: s.stderr,
            n_paths: s.n,
            ci95: (s.mean - 1.96 * s.stderr, s.mean + 1.96 * s.stderr),
            best_control: control.clone(),
        }
    }
}

/// Finite set of controls searched for a supremum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ControlFamily {
    /// `count` constants evenly spanning the band, endpoints included.
    ConstantGrid { count: usize },
    /// For each switch time, high-then-low and low-then-high.
    BangBang { switch_times: Vec<f64> },
    FeedbackSet { policies: Vec<FeedbackPolicy> },
    /// Explicit list of controls.
    Explicit { controls: Vec<ControlSpec> },
}

impl ControlFamily {
    /// Enumerates the members. A degenerate band collapses every family to
    /// its single constant control.
    pub fn members(&self, params: &ModelParams, horizon: f64) -> Result<Vec<ControlSpec>> {
        let (lo, hi) = params.band();
        let empty = || Error::InvalidControl("control family is empty".into());
        let members = match self {
            ControlFamily::ConstantGrid { count: 0 } => return Err(empty()),
            _ if lo == hi => vec![ControlSpec::constant(hi)],
            ControlFamily::ConstantGrid { count: 1 } => vec![ControlSpec::constant(hi)],
            ControlFamily::ConstantGrid { count } => (0..*count)
                .map(|j| {
                    let v = if j + 1 == *count {
                        hi
                    } else {
                        lo + (hi - lo) * j as f64 / (*count - 1) as f64
                    };
                    ControlSpec::constant(v)
                })
                .collect(),
            ControlFamily::BangBang { switch_times } => switch_times
                .iter()
                .flat_map(|&s| [ControlSpec::switch_at(s, hi, lo), ControlSpec::switch_at(s, lo, hi)])
                .collect(),
            ControlFamily::FeedbackSet { policies } => {
                policies.iter().cloned().map(ControlSpec::feedback).collect()
            }
            ControlFamily::Explicit { controls } => controls.clone(),
        };
        if members.is_empty() {
            return Err(empty());
        }
        for c in &members {
            c.validate(params, horizon)?;
        }
        Ok(members)
    }
}

/// Plain Monte Carlo mean of `functional` under one control. The functional
/// drives the walker itself and may stop early.
pub fn estimate_expectation<F>(
    functional: F,
    params: &ModelParams,
    schedule: &Schedule,
    control: &ControlSpec,
    n_paths: usize,
    rng: RngSpec,
) -> Result<Estimate>
where
    F: Fn(&mut PathWalker<'_>) -> f64 + Sync,
{
    if n_paths < 2 {
        return Err(Error::TooFewPaths {
            required: 2,
            got: n_paths,
        });
    }
    let values = map_paths(params, schedule, control, n_paths, rng, functional)?;
    Ok(Estimate::from_summary(&Summary::of(&values), control))
}

/// One estimate per family member, in enumeration order.
pub fn evaluate_family<F>(
    functional: F,
    params: &ModelParams,
    schedule: &Schedule,
    family: &ControlFamily,
    n_paths: usize,
    rng: RngSpec,
) -> Result<Vec<Estimate>>
where
    F: Fn(&mut PathWalker<'_>) -> f64 + Sync,
{
    let members = family.members(params, schedule.horizon())?;
    members
        .par_iter()
        .map(|c| estimate_expectation(&functional, params, schedule, c, n_paths, rng))
        .collect()
}

/// Largest member estimate; the first member wins ties.
pub fn sup_of(estimates: &[Estimate]) -> Option<&Estimate> {
    estimates
        .iter()
        .fold(None, |best: Option<&Estimate>, e| match best {
            Some(b) if b.value >= e.value => Some(b),
            _ => Some(e),
        })
}

/// Family-sup estimate of `sup_P E_P[functional]`.
pub fn sup_expectation<F>(
    functional: F,
    params: &ModelParams,
    schedule: &Schedule,
    family: &ControlFamily,
    n_paths: usize,
    rng: RngSpec,
) -> Result<Estimate>
where
    F: Fn(&mut PathWalker<'_>) -> f64 + Sync,
{
    let all = evaluate_family(functional, params, schedule, family, n_paths, rng)?;
    Ok(sup_of(&all).cloned().expect("family members are nonempty"))
}

/// Family-sup estimate of the capacity of a path event.
pub fn capacity<E>(
    event: E,
    params: &ModelParams,
    schedule: &Schedule,
    family: &ControlFamily,
    n_paths: usize,
    rng: RngSpec,
) -> Result<Estimate>
where
    E: Fn(&mut PathWalker<'_>) -> bool + Sync,
{
    sup_expectation(
        |w: &mut PathWalker<'_>| if event(w) { 1.0 } else { 0.0 },
        params,
        schedule,
        family,
        n_paths,
        rng,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum First {
    AFirst,
    BFirst,
    Neither,
}

/// First grid indices at or beyond the levels; `None` means not hit within the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HittingRecord {
    pub tau_a_index: Option<usize>,
    pub tau_b_index: Option<usize>,
    pub first: First,
}

impl HittingRecord {
    fn new(tau_a_index: Option<usize>, tau_b_index: Option<usize>) -> Self {
        let first = match (tau_a_index, tau_b_index) {
            (Some(i), Some(j)) if i <= j => First::AFirst,
            (Some(_), None) => First::AFirst,
            (_, Some(_)) => First::BFirst,
            (None, None) => First::Neither,
        };
        Self {
            tau_a_index,
            tau_b_index,
            first,
        }
    }

    /// Index of the first exit from `(a, b)`.
    pub fn exit_index(&self) -> Option<usize> {
        match (self.tau_a_index, self.tau_b_index) {
            (Some(i), Some(j)) => Some(i.min(j)),
            (i, j) => i.or(j),
        }
    }
}

fn check_exit_levels(z: f64, a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && a < z && z < b) {
        return Err(Error::LevelOrder(format!("0 < a < z < b, got a={a}, z={z}, b={b}")));
    }
    Ok(())
}

/// First grid crossing of `a` from above and `b` from below by the series.
/// `b` may be infinite.
pub fn detect_hitting(z: &[f64], a: f64, b: f64) -> Result<HittingRecord> {
    let z0 = *z.first().ok_or(Error::MissingSeries("z"))?;
    check_exit_levels(z0, a, b)?;
    let tau_a = z.iter().position(|&v| v <= a);
    let tau_b = z.iter().position(|&v| v >= b);
    Ok(HittingRecord::new(tau_a, tau_b))
}

/// How crossings between grid nodes are detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonitorMode {
    /// Only node values count.
    Grid,
    /// Adds a Brownian-bridge crossing test for `sqrt(Z)` inside each cell.
    #[default]
    Bridge,
}

/// Streaming exit detector fed after every [`PathWalker::advance`].
///
/// In bridge mode a cell whose end points both stay inside the interval
/// still counts as a crossing of level `l` with probability
/// `exp(-2 (r0 - l)(r1 - l) / dqv)` in `r = sqrt(Z)` coordinates, decided
/// by a counter-based uniform. In dimension one the signed coordinate is
/// used, so a sign change is a certain crossing of every lower level.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitMonitor {
    a: f64,
    b: f64,
    ra: f64,
    rb: f64,
    mode: MonitorMode,
    signed: bool,
    prev: f64,
    tau_a: Option<usize>,
    tau_b: Option<usize>,
}

impl ExitMonitor {
    /// Levels `0 < a < z < b` with `z` the walker's start; `b` may be infinite.
    pub fn new(walker: &PathWalker<'_>, a: f64, b: f64, mode: MonitorMode) -> Result<Self> {
        let s = walker.state();
        check_exit_levels(s.z, a, b)?;
        let signed = s.x.len() == 1;
        Ok(Self {
            a,
            b,
            ra: a.sqrt(),
            rb: b.sqrt(),
            mode,
            signed,
            prev: Self::radius(signed, s),
            tau_a: None,
            tau_b: None,
        })
    }

    fn radius(signed: bool, s: &crate::paths::PathState) -> f64 {
        if signed {
            s.x[0]
        } else {
            s.z.sqrt()
        }
    }

    pub fn observe(&mut self, walker: &PathWalker<'_>) {
        let s = walker.state();
        let r1 = Self::radius(self.signed, s);
        let r0 = self.prev;
        self.prev = r1;
        let bridge = self.mode == MonitorMode::Bridge && s.dqv > 0.0;
        if self.tau_a.is_none() {
            let hit = s.z <= self.a
                || (bridge && self.signed && r0 * r1 < 0.0)
                || (bridge && bridge_crossed(walker, LANE_LOWER, (r0.abs() - self.ra) * (r1.abs() - self.ra), s.dqv));
            if hit {
                self.tau_a = Some(s.k);
            }
        }
        if self.tau_b.is_none() && self.b.is_finite() {
            let hit = s.z >= self.b
                || (bridge && bridge_crossed(walker, LANE_UPPER, (self.rb - r0.abs()) * (self.rb - r1.abs()), s.dqv));
            if hit {
                self.tau_b = Some(s.k);
            }
        }
    }

    pub fn exited(&self) -> bool {
        self.tau_a.is_some() || self.tau_b.is_some()
    }

    pub fn record(&self) -> HittingRecord {
        HittingRecord::new(self.tau_a, self.tau_b)
    }
}

/// Uniforms are at least 2^-54, so below `exp(-38)` the test cannot fire
/// and the draw is skipped.
#[inline]
fn bridge_crossed(walker: &PathWalker<'_>, lane: u64, gaps: f64, dqv: f64) -> bool {
    let x = 2.0 * gaps / dqv;
    x < 38.0 && walker.uniform(lane) < (-x).exp()
}

/// Runs the walker until it leaves `(a, b)` or reaches the horizon.
pub fn run_to_exit(walker: &mut PathWalker<'_>, a: f64, b: f64, mode: MonitorMode) -> Result<HittingRecord> {
    let mut m = ExitMonitor::new(walker, a, b, mode)?;
    while !m.exited() && walker.advance() {
        m.observe(walker);
    }
    Ok(m.record())
}

/// Counts of which level is reached first under one control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitSplit {
    pub n_paths: usize,
    pub a_first: usize,
    pub b_first: usize,
    pub neither: usize,
}

impl ExitSplit {
    pub fn frequency(&self, count: usize) -> f64 {
        count as f64 / self.n_paths as f64
    }

    /// Binomial standard error of a frequency.
    pub fn stderr(&self, count: usize) -> f64 {
        let p = self.frequency(count);
        (p * (1.0 - p) / (self.n_paths as f64 - 1.0)).sqrt()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn exit_split(
    params: &ModelParams,
    schedule: &Schedule,
    control: &ControlSpec,
    a: f64,
    b: f64,
    mode: MonitorMode,
    n_paths: usize,
    rng: RngSpec,
) -> Result<ExitSplit> {
    check_exit_levels(params.z, a, b)?;
    let firsts = map_paths(params, schedule, control, n_paths, rng, |w| {
        run_to_exit(w, a, b, mode).map(|r| r.first).unwrap_or(First::Neither)
    })?;
    let count = |f: First| firsts.iter().filter(|&&x| x == f).count();
    Ok(ExitSplit {
        n_paths,
        a_first: count(First::AFirst),
        b_first: count(First::BFirst),
        neither: count(First::Neither),
    })
}

/// Event families swept by [`capacity_curve`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveKind {
    /// `{tau_b > t}`, sweeping `t`.
    TauBGtT { b: f64 },
    /// `{tau_a < t}`, sweeping `a`.
    TauALtT { t: f64 },
    /// `{tau_0 > t}` with `tau_0` replaced by `tau_{proxy * z}`, sweeping `t`.
    Tau0GtT {
        #[serde(default = "default_proxy")]
        proxy: f64,
    },
    /// `{min_{s <= T} Z_s <= a}`, sweeping `a`.
    MinBeforeTBelowA,
    /// `{tau_b < tau_0}` within the horizon, sweeping `b`.
    TauBLtTau0 {
        #[serde(default = "default_proxy")]
        proxy: f64,
    },
}

fn default_proxy() -> f64 {
    TAU0_PROXY
}

impl CurveKind {
    /// `(a, b, last node of the observation window)` for one sweep value.
    fn levels(&self, z: f64, s: f64, schedule: &Schedule) -> Result<(f64, f64, usize)> {
        let end = schedule.n_steps();
        let out = match *self {
            CurveKind::TauBGtT { b } => (0.5 * z, b, node_for(schedule, s)?),
            CurveKind::TauALtT { t } => (s, f64::INFINITY, node_for(schedule, t)?),
            CurveKind::Tau0GtT { proxy } => (proxy * z, f64::INFINITY, node_for(schedule, s)?),
            CurveKind::MinBeforeTBelowA => (s, f64::INFINITY, end),
            CurveKind::TauBLtTau0 { proxy } => (proxy * z, s, end),
        };
        check_exit_levels(z, out.0, out.1)?;
        Ok(out)
    }

    fn event(&self, r: &HittingRecord, window: usize) -> bool {
        let by = |k: Option<usize>| k.is_some_and(|k| k <= window);
        match self {
            CurveKind::TauBGtT { .. } => !by(r.tau_b_index),
            CurveKind::TauALtT { .. } | CurveKind::MinBeforeTBelowA => by(r.tau_a_index),
            CurveKind::Tau0GtT { .. } => !by(r.tau_a_index),
            CurveKind::TauBLtTau0 { .. } => r.first == First::BFirst,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub sweep: f64,
    pub estimate: Estimate,
}

/// Last node not after `t`.
fn node_for(schedule: &Schedule, t: f64) -> Result<usize> {
    let h = schedule.horizon();
    if !(0.0..=h * (1.0 + 1e-12)).contains(&t) {
        return Err(Error::GridIncompatible(format!("t = {t} lies outside [0, {h}]")));
    }
    let times = schedule.times();
    Ok(times.partition_point(|&s| s <= t * (1.0 + 1e-12)).saturating_sub(1))
}

/// Component-wise family supremum of a vector functional. Every member
/// sees the same random numbers.
pub fn sup_expectation_vec<F>(
    functional: F,
    params: &ModelParams,
    schedule: &Schedule,
    family: &ControlFamily,
    n_paths: usize,
    rng: RngSpec,
) -> Result<Vec<Estimate>>
where
    F: Fn(&mut PathWalker<'_>) -> Vec<f64> + Sync,
{
    if n_paths < 2 {
        return Err(Error::TooFewPaths {
            required: 2,
            got: n_paths,
        });
    }
    let members = family.members(params, schedule.horizon())?;
    let per_member: Vec<Vec<Estimate>> = members
        .par_iter()
        .map(|c| {
            let rows = map_paths(params, schedule, c, n_paths, rng, &functional)?;
            let width = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != width) {
                return Err(invalid("functional", "must return vectors of equal length"));
            }
            Ok((0..width)
                .map(|j| Estimate::from_summary(&Summary::of(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()), c))
                .collect())
        })
        .collect::<Result<_>>()?;
    let width = per_member[0].len();
    Ok((0..width)
        .map(|j| {
            let column: Vec<Estimate> = per_member.iter().map(|m| m[j].clone()).collect();
            sup_of(&column).cloned().expect("nonempty family")
        })
        .collect())
}

/// Capacity estimates along a sweep. All sweep values are read off the same
/// paths, and every family member uses the same random numbers.
#[allow(clippy::too_many_arguments)]
pub fn capacity_curve(
    kind: CurveKind,
    sweep: &[f64],
    params: &ModelParams,
    schedule: &Schedule,
    family: &ControlFamily,
    mode: MonitorMode,
    n_paths: usize,
    rng: RngSpec,
) -> Result<Vec<CurvePoint>> {
    if sweep.is_empty() {
        return Err(invalid("sweep", "must not be empty"));
    }
    let increasing = sweep.windows(2).all(|w| w[0] < w[1]);
    let decreasing = sweep.windows(2).all(|w| w[0] > w[1]);
    if !(increasing || decreasing) {
        return Err(invalid("sweep", "must be strictly ordered"));
    }
    let levels: Vec<(f64, f64, usize)> = sweep.iter().map(|&s| kind.levels(params.z, s, schedule)).collect::<Result<_>>()?;
    let last = levels.iter().map(|l| l.2).max().expect("nonempty sweep");
    let estimates = sup_expectation_vec(
        |w| {
            let mut monitors: Vec<ExitMonitor> = levels
                .iter()
                .map(|&(a, b, _)| ExitMonitor::new(w, a, b, mode).expect("levels checked"))
                .collect();
            while w.state().k < last && w.advance() {
                monitors.iter_mut().for_each(|m| m.observe(w));
            }
            monitors
                .iter()
                .zip(&levels)
                .map(|(m, l)| if kind.event(&m.record(), l.2) { 1.0 } else { 0.0 })
                .collect()
        },
        params,
        schedule,
        family,
        n_paths,
        rng,
    )?;
    Ok(sweep
        .iter()
        .zip(estimates)
        .map(|(&s, estimate)| CurvePoint { sweep: s, estimate })
        .collect())
}

/// `sweep,estimate,stderr,best_control` rows.
pub fn write_curve_csv(points: &[CurvePoint], mut w: impl Write) -> io::Result<()> {
    writeln!(w, "sweep,estimate,stderr,best_control")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},\"{}\"",
            p.sweep,
            p.estimate.value,
            p.estimate.stderr,
            p.estimate.best_control.id()
        )?;
    }
    Ok(())
}

/// Whether each estimate is at most the previous one plus `k` joint standard errors.
pub fn decreasing_within(points: &[CurvePoint], k: f64) -> bool {
    points.windows(2).all(|w| {
        let (p, q) = (&w[0].estimate, &w[1].estimate);
        q.value <= p.value + k * (p.stderr * p.stderr + q.stderr * q.stderr).sqrt()
    })
}

/// Batch mean and standard error of `M_T - M_0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftStat {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

impl DriftStat {
    /// `|mean| <= 4 SE`; a drift of exactly zero always passes.
    pub fn passes(&self) -> bool {
        self.mean == 0.0 || self.mean.abs() <= 4.0 * self.stderr
    }
}

/// Drift of a martingale candidate. `m` drives the walker and returns `(M_0, M_T)`.
pub fn martingale_drift<M>(
    m: M,
    params: &ModelParams,
    schedule: &Schedule,
    control: &ControlSpec,
    n_paths: usize,
    rng: RngSpec,
) -> Result<DriftStat>
where
    M: Fn(&mut PathWalker<'_>) -> (f64, f64) + Sync,
{
    if n_paths < 2 {
        return Err(Error::TooFewPaths {
            required: 2,
            got: n_paths,
        });
    }
    let diffs = map_paths(params, schedule, control, n_paths, rng, |w| {
        let (m0, mt) = m(w);
        mt - m0
    })?;
    let s = Summary::of(&diffs);
    Ok(DriftStat {
        mean: s.mean,
        stderr: s.stderr,
        n_paths,
    })
}

/// `phi(Z)` (or `psi(Z)`) stopped at the first grid exit from `(a, b)`.
pub fn stopped_scale_martingale(
    scale: ScaleFunction,
    complement: bool,
) -> impl Fn(&mut PathWalker<'_>) -> (f64, f64) + Sync {
    move |w| {
        let f = |z: f64| if complement { scale.psi(z) } else { scale.phi(z) };
        let m0 = f(w.state().z);
        match run_to_exit(w, scale.a, scale.b, MonitorMode::Grid) {
            Ok(_) => (m0, f(w.state().z)),
            // start outside the open interval: the process is stopped at once
            Err(_) => (m0, m0),
        }
    }
}

/// `(1 + 2 lambda (sigma_hi^2 T - <beta>_t))^{-d/2} exp(-lambda Z_t / (1 + 2 lambda (sigma_hi^2 T - <beta>_t)))`,
/// evaluated at `t = 0` and `t = T`.
pub fn laplace_martingale(lambda: f64, horizon: f64) -> impl Fn(&mut PathWalker<'_>) -> (f64, f64) + Sync {
    move |w| {
        let p = *w.params();
        let value = |z: f64, qv: f64| {
            let den = 1.0 + 2.0 * lambda * (p.sigma_hi_sq * horizon - qv);
            (-0.5 * p.d * den.ln() - lambda * z / den).exp()
        };
        let m0 = value(w.state().z, 0.0);
        w.run_to_end();
        let s = w.state();
        (m0, value(s.z, s.qv))
    }
}

/// `Y` at the first grid time `Z >= b`, or at the horizon.
pub fn y_stopped_at_level(w: &mut PathWalker<'_>, b: f64) -> f64 {
    while w.state().z < b && w.advance() {}
    w.state().y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{classical_laplace, laplace_lower, laplace_upper, scale_ratio_down};
    use crate::model::TimeGrid;

    fn sched(t: f64, n: usize) -> Schedule {
        TimeGrid::new(t, n).unwrap().into()
    }

    fn terminal_beta_sq(w: &mut PathWalker<'_>) -> f64 {
        w.run_to_end();
        w.state().beta.powi(2)
    }

    #[test]
    fn constant_functional() {
        let p = ModelParams::new(2.0, 1.0, 0.5, 1.0).unwrap();
        let e = estimate_expectation(|_| 1.0, &p, &sched(1.0, 4), &ControlSpec::constant(1.0), 10, RngSpec::new(1)).unwrap();
        assert_eq!(e.value, 1.0);
        assert_eq!(e.stderr, 0.0);
        assert_eq!(e.ci95, (1.0, 1.0));
        assert!(matches!(
            estimate_expectation(|_| 1.0, &p, &sched(1.0, 4), &ControlSpec::constant(1.0), 1, RngSpec::new(1)),
            Err(Error::TooFewPaths { .. })
        ));
    }

    #[test]
    fn beta_variance_under_unit_control() {
        let p = ModelParams::new(2.0, 1.0, 1.0, 1.0).unwrap();
        let e = estimate_expectation(terminal_beta_sq, &p, &sched(1.0, 32), &ControlSpec::constant(1.0), 40_000, RngSpec::new(2)).unwrap();
        assert!((e.value - 1.0).abs() < 3.0 * e.stderr, "{e:?}");
        assert!((e.ci95.1 - e.ci95.0 - 2.0 * 1.96 * e.stderr).abs() < 1e-15);
    }

    #[test]
    fn classical_laplace_by_simulation() {
        let p = ModelParams::new(2.0, 1.0, 1.0, 1.0).unwrap();
        let f = |w: &mut PathWalker<'_>| {
            w.run_to_end();
            (-w.state().z).exp()
        };
        let e = estimate_expectation(f, &p, &sched(1.0, 4), &ControlSpec::constant(1.0), 40_000, RngSpec::new(3)).unwrap();
        let exact = classical_laplace(1.0, 1.0, 1.0, 2.0, 1.0);
        assert!((e.value - exact).abs() < 3.0 * e.stderr, "{e:?} vs {exact}");
    }

    #[test]
    fn family_enumeration() {
        let p = ModelParams::new(2.0, 1.0, 0.5, 1.0).unwrap();
        let grid = ControlFamily::ConstantGrid { count: 5 }.members(&p, 1.0).unwrap();
        let vals: Vec<f64> = grid.iter().map(|c| c.value(0.0, 0.0, &p)).collect();
        assert_eq!(vals, vec![0.5, 0.625, 0.75, 0.875, 1.0]);
        let bb = ControlFamily::BangBang { switch_times: vec![0.25, 0.5] }.members(&p, 1.0).unwrap();
        assert_eq!(bb.len(), 4);
        let collapsed = ControlFamily::ConstantGrid { count: 5 }
            .members(&ModelParams::new(2.0, 1.0, 1.0, 1.0).unwrap(), 1.0)
            .unwrap();
        assert_eq!(collapsed, vec![ControlSpec::constant(1.0)]);
        assert!(ControlFamily::FeedbackSet { policies: vec![] }.members(&p, 1.0).is_err());
        assert!(ControlFamily::BangBang { switch_times: vec![2.0] }.members(&p, 1.0).is_err());
    }

    #[test]
    fn collapsed_family_equals_single_control() {
        let p = ModelParams::new(2.0, 1.0, 1.0, 1.0).unwrap();
        let s = sched(1.0, 16);
        let fam = sup_expectation(terminal_beta_sq, &p, &s, &ControlFamily::ConstantGrid { count: 5 }, 500, RngSpec::new(4)).unwrap();
        let one = estimate_expectation(terminal_beta_sq, &p, &s, &ControlSpec::constant(1.0), 500, RngSpec::new(4)).unwrap();
        assert_eq!(fam, one);
    }

    #[test]
    fn convex_payoff_picks_upper_volatility() {
        let p = ModelParams::new(2.0, 1.0, 0.5, 1.0).unwrap();
        let e = sup_expectation(terminal_beta_sq, &p, &sched(1.0, 16), &ControlFamily::ConstantGrid { count: 5 }, 20_000, RngSpec::new(5)).unwrap();
        assert_eq!(e.best_control, ControlSpec::constant(1.0));
        assert!((e.value - 1.0).abs() < 3.0 * e.stderr);
    }

    #[test]
    fn laplace_sup_inside_bounds() {
        let p = ModelParams::new(2.0, 1.0, 0.5, 1.0).unwrap();
        let f = |w: &mut PathWalker<'_>| {
            w.run_to_end();
            (-w.state().z).exp()
        };
        let e = sup_expectation(f, &p, &sched(1.0, 8), &ControlFamily::ConstantGrid { count: 5 }, 20_000, RngSpec::new(6)).unwrap();
        let lo = laplace_lower(1.0, 1.0, &p).unwrap();
        let hi = laplace_upper(1.0, 1.0, &p).unwrap();
        assert!(e.value >= lo - 3.0 * e.stderr && e.value <= hi + 3.0 * e.stderr, "{lo} {e:?} {hi}");
    }

    #[test]
    fn adding_members_never_lowers_the_sup() {
        let p = ModelParams::new(2.0, 1.0, 0.5, 1.0).unwrap();
        let s = sched(1.0, 16);
        let small = sup_expectation(terminal_beta_sq, &p, &s, &ControlFamily::ConstantGrid { count: 2 }, 2_000, RngSpec::new(7)).unwrap();
        let big = sup_expectation(
            terminal_beta_sq,
            &p,
            &s,
            &ControlFamily::Explicit {
                controls: vec![ControlSpec::constant(0.5), ControlSpec::constant(1.0), ControlSpec::switch_at(0.5, 1.0, 0.5)],
            },
            2_000,
            RngSpec::new(7),
        )
        .unwrap();
        assert!(big.value >= small.value - 2.0 * small.stderr);
    }

    #[test]
    fn impossible_event_has_zero_capacity() {
        let p = ModelParams::new(2.0, 1.0, 0.5, 1.0).unwrap();
        let e = capacity(|_| false, &p, &sched(1.0, 4), &ControlFamily::ConstantGrid { count: 3 }, 10, RngSpec::new(8)).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn hitting_on_fixed_series() {
        let r = detect_hitting(&[1.0, 2.0, 3.0, 4.0], 0.5, 3.0);
        // z0 must sit strictly inside (a, b)
        assert!(r.is_ok());
        let r = r.unwrap();
        assert_eq!(r.tau_b_index, Some(2));
        assert_eq!(r.tau_a_index, None);
        assert_eq!(r.first, First::BFirst);
        let r = detect_hitting(&[2.0, 2.5, 1.5, 3.0], 1.0, 4.0).unwrap();
        assert_eq!(r, HittingRecord { tau_a_index: None, tau_b_index: None, first: First::Neither });
        let r = detect_hitting(&[2.0, 0.9, 5.0], 1.0, 4.0).unwrap();
        assert_eq!(r.first, First::AFirst);
        assert_eq!(r.exit_index(), Some(1));
        assert!(matches!(detect_hitting(&[2.0], 3.0, 1.0), Err(Error::LevelOrder(_))));
        assert!(detect_hitting(&[2.0], 2.0, 4.0).is_err());
    }

    #[test]
    fn ties_go_to_the_lower_level() {
        assert_eq!(HittingRecord::new(Some(3), Some(3)).first, First::AFirst);
    }

    #[test]
    fn grid_monitor_agrees_with_series_detection() {
        let p = ModelParams::new(2.0, 2.0, 1.0, 1.0).unwrap();
        let s = sched(2.0, 256);
        let c = ControlSpec::constant(1.0);
        let pairs = map_paths(&p, &s, &c, 200, RngSpec::new(9), |w| {
            let mut z = vec![w.state().z];
            let mut m = ExitMonitor::new(w, 1.0, 4.0, MonitorMode::Grid).unwrap();
            while w.advance() {
                m.observe(w);
                z.push(w.state().z);
            }
            (m.record(), detect_hitting(&z, 1.0, 4.0).unwrap())
        })
        .unwrap();
        for (a, b) in pairs {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn split_counts_are_complementary() {
        let p = ModelParams::new(4.0, 2.0, 0.5, 1.0).unwrap();
        let sp = exit_split(&p, &sched(1.0, 128), &ControlSpec::constant(0.5), 1.0, 4.0, MonitorMode::Bridge, 1000, RngSpec::new(10)).unwrap();
        assert_eq!(sp.a_first + sp.b_first + sp.neither, sp.n_paths);
        let longer = exit_split(&p, &sched(4.0, 512), &ControlSpec::constant(0.5), 1.0, 4.0, MonitorMode::Bridge, 1000, RngSpec::new(10)).unwrap();
        assert!(longer.neither <= sp.neither);
    }

    #[test]
    fn log_branch_split() {
        let p = ModelParams::new(2.0, 2.0, 1.0, 1.0).unwrap();
        let sp = exit_split(&p, &sched(20.0, 20 * 256), &ControlSpec::constant(1.0), 1.0, 4.0, MonitorMode::Bridge, 4000, RngSpec::new(11)).unwrap();
        let f = sp.frequency(sp.b_first);
        assert!((f - 0.5).abs() < 3.0 * sp.stderr(sp.b_first) + 0.02, "{f}");
    }

    #[test]
    fn curve_tau_b_decays_in_t() {
        let p = ModelParams::new(2.0, 1.0, 0.5, 1.0).unwrap();
        let pts = capacity_curve(
            CurveKind::TauBGtT { b: 4.0 },
            &[1.0, 2.0, 4.0],
            &p,
            &sched(4.0, 512),
            &ControlFamily::ConstantGrid { count: 2 },
            MonitorMode::Bridge,
            2000,
            RngSpec::new(12),
        )
        .unwrap();
        assert!(decreasing_within(&pts, 0.0), "{pts:?}");
        let mut csv = Vec::new();
        write_curve_csv(&pts, &mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("sweep,estimate,stderr,best_control\n"));
    }

    #[test]
    fn curve_levels_nest_under_common_numbers() {
        let p = ModelParams::new(3.0, 1.0, 0.5, 1.0).unwrap();
        let pts = capacity_curve(
            CurveKind::TauALtT { t: 1.0 },
            &[0.5, 0.1, 0.02],
            &p,
            &sched(1.0, 256),
            &ControlFamily::ConstantGrid { count: 1 },
            MonitorMode::Bridge,
            2000,
            RngSpec::new(13),
        )
        .unwrap();
        // on each path, reaching a lower level implies reaching a higher one
        assert!(decreasing_within(&pts, 0.0), "{pts:?}");
    }

    #[test]
    fn constant_martingale_has_no_drift() {
        let p = ModelParams::new(2.0, 1.0, 0.5, 1.0).unwrap();
        let d = martingale_drift(|_| (1.0, 1.0), &p, &sched(1.0, 4), &ControlSpec::constant(1.0), 10, RngSpec::new(14)).unwrap();
        assert_eq!(d.mean, 0.0);
        assert!(d.passes());
    }

    #[test]
    fn scale_martingale_drift_vanishes() {
        let p = ModelParams::new(4.0, 2.0, 0.5, 1.0).unwrap();
        let sf = ScaleFunction::new(4.0, 1.0, 4.0).unwrap();
        let d = martingale_drift(stopped_scale_martingale(sf, false), &p, &sched(8.0, 2048), &ControlSpec::constant(1.0), 4000, RngSpec::new(15)).unwrap();
        assert!(d.passes(), "{d:?}");
        assert!((sf.phi(2.0) - scale_ratio_down(2.0, 1.0, 4.0, 4.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn laplace_martingale_drift_vanishes_under_feedback() {
        let p = ModelParams::new(2.0, 1.0, 0.5, 1.0).unwrap();
        let c = ControlSpec::feedback(FeedbackPolicy::HighBelow { level: 1.0 });
        let d = martingale_drift(laplace_martingale(1.0, 1.0), &p, &sched(1.0, 32), &c, 20_000, RngSpec::new(16)).unwrap();
        assert!(d.passes(), "{d:?}");
    }

    #[test]
    fn stopped_y_is_recorded() {
        let p = ModelParams::new(2.0, 1.0, 1.0, 1.0).unwrap();
        let ys = map_paths(&p, &sched(1.0, 64), &ControlSpec::constant(1.0), 100, RngSpec::new(17), |w| {
            let y = y_stopped_at_level(w, 4.0);
            (y, w.state().z >= 4.0 || w.is_done())
        })
        .unwrap();
        assert!(ys.iter().all(|(_, ok)| *ok));
    }
}
