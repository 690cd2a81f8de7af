//! The squared Bessel process under volatility uncertainty.
//!
//! `Z = |B^x|^2` (modulus construction) is the nonnegative solution of
//! `Z_t = z + 2 int sqrt(Z) d beta + d <beta>_t`; this module builds it both
//! ways, measures how far the Euler scheme is from the modulus, and
//! implements the Brownian scaling, time inversion and the deterministic
//! time change that turns `Z` into a CIR process.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlSpec;
use crate::error::{invalid, Error, Result};
use crate::model::{ModelParams, RngSpec, TimeGrid};
use crate::paths::{euler_step, map_paths, squared_modulus, PathBundle, Schedule};
use crate::stats::{log_log_slope, rms, Summary};

/// Threshold of the indicator `I_{Z > eps}` in the Bessel drift.
pub const BESSEL_EPS: f64 = 1e-10;

/// Fills `z` with `|B^x|^2`; `Z_0 = z` exactly.
pub fn besq_from_modulus(mut bundle: PathBundle) -> PathBundle {
    let dim = bundle.dim;
    let n = bundle.n_steps();
    let z0 = bundle.params.z;
    bundle.paths.par_iter_mut().for_each(|p| {
        let mut z = Vec::with_capacity(n + 1);
        z.push(z0);
        z.extend((1..=n).map(|k| squared_modulus(p.coord(k, dim))));
        p.z = z;
    });
    bundle
}

/// Clamped Euler scheme for `Z' = z + 2 int sqrt(Z') d beta + d <beta>`.
pub fn besq_sde_euler(params: &ModelParams, beta: &[f64], qv: &[f64]) -> Result<Vec<f64>> {
    if beta.len() != qv.len() || beta.is_empty() {
        return Err(Error::MissingSeries("beta/qv of equal nonzero length"));
    }
    let mut out = Vec::with_capacity(beta.len());
    let mut z = params.z;
    out.push(z);
    for k in 0..beta.len() - 1 {
        z = euler_step(z, beta[k + 1] - beta[k], qv[k + 1] - qv[k], params.d);
        out.push(z);
    }
    Ok(out)
}

/// Residual diagnostics of a discretized identity along a batch of paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    /// RMS over paths of the per-path supremum.
    pub rms: f64,
    /// Largest per-path supremum.
    pub sup: f64,
    pub dt: f64,
    pub order_estimate: Option<f64>,
}

impl ResidualStats {
    fn from_sups(sups: &[f64], dt: f64) -> Self {
        Self {
            rms: rms(sups),
            sup: sups.iter().cloned().fold(0.0, f64::max),
            dt,
            order_estimate: None,
        }
    }
}

/// Fits `rms ~ dt^order` over a refinement study and records the order on every entry.
pub fn attach_order(stats: &mut [ResidualStats]) -> f64 {
    let dts: Vec<f64> = stats.iter().map(|s| s.dt).collect();
    let errs: Vec<f64> = stats.iter().map(|s| s.rms).collect();
    let order = log_log_slope(&dts, &errs);
    for s in stats.iter_mut() {
        s.order_estimate = Some(order);
    }
    order
}

fn bundle_dt(bundle: &PathBundle) -> f64 {
    bundle.schedule.horizon() / bundle.n_steps() as f64
}

/// Per-path `sup_k |Z_k - Z'_k|` between the modulus and the Euler scheme.
pub fn euler_sup_errors(bundle: &PathBundle) -> Result<Vec<f64>> {
    bundle
        .paths
        .par_iter()
        .map(|p| {
            if p.z.is_empty() {
                return Err(Error::MissingSeries("z"));
            }
            let euler = besq_sde_euler(&bundle.params, &p.beta, &p.qv)?;
            Ok(p.z.iter().zip(&euler).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        })
        .collect()
}

/// Modulus/Euler agreement as [`ResidualStats`].
pub fn euler_agreement(bundle: &PathBundle) -> Result<ResidualStats> {
    Ok(ResidualStats::from_sups(&euler_sup_errors(bundle)?, bundle_dt(bundle)))
}

/// Supremum over the path of
/// `|sqrt(Z_t) - sqrt(z) - (d-1)/2 sum Z^{-1/2} I_{Z > eps} d<beta> - beta_t|`.
pub fn bessel_residual(bundle: &PathBundle) -> Result<ResidualStats> {
    let params = &bundle.params;
    if params.d < 2.0 {
        return Err(invalid("d", "must be at least 2 for the Bessel equation"));
    }
    if !(params.z > 0.0) {
        return Err(invalid("z", "must be positive for the Bessel equation"));
    }
    let half = 0.5 * (params.d - 1.0);
    let r0 = params.z.sqrt();
    let sups: Vec<f64> = bundle
        .paths
        .par_iter()
        .map(|p| {
            if p.z.is_empty() || p.beta.is_empty() {
                return Err(Error::MissingSeries("z and beta"));
            }
            let mut drift = 0.0;
            let mut worst: f64 = 0.0;
            for k in 0..p.z.len() {
                let r = p.z[k].sqrt();
                worst = worst.max((r - r0 - half * drift - p.beta[k]).abs());
                if k + 1 < p.z.len() && p.z[k] > BESSEL_EPS {
                    drift += (p.qv[k + 1] - p.qv[k]) / r;
                }
            }
            Ok(worst)
        })
        .collect::<Result<_>>()?;
    Ok(ResidualStats::from_sups(&sups, bundle_dt(bundle)))
}

/// `t -> Z_{lambda t} / lambda` on `target`, reading `z` sampled on `source`
/// (horizon `lambda * target.horizon`).
pub fn scaling_transform(z: &[f64], source: &TimeGrid, lambda: f64, target: &TimeGrid) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(invalid("lambda", "must be positive"));
    }
    if z.len() != source.n_steps + 1 {
        return Err(Error::GridIncompatible(format!(
            "series has {} values, source grid {} nodes",
            z.len(),
            source.n_steps + 1
        )));
    }
    (0..=target.n_steps)
        .map(|k| {
            let t = lambda * target.time(k);
            let j = source.node_index(t).ok_or_else(|| {
                Error::GridIncompatible(format!("lambda * t = {t} is not a node of the source grid"))
            })?;
            Ok(z[j] / lambda)
        })
        .collect()
}

/// `X_t = t^2 Z_{1/t}` with `X_0 = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Time inversion of a path started at zero. Output nodes are `0` followed
/// by `n_out + 1` uniform points on `[t_min, t_max]`; `Z_{1/t}` is read at
/// the nearest source node.
pub fn time_inversion(z: &[f64], source: &TimeGrid, t_min: f64, t_max: f64, n_out: usize) -> Result<InvertedSeries> {
    if !(t_min > 0.0) {
        return Err(invalid("t_min", "must be positive"));
    }
    if !(t_max >= t_min) || n_out == 0 {
        return Err(invalid("t_max", "must exceed t_min with at least one step"));
    }
    if z.first() != Some(&0.0) {
        return Err(invalid("z", "time inversion needs a path started at 0"));
    }
    if z.len() != source.n_steps + 1 {
        return Err(Error::GridIncompatible("series length does not match source grid".into()));
    }
    let reach = 1.0 / t_min;
    if reach > source.horizon * (1.0 + 1e-9) {
        return Err(Error::GridIncompatible(format!(
            "1/t_min = {reach} exceeds the simulated horizon {}",
            source.horizon
        )));
    }
    let mut times = vec![0.0];
    let mut values = vec![0.0];
    let dt = source.dt();
    for j in 0..=n_out {
        let t = t_min + (t_max - t_min) * j as f64 / n_out as f64;
        let idx = ((1.0 / t) / dt).round() as usize;
        times.push(t);
        values.push(t * t * z[idx.min(source.n_steps)]);
    }
    Ok(InvertedSeries { times, values })
}

/// Mean reversion `a`, level `b` and diffusion `c` of the CIR process
/// `dX = -aX dt + b d<bar beta> + c sqrt(X) d bar beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirSpec {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl CirSpec {
    pub fn validate(&self, d: f64) -> Result<()> {
        if !(self.a > 0.0 && self.a.is_finite()) {
            return Err(invalid("a", "must be positive"));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(invalid("c", "must be positive"));
        }
        if !(self.b >= 0.0 && self.b.is_finite()) {
            return Err(invalid("b", "must be nonnegative"));
        }
        let implied = 4.0 * self.b / (self.c * self.c);
        if (implied - d).abs() > 1e-12 * d.max(1.0) {
            return Err(invalid("b", format!("4b/c^2 = {implied} must equal d = {d}")));
        }
        Ok(())
    }

    /// `f(t) = c^2 / (4a) (e^{at} - 1)`.
    pub fn clock(&self, t: f64) -> f64 {
        self.c * self.c / (4.0 * self.a) * (self.a * t).exp_m1()
    }

    pub fn clock_rate(&self, t: f64) -> f64 {
        self.c * self.c / 4.0 * (self.a * t).exp()
    }

    /// Closed-form mean of the CIR process under unit variance.
    pub fn classical_mean(&self, z: f64, t: f64) -> f64 {
        let decay = (-self.a * t).exp();
        z * decay + self.b / self.a * (1.0 - decay)
    }

    /// Image of a uniform grid under the clock.
    pub fn image_schedule(&self, grid: &TimeGrid) -> Result<Schedule> {
        Schedule::nodes(grid.times().iter().map(|&t| self.clock(t)).collect())
    }
}

/// One time-changed path on the uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CirPath {
    pub x: Vec<f64>,
    pub beta_bar: Vec<f64>,
    pub qv_bar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CirTransform {
    pub grid: TimeGrid,
    pub paths: Vec<CirPath>,
    pub residual: ResidualStats,
}

/// Simulates `Z` on the clock image of `grid` and returns
/// `X_t = e^{-at} Z_{f(t)}` with the rescaled driving motion
/// `d bar beta = (dt / df)^{1/2} d beta_f`.
pub fn cir_transform(
    params: &ModelParams,
    cir: &CirSpec,
    grid: &TimeGrid,
    control: &ControlSpec,
    n_paths: usize,
    rng: RngSpec,
) -> Result<CirTransform> {
    cir.validate(params.d)?;
    let schedule = cir.image_schedule(grid)?;
    let times = grid.times();
    let raw = map_paths(params, &schedule, control, n_paths, rng, |w| {
        let n = w.n_steps();
        let mut z = Vec::with_capacity(n + 1);
        let mut beta = Vec::with_capacity(n + 1);
        let mut qv = Vec::with_capacity(n + 1);
        loop {
            let s = w.state();
            z.push(s.z);
            beta.push(s.beta);
            qv.push(s.qv);
            if !w.advance() {
                break;
            }
        }
        (z, beta, qv)
    })?;
    let clock = schedule.times();
    let paths: Vec<CirPath> = raw
        .into_par_iter()
        .map(|(z, beta, qv)| {
            let n = z.len() - 1;
            let mut x = Vec::with_capacity(n + 1);
            let mut beta_bar = Vec::with_capacity(n + 1);
            let mut qv_bar = Vec::with_capacity(n + 1);
            x.extend(z.iter().zip(&times).map(|(zk, t)| (-cir.a * t).exp() * zk));
            beta_bar.push(0.0);
            qv_bar.push(0.0);
            for k in 0..n {
                let rate = (times[k + 1] - times[k]) / (clock[k + 1] - clock[k]);
                beta_bar.push(beta_bar[k] + rate.sqrt() * (beta[k + 1] - beta[k]));
                qv_bar.push(qv_bar[k] + rate * (qv[k + 1] - qv[k]));
            }
            CirPath { x, beta_bar, qv_bar }
        })
        .collect();
    let residual = cir_residual(cir, grid, &paths);
    Ok(CirTransform {
        grid: *grid,
        paths,
        residual,
    })
}

/// Accumulated Euler defect `X_t - X_0 - sum(-aX dt + b d<bar beta> + c sqrt(X) d bar beta)`.
pub fn cir_residual(cir: &CirSpec, grid: &TimeGrid, paths: &[CirPath]) -> ResidualStats {
    let dt = grid.dt();
    let sups: Vec<f64> = paths
        .par_iter()
        .map(|p| {
            let mut acc: f64 = 0.0;
            let mut worst: f64 = 0.0;
            for k in 0..p.x.len() - 1 {
                let x = p.x[k];
                let euler = -cir.a * x * dt
                    + cir.b * (p.qv_bar[k + 1] - p.qv_bar[k])
                    + cir.c * x.max(0.0).sqrt() * (p.beta_bar[k + 1] - p.beta_bar[k]);
                acc += p.x[k + 1] - x - euler;
                worst = worst.max(acc.abs());
            }
            worst
        })
        .collect();
    ResidualStats::from_sups(&sups, dt)
}

/// Batch statistics of `X_t` at the requested grid nodes, without storing paths.
pub fn cir_moments(
    params: &ModelParams,
    cir: &CirSpec,
    grid: &TimeGrid,
    control: &ControlSpec,
    at: &[f64],
    n_paths: usize,
    rng: RngSpec,
) -> Result<Vec<Summary>> {
    cir.validate(params.d)?;
    let nodes: Vec<usize> = at
        .iter()
        .map(|&t| {
            grid.node_index(t)
                .ok_or_else(|| Error::GridIncompatible(format!("t = {t} is not a grid node")))
        })
        .collect::<Result<_>>()?;
    let schedule = cir.image_schedule(grid)?;
    let rows = map_paths(params, &schedule, control, n_paths, rng, |w| {
        nodes
            .iter()
            .map(|&k| {
                w.run_until(k);
                (-cir.a * grid.time(k)).exp() * w.state().z
            })
            .collect::<Vec<f64>>()
    })?;
    Ok((0..nodes.len())
        .map(|j| Summary::of(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect())
}
