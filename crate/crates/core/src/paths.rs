//! Volatility-controlled Brownian paths and the processes built on them.
//!
//! A single scalar control drives all coordinates, so the coordinates share
//! their quadratic variation and have vanishing cross-variations. From the
//! shifted coordinates `B^x = B + x` we accumulate
//!
//! * `qv`   : `<beta>_t = sum sigma_k^2 dt_k`,
//! * `beta` : `sum_i int B^x_i / |B^x| dB_i`,
//! * `z`    : `|B^x|^2`,
//! * `y`    : `int 2 sqrt(Z) d beta`.
//!
//! Two interfaces produce the same numbers: [`PathWalker`] generates one path
//! lazily (used by the Monte Carlo estimators, which may stop early), and
//! [`simulate_gbm`] materializes a [`PathBundle`] for small batches.

use std::io::{self, Write};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::control::ControlSpec;
use crate::error::{invalid, Error, Result};
use crate::model::{ModelParams, RngSpec, TimeGrid};

/// Below this modulus the direction of `B^x` is replaced by `e_1`.
pub const ORIGIN_EPS: f64 = 1e-12;

/// Time nodes of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Uniform(TimeGrid),
    /// Explicit nodes `0 = t_0 < t_1 < ... < t_n`.
    Nodes(Vec<f64>),
}

impl Schedule {
    pub fn nodes(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(invalid("schedule", "needs at least two nodes starting at 0"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(invalid("schedule", "nodes must be strictly increasing"));
        }
        Ok(Schedule::Nodes(times))
    }

    pub fn n_steps(&self) -> usize {
        match self {
            Schedule::Uniform(g) => g.n_steps,
            Schedule::Nodes(t) => t.len() - 1,
        }
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        match self {
            Schedule::Uniform(g) => g.time(k),
            Schedule::Nodes(t) => t[k],
        }
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.n_steps())
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps()).map(|k| self.time(k)).collect()
    }
}

impl From<TimeGrid> for Schedule {
    fn from(g: TimeGrid) -> Self {
        Schedule::Uniform(g)
    }
}

/// State of one path at node `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    pub k: usize,
    pub t: f64,
    /// Shifted coordinates `B^x_t`.
    pub x: Vec<f64>,
    /// `|B^x_t|^2`.
    pub z: f64,
    pub qv: f64,
    pub beta: f64,
    pub y: f64,
    /// Euler approximation of the squared Bessel SDE driven by `beta`.
    pub z_euler: f64,
    /// Increments over the last completed cell (zero at `k = 0`).
    pub dbeta: f64,
    pub dqv: f64,
    /// Control value used on the last completed cell.
    pub sigma_sq: f64,
}

/// Beta increment for one cell given the coordinates at the cell start.
#[inline]
pub(crate) fn beta_increment(x: &[f64], z: f64, dx: &[f64]) -> f64 {
    let r = z.sqrt();
    if r < ORIGIN_EPS {
        dx[0]
    } else {
        x.iter().zip(dx).map(|(xi, di)| xi * di).sum::<f64>() / r
    }
}

#[inline]
pub(crate) fn squared_modulus(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

#[inline]
pub(crate) fn euler_step(z_prev: f64, dbeta: f64, dqv: f64, d: f64) -> f64 {
    (z_prev + 2.0 * z_prev.max(0.0).sqrt() * dbeta + d * dqv).max(0.0)
}

pub(crate) fn start_point(z: f64, dim: usize) -> Vec<f64> {
    let mut x = vec![0.0; dim];
    x[0] = z.sqrt();
    x
}

/// Lazily generated path under one control.
pub struct PathWalker<'a> {
    params: ModelParams,
    schedule: &'a Schedule,
    control: &'a ControlSpec,
    rng: ChaCha8Rng,
    rng_spec: RngSpec,
    path: u64,
    state: PathState,
    dx: Vec<f64>,
}

impl<'a> PathWalker<'a> {
    /// `params` must already be validated and `dim` its integer dimension.
    pub fn new(
        params: ModelParams,
        dim: usize,
        schedule: &'a Schedule,
        control: &'a ControlSpec,
        rng_spec: RngSpec,
        path: u64,
    ) -> Self {
        let x = start_point(params.z, dim);
        let z = params.z;
        Self {
            params,
            schedule,
            control,
            rng: rng_spec.path_rng(path),
            rng_spec,
            path,
            state: PathState {
                k: 0,
                t: 0.0,
                x,
                z,
                qv: 0.0,
                beta: 0.0,
                y: 0.0,
                z_euler: params.z,
                dbeta: 0.0,
                dqv: 0.0,
                sigma_sq: 0.0,
            },
            dx: vec![0.0; dim],
        }
    }

    #[inline]
    pub fn state(&self) -> &PathState {
        &self.state
    }

    /// Coordinate increments `dB` of the last completed cell.
    pub fn increments(&self) -> &[f64] {
        &self.dx
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn schedule(&self) -> &Schedule {
        self.schedule
    }

    pub fn path_index(&self) -> u64 {
        self.path
    }

    pub fn n_steps(&self) -> usize {
        self.schedule.n_steps()
    }

    pub fn is_done(&self) -> bool {
        self.state.k >= self.schedule.n_steps()
    }

    /// Counter-based uniform keyed by `(path, current step, lane)`; it does
    /// not consume the path's normal stream.
    pub fn uniform(&self, lane: u64) -> f64 {
        self.rng_spec.uniform(self.path, self.state.k as u64, lane)
    }

    /// Moves to the next node. Returns `false` (and does nothing) at the horizon.
    pub fn advance(&mut self) -> bool {
        let k = self.state.k;
        if k >= self.schedule.n_steps() {
            return false;
        }
        let t0 = self.schedule.time(k);
        let t1 = self.schedule.time(k + 1);
        let dt = t1 - t0;
        let s = &mut self.state;
        let sigma_sq = self.control.value(t0, s.z, &self.params);
        let scale = (sigma_sq * dt).sqrt();
        for d in self.dx.iter_mut() {
            let xi: f64 = StandardNormal.sample(&mut self.rng);
            *d = scale * xi;
        }
        let dbeta = beta_increment(&s.x, s.z, &self.dx);
        let dqv = sigma_sq * dt;
        for (xi, di) in s.x.iter_mut().zip(&self.dx) {
            *xi += di;
        }
        let beta_next = s.beta + dbeta;
        let qv_next = s.qv + dqv;
        let dy = 2.0 * s.z.sqrt() * (beta_next - s.beta);
        s.z_euler = euler_step(s.z_euler, beta_next - s.beta, qv_next - s.qv, self.params.d);
        s.z = squared_modulus(&s.x);
        s.beta = beta_next;
        s.qv = qv_next;
        s.y += dy;
        s.dbeta = dbeta;
        s.dqv = dqv;
        s.sigma_sq = sigma_sq;
        s.k = k + 1;
        s.t = t1;
        true
    }

    pub fn run_to_end(&mut self) {
        while self.advance() {}
    }

    /// Advances until node `k` (or the horizon, whichever comes first).
    pub fn run_until(&mut self, k: usize) {
        while self.state.k < k && self.advance() {}
    }
}

/// Checks inputs shared by every batch simulation and returns the coordinate count.
pub fn prepare_batch(
    params: &ModelParams,
    schedule: &Schedule,
    control: &ControlSpec,
    n_paths: usize,
) -> Result<usize> {
    let dim = params.integer_dim()?;
    if n_paths == 0 {
        return Err(Error::TooFewPaths {
            required: 1,
            got: 0,
        });
    }
    control.validate(params, schedule.horizon())?;
    Ok(dim)
}

/// Evaluates `f` on paths `0..n_paths` in parallel; results are in path order.
pub fn map_paths<T, F>(
    params: &ModelParams,
    schedule: &Schedule,
    control: &ControlSpec,
    n_paths: usize,
    rng: RngSpec,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut PathWalker<'_>) -> T + Sync,
{
    let dim = prepare_batch(params, schedule, control, n_paths)?;
    let params = *params;
    Ok((0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut w = PathWalker::new(params, dim, schedule, control, rng, i);
            f(&mut w)
        })
        .collect())
}

/// One materialized trajectory. Series have `n_steps + 1` entries except
/// `increments` (`n_steps * dim`, row-major) and `sigma_sq` (`n_steps`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SamplePath {
    /// Shifted coordinates, row-major `(n_steps + 1) x dim`.
    pub coords: Vec<f64>,
    pub increments: Vec<f64>,
    pub sigma_sq: Vec<f64>,
    pub qv: Vec<f64>,
    pub beta: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

impl SamplePath {
    pub fn coord(&self, k: usize, dim: usize) -> &[f64] {
        &self.coords[k * dim..(k + 1) * dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    pub params: ModelParams,
    pub dim: usize,
    pub schedule: Schedule,
    pub control: ControlSpec,
    pub paths: Vec<SamplePath>,
}

impl PathBundle {
    pub fn n_steps(&self) -> usize {
        self.schedule.n_steps()
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Per-path terminal values of a series selector.
    pub fn terminal(&self, pick: impl Fn(&SamplePath) -> &[f64]) -> Vec<f64> {
        self.paths
            .iter()
            .map(|p| *pick(p).last().expect("empty series"))
            .collect()
    }

    /// Writes `t, B1..Bd, beta, qv, Z, Y` for one sample. Missing derived
    /// series are written as empty fields.
    pub fn write_csv(&self, sample: usize, mut w: impl Write) -> io::Result<()> {
        let p = &self.paths[sample];
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("B{i}")));
        header.extend(["beta", "qv", "Z", "Y"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        let cell = |s: &[f64], k: usize| s.get(k).map(|v| v.to_string()).unwrap_or_default();
        for k in 0..=self.n_steps() {
            let mut row = vec![self.schedule.time(k).to_string()];
            row.extend(p.coord(k, self.dim).iter().map(|v| v.to_string()));
            row.push(cell(&p.beta, k));
            row.push(cell(&p.qv, k));
            row.push(cell(&p.z, k));
            row.push(cell(&p.y, k));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Simulates coordinates and quadratic variation for `n_paths` paths.
pub fn simulate_gbm(
    params: &ModelParams,
    grid: &TimeGrid,
    control: &ControlSpec,
    n_paths: usize,
    rng: RngSpec,
) -> Result<PathBundle> {
    simulate_on(params, &Schedule::Uniform(grid.validate()?), control, n_paths, rng)
}

/// [`simulate_gbm`] on an arbitrary schedule.
pub fn simulate_on(
    params: &ModelParams,
    schedule: &Schedule,
    control: &ControlSpec,
    n_paths: usize,
    rng: RngSpec,
) -> Result<PathBundle> {
    let dim = params.integer_dim()?;
    let n = schedule.n_steps();
    let paths = map_paths(params, schedule, control, n_paths, rng, |w| {
        let mut p = SamplePath {
            coords: Vec::with_capacity((n + 1) * dim),
            increments: Vec::with_capacity(n * dim),
            sigma_sq: Vec::with_capacity(n),
            qv: Vec::with_capacity(n + 1),
            ..Default::default()
        };
        p.coords.extend_from_slice(&w.state().x);
        p.qv.push(0.0);
        while w.advance() {
            let s = w.state();
            p.coords.extend_from_slice(&s.x);
            p.increments.extend_from_slice(w.increments());
            p.sigma_sq.push(s.sigma_sq);
            p.qv.push(s.qv);
        }
        p
    })?;
    Ok(PathBundle {
        params: *params,
        dim,
        schedule: schedule.clone(),
        control: control.clone(),
        paths,
    })
}

/// Fills `beta` from the coordinate series.
pub fn accumulate_beta(mut bundle: PathBundle) -> PathBundle {
    let dim = bundle.dim;
    let n = bundle.n_steps();
    let z0 = bundle.params.z;
    bundle.paths.par_iter_mut().for_each(|p| {
        let mut beta = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        beta.push(acc);
        for k in 0..n {
            let x = p.coord(k, dim);
            let dx = &p.increments[k * dim..(k + 1) * dim];
            let z = if k == 0 { z0 } else { squared_modulus(x) };
            acc += beta_increment(x, z, dx);
            beta.push(acc);
        }
        p.beta = beta;
    });
    bundle
}

/// Fills `y = int 2 sqrt(Z) d beta`; needs `z` and `beta`.
pub fn accumulate_y(mut bundle: PathBundle) -> Result<PathBundle> {
    let n = bundle.n_steps();
    for p in &bundle.paths {
        if p.z.len() != n + 1 {
            return Err(Error::MissingSeries("z"));
        }
        if p.beta.len() != n + 1 {
            return Err(Error::MissingSeries("beta"));
        }
    }
    bundle.paths.par_iter_mut().for_each(|p| {
        let mut y = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        y.push(acc);
        for k in 0..n {
            acc += 2.0 * p.z[k].sqrt() * (p.beta[k + 1] - p.beta[k]);
            y.push(acc);
        }
        p.y = y;
    });
    Ok(bundle)
}

/// Simulates and fills every derived series.
pub fn simulate_full(
    params: &ModelParams,
    schedule: &Schedule,
    control: &ControlSpec,
    n_paths: usize,
    rng: RngSpec,
) -> Result<PathBundle> {
    let bundle = simulate_on(params, schedule, control, n_paths, rng)?;
    let bundle = crate::besq::besq_from_modulus(accumulate_beta(bundle));
    accumulate_y(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Summary;

    fn unit() -> ModelParams {
        ModelParams::new(2.0, 1.0, 0.5, 1.0).unwrap()
    }

    #[test]
    fn constant_unit_control_gives_unit_variance() {
        // Classical oracle: Var(B_T) = sigma^2 T.
        let p = ModelParams::new(1.0, 0.0, 1.0, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let sched = Schedule::Uniform(grid);
        let c = ControlSpec::constant(1.0);
        let sq = map_paths(&p, &sched, &c, 100_000, RngSpec::new(1), |w| {
            w.run_to_end();
            w.state().x[0].powi(2)
        })
        .unwrap();
        let s = Summary::of(&sq);
        assert!((s.mean - 1.0).abs() < 3.0 * s.stderr, "{s:?}");
    }

    #[test]
    fn upper_control_accumulates_exact_qv() {
        let p = unit();
        let grid = TimeGrid::new(1.0, 64).unwrap();
        let c = ControlSpec::PiecewiseConstant {
            breakpoints: vec![],
            values: vec![1.0],
        };
        let b = simulate_gbm(&p, &grid, &c, 4, RngSpec::new(3)).unwrap();
        let expected: f64 = (0..64).map(|_| 1.0 * grid.dt()).sum();
        for path in &b.paths {
            assert_eq!(*path.qv.last().unwrap(), expected);
            assert!((expected - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bundles_are_bit_identical() {
        let p = unit();
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let c = ControlSpec::switch_at(0.5, 1.0, 0.5);
        let a = simulate_full(&p, &grid.into(), &c, 16, RngSpec::new(9)).unwrap();
        let b = simulate_full(&p, &grid.into(), &c, 16, RngSpec::new(9)).unwrap();
        assert_eq!(a, b);
        let other = simulate_full(&p, &grid.into(), &c, 16, RngSpec::new(10)).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn bundle_matches_walker_exactly() {
        let p = ModelParams::new(3.0, 2.0, 0.5, 1.0).unwrap();
        let sched = Schedule::Uniform(TimeGrid::new(1.0, 50).unwrap());
        let c = ControlSpec::feedback(crate::control::FeedbackPolicy::HighBelow { level: 2.0 });
        let bundle = simulate_full(&p, &sched, &c, 8, RngSpec::new(5)).unwrap();
        let streamed = map_paths(&p, &sched, &c, 8, RngSpec::new(5), |w| {
            let mut rows = vec![(w.state().beta, w.state().z, w.state().y, w.state().qv)];
            while w.advance() {
                let s = w.state();
                rows.push((s.beta, s.z, s.y, s.qv));
            }
            rows
        })
        .unwrap();
        for (path, rows) in bundle.paths.iter().zip(&streamed) {
            for (k, &(beta, z, y, qv)) in rows.iter().enumerate() {
                assert_eq!(path.beta[k], beta);
                assert_eq!(path.z[k], z);
                assert_eq!(path.y[k], y);
                assert_eq!(path.qv[k], qv);
            }
        }
    }

    #[test]
    fn qv_increments_stay_in_band() {
        let p = unit();
        let grid = TimeGrid::new(2.0, 100).unwrap();
        let dt = grid.dt();
        for c in [
            ControlSpec::constant(0.5),
            ControlSpec::switch_at(1.0, 0.5, 1.0),
            ControlSpec::feedback(crate::control::FeedbackPolicy::HighAbove { level: 1.5 }),
        ] {
            let b = simulate_gbm(&p, &grid, &c, 20, RngSpec::new(2)).unwrap();
            for path in &b.paths {
                assert_eq!(path.qv[0], 0.0);
                for w in path.qv.windows(2) {
                    let inc = w[1] - w[0];
                    assert!(inc >= 0.5 * dt * (1.0 - 1e-12) && inc <= dt * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn beta_equals_b_in_one_dimension_away_from_origin() {
        // d = 1 with x = sqrt(z) > 0: the integrand B/|B| is 1 while the path stays positive.
        let p = ModelParams::new(1.0, 25.0, 1.0, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let b = accumulate_beta(simulate_gbm(&p, &grid, &ControlSpec::constant(1.0), 8, RngSpec::new(4)).unwrap());
        for path in &b.paths {
            assert!(path.coords.iter().all(|&x| x > 0.0));
            for k in 0..=100 {
                let bm = path.coords[k] - 5.0;
                assert!((path.beta[k] - bm).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn beta_has_variance_t_in_two_dimensions() {
        let p = ModelParams::new(2.0, 1.0, 1.0, 1.0).unwrap();
        let sched = Schedule::Uniform(TimeGrid::new(1.0, 64).unwrap());
        let v = map_paths(&p, &sched, &ControlSpec::constant(1.0), 40_000, RngSpec::new(8), |w| {
            w.run_to_end();
            w.state().beta.powi(2)
        })
        .unwrap();
        let s = Summary::of(&v);
        assert!((s.mean - 1.0).abs() < 3.0 * s.stderr, "{s:?}");
    }

    #[test]
    fn y_starts_flat_at_origin() {
        let p = ModelParams::new(1.0, 0.0, 1.0, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let b = simulate_full(&p, &grid.into(), &ControlSpec::constant(1.0), 3, RngSpec::new(1)).unwrap();
        for path in &b.paths {
            assert_eq!(path.y[1], 0.0);
        }
    }

    #[test]
    fn y_is_mean_zero_and_bounded_in_l2() {
        let p = ModelParams::new(2.0, 1.0, 0.5, 1.0).unwrap();
        let t = 1.0;
        let sched = Schedule::Uniform(TimeGrid::new(t, 64).unwrap());
        for c in [ControlSpec::constant(0.5), ControlSpec::constant(1.0)] {
            let y = map_paths(&p, &sched, &c, 40_000, RngSpec::new(12), |w| {
                w.run_to_end();
                w.state().y
            })
            .unwrap();
            let s = Summary::of(&y);
            assert!(s.mean.abs() < 3.0 * s.stderr, "{s:?}");
            let sq: Vec<f64> = y.iter().map(|v| v * v).collect();
            let s2 = Summary::of(&sq);
            let bound = 4.0 * p.sigma_hi_sq * t * (p.z + p.d * p.sigma_hi_sq * t);
            assert!(s2.mean <= bound + 3.0 * s2.stderr, "{s2:?} vs {bound}");
        }
    }

    #[test]
    fn cross_variation_vanishes_on_average() {
        let p = ModelParams::new(2.0, 1.0, 1.0, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 256).unwrap();
        let b = simulate_gbm(&p, &grid, &ControlSpec::constant(1.0), 2_000, RngSpec::new(6)).unwrap();
        let cross: Vec<f64> = b
            .paths
            .iter()
            .map(|path| path.increments.chunks(2).map(|c| c[0] * c[1]).sum())
            .collect();
        let s = Summary::of(&cross);
        assert!(s.mean.abs() < 4.0 * s.stderr);
        // Per path the estimate is O(sqrt(dt) sigma^2 sqrt(T)).
        assert!(s.std < 3.0 * grid.dt().sqrt());
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let p = unit();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let b = simulate_full(&p, &grid.into(), &ControlSpec::constant(1.0), 2, RngSpec::new(1)).unwrap();
        let mut out = Vec::new();
        b.write_csv(1, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,B1,B2,beta,qv,Z,Y");
        assert_eq!(lines.len(), 6);
        assert!(lines[1].starts_with("0,1,0,0,0,1,0"));
    }

    #[test]
    fn rejects_empty_batch_and_bad_control() {
        let p = unit();
        let grid = TimeGrid::new(1.0, 4).unwrap();
        assert!(matches!(
            simulate_gbm(&p, &grid, &ControlSpec::constant(1.0), 0, RngSpec::new(1)),
            Err(Error::TooFewPaths { .. })
        ));
        assert!(simulate_gbm(&p, &grid, &ControlSpec::constant(2.0), 1, RngSpec::new(1)).is_err());
        assert!(simulate_gbm(&p.with_dim(2.5), &grid, &ControlSpec::constant(1.0), 1, RngSpec::new(1)).is_err());
    }
}
