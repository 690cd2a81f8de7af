//! Explicit monotone finite-difference oracles for the sublinear expectation.
//!
//! * `solve_gheat`: `u_t = (sigma_hi^2 (u_xx)^+ - sigma_lo^2 (u_xx)^-) / 2`, so
//!   `u(0, x)` estimates `E[f(x + beta_T)]` under the sublinear expectation.
//! * `solve_besq_hjb`: `u_t = sigma_hi^2 (Lu)^+ - sigma_lo^2 (Lu)^-` with
//!   `Lu = d u_z + 2 z u_zz`, so `u(0, z)` estimates `E[f(Z_T)]`.
//! * `solve_exit_ode`: `d w' + 2 z w'' = 0`, `w(a) = 0`, `w(b) = 1`.
//!
//! Time stepping is sequential; each step maps the previous nodal vector to
//! a fresh one without cross-node writes.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::ModelParams;

/// Nodes per task when a time step is split across threads.
const PAR_MIN_LEN: usize = 4096;

/// Spatial discretization of the squared Bessel HJB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BesqScheme {
    /// Finite volumes in `r = sqrt(z)` for `(r^{d-1} v_r)_r / (2 r^{d-1})`.
    #[default]
    Radial,
    /// Uniform `z` grid, central second difference, forward first difference.
    Zeta,
}

/// Scheme metadata recorded with every solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeMetadata {
    pub scheme: String,
    pub payoff_id: String,
    pub grid_min: f64,
    pub grid_max: f64,
    pub n_x: usize,
    pub n_t: usize,
    pub horizon: f64,
    pub dt: f64,
    pub dx: f64,
    /// `dt` divided by the largest stable step.
    pub stability_ratio: f64,
    pub sigma_lo_sq: f64,
    pub sigma_hi_sq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeSolution {
    pub meta: PdeMetadata,
    /// Nodal coordinates in the state variable (`x` for the heat equation, `z` otherwise).
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
}

impl PdeSolution {
    /// Linear interpolation between neighboring nodes; for the radial scheme
    /// the interpolation is in `sqrt(z)`.
    pub fn value_at(&self, x: f64) -> f64 {
        let radial = self.meta.scheme == "besq_radial";
        let key = |v: f64| if radial { v.max(0.0).sqrt() } else { v };
        let xs = key(x);
        let j = self.nodes.partition_point(|&n| key(n) <= xs);
        if j == 0 {
            return self.values[0];
        }
        if j >= self.nodes.len() {
            return *self.values.last().expect("nonempty grid");
        }
        let (x0, x1) = (key(self.nodes[j - 1]), key(self.nodes[j]));
        if xs == x0 {
            return self.values[j - 1];
        }
        let w = (xs - x0) / (x1 - x0);
        self.values[j - 1] * (1.0 - w) + self.values[j] * w
    }

    pub fn write_csv(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "x,value")?;
        for (x, v) in self.nodes.iter().zip(&self.values) {
            writeln!(w, "{x},{v}")?;
        }
        Ok(())
    }
}

fn steps_for(horizon: f64, max_dt: f64, given: Option<usize>, scheme: &'static str) -> Result<usize> {
    let required = ((horizon / max_dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    match given {
        None => Ok(required),
        Some(n) if n >= required => Ok(n),
        Some(n) => Err(Error::Stability {
            scheme,
            required_steps: required,
            given: n,
        }),
    }
}

fn check_horizon(horizon: f64) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("horizon", "must be positive"));
    }
    Ok(())
}

/// Explicit step `u + dt * H(u)` with `H` evaluated from the old vector.
fn step<F>(u: &[f64], out: &mut [f64], f: F)
where
    F: Fn(usize, &[f64]) -> f64 + Sync,
{
    out.par_iter_mut()
        .enumerate()
        .with_min_len(PAR_MIN_LEN)
        .for_each(|(i, o)| *o = f(i, u));
}

#[inline]
fn g_select(params: &ModelParams, a: f64) -> f64 {
    if a >= 0.0 {
        params.sigma_hi_sq * a
    } else {
        params.sigma_lo_sq * a
    }
}

/// Grid for [`solve_gheat`]: `n_x` intervals on `[-half_width, half_width]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatGrid {
    pub horizon: f64,
    pub half_width: f64,
    pub n_x: usize,
    /// `None` picks the smallest stable step count.
    pub n_t: Option<usize>,
}

/// Dirichlet data equal to the payoff at `+-half_width`.
pub fn solve_gheat(payoff: &(dyn Fn(f64) -> f64 + Sync), payoff_id: &str, params: &ModelParams, grid: &HeatGrid) -> Result<PdeSolution> {
    let params = params.validate()?;
    check_horizon(grid.horizon)?;
    if !(grid.half_width > 0.0) || grid.n_x < 2 {
        return Err(invalid("n_x", "needs a positive half width and at least 2 intervals"));
    }
    let l = grid.half_width;
    let dx = 2.0 * l / grid.n_x as f64;
    // sigma_hi^2 dt / dx^2 <= 1/2
    let max_dt = 0.5 * dx * dx / params.sigma_hi_sq;
    let n_t = steps_for(grid.horizon, max_dt, grid.n_t, "gheat")?;
    let dt = grid.horizon / n_t as f64;
    let nodes: Vec<f64> = (0..=grid.n_x).map(|i| -l + dx * i as f64).collect();
    let mut u: Vec<f64> = nodes.iter().map(|&x| payoff(x)).collect();
    let mut next = u.clone();
    let n = grid.n_x;
    let k = 0.5 * dt / (dx * dx);
    for _ in 0..n_t {
        step(&u, &mut next, |i, u| {
            if i == 0 || i == n {
                u[i]
            } else {
                u[i] + k * g_select(&params, u[i + 1] - 2.0 * u[i] + u[i - 1])
            }
        });
        std::mem::swap(&mut u, &mut next);
    }
    Ok(PdeSolution {
        meta: PdeMetadata {
            scheme: "gheat_central".into(),
            payoff_id: payoff_id.into(),
            grid_min: -l,
            grid_max: l,
            n_x: n,
            n_t,
            horizon: grid.horizon,
            dt,
            dx,
            stability_ratio: dt / max_dt,
            sigma_lo_sq: params.sigma_lo_sq,
            sigma_hi_sq: params.sigma_hi_sq,
        },
        nodes,
        values: u,
    })
}

/// Grid for [`solve_besq_hjb`] on `[0, z_max]` with `n_z` intervals (in `z`
/// for the zeta scheme, in `sqrt(z)` for the radial one).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BesqGrid {
    pub horizon: f64,
    pub z_max: f64,
    pub n_z: usize,
    pub n_t: Option<usize>,
    #[serde(default)]
    pub scheme: BesqScheme,
}

impl BesqGrid {
    /// Radial grid with `per_unit` intervals per unit of `sqrt(z)`, so every
    /// perfect square is a node. The far boundary is the smallest perfect
    /// square above twice [`truncation_level`]; at the rule itself the
    /// Dirichlet data is still felt near `z = 4`.
    pub fn radial(params: &ModelParams, horizon: f64, per_unit: usize) -> Self {
        let r = (2.0 * truncation_level(params, horizon)).sqrt().ceil().max(1.0);
        Self {
            horizon,
            z_max: r * r,
            n_z: r as usize * per_unit,
            n_t: None,
            scheme: BesqScheme::Radial,
        }
    }
}

/// `z + 6 sigma_hi sqrt(d) T + d sigma_hi^2 T`.
pub fn truncation_level(params: &ModelParams, horizon: f64) -> f64 {
    params.z + 6.0 * params.sigma_hi_sq.sqrt() * params.d.sqrt() * horizon + params.d * params.sigma_hi_sq * horizon
}

/// Dirichlet data `payoff(z_max)` at the far boundary; the origin uses the
/// degenerate generator.
pub fn solve_besq_hjb(payoff: &(dyn Fn(f64) -> f64 + Sync), payoff_id: &str, params: &ModelParams, grid: &BesqGrid) -> Result<PdeSolution> {
    let params = params.validate()?;
    check_horizon(grid.horizon)?;
    if !(grid.z_max > 0.0 && grid.z_max.is_finite()) || grid.n_z < 2 {
        return Err(invalid("n_z", "needs a positive z_max and at least 2 intervals"));
    }
    match grid.scheme {
        BesqScheme::Zeta => besq_zeta(payoff, payoff_id, &params, grid),
        BesqScheme::Radial => besq_radial(payoff, payoff_id, &params, grid),
    }
}

fn besq_zeta(payoff: &(dyn Fn(f64) -> f64 + Sync), payoff_id: &str, params: &ModelParams, grid: &BesqGrid) -> Result<PdeSolution> {
    let n = grid.n_z;
    let d = params.d;
    let h = grid.z_max / n as f64;
    let max_dt = h * h / (params.sigma_hi_sq * (d * h + 4.0 * grid.z_max));
    let n_t = steps_for(grid.horizon, max_dt, grid.n_t, "besq_zeta")?;
    let dt = grid.horizon / n_t as f64;
    let nodes: Vec<f64> = (0..=n).map(|i| h * i as f64).collect();
    let mut u: Vec<f64> = nodes.iter().map(|&z| payoff(z)).collect();
    let mut next = u.clone();
    for _ in 0..n_t {
        step(&u, &mut next, |i, u| {
            if i == n {
                return u[n];
            }
            let drift = d * (u[i + 1] - u[i]) / h;
            let lu = if i == 0 {
                drift
            } else {
                drift + 2.0 * nodes[i] * (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (h * h)
            };
            u[i] + dt * g_select(params, lu)
        });
        std::mem::swap(&mut u, &mut next);
    }
    Ok(PdeSolution {
        meta: PdeMetadata {
            scheme: "besq_zeta".into(),
            payoff_id: payoff_id.into(),
            grid_min: 0.0,
            grid_max: grid.z_max,
            n_x: n,
            n_t,
            horizon: grid.horizon,
            dt,
            dx: h,
            stability_ratio: dt / max_dt,
            sigma_lo_sq: params.sigma_lo_sq,
            sigma_hi_sq: params.sigma_hi_sq,
        },
        nodes,
        values: u,
    })
}

fn besq_radial(payoff: &(dyn Fn(f64) -> f64 + Sync), payoff_id: &str, params: &ModelParams, grid: &BesqGrid) -> Result<PdeSolution> {
    let n = grid.n_z;
    let d = params.d;
    let dr = grid.z_max.sqrt() / n as f64;
    let inv = 1.0 / (2.0 * dr * dr);
    // c_minus[i], c_plus[i]: weights of v[i-1], v[i] - ... in the flux difference
    let (c_minus, c_plus): (Vec<f64>, Vec<f64>) = (0..=n)
        .map(|i| {
            if i == 0 {
                (0.0, d / (dr * dr))
            } else {
                let ri = i as f64;
                let lo = ((ri - 0.5) / ri).powf(d - 1.0);
                let hi = ((ri + 0.5) / ri).powf(d - 1.0);
                (lo * inv, hi * inv)
            }
        })
        .unzip();
    let worst = (0..n).map(|i| c_minus[i] + c_plus[i]).fold(0.0, f64::max);
    let max_dt = 1.0 / (params.sigma_hi_sq * worst);
    let n_t = steps_for(grid.horizon, max_dt, grid.n_t, "besq_radial")?;
    let dt = grid.horizon / n_t as f64;
    let nodes: Vec<f64> = (0..=n).map(|i| (dr * i as f64).powi(2)).collect();
    let mut u: Vec<f64> = nodes.iter().map(|&z| payoff(z)).collect();
    let mut next = u.clone();
    for _ in 0..n_t {
        step(&u, &mut next, |i, u| {
            if i == n {
                return u[n];
            }
            let mut lv = c_plus[i] * (u[i + 1] - u[i]);
            if i > 0 {
                lv -= c_minus[i] * (u[i] - u[i - 1]);
            }
            u[i] + dt * g_select(params, lv)
        });
        std::mem::swap(&mut u, &mut next);
    }
    Ok(PdeSolution {
        meta: PdeMetadata {
            scheme: "besq_radial".into(),
            payoff_id: payoff_id.into(),
            grid_min: 0.0,
            grid_max: grid.z_max,
            n_x: n,
            n_t,
            horizon: grid.horizon,
            dt,
            dx: dr,
            stability_ratio: dt / max_dt,
            sigma_lo_sq: params.sigma_lo_sq,
            sigma_hi_sq: params.sigma_hi_sq,
        },
        nodes,
        values: u,
    })
}

/// Central differences on `n_z` uniform intervals of `[a, b]`, solved by the
/// Thomas algorithm. Returns `(nodes, w)`.
pub fn solve_exit_ode(a: f64, b: f64, d: f64, n_z: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(a > 0.0 && b > a && b.is_finite()) {
        return Err(Error::LevelOrder(format!("0 < a < b, got a={a}, b={b}")));
    }
    if !(d > 0.0 && d.is_finite()) {
        return Err(invalid("d", "must be positive"));
    }
    if n_z < 2 {
        return Err(invalid("n_z", "must be at least 2"));
    }
    let h = (b - a) / n_z as f64;
    let nodes: Vec<f64> = (0..=n_z).map(|i| if i == n_z { b } else { a + h * i as f64 }).collect();
    // interior rows: lo w[i-1] + mid w[i] + hi w[i+1] = 0
    let m = n_z - 1;
    let mut lo = vec![0.0; m];
    let mut mid = vec![0.0; m];
    let mut hi = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for j in 0..m {
        let z = nodes[j + 1];
        let diff = 2.0 * z / (h * h);
        let adv = d / (2.0 * h);
        lo[j] = diff - adv;
        mid[j] = -2.0 * diff;
        hi[j] = diff + adv;
    }
    rhs[m - 1] -= hi[m - 1];
    for j in 1..m {
        let f = lo[j] / mid[j - 1];
        mid[j] -= f * hi[j - 1];
        rhs[j] -= f * rhs[j - 1];
    }
    let mut w = vec![0.0; n_z + 1];
    w[n_z] = 1.0;
    w[m] = rhs[m - 1] / mid[m - 1];
    for j in (0..m - 1).rev() {
        w[j + 1] = (rhs[j] - hi[j] * w[j + 2]) / mid[j];
    }
    Ok((nodes, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{classical_laplace, laplace_lower, laplace_upper, scale_ratio_down};

    fn unit() -> ModelParams {
        ModelParams::new(2.0, 1.0, 1.0, 1.0).unwrap()
    }

    fn heat(n_x: usize) -> HeatGrid {
        HeatGrid {
            horizon: 1.0,
            half_width: 8.0,
            n_x,
            n_t: None,
        }
    }

    #[test]
    fn heat_square_payoff() {
        let s = solve_gheat(&|x| x * x, "x^2", &unit(), &heat(400)).unwrap();
        assert!((s.value_at(0.0) - 1.0).abs() < 2e-3, "{}", s.value_at(0.0));
        assert!(s.meta.stability_ratio <= 1.0);
    }

    #[test]
    fn heat_odd_payoff_stays_zero() {
        let p = ModelParams::new(1.0, 0.0, 0.25, 1.0).unwrap();
        let s = solve_gheat(&|x| x, "x", &p, &heat(200)).unwrap();
        assert!(s.value_at(0.0).abs() < 1e-12);
    }

    #[test]
    fn heat_convex_payoff_uses_upper_volatility() {
        let p = ModelParams::new(1.0, 0.0, 0.25, 1.0).unwrap();
        let s = solve_gheat(&|x: f64| x.max(0.0), "x+", &p, &heat(800)).unwrap();
        let exact = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((s.value_at(0.0) - exact).abs() < 1e-3);
    }

    #[test]
    fn heat_second_order() {
        let exact = (-0.5f64).exp();
        let err = |n| (solve_gheat(&|x: f64| x.cos(), "cos", &unit(), &heat(n)).unwrap().value_at(0.0) - exact).abs();
        let (e1, e2) = (err(100), err(200));
        assert!(e1 / e2 >= 3.0, "{e1} {e2}");
    }

    #[test]
    fn heat_rejects_short_time_stepping() {
        let g = HeatGrid { n_t: Some(10), ..heat(400) };
        match solve_gheat(&|x| x, "x", &unit(), &g) {
            Err(Error::Stability { required_steps, given, .. }) => {
                assert_eq!(given, 10);
                assert!(required_steps > 10);
                let ok = HeatGrid { n_t: Some(required_steps), ..heat(400) };
                assert!(solve_gheat(&|x| x, "x", &unit(), &ok).is_ok());
            }
            other => panic!("{other:?}"),
        }
    }

    fn besq(scheme: BesqScheme, p: &ModelParams, n_z: usize) -> BesqGrid {
        BesqGrid {
            horizon: 1.0,
            z_max: truncation_level(p, 1.0),
            n_z,
            n_t: None,
            scheme,
        }
    }

    #[test]
    fn constants_are_fixed_points() {
        for scheme in [BesqScheme::Radial, BesqScheme::Zeta] {
            let s = solve_besq_hjb(&|_| 1.0, "one", &unit(), &besq(scheme, &unit(), 64)).unwrap();
            assert!(s.values.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn radial_scheme_matches_classical_laplace() {
        let p = unit();
        let s = solve_besq_hjb(&|z: f64| (-z).exp(), "exp(-z)", &p, &besq(BesqScheme::Radial, &p, 256)).unwrap();
        let exact = classical_laplace(1.0, 1.0, 1.0, 2.0, 1.0);
        assert!((s.value_at(1.0) - exact).abs() < 1e-3 * exact, "{} vs {exact}", s.value_at(1.0));
    }

    #[test]
    fn zeta_scheme_matches_classical_laplace() {
        let p = unit();
        let s = solve_besq_hjb(&|z: f64| (-z).exp(), "exp(-z)", &p, &besq(BesqScheme::Zeta, &p, 400)).unwrap();
        let exact = classical_laplace(1.0, 1.0, 1.0, 2.0, 1.0);
        assert!((s.value_at(1.0) - exact).abs() < 1e-2, "{} vs {exact}", s.value_at(1.0));
    }

    #[test]
    fn uncertain_laplace_inside_sandwich() {
        let p = ModelParams::new(2.0, 1.0, 0.5, 1.0).unwrap();
        let s = solve_besq_hjb(&|z: f64| (-z).exp(), "exp(-z)", &p, &besq(BesqScheme::Radial, &p, 256)).unwrap();
        let v = s.value_at(1.0);
        assert!(v >= laplace_lower(1.0, 1.0, &p).unwrap() && v <= laplace_upper(1.0, 1.0, &p).unwrap());
        for sig in [0.5, 0.75, 1.0] {
            assert!(v >= classical_laplace(1.0, 1.0, 1.0, 2.0, sig) - 1e-3);
        }
    }

    #[test]
    fn exit_ode_reproduces_scale_ratio() {
        for d in [1.0, 2.0, 4.0] {
            let (z, w) = solve_exit_ode(1.0, 4.0, d, 300).unwrap();
            assert_eq!(w[0], 0.0);
            assert_eq!(w[300], 1.0);
            assert_eq!(z[100], 2.0);
            assert!((w[100] - scale_ratio_down(2.0, 1.0, 4.0, d).unwrap()).abs() < 1e-4);
        }
        assert!(solve_exit_ode(2.0, 1.0, 2.0, 10).is_err());
    }

    #[test]
    fn besq_comparison_and_band_monotonicity() {
        let narrow = ModelParams::new(3.0, 1.0, 0.5, 1.0).unwrap();
        let wide = ModelParams::new(3.0, 1.0, 0.25, 1.5).unwrap();
        let g = BesqGrid {
            horizon: 0.5,
            z_max: 16.0,
            n_z: 64,
            n_t: None,
            scheme: BesqScheme::Radial,
        };
        let f = |z: f64| (z - 1.0).sin();
        let h = |z: f64| (z - 1.0).sin() + 0.1 * (-z).exp();
        let sf = solve_besq_hjb(&f, "f", &narrow, &g).unwrap();
        let sh = solve_besq_hjb(&h, "h", &narrow, &g).unwrap();
        assert!(sf.values.iter().zip(&sh.values).all(|(a, b)| a <= b));
        let g_wide = BesqGrid {
            n_t: Some(solve_besq_hjb(&f, "f", &wide, &g).unwrap().meta.n_t),
            ..g
        };
        let sw = solve_besq_hjb(&f, "f", &wide, &g_wide).unwrap();
        let sn = solve_besq_hjb(&f, "f", &narrow, &g_wide).unwrap();
        assert!(sn.values.iter().zip(&sw.values).all(|(a, b)| a <= b));
    }

    #[test]
    fn csv_export() {
        let s = solve_gheat(&|x| x, "x", &unit(), &heat(4)).unwrap();
        let mut out = Vec::new();
        s.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("x,value\n-8,-8\n"));
    }
}
