//! Closed-form reference values: exit capacities from the scale functions,
//! bounds on the Laplace transform under volatility uncertainty, the
//! classical squared Bessel Laplace transform and the tail bound for the
//! stopped martingale `Y`.

use crate::error::{invalid, Error, Result};
use crate::model::ModelParams;

/// Width of the window around `d = 2` that uses the series expansion.
pub const LOG_BRANCH_WINDOW: f64 = 1e-8;

/// Scale function normalized to `phi(a) = 0`, `phi(b) = 1`, and its
/// complement `psi = 1 - phi`. Both are harmonic for `d u' + 2 y u'' = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFunction {
    pub d: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Power,
    Logarithmic,
}

impl ScaleFunction {
    pub fn new(d: f64, a: f64, b: f64) -> Result<Self> {
        if !(d.is_finite() && d > 0.0) {
            return Err(invalid("d", "must be positive"));
        }
        if !(a > 0.0 && b > a && b.is_finite()) {
            return Err(Error::LevelOrder(format!("0 < a < b, got a={a}, b={b}")));
        }
        Ok(Self { d, a, b })
    }

    pub fn branch(&self) -> Branch {
        if self.d == 2.0 {
            Branch::Logarithmic
        } else {
            Branch::Power
        }
    }

    fn exponent(&self) -> f64 {
        1.0 - 0.5 * self.d
    }

    /// `(e^{eps u} - 1) / (e^{eps w} - 1)`, continuous through `eps = 0`.
    fn ratio(eps: f64, u: f64, w: f64) -> f64 {
        if eps == 0.0 {
            u / w
        } else if eps.abs() < 0.5 * LOG_BRANCH_WINDOW {
            (u / w) * (1.0 + 0.5 * eps * (u - w))
        } else {
            (eps * u).exp_m1() / (eps * w).exp_m1()
        }
    }

    pub fn phi(&self, y: f64) -> f64 {
        let eps = self.exponent();
        let w = (self.b / self.a).ln();
        if y <= 0.0 {
            return if eps > 0.0 {
                -1.0 / (eps * w).exp_m1()
            } else {
                f64::NEG_INFINITY
            };
        }
        Self::ratio(eps, (y / self.a).ln(), w)
    }

    pub fn psi(&self, y: f64) -> f64 {
        let eps = self.exponent();
        let w = (self.b / self.a).ln();
        if y <= 0.0 {
            return 1.0 - self.phi(y);
        }
        // (b^eps - y^eps) / (b^eps - a^eps) = (y/a)^eps (e^{eps ln(b/y)} - 1) / (e^{eps w} - 1)
        let lead = if eps == 0.0 { 1.0 } else { (eps * (y / self.a).ln()).exp() };
        lead * Self::ratio(eps, (self.b / y).ln(), w)
    }
}

fn check_levels(z: f64, a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && a <= z && z <= b && a < b && b.is_finite()) {
        return Err(Error::LevelOrder(format!(
            "0 < a <= z <= b with a < b, got a={a}, z={z}, b={b}"
        )));
    }
    Ok(())
}

/// Capacity of exiting `(a, b)` through the upper level first.
pub fn scale_ratio_down(z: f64, a: f64, b: f64, d: f64) -> Result<f64> {
    check_levels(z, a, b)?;
    Ok(ScaleFunction::new(d, a, b)?.phi(z))
}

/// Capacity of exiting `(a, b)` through the lower level first.
pub fn scale_ratio_up(z: f64, a: f64, b: f64, d: f64) -> Result<f64> {
    check_levels(z, a, b)?;
    Ok(ScaleFunction::new(d, a, b)?.psi(z))
}

/// `c(tau_a < infinity) = (a/z)^{d/2 - 1}` for `d > 2`.
pub fn tau_a_finite_capacity(z: f64, a: f64, d: f64) -> Result<f64> {
    if !(d > 2.0) {
        return Err(invalid("d", format!("must exceed 2, got {d}")));
    }
    if !(a > 0.0 && a <= z) {
        return Err(Error::LevelOrder(format!("0 < a <= z, got a={a}, z={z}")));
    }
    Ok(((0.5 * d - 1.0) * (a / z).ln()).exp())
}

/// `c(tau_b < tau_0) = (z/b)^{1/2}` in dimension one.
pub fn tau0_split_capacity(z: f64, b: f64) -> Result<f64> {
    if !(z > 0.0 && z <= b) {
        return Err(Error::LevelOrder(format!("0 < z <= b, got z={z}, b={b}")));
    }
    Ok((z / b).sqrt())
}

fn check_laplace_args(lambda: f64, t: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid("lambda", "must be nonnegative"));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t", "must be nonnegative"));
    }
    Ok(())
}

/// Upper bound on the sublinear expectation of `exp(-lambda Z_t)`.
pub fn laplace_upper(lambda: f64, t: f64, params: &ModelParams) -> Result<f64> {
    check_laplace_args(lambda, t)?;
    let gap = params.sigma_hi_sq - params.sigma_lo_sq;
    let hi = 2.0 * lambda * params.sigma_hi_sq * t;
    let log = 0.5 * params.d * ((2.0 * lambda * gap * t).ln_1p() - hi.ln_1p())
        - lambda * params.z / (1.0 + hi);
    Ok(log.exp())
}

/// Lower bound on the sublinear expectation of `exp(-lambda Z_t)`.
pub fn laplace_lower(lambda: f64, t: f64, params: &ModelParams) -> Result<f64> {
    check_laplace_args(lambda, t)?;
    let gap = 1.0 + 2.0 * lambda * (params.sigma_hi_sq - params.sigma_lo_sq) * t;
    let hi = 2.0 * lambda * params.sigma_hi_sq * t;
    let log = -0.5 * params.d * gap * hi.ln_1p() - lambda * params.z * gap / (1.0 + hi);
    Ok(log.exp())
}

/// `E[exp(-lambda Z_t)]` for a squared Bessel process run at constant variance `sigma_sq`.
pub fn classical_laplace(lambda: f64, t: f64, z: f64, d: f64, sigma_sq: f64) -> f64 {
    let s = 2.0 * lambda * sigma_sq * t;
    (-0.5 * d * s.ln_1p() - lambda * z / (1.0 + s)).exp()
}

/// Right-hand side of the martingale identity for the Laplace martingale:
/// its value at time zero when the horizon is `t`.
pub fn laplace_martingale_start(lambda: f64, t: f64, params: &ModelParams) -> f64 {
    classical_laplace(lambda, t, params.z, params.d, params.sigma_hi_sq)
}

/// `4 b sigma_hi_sq / sqrt(t)`; only a bound, it may exceed one.
pub fn taub_tail_bound(b: f64, sigma_hi_sq: f64, t: f64) -> f64 {
    4.0 * b * sigma_hi_sq / t.sqrt()
}
