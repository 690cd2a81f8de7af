//! Model parameters, uniform time grids and reproducible random streams.
//!
//! The volatility band `[sigma_lo_sq, sigma_hi_sq]` fixes the sublinear
//! function `G'(a) = (sigma_hi_sq * a^+ - sigma_lo_sq * a^-) / 2`. Every
//! admissible measure is a Brownian motion whose instantaneous variance is an
//! adapted process inside the band, shared by all coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Dimension, starting point and volatility band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: f64,
    pub z: f64,
    pub sigma_lo_sq: f64,
    pub sigma_hi_sq: f64,
}

impl ModelParams {
    pub fn new(d: f64, z: f64, sigma_lo_sq: f64, sigma_hi_sq: f64) -> Result<Self> {
        Self {
            d,
            z,
            sigma_lo_sq,
            sigma_hi_sq,
        }
        .validate()
    }

    /// Returns a copy of `self` if all invariants hold.
    pub fn validate(&self) -> Result<Self> {
        if !(self.d.is_finite() && self.d > 0.0) {
            return Err(invalid("d", "must be positive"));
        }
        if !(self.z.is_finite() && self.z >= 0.0) {
            return Err(invalid("z", "must be nonnegative"));
        }
        if !(self.sigma_lo_sq.is_finite() && self.sigma_lo_sq > 0.0) {
            return Err(invalid("sigma_lo_sq", "must be positive"));
        }
        if !(self.sigma_hi_sq.is_finite() && self.sigma_hi_sq > 0.0) {
            return Err(invalid("sigma_hi_sq", "must be positive"));
        }
        if self.sigma_lo_sq > self.sigma_hi_sq {
            return Err(invalid(
                "sigma_lo_sq",
                format!(
                    "must not exceed sigma_hi_sq ({} > {})",
                    self.sigma_lo_sq, self.sigma_hi_sq
                ),
            ));
        }
        Ok(*self)
    }

    /// The dimension as a coordinate count, for constructions that need `B`.
    pub fn integer_dim(&self) -> Result<usize> {
        let d = self.validate()?.d;
        if d.fract() != 0.0 || d > u32::MAX as f64 {
            return Err(invalid(
                "d",
                format!("must be a positive integer for the modulus construction, got {d}"),
            ));
        }
        Ok(d as usize)
    }

    pub fn band(&self) -> (f64, f64) {
        (self.sigma_lo_sq, self.sigma_hi_sq)
    }

    /// `G'(a) = (sigma_hi_sq * a^+ - sigma_lo_sq * a^-) / 2`.
    pub fn g_prime(&self, a: f64) -> f64 {
        0.5 * self.g_sup(a)
    }

    /// `sup_{s in band} s * a`, i.e. `2 G'(a)`.
    pub fn g_sup(&self, a: f64) -> f64 {
        if a >= 0.0 {
            self.sigma_hi_sq * a
        } else {
            self.sigma_lo_sq * a
        }
    }

    pub fn with_start(&self, z: f64) -> Self {
        Self { z, ..*self }
    }

    pub fn with_dim(&self, d: f64) -> Self {
        Self { d, ..*self }
    }
}

/// Uniform grid `t_k = k * horizon / n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid("horizon", "must be positive"));
        }
        if n_steps == 0 {
            return Err(invalid("n_steps", "must be positive"));
        }
        Ok(Self { horizon, n_steps })
    }

    /// Grid on `[0, horizon]` with step as close as possible to `dt`.
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        Self::new(horizon, (horizon / dt).round().max(1.0) as usize)
    }

    pub fn validate(&self) -> Result<Self> {
        Self::new(self.horizon, self.n_steps)
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    /// Index of the node equal to `t`, if there is one (relative tolerance 1e-9).
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let x = t / self.dt();
        let k = x.round();
        if k < 0.0 || k > self.n_steps as f64 {
            return None;
        }
        ((x - k).abs() <= 1e-9 * x.abs().max(1.0)).then_some(k as usize)
    }
}

/// Master seed; path `i` draws from stream `i` of a ChaCha8 generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub master_seed: u64,
}

impl RngSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn path_rng(&self, path: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(path);
        rng
    }

    /// Counter-based uniform in `(0, 1)` keyed by `(seed, path, step, lane)`.
    pub fn uniform(&self, path: u64, step: u64, lane: u64) -> f64 {
        let mut h = splitmix64(self.master_seed ^ 0x6a09_e667_f3bc_c908);
        h = splitmix64(h ^ path);
        h = splitmix64(h ^ step.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        h = splitmix64(h ^ lane);
        ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Seed for an independent sub-experiment (used to decorrelate batches).
    pub fn derive(&self, tag: u64) -> Self {
        Self {
            master_seed: splitmix64(self.master_seed ^ splitmix64(tag)),
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;
    use rand::RngCore;

    fn field_of(err: Error) -> &'static str {
        match err {
            Error::InvalidParameter { field, .. } => field,
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn accepts_valid_params() {
        let p = ModelParams::new(2.0, 1.0, 0.5, 1.0).unwrap();
        assert_eq!(p.validate().unwrap(), p);
    }

    #[test]
    fn rejects_zero_lower_volatility() {
        let err = ModelParams::new(2.0, 1.0, 0.0, 1.0).unwrap_err();
        assert_eq!(err.to_string(), "sigma_lo_sq must be positive");
    }

    #[test]
    fn rejects_negative_dimension() {
        let err = ModelParams::new(-1.0, 1.0, 1.0, 1.0).unwrap_err();
        assert_eq!(err.to_string(), "d must be positive");
    }

    #[test]
    fn rejects_inverted_band_and_negative_start() {
        assert_eq!(field_of(ModelParams::new(2.0, 1.0, 2.0, 1.0).unwrap_err()), "sigma_lo_sq");
        assert_eq!(field_of(ModelParams::new(2.0, -0.1, 1.0, 1.0).unwrap_err()), "z");
        assert_eq!(field_of(ModelParams::new(2.0, 1.0, 1.0, f64::NAN).unwrap_err()), "sigma_hi_sq");
    }

    #[test]
    fn modulus_needs_integer_dimension() {
        assert_eq!(ModelParams::new(3.0, 1.0, 1.0, 1.0).unwrap().integer_dim().unwrap(), 3);
        assert!(ModelParams::new(2.5, 1.0, 1.0, 1.0).unwrap().integer_dim().is_err());
    }

    #[test]
    fn grid_endpoints() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(10), 1.0);
        let ts = g.times();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(g.node_index(0.3), Some(3));
        assert_eq!(g.node_index(0.35), None);
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn g_prime_is_sublinear() {
        let p = ModelParams::new(1.0, 0.0, 0.25, 1.0).unwrap();
        assert_eq!(p.g_prime(2.0), 1.0);
        assert_eq!(p.g_prime(-2.0), -0.25);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let spec = RngSpec::new(7);
        let a: Vec<u64> = (0..4).map(|_| spec.path_rng(3).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(spec.path_rng(3).next_u64(), spec.path_rng(4).next_u64());
        assert_eq!(spec.uniform(1, 2, 3), spec.uniform(1, 2, 3));
        assert_ne!(spec.uniform(1, 2, 3), spec.uniform(1, 3, 3));
    }

    proptest! {
        #[test]
        fn validate_is_idempotent(d in 0.01f64..10.0, z in 0.0f64..10.0, lo in 0.01f64..2.0, w in 0.0f64..2.0) {
            let p = ModelParams { d, z, sigma_lo_sq: lo, sigma_hi_sq: lo + w };
            let once = p.validate().unwrap();
            prop_assert_eq!(once.validate().unwrap(), once);
        }

        #[test]
        fn counter_uniform_in_open_unit_interval(seed: u64, path: u64, step: u64, lane in 0u64..8) {
            let u = RngSpec::new(seed).uniform(path, step, lane);
            prop_assert!(u > 0.0 && u < 1.0);
        }
    }
}
