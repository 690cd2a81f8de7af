//! Terminal payoffs selectable from a config.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payoff {
    Square,
    Identity,
    PositivePart,
    Exp { lambda: f64 },
    Cos { omega: f64 },
    Constant { value: f64 },
}

impl Payoff {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Payoff::Square => x * x,
            Payoff::Identity => x,
            Payoff::PositivePart => x.max(0.0),
            Payoff::Exp { lambda } => (-lambda * x).exp(),
            Payoff::Cos { omega } => (omega * x).cos(),
            Payoff::Constant { value } => value,
        }
    }

    pub fn id(&self) -> String {
        match self {
            Payoff::Square => "x^2".into(),
            Payoff::Identity => "x".into(),
            Payoff::PositivePart => "x+".into(),
            Payoff::Exp { lambda } => format!("exp(-{lambda}x)"),
            Payoff::Cos { omega } => format!("cos({omega}x)"),
            Payoff::Constant { value } => format!("{value}"),
        }
    }
}

/// Smooth bounded payoff `sum c_j cos(w_j x + p_j)`, optionally raised by
/// nonnegative Gaussian bumps.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomPayoff {
    waves: Vec<(f64, f64, f64)>,
    bumps: Vec<(f64, f64, f64)>,
}

impl RandomPayoff {
    pub fn sample(rng: &mut impl rand::Rng, half_width: f64) -> Self {
        let waves = (0..4)
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(0.2..3.0), rng.random_range(0.0..6.3)))
            .collect();
        Self { waves, bumps: vec![] }
            .with_bumps(rng, half_width, 0)
    }

    /// Same payoff plus `n` bumps of nonnegative height.
    pub fn with_bumps(mut self, rng: &mut impl rand::Rng, half_width: f64, n: usize) -> Self {
        self.bumps.extend((0..n).map(|_| {
            (
                rng.random_range(0.0..0.5),
                rng.random_range(-half_width..half_width),
                rng.random_range(0.1..1.0),
            )
        }));
        self
    }

    pub fn eval(&self, x: f64) -> f64 {
        let w: f64 = self.waves.iter().map(|(c, om, ph)| c * (om * x + ph).cos()).sum();
        let b: f64 = self.bumps.iter().map(|(h, m, s)| h * (-((x - m) / s).powi(2)).exp()).sum();
        w + b
    }
}
