//! Volatility controls. Each control selects one measure of the
//! representation family: the variance of every coordinate increment on a
//! grid cell is the control value at the start of the cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Feedback rules mapping the current state `(t, Z_t)` to one of the band
/// endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum FeedbackPolicy {
    /// Upper volatility while `Z < level`, lower otherwise.
    HighBelow { level: f64 },
    /// Upper volatility while `Z > level`, lower otherwise.
    HighAbove { level: f64 },
    /// Upper volatility on cells `[kP, kP + P/2)`, lower on the rest.
    Alternating { period: f64 },
}

impl FeedbackPolicy {
    fn pick_high(&self, t: f64, z: f64) -> bool {
        match *self {
            FeedbackPolicy::HighBelow { level } => z < level,
            FeedbackPolicy::HighAbove { level } => z > level,
            FeedbackPolicy::Alternating { period } => (t / period).fract() < 0.5,
        }
    }

    fn id(&self) -> String {
        match self {
            FeedbackPolicy::HighBelow { level } => format!("high_below({level})"),
            FeedbackPolicy::HighAbove { level } => format!("high_above({level})"),
            FeedbackPolicy::Alternating { period } => format!("alternating({period})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlSpec {
    Constant {
        sigma_sq: f64,
    },
    /// `values[j]` applies on `[breakpoints[j-1], breakpoints[j])`, with
    /// `values.len() == breakpoints.len() + 1`.
    PiecewiseConstant {
        breakpoints: Vec<f64>,
        values: Vec<f64>,
    },
    FeedbackBangBang {
        policy: FeedbackPolicy,
    },
}

impl ControlSpec {
    pub fn constant(sigma_sq: f64) -> Self {
        ControlSpec::Constant { sigma_sq }
    }

    /// Two-phase bang-bang control switching at `switch`.
    pub fn switch_at(switch: f64, first: f64, second: f64) -> Self {
        ControlSpec::PiecewiseConstant {
            breakpoints: vec![switch],
            values: vec![first, second],
        }
    }

    pub fn feedback(policy: FeedbackPolicy) -> Self {
        ControlSpec::FeedbackBangBang { policy }
    }

    /// Control value on the cell starting at time `t` with current state `z`.
    #[inline]
    pub fn value(&self, t: f64, z: f64, params: &ModelParams) -> f64 {
        match self {
            ControlSpec::Constant { sigma_sq } => *sigma_sq,
            ControlSpec::PiecewiseConstant { breakpoints, values } => {
                values[breakpoints.partition_point(|&b| b <= t)]
            }
            ControlSpec::FeedbackBangBang { policy } => {
                if policy.pick_high(t, z) {
                    params.sigma_hi_sq
                } else {
                    params.sigma_lo_sq
                }
            }
        }
    }

    /// Checks band membership of every attainable value and, for piecewise
    /// controls, that the breakpoints are strictly increasing inside `[0, horizon]`.
    pub fn validate(&self, params: &ModelParams, horizon: f64) -> Result<()> {
        let (lo, hi) = params.band();
        let in_band = |v: f64| {
            if v.is_finite() && v >= lo && v <= hi {
                Ok(())
            } else {
                Err(Error::ControlOutOfBand { value: v, lo, hi })
            }
        };
        match self {
            ControlSpec::Constant { sigma_sq } => in_band(*sigma_sq),
            ControlSpec::PiecewiseConstant { breakpoints, values } => {
                if values.len() != breakpoints.len() + 1 {
                    return Err(Error::InvalidControl(format!(
                        "{} breakpoints need {} values, got {}",
                        breakpoints.len(),
                        breakpoints.len() + 1,
                        values.len()
                    )));
                }
                if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::InvalidControl(
                        "breakpoints must be strictly increasing".into(),
                    ));
                }
                if breakpoints.iter().any(|&b| !(0.0..=horizon).contains(&b)) {
                    return Err(Error::InvalidControl(format!(
                        "breakpoints must lie in [0, {horizon}]"
                    )));
                }
                values.iter().try_for_each(|&v| in_band(v))
            }
            ControlSpec::FeedbackBangBang { policy } => match *policy {
                FeedbackPolicy::HighBelow { level } | FeedbackPolicy::HighAbove { level }
                    if !level.is_finite() =>
                {
                    Err(Error::InvalidControl("feedback level must be finite".into()))
                }
                FeedbackPolicy::Alternating { period } if !(period.is_finite() && period > 0.0) => {
                    Err(Error::InvalidControl("alternation period must be positive".into()))
                }
                _ => Ok(()),
            },
        }
    }

    /// Short identifier used in reports.
    pub fn id(&self) -> String {
        match self {
            ControlSpec::Constant { sigma_sq } => format!("const({sigma_sq})"),
            ControlSpec::PiecewiseConstant { breakpoints, values } => {
                let mut s = format!("pw({}", values[0]);
                for (b, v) in breakpoints.iter().zip(&values[1..]) {
                    s.push_str(&format!("|{b}:{v}"));
                }
                s.push(')');
                s
            }
            ControlSpec::FeedbackBangBang { policy } => format!("fb:{}", policy.id()),
        }
    }
}
