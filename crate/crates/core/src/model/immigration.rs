//! Immigration intensities.
//!
//! A renewal immigration intensity depends on the lag since the most recent
//! immigrant; the Poisson variants depend on absolute time only. Every
//! method takes `last_immigrant` so callers need not distinguish the two,
//! with `0.0` standing for the virtual origin.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::kernel_estimate::InhomogeneousEstimate;
use super::renewal::WeibullRenewal;
use crate::error::{HawkesError, Result};

/// `offset + amplitude * sin(2 pi t / period)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidalRate {
    offset: f64,
    amplitude: f64,
    period: f64,
}

impl SinusoidalRate {
    pub fn new(offset: f64, amplitude: f64, period: f64) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(HawkesError::InvalidParameter {
                name: "period",
                value: period,
                reason: "must be finite and positive",
            });
        }
        if !(offset.is_finite() && amplitude.is_finite() && offset > amplitude.abs()) {
            return Err(HawkesError::InvalidParameter {
                name: "offset",
                value: offset,
                reason: "must exceed |amplitude| so the rate stays positive",
            });
        }
        Ok(Self {
            offset,
            amplitude,
            period,
        })
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn rate(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (2.0 * PI * t / self.period).sin()
    }

    pub fn cumulative(&self, t: f64) -> f64 {
        let w = 2.0 * PI / self.period;
        self.offset * t + self.amplitude / w * (1.0 - (w * t).cos())
    }

    pub fn max_rate(&self) -> f64 {
        self.offset + self.amplitude.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImmigrationModel {
    Homogeneous { rate: f64 },
    Weibull(WeibullRenewal),
    Inhomogeneous(InhomogeneousEstimate),
    Sinusoidal(SinusoidalRate),
}

impl ImmigrationModel {
    pub fn homogeneous(rate: f64) -> Result<Self> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(HawkesError::InvalidParameter {
                name: "rate",
                value: rate,
                reason: "must be finite and positive",
            });
        }
        Ok(ImmigrationModel::Homogeneous { rate })
    }

    pub fn weibull(shape: f64, scale: f64) -> Result<Self> {
        Ok(ImmigrationModel::Weibull(WeibullRenewal::new(shape, scale)?))
    }

    /// True when the intensity depends on the most recent immigrant.
    pub fn is_renewal(&self) -> bool {
        matches!(self, ImmigrationModel::Weibull(_))
    }

    pub fn renewal(&self) -> Option<&WeibullRenewal> {
        match self {
            ImmigrationModel::Weibull(w) => Some(w),
            _ => None,
        }
    }

    /// Intensity at `t` given the most recent immigrant before `t`.
    /// Renewal hazards use the clamped lag.
    #[inline]
    pub fn rate(&self, t: f64, last_immigrant: f64) -> f64 {
        match self {
            ImmigrationModel::Homogeneous { rate } => *rate,
            ImmigrationModel::Weibull(w) => w.hazard_clamped(t - last_immigrant),
            ImmigrationModel::Inhomogeneous(e) => e.rate(t),
            ImmigrationModel::Sinusoidal(s) => s.rate(t),
        }
    }

    /// Intensity at each of `times` for Poisson-type immigration, which does
    /// not depend on the most recent immigrant.
    pub fn poisson_rates(&self, times: &[f64]) -> Vec<f64> {
        match self {
            ImmigrationModel::Inhomogeneous(e) => e.rates(times),
            _ => times.iter().map(|&t| self.rate(t, 0.0)).collect(),
        }
    }

    /// `int_a^b` of the intensity with a fixed most recent immigrant.
    #[inline]
    pub fn integral(&self, a: f64, b: f64, last_immigrant: f64) -> f64 {
        match self {
            ImmigrationModel::Homogeneous { rate } => rate * (b - a),
            ImmigrationModel::Weibull(w) => {
                w.cumulative_hazard(b - last_immigrant) - w.cumulative_hazard(a - last_immigrant)
            }
            ImmigrationModel::Inhomogeneous(e) => e.integral(a, b),
            ImmigrationModel::Sinusoidal(s) => s.cumulative(b) - s.cumulative(a),
        }
    }

    /// Number of free parameters for information criteria. The kernel
    /// estimate counts one parameter per `2b` of window length.
    pub fn free_parameters(&self) -> usize {
        match self {
            ImmigrationModel::Homogeneous { .. } => 1,
            ImmigrationModel::Weibull(_) => 2,
            ImmigrationModel::Inhomogeneous(e) => {
                (e.stopping_time() / (2.0 * e.bandwidth())).ceil().max(1.0) as usize
            }
            ImmigrationModel::Sinusoidal(_) => 3,
        }
    }

    /// Scalar parameters tracked in fit traces.
    pub fn params(&self) -> Vec<f64> {
        match self {
            ImmigrationModel::Homogeneous { rate } => vec![*rate],
            ImmigrationModel::Weibull(w) => vec![w.shape(), w.scale()],
            ImmigrationModel::Inhomogeneous(e) => vec![e.total_mass()],
            ImmigrationModel::Sinusoidal(s) => vec![s.offset(), s.amplitude(), s.period()],
        }
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        match self {
            ImmigrationModel::Homogeneous { .. } => vec!["mu"],
            ImmigrationModel::Weibull(_) => vec!["kappa", "beta"],
            ImmigrationModel::Inhomogeneous(_) => vec!["immigrant_mass"],
            ImmigrationModel::Sinusoidal(_) => vec!["offset", "amplitude", "period"],
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ImmigrationModel::Homogeneous { .. } => "homogeneous",
            ImmigrationModel::Weibull(_) => "weibull",
            ImmigrationModel::Inhomogeneous(_) => "inhomogeneous",
            ImmigrationModel::Sinusoidal(_) => "sinusoidal",
        }
    }
}
