//! Weibull renewal waiting times.
//!
//! Hazard `mu(w) = (k/b) (w/b)^(k-1)`, cumulative hazard `(w/b)^k`,
//! density `g = mu exp(-(w/b)^k)`. Shape `k = 1` is a Poisson process with
//! rate `1/b`.

use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};

/// Lags below `LAG_FLOOR * scale` are clamped inside likelihood code so that
/// shapes below one do not produce an infinite hazard at zero lag.
pub const LAG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeibullRenewal {
    shape: f64,
    scale: f64,
}

/// Density, CDF and hazard of a renewal waiting time at one lag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenewalValues {
    pub density: f64,
    pub cdf: f64,
    pub hazard: f64,
}

impl WeibullRenewal {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0) {
            return Err(HawkesError::InvalidParameter {
                name: "shape",
                value: shape,
                reason: "must be finite and positive",
            });
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(HawkesError::InvalidParameter {
                name: "scale",
                value: scale,
                reason: "must be finite and positive",
            });
        }
        Ok(Self { shape, scale })
    }

    /// Weibull with the given shape whose mean waiting time is `mean`.
    pub fn with_mean(shape: f64, mean: f64) -> Result<Self> {
        let g = statrs::function::gamma::gamma(1.0 + 1.0 / shape);
        Self::new(shape, mean / g)
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mean(&self) -> f64 {
        self.scale * statrs::function::gamma::gamma(1.0 + 1.0 / self.shape)
    }

    /// `(g, G, mu)` at lag `w`. For shape < 1 the hazard at `w = 0` is `+inf`.
    pub fn eval(&self, w: f64) -> Result<RenewalValues> {
        if !(w >= 0.0) {
            return Err(HawkesError::Domain {
                what: "waiting time",
                value: w,
            });
        }
        let cum = self.cumulative_hazard(w);
        let hazard = self.hazard(w);
        let density = if hazard.is_infinite() {
            f64::INFINITY
        } else {
            (self.log_hazard(w) - cum).exp()
        };
        Ok(RenewalValues {
            density,
            cdf: -(-cum).exp_m1(),
            hazard,
        })
    }

    pub fn log_hazard(&self, w: f64) -> f64 {
        let k = self.shape;
        if w == 0.0 {
            return if k < 1.0 {
                f64::INFINITY
            } else if k == 1.0 {
                -self.scale.ln()
            } else {
                f64::NEG_INFINITY
            };
        }
        k.ln() - self.scale.ln() + (k - 1.0) * (w.ln() - self.scale.ln())
    }

    pub fn hazard(&self, w: f64) -> f64 {
        self.log_hazard(w).exp()
    }

    /// Hazard with the lag clamped to `LAG_FLOOR * scale`.
    #[inline]
    pub fn hazard_clamped(&self, w: f64) -> f64 {
        self.hazard(w.max(LAG_FLOOR * self.scale))
    }

    /// `int_0^w mu = (w/scale)^shape`.
    #[inline]
    pub fn cumulative_hazard(&self, w: f64) -> f64 {
        if w <= 0.0 {
            0.0
        } else {
            (w / self.scale).powf(self.shape)
        }
    }

    pub fn log_density(&self, w: f64) -> f64 {
        self.log_hazard(w) - self.cumulative_hazard(w)
    }
}
