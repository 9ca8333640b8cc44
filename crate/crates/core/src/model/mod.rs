//! Event data, model components and intensity evaluation.

mod events;
mod immigrant_vector;
mod immigration;
pub mod intensity;
mod kernel;
mod kernel_estimate;
mod renewal;
mod weights;

use serde::{Deserialize, Serialize};

pub use events::EventSeries;
pub use immigrant_vector::ImmigrantVector;
pub use immigration::{ImmigrationModel, SinusoidalRate};
pub use kernel::{ExponentialKernel, HistogramKernel, KernelFamily, OffspringKernel, OmoriKernel};
pub(crate) use kernel::bins_for;
pub use kernel_estimate::{silverman_bandwidth, BandwidthRule, InhomogeneousEstimate};
pub use renewal::{RenewalValues, WeibullRenewal, LAG_FLOOR};
pub use weights::{BranchingWeights, OmegaEntry, ParentRow, WeightMode};

use crate::error::{HawkesError, Result};

/// Branching ratio and offspring density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffspringModel {
    pub eta: f64,
    pub kernel: OffspringKernel,
}

impl OffspringModel {
    pub fn new(eta: f64, kernel: OffspringKernel) -> Result<Self> {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(HawkesError::InvalidParameter {
                name: "eta",
                value: eta,
                reason: "must be finite and non-negative",
            });
        }
        Ok(Self { eta, kernel })
    }

    /// `eta < 1`. Fits with larger values are reported, not rejected.
    pub fn is_stationary(&self) -> bool {
        self.eta < 1.0
    }

    pub fn free_parameters(&self) -> usize {
        1 + self.kernel.free_parameters()
    }

    #[inline]
    pub fn intensity_term(&self, lag: f64) -> f64 {
        self.eta * self.kernel.density(lag)
    }
}

/// Immigration plus offspring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub immigration: ImmigrationModel,
    pub offspring: OffspringModel,
}

impl ModelSpec {
    pub fn new(immigration: ImmigrationModel, offspring: OffspringModel) -> Self {
        Self {
            immigration,
            offspring,
        }
    }

    /// Re-checks every parameter, for models read from untrusted input.
    pub fn validate(&self) -> Result<()> {
        match &self.immigration {
            ImmigrationModel::Homogeneous { rate } => {
                ImmigrationModel::homogeneous(*rate)?;
            }
            ImmigrationModel::Weibull(w) => {
                WeibullRenewal::new(w.shape(), w.scale())?;
            }
            ImmigrationModel::Sinusoidal(s) => {
                SinusoidalRate::new(s.offset(), s.amplitude(), s.period())?;
            }
            // validated on deserialization
            ImmigrationModel::Inhomogeneous(_) => {}
        }
        match &self.offspring.kernel {
            OffspringKernel::Exponential(k) => {
                OffspringKernel::exponential(k.tau0())?;
            }
            OffspringKernel::Omori(k) => {
                OffspringKernel::omori(k.c(), k.alpha())?;
            }
            OffspringKernel::Histogram(h) => {
                HistogramKernel::new(h.bin_width(), h.masses().to_vec())?;
            }
        }
        OffspringModel::new(self.offspring.eta, self.offspring.kernel.clone())?;
        Ok(())
    }

    pub fn free_parameters(&self) -> usize {
        self.immigration.free_parameters() + self.offspring.free_parameters()
    }

    /// Flat parameter vector: immigration, then `eta`, then kernel.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.immigration.params();
        p.push(self.offspring.eta);
        p.extend(self.offspring.kernel.params());
        p
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .immigration
            .param_names()
            .into_iter()
            .map(str::to_string)
            .collect();
        names.push("eta".into());
        match &self.offspring.kernel {
            OffspringKernel::Exponential(_) => names.push("tau0".into()),
            OffspringKernel::Omori(_) => {
                names.push("c".into());
                names.push("alpha".into());
            }
            OffspringKernel::Histogram(h) => {
                names.extend((0..h.masses().len()).map(|k| format!("bin{k}")))
            }
        }
        names
    }
}
