//! Offspring densities `h` on `(0, inf)` and their CDFs `H`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};

/// `h(t) = exp(-t/tau0) / tau0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialKernel {
    tau0: f64,
}

impl ExponentialKernel {
    pub fn new(tau0: f64) -> Result<Self> {
        if !(tau0.is_finite() && tau0 > 0.0) {
            return Err(HawkesError::InvalidParameter {
                name: "tau0",
                value: tau0,
                reason: "must be finite and positive",
            });
        }
        Ok(Self { tau0 })
    }

    pub fn tau0(&self) -> f64 {
        self.tau0
    }
}

/// Omori law `h(t) = alpha c^alpha / (t + c)^(1 + alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmoriKernel {
    c: f64,
    alpha: f64,
}

impl OmoriKernel {
    pub fn new(c: f64, alpha: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(HawkesError::InvalidParameter {
                name: "c",
                value: c,
                reason: "must be finite and positive",
            });
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(HawkesError::InvalidParameter {
                name: "alpha",
                value: alpha,
                reason: "must be finite and positive",
            });
        }
        Ok(Self { c, alpha })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Piecewise-constant density on bins `[k*width, (k+1)*width)`, zero past
/// `support_end = masses.len() * width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramKernel {
    bin_width: f64,
    masses: Vec<f64>,
}

impl HistogramKernel {
    /// Builds a histogram from per-bin densities. The densities must be
    /// non-negative and `sum(mass * width)` must equal one within 1e-9.
    pub fn new(bin_width: f64, masses: Vec<f64>) -> Result<Self> {
        if !(bin_width.is_finite() && bin_width > 0.0) {
            return Err(HawkesError::InvalidParameter {
                name: "bin_width",
                value: bin_width,
                reason: "must be finite and positive",
            });
        }
        if masses.is_empty() {
            return Err(HawkesError::Config("histogram needs at least one bin".into()));
        }
        if let Some(&bad) = masses.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
            return Err(HawkesError::InvalidParameter {
                name: "bin mass",
                value: bad,
                reason: "must be finite and non-negative",
            });
        }
        let total: f64 = masses.iter().sum::<f64>() * bin_width;
        if (total - 1.0).abs() > 1e-9 {
            return Err(HawkesError::InvalidParameter {
                name: "histogram total mass",
                value: total,
                reason: "must integrate to one",
            });
        }
        Ok(Self { bin_width, masses })
    }

    /// Uniform density on `(0, support_end]`, rounded up to whole bins.
    pub fn uniform(bin_width: f64, support_end: f64) -> Result<Self> {
        let bins = bins_for(bin_width, support_end)?;
        let m = 1.0 / (bins as f64 * bin_width);
        Self::new(bin_width, vec![m; bins])
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn support_end(&self) -> f64 {
        self.masses.len() as f64 * self.bin_width
    }

    pub fn nonzero_bins(&self) -> usize {
        self.masses.iter().filter(|&&m| m > 0.0).count()
    }

    fn bin_of(&self, t: f64) -> Option<usize> {
        if t < 0.0 || t > self.support_end() {
            return None;
        }
        let b = (t / self.bin_width).floor() as usize;
        Some(b.min(self.masses.len() - 1))
    }
}

/// Number of whole bins of width `bin_width` needed to cover `support_end`.
pub(crate) fn bins_for(bin_width: f64, support_end: f64) -> Result<usize> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(HawkesError::InvalidParameter {
            name: "bin_width",
            value: bin_width,
            reason: "must be finite and positive",
        });
    }
    if !(support_end >= bin_width) {
        return Err(HawkesError::Config(format!(
            "histogram support end {support_end} is smaller than the bin width {bin_width}"
        )));
    }
    Ok(((support_end / bin_width) - 1e-9).ceil().max(1.0) as usize)
}

/// Offspring density family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum OffspringKernel {
    Exponential(ExponentialKernel),
    Omori(OmoriKernel),
    Histogram(HistogramKernel),
}

/// Parametric family selector used by fitting routines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Exponential,
    Omori,
}

impl OffspringKernel {
    pub fn exponential(tau0: f64) -> Result<Self> {
        Ok(Self::Exponential(ExponentialKernel::new(tau0)?))
    }

    pub fn omori(c: f64, alpha: f64) -> Result<Self> {
        Ok(Self::Omori(OmoriKernel::new(c, alpha)?))
    }

    /// `h(t)`; zero for `t < 0` and beyond a finite support.
    #[inline]
    pub fn density(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            Self::Exponential(k) => (-t / k.tau0).exp() / k.tau0,
            Self::Omori(k) => (self.log_density_omori(k, t)).exp(),
            Self::Histogram(k) => k.bin_of(t).map_or(0.0, |b| k.masses[b]),
        }
    }

    #[inline]
    fn log_density_omori(&self, k: &OmoriKernel, t: f64) -> f64 {
        k.alpha.ln() + k.alpha * k.c.ln() - (1.0 + k.alpha) * (t + k.c).ln()
    }

    pub fn log_density(&self, t: f64) -> f64 {
        if t < 0.0 {
            return f64::NEG_INFINITY;
        }
        match self {
            Self::Exponential(k) => -t / k.tau0 - k.tau0.ln(),
            Self::Omori(k) => self.log_density_omori(k, t),
            Self::Histogram(_) => self.density(t).ln(),
        }
    }

    /// `H(t) = int_0^t h`.
    #[inline]
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Exponential(k) => -(-t / k.tau0).exp_m1(),
            Self::Omori(k) => -(k.alpha * (k.c / (t + k.c)).ln()).exp_m1(),
            Self::Histogram(k) => {
                if t >= k.support_end() {
                    return 1.0;
                }
                let b = (t / k.bin_width).floor() as usize;
                let below: f64 = k.masses[..b].iter().sum::<f64>() * k.bin_width;
                (below + k.masses[b] * (t - b as f64 * k.bin_width)).min(1.0)
            }
        }
    }

    /// Checked evaluation of `(h(t), H(t))`.
    pub fn eval(&self, t: f64) -> Result<(f64, f64)> {
        if !(t >= 0.0) {
            return Err(HawkesError::Domain {
                what: "offspring lag",
                value: t,
            });
        }
        Ok((self.density(t), self.cdf(t)))
    }

    /// Upper end of the support, if finite.
    pub fn support_end(&self) -> Option<f64> {
        match self {
            Self::Histogram(k) => Some(k.support_end()),
            _ => None,
        }
    }

    /// Draws a lag from `h`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Exponential(k) => {
                let e: f64 = Exp1.sample(rng);
                k.tau0 * e
            }
            Self::Omori(k) => {
                // Inverse CDF: H^{-1}(p) = c ((1-p)^(-1/alpha) - 1).
                let u: f64 = rng.random::<f64>();
                let u = 1.0 - u; // (0, 1]
                k.c * ((-u.ln() / k.alpha).exp() - 1.0)
            }
            Self::Histogram(k) => {
                let target: f64 = rng.random::<f64>() / k.bin_width;
                let mut acc = 0.0;
                let mut bin = k.masses.len() - 1;
                for (b, m) in k.masses.iter().enumerate() {
                    acc += m;
                    if target < acc {
                        bin = b;
                        break;
                    }
                }
                (bin as f64 + rng.random::<f64>()) * k.bin_width
            }
        }
    }

    /// Parameters as a flat vector (`[tau0]`, `[c, alpha]` or bin masses).
    pub fn params(&self) -> Vec<f64> {
        match self {
            Self::Exponential(k) => vec![k.tau0],
            Self::Omori(k) => vec![k.c, k.alpha],
            Self::Histogram(k) => k.masses.clone(),
        }
    }

    /// Free parameters counted by AIC. Histograms count their nonzero bins.
    pub fn free_parameters(&self) -> usize {
        match self {
            Self::Exponential(_) => 1,
            Self::Omori(_) => 2,
            Self::Histogram(k) => k.nonzero_bins(),
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Self::Exponential(_) => "exponential",
            Self::Omori(_) => "omori",
            Self::Histogram(_) => "histogram",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exponential_at_origin() {
        let k = OffspringKernel::exponential(5.0).unwrap();
        let (h, cdf) = k.eval(0.0).unwrap();
        assert!((h - 0.2).abs() < 1e-15);
        assert_eq!(cdf, 0.0);
        assert!((1.0 - k.cdf(50.0 * 5.0)).abs() < 1e-6);
        assert!(k.eval(-1.0).is_err());
    }

    #[test]
    fn omori_closed_form() {
        let k = OffspringKernel::omori(1.0, 1.0).unwrap();
        let (h, cdf) = k.eval(1.0).unwrap();
        assert!((h - 0.25).abs() < 1e-15);
        assert!((cdf - 0.5).abs() < 1e-15);
        // heavy tail: H(t) = 1 - 1/(1+t) for c = alpha = 1
        assert!((k.cdf(1e6) - (1.0 - 1.0 / (1.0 + 1e6))).abs() < 1e-12);
    }

    #[test]
    fn histogram_piecewise_integration() {
        let k = OffspringKernel::Histogram(HistogramKernel::new(1.0, vec![0.7, 0.3]).unwrap());
        let (h, cdf) = k.eval(1.5).unwrap();
        assert!((h - 0.3).abs() < 1e-15);
        assert!((cdf - 0.85).abs() < 1e-15);
        assert_eq!(k.density(2.5), 0.0);
        assert_eq!(k.cdf(2.5), 1.0);
        assert_eq!(k.support_end(), Some(2.0));
    }

    #[test]
    fn histogram_validation() {
        assert!(HistogramKernel::new(1.0, vec![0.7, 0.2]).is_err());
        assert!(HistogramKernel::new(1.0, vec![1.2, -0.2]).is_err());
        assert!(HistogramKernel::uniform(1.0, 0.5).is_err());
        let u = HistogramKernel::uniform(0.3, 1.0).unwrap();
        assert_eq!(u.masses().len(), 4);
    }

    #[test]
    fn omori_sampler_matches_cdf() {
        let k = OffspringKernel::omori(1.0, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let below = (0..n).filter(|_| k.sample(&mut rng) < 1.0).count() as f64 / n as f64;
        let expect = k.cdf(1.0);
        assert!((below - expect).abs() < 4.0 * (expect * (1.0 - expect) / n as f64).sqrt());
    }

    #[test]
    fn histogram_sampler_stays_in_support() {
        let k = OffspringKernel::Histogram(HistogramKernel::new(0.5, vec![1.5, 0.0, 0.5]).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let x = k.sample(&mut rng);
            assert!((0.0..=1.5).contains(&x));
            assert!(!(0.5..1.0).contains(&x));
        }
    }
}
