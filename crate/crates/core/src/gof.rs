//! Goodness of fit and model comparison.
//!
//! With renewal immigration the likelihood depends on which events are
//! immigrants. Conditional on an immigrant vector `z` it is available in
//! closed form; the marginal likelihood and the residual p-value are
//! averaged over vectors drawn by forward thinning.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{HawkesError, Result};
use crate::model::intensity::{compensator_at_events, offspring_intensities, offspring_total_compensator};
use crate::model::{EventSeries, ImmigrantVector, ImmigrationModel, ModelSpec};
use crate::report::FitReport;
use crate::simulate::ImmigrantSampler;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GofOptions {
    /// Number of sampled immigrant vectors.
    pub mc_samples: usize,
    pub ks_level: f64,
    pub seed: u64,
}

impl Default for GofOptions {
    fn default() -> Self {
        Self {
            mc_samples: 200,
            ks_level: 0.05,
            seed: 0,
        }
    }
}

impl GofOptions {
    pub fn validate(&self) -> Result<()> {
        if self.mc_samples == 0 {
            return Err(HawkesError::Config("mc_samples must be at least 1".into()));
        }
        if !(self.ks_level > 0.0 && self.ks_level < 1.0) {
            return Err(HawkesError::Config("ks_level must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// True when the likelihood does not depend on the immigrant vector.
pub fn is_z_independent(model: &ModelSpec) -> bool {
    match &model.immigration {
        ImmigrationModel::Weibull(w) => w.shape() == 1.0 || model.offspring.eta == 0.0,
        _ => true,
    }
}

fn conditional_loglik_with(model: &ModelSpec, events: &EventSeries, z: &ImmigrantVector, phi: &[f64]) -> Result<f64> {
    z.check_len(events.len())?;
    if !model.immigration.is_renewal() {
        let rates = model.immigration.poisson_rates(events.times());
        let mut ll = 0.0;
        for (i, (&mu, &ph)) in rates.iter().zip(phi).enumerate() {
            let lam = mu + ph;
            if !(lam > 0.0 && lam.is_finite()) {
                return Err(HawkesError::NonFiniteIntensity { index: i });
            }
            ll += lam.ln();
        }
        let total = model.immigration.integral(0.0, events.stopping_time(), 0.0);
        return Ok(ll - total - offspring_total_compensator(&model.offspring, events));
    }
    let mut ll = 0.0;
    let mut acc = 0.0;
    let mut last = 0.0;
    let mut prev = 0.0;
    for (i, (&t, &is_imm)) in events.times().iter().zip(z.as_slice()).enumerate() {
        acc += model.immigration.integral(prev, t, last);
        let lam = model.immigration.rate(t, last) + phi[i];
        if !(lam > 0.0 && lam.is_finite()) {
            return Err(HawkesError::NonFiniteIntensity { index: i });
        }
        ll += lam.ln();
        prev = t;
        if is_imm {
            last = t;
        }
    }
    acc += model.immigration.integral(prev, events.stopping_time(), last);
    Ok(ll - acc - offspring_total_compensator(&model.offspring, events))
}

/// Log-likelihood given the immigrant vector `z`.
pub fn conditional_loglik(model: &ModelSpec, events: &EventSeries, z: &ImmigrantVector) -> Result<f64> {
    let phi = offspring_intensities(&model.offspring, events.times());
    conditional_loglik_with(model, events, z, &phi)
}

/// Exact log-likelihood for models whose intensity does not depend on the
/// immigrant vector.
pub fn exact_loglik(model: &ModelSpec, events: &EventSeries) -> Result<f64> {
    if !is_z_independent(model) {
        return Err(HawkesError::Unsupported(
            "exact likelihood needs Poisson-type immigration",
        ));
    }
    conditional_loglik(model, events, &ImmigrantVector::all_immigrants(events.len())?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub value: f64,
    /// Delta-method standard error of the log of the average.
    pub standard_error: f64,
    pub sample_logliks: Vec<f64>,
}

fn sample_stream(seed: u64, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64);
    rng
}

/// `ln mean_j exp(l_j)` and its delta-method standard error.
pub fn log_mean_exp(values: &[f64]) -> (f64, f64) {
    let l = values.len() as f64;
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return (m, 0.0);
    }
    let w: Vec<f64> = values.iter().map(|v| (v - m).exp()).collect();
    let mean = w.iter().sum::<f64>() / l;
    let se = if values.len() > 1 {
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (l - 1.0);
        var.sqrt() / (l.sqrt() * mean)
    } else {
        0.0
    };
    (m + mean.ln(), se)
}

/// Monte Carlo log-likelihood averaged over sampled immigrant vectors.
pub fn mc_loglik(model: &ModelSpec, events: &EventSeries, opts: &GofOptions) -> Result<MonteCarloEstimate> {
    opts.validate()?;
    if is_z_independent(model) {
        let v = exact_loglik(model, events)?;
        return Ok(MonteCarloEstimate {
            value: v,
            standard_error: 0.0,
            sample_logliks: vec![v; opts.mc_samples],
        });
    }
    let sampler = ImmigrantSampler::new(model, events);
    let samples = (0..opts.mc_samples)
        .into_par_iter()
        .map(|j| {
            let z = sampler.sample(&mut sample_stream(opts.seed, j));
            conditional_loglik_with(model, events, &z, sampler.phi())
        })
        .collect::<Result<Vec<f64>>>()?;
    let (value, standard_error) = log_mean_exp(&samples);
    Ok(MonteCarloEstimate {
        value,
        standard_error,
        sample_logliks: samples,
    })
}

/// Compensator at each event given `z`.
pub fn residual_transform(model: &ModelSpec, events: &EventSeries, z: &ImmigrantVector) -> Result<Vec<f64>> {
    let out = compensator_at_events(model, events, z)?;
    let mut prev = f64::NEG_INFINITY;
    for (i, &v) in out.iter().enumerate() {
        if !(v > prev && v >= 0.0 && v.is_finite()) {
            return Err(HawkesError::Internal(format!(
                "transformed times are not increasing at index {i}"
            )));
        }
        prev = v;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // theta-function form converges fast for small arguments
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=100)
            .map(|k| {
                let m = (2 * k - 1) as f64;
                (-m * m * c).exp()
            })
            .sum();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let s: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

/// Sup-distance between the empirical law of `x` and the unit exponential.
pub fn ks_statistic_exponential(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = -(-x.max(0.0)).exp_m1();
            (((i + 1) as f64 / n) - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// KS test of the gaps between transformed times (starting from 0) against
/// the unit exponential.
pub fn ks_test_exponential(transformed: &[f64]) -> Result<KsResult> {
    if transformed.len() < 2 {
        return Err(HawkesError::InsufficientData(
            "KS test needs at least two transformed times".into(),
        ));
    }
    let gaps: Vec<f64> = std::iter::once(transformed[0])
        .chain(transformed.windows(2).map(|w| w[1] - w[0]))
        .collect();
    let d = ks_statistic_exponential(&gaps);
    let sn = (gaps.len() as f64).sqrt();
    let p = kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d);
    Ok(KsResult {
        statistic: d,
        p_value: p,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub mc_loglik: f64,
    pub standard_error: f64,
    pub sample_logliks: Vec<f64>,
    pub mc_pvalue: f64,
    pub ks: Vec<KsResult>,
    /// Share of sampled vectors whose KS test rejects at `ks_level`.
    pub rejection_fraction: f64,
    pub ks_level: f64,
    pub k: usize,
    pub aic: f64,
    pub data_fingerprint: String,
}

impl GofReport {
    pub fn summary_line(&self) -> String {
        format!(
            "loglik={:.6} se={:.6} pvalue={:.6} aic={:.6} k={} samples={}",
            self.mc_loglik,
            self.standard_error,
            self.mc_pvalue,
            self.aic,
            self.k,
            self.ks.len()
        )
    }

    /// Per-sample detail as delimited text.
    pub fn write_samples<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "sample,conditional_loglik,ks_statistic,ks_pvalue")?;
        for (j, (l, k)) in self.sample_logliks.iter().zip(&self.ks).enumerate() {
            writeln!(w, "{j},{l},{},{}", k.statistic, k.p_value)?;
        }
        Ok(())
    }
}

/// Likelihood, AIC and residual tests from one set of sampled vectors.
pub fn mc_gof(model: &ModelSpec, events: &EventSeries, opts: &GofOptions) -> Result<GofReport> {
    opts.validate()?;
    let sampler = ImmigrantSampler::new(model, events);
    let independent = is_z_independent(model);
    let per_sample = |j: usize| -> Result<(f64, KsResult)> {
        let z = if independent {
            ImmigrantVector::all_immigrants(events.len())?
        } else {
            sampler.sample(&mut sample_stream(opts.seed, j))
        };
        let l = conditional_loglik_with(model, events, &z, sampler.phi())?;
        let ks = ks_test_exponential(&residual_transform(model, events, &z)?)?;
        Ok((l, ks))
    };
    let results: Vec<(f64, KsResult)> = if independent {
        let one = per_sample(0)?;
        vec![one; opts.mc_samples]
    } else {
        (0..opts.mc_samples)
            .into_par_iter()
            .map(per_sample)
            .collect::<Result<_>>()?
    };
    let sample_logliks: Vec<f64> = results.iter().map(|r| r.0).collect();
    let ks: Vec<KsResult> = results.iter().map(|r| r.1).collect();
    let (value, se) = if independent {
        (sample_logliks[0], 0.0)
    } else {
        log_mean_exp(&sample_logliks)
    };
    let l = ks.len() as f64;
    let mc_pvalue = if independent {
        ks[0].p_value
    } else {
        ks.iter().map(|k| k.p_value).sum::<f64>() / l
    };
    let rejection_fraction = ks.iter().filter(|k| k.p_value < opts.ks_level).count() as f64 / l;
    let k = model.free_parameters();
    Ok(GofReport {
        mc_loglik: value,
        standard_error: se,
        sample_logliks,
        mc_pvalue,
        ks,
        rejection_fraction,
        ks_level: opts.ks_level,
        k,
        aic: 2.0 * k as f64 - 2.0 * value,
        data_fingerprint: events.fingerprint(),
    })
}

/// Average KS p-value over sampled immigrant vectors.
pub fn mc_pvalue(model: &ModelSpec, events: &EventSeries, opts: &GofOptions) -> Result<f64> {
    Ok(mc_gof(model, events, opts)?.mc_pvalue)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSelection {
    /// `AIC(H0) - AIC(H1)`; positive values favor the larger model.
    pub delta_aic: f64,
    pub wilks_statistic: f64,
    pub wilks_df: usize,
    pub wilks_pvalue: f64,
}

/// AIC difference and likelihood-ratio test of a nested pair of fits.
pub fn model_selection(fit_h0: &FitReport, fit_h1: &FitReport) -> Result<ModelSelection> {
    if fit_h0.data_fingerprint != fit_h1.data_fingerprint {
        return Err(HawkesError::Mismatch(
            "fits were computed on different data".into(),
        ));
    }
    let (Some(l0), Some(l1), Some(a0), Some(a1)) = (fit_h0.loglik, fit_h1.loglik, fit_h0.aic, fit_h1.aic)
    else {
        return Err(HawkesError::Mismatch(
            "both fits need a log-likelihood".into(),
        ));
    };
    let stat = 2.0 * (l1.value - l0.value);
    let df = fit_h1.k.saturating_sub(fit_h0.k);
    let p = if df == 0 || stat <= 0.0 {
        1.0
    } else {
        let chi = ChiSquared::new(df as f64).map_err(|e| HawkesError::Internal(e.to_string()))?;
        chi.sf(stat)
    };
    Ok(ModelSelection {
        delta_aic: a0 - a1,
        wilks_statistic: stat,
        wilks_df: df,
        wilks_pvalue: p,
    })
}
