//! EM with the full branching structure as missing data.
//!
//! The E-step yields immigrant, parent and most-recent-immigrant
//! probabilities. The expected complete-data log-likelihood then separates
//! into a weighted renewal-density fit for the immigrants, a closed form for
//! the branching ratio and a weighted density fit for the offspring lags.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::estep::{compute_weights, EStepConfig};
use crate::gof::{exact_loglik, mc_loglik, GofOptions};
use crate::model::{
    bins_for, BranchingWeights, EventSeries, HistogramKernel, ImmigrationModel, KernelFamily,
    ModelSpec, OffspringKernel, OffspringModel, WeibullRenewal, WeightMode,
};
use crate::optim::{maximize, maximize_1d, BfgsOptions, FnObjective};
use crate::report::{ConvergenceMonitor, FitReport, Loglik, LoglikMethod, TraceEntry};

pub const SHAPE_BOUNDS: (f64, f64) = (0.05, 20.0);
pub const ALPHA_BOUNDS: (f64, f64) = (0.05, 20.0);
/// Scale-type parameters live in `[SCALE_LOWER * r, SCALE_UPPER * r]`.
pub const SCALE_LOWER: f64 = 1e-6;
pub const SCALE_UPPER: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmOptions {
    pub max_iterations: usize,
    /// Cumulative absolute parameter change over the last three iterations.
    pub convergence_tol: f64,
    /// Keep at most this many most recent candidate parents per event.
    pub band_width: Option<usize>,
    pub omega_cutoff: f64,
    /// Histogram M-step from a resample of `floor(n - sum pi_i)` lags.
    pub resample: bool,
    pub weight_mode: WeightMode,
    /// Hold the Weibull shape at this value.
    pub fixed_shape: Option<f64>,
    /// Add the origin lag and the censored final waiting time to the
    /// immigration M-step.
    pub censored_immigration: bool,
    /// Fit the offspring density jointly with the branching ratio, accounting
    /// for offspring beyond the stopping time.
    pub censored_offspring: bool,
    /// Monte Carlo samples for the final log-likelihood (0 skips it).
    pub mc_samples: usize,
    /// Extra randomly perturbed starting points for `fit_complete_em_restarts`.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            convergence_tol: 1e-6,
            band_width: None,
            omega_cutoff: 1e-12,
            resample: false,
            weight_mode: WeightMode::MixtureIntensity,
            fixed_shape: None,
            censored_immigration: false,
            censored_offspring: false,
            mc_samples: 200,
            restarts: 3,
            seed: 0,
        }
    }
}

impl EmOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(HawkesError::Config("max_iterations must be at least 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(HawkesError::Config("convergence_tol must be positive".into()));
        }
        if !(self.omega_cutoff >= 0.0) {
            return Err(HawkesError::Config("omega_cutoff must be non-negative".into()));
        }
        if self.band_width == Some(0) {
            return Err(HawkesError::Config("band_width must be at least 1".into()));
        }
        if let Some(k) = self.fixed_shape {
            if !(k > 0.0 && k.is_finite()) {
                return Err(HawkesError::InvalidParameter {
                    name: "fixed_shape",
                    value: k,
                    reason: "must be finite and positive",
                });
            }
        }
        Ok(())
    }
}

pub fn e_step(events: &EventSeries, model: &ModelSpec, opts: &EmOptions) -> Result<BranchingWeights> {
    compute_weights(
        events,
        model,
        EStepConfig {
            band_width: opts.band_width,
            omega_cutoff: opts.omega_cutoff,
            mode: opts.weight_mode,
            materialize_parents: true,
        },
    )
}

/// `(n - sum pi_i) / sum H(r - t_i)`.
pub fn m_step_eta(weights: &BranchingWeights, events: &EventSeries, kernel: &OffspringKernel) -> Result<f64> {
    let r = events.stopping_time();
    let denom: f64 = events.times().iter().map(|&t| kernel.cdf(r - t)).sum();
    if !(denom > 0.0) {
        return Err(HawkesError::DegenerateDenominator(
            "sum of H(r - t_i) vanishes",
        ));
    }
    Ok(weights.offspring_mass().max(0.0) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullStep {
    pub renewal: WeibullRenewal,
    /// The shape estimate sits on its search bound.
    pub at_boundary: bool,
    /// Maximized weighted log-likelihood.
    pub objective: f64,
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Weighted Weibull maximum likelihood from observed lags `(x, w)` and
/// right-censored lags `(y, c)`. For fixed shape `k` the scale solves
/// `b^k = S / W` with `S = sum w x^k + sum c y^k`, `W = sum w`, leaving a
/// concave one-dimensional problem in `k`.
pub fn weighted_weibull_mle(
    lags: &[(f64, f64)],
    censored: &[(f64, f64)],
    fixed_shape: Option<f64>,
) -> Result<WeibullStep> {
    let total: f64 = lags.iter().map(|l| l.1).sum();
    if !(total > 0.0) {
        return Err(HawkesError::NoImmigrantMass);
    }
    let ln_w = total.ln();
    let sum_wlnx: f64 = lags.iter().map(|&(x, w)| w * x.ln()).sum();
    let ln_s = |k: f64| {
        log_sum_exp(
            lags.iter()
                .chain(censored.iter())
                .filter(|l| l.1 > 0.0)
                .map(|&(x, w)| w.ln() + k * x.ln()),
        )
    };
    let profile = |k: f64| total * k.ln() - total * (ln_s(k) - ln_w) + (k - 1.0) * sum_wlnx - total;
    let (shape, objective, at_boundary) = match fixed_shape {
        Some(k) => (k, profile(k), false),
        None => {
            let (lo, hi) = (SHAPE_BOUNDS.0.ln(), SHAPE_BOUNDS.1.ln());
            let (u, v) = maximize_1d(|u| profile(u.exp()), lo, hi, 1e-11);
            let boundary = (u - lo).abs() < 1e-6 || (hi - u).abs() < 1e-6;
            (u.exp(), v, boundary)
        }
    };
    let scale = ((ln_s(shape) - ln_w) / shape).exp();
    Ok(WeibullStep {
        renewal: WeibullRenewal::new(shape, scale)?,
        at_boundary,
        objective,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ImmigrationStepOptions {
    pub fixed_shape: Option<f64>,
    pub censored: bool,
}

/// Immigrant lag sample implied by the weights, with the censored part
/// when requested.
pub(crate) fn immigrant_samples(
    weights: &BranchingWeights,
    events: &EventSeries,
    censored: bool,
) -> (Vec<(f64, f64)>, Vec<(f64, f64)>) {
    let times = events.times();
    let mut lags = weights.immigrant_lags(times);
    let mut cens = Vec::new();
    if censored {
        lags.push((times[0], 1.0));
        cens = weights.censored_lags(times, events.stopping_time());
    }
    (lags, cens)
}

/// Weibull M-step from the paper-style weighted lag sample
/// `omega_{i,j} pi_{i|j}` over consecutive immigrant pairs.
pub fn m_step_immigration(weights: &BranchingWeights, events: &EventSeries) -> Result<WeibullRenewal> {
    Ok(m_step_immigration_with(weights, events, &ImmigrationStepOptions::default())?.renewal)
}

pub fn m_step_immigration_with(
    weights: &BranchingWeights,
    events: &EventSeries,
    opts: &ImmigrationStepOptions,
) -> Result<WeibullStep> {
    if weights.omega.iter().all(|r| r.is_empty()) && !opts.censored {
        return Err(HawkesError::NoImmigrantMass);
    }
    let (lags, cens) = immigrant_samples(weights, events, opts.censored);
    weighted_weibull_mle(&lags, &cens, opts.fixed_shape)
}

/// `tau0 = sum w x / sum w`.
pub fn weighted_exponential_mle(lags: &[(f64, f64)]) -> Result<f64> {
    let total: f64 = lags.iter().map(|l| l.1).sum();
    if !(total > 0.0) {
        return Err(HawkesError::NoOffspringMass);
    }
    Ok(lags.iter().map(|&(x, w)| w * x).sum::<f64>() / total)
}

fn omori_weighted_loglik(lags: &[(f64, f64)], c: f64, alpha: f64) -> f64 {
    lags.iter()
        .map(|&(x, w)| w * (alpha.ln() + alpha * c.ln() - (1.0 + alpha) * (x + c).ln()))
        .sum()
}

/// Weighted Omori fit. For fixed `c` the optimal tail index is
/// `alpha(c) = W / sum w ln(1 + x/c)`, leaving a search over `ln c`.
pub fn weighted_omori_mle(lags: &[(f64, f64)], stopping_time: f64) -> Result<(f64, f64)> {
    let total: f64 = lags.iter().map(|l| l.1).sum();
    if !(total > 0.0) {
        return Err(HawkesError::NoOffspringMass);
    }
    let alpha_of = |c: f64| {
        let s: f64 = lags.iter().map(|&(x, w)| w * (x / c).ln_1p()).sum();
        (total / s).clamp(ALPHA_BOUNDS.0, ALPHA_BOUNDS.1)
    };
    let lo = (SCALE_LOWER * stopping_time).ln();
    let hi = (SCALE_UPPER * stopping_time).ln();
    let (u, _) = maximize_1d(
        |u| {
            let c = u.exp();
            omori_weighted_loglik(lags, c, alpha_of(c))
        },
        lo,
        hi,
        1e-9,
    );
    let c = u.exp();
    Ok((c, alpha_of(c)))
}

/// Parametric offspring M-step ignoring censoring at the stopping time.
pub fn m_step_offspring_parametric(
    weights: &BranchingWeights,
    events: &EventSeries,
    family: KernelFamily,
) -> Result<OffspringKernel> {
    let lags = weights.parent_lags(events.times());
    match family {
        KernelFamily::Exponential => OffspringKernel::exponential(weighted_exponential_mle(&lags)?),
        KernelFamily::Omori => {
            let (c, a) = weighted_omori_mle(&lags, events.stopping_time())?;
            OffspringKernel::omori(c, a)
        }
    }
}

/// Joint offspring M-step with censoring: maximizes
/// `sum pi_ij ln(eta h(x_ij)) - eta sum H(r - t_i)`, profiling out `eta`.
pub fn m_step_offspring_censored(
    weights: &BranchingWeights,
    events: &EventSeries,
    current: &OffspringKernel,
) -> Result<(f64, OffspringKernel)> {
    let lags = weights.parent_lags(events.times());
    let total: f64 = lags.iter().map(|l| l.1).sum();
    if !(total > 0.0) {
        return Err(HawkesError::NoOffspringMass);
    }
    let r = events.stopping_time();
    let tails: Vec<f64> = events.times().iter().map(|&t| r - t).collect();
    let lo = (SCALE_LOWER * r).ln();
    let hi = (SCALE_UPPER * r).ln();
    let profiled = |k: &OffspringKernel| {
        let ll: f64 = lags.iter().map(|&(x, w)| w * k.log_density(x)).sum();
        let mass: f64 = tails.iter().map(|&y| k.cdf(y)).sum();
        ll - total * mass.ln()
    };
    let kernel = match current {
        OffspringKernel::Exponential(_) => {
            let (u, _) = maximize_1d(
                |u| match OffspringKernel::exponential(u.exp()) {
                    Ok(k) => profiled(&k),
                    Err(_) => f64::NEG_INFINITY,
                },
                lo,
                hi,
                1e-11,
            );
            OffspringKernel::exponential(u.exp())?
        }
        OffspringKernel::Omori(cur) => {
            let obj = FnObjective(|x: &[f64]| match OffspringKernel::omori(x[0].exp(), x[1].exp()) {
                Ok(k) => profiled(&k),
                Err(_) => f64::NEG_INFINITY,
            });
            let (c0, a0) = weighted_omori_mle(&lags, r)?;
            let lower = [lo, ALPHA_BOUNDS.0.ln()];
            let upper = [hi, ALPHA_BOUNDS.1.ln()];
            let mut best: Option<(Vec<f64>, f64)> = None;
            for start in [[cur.c().ln(), cur.alpha().ln()], [c0.ln(), a0.ln()]] {
                let res = maximize(&obj, &start, &lower, &upper, &BfgsOptions::default());
                if best.as_ref().is_none_or(|b| res.value > b.1) {
                    best = Some((res.x, res.value));
                }
            }
            let x = best.unwrap().0;
            OffspringKernel::omori(x[0].exp(), x[1].exp())?
        }
        OffspringKernel::Histogram(_) => {
            return Err(HawkesError::Unsupported(
                "censored offspring step requires a parametric kernel",
            ))
        }
    };
    let mass: f64 = tails.iter().map(|&y| kernel.cdf(y)).sum();
    Ok((total / mass, kernel))
}

fn histogram_from_counts(counts: Vec<f64>, bin_width: f64) -> Result<HistogramKernel> {
    let total: f64 = counts.iter().sum();
    if !(total > 0.0) {
        return Err(HawkesError::NoOffspringMass);
    }
    HistogramKernel::new(bin_width, counts.into_iter().map(|c| c / (total * bin_width)).collect())
}

/// Weighted histogram on `[0, support_end)` with bins of width `bin_width`,
/// normalized by the parent weight inside the support.
pub fn weighted_histogram(lags: &[(f64, f64)], bin_width: f64, support_end: f64) -> Result<HistogramKernel> {
    let nb = bins_for(bin_width, support_end)?;
    let mut counts = vec![0.0; nb];
    for &(x, w) in lags {
        let b = (x / bin_width).floor();
        if b >= 0.0 && (b as usize) < nb {
            counts[b as usize] += w;
        }
    }
    histogram_from_counts(counts, bin_width)
}

/// Histogram of `draws` lags resampled with replacement in proportion to
/// their weights.
pub fn resampled_histogram<R: Rng + ?Sized>(
    lags: &[(f64, f64)],
    draws: usize,
    bin_width: f64,
    support_end: f64,
    rng: &mut R,
) -> Result<HistogramKernel> {
    let nb = bins_for(bin_width, support_end)?;
    let inside: Vec<&(f64, f64)> = lags
        .iter()
        .filter(|(x, w)| *w > 0.0 && *x < nb as f64 * bin_width)
        .collect();
    if inside.is_empty() || draws == 0 {
        return Err(HawkesError::NoOffspringMass);
    }
    let index = WeightedIndex::new(inside.iter().map(|l| l.1))
        .map_err(|e| HawkesError::Internal(format!("resampling weights: {e}")))?;
    let mut counts = vec![0.0; nb];
    for _ in 0..draws {
        let (x, _) = inside[index.sample(rng)];
        counts[((x / bin_width).floor() as usize).min(nb - 1)] += 1.0;
    }
    histogram_from_counts(counts, bin_width)
}

pub fn m_step_offspring_histogram(
    weights: &BranchingWeights,
    events: &EventSeries,
    bin_width: f64,
    support_end: f64,
) -> Result<HistogramKernel> {
    weighted_histogram(&weights.parent_lags(events.times()), bin_width, support_end)
}

/// Default starting point: unit shape with scale `r / n`, branching ratio
/// one half and the mean gap as kernel scale.
pub fn default_init(events: &EventSeries, family: KernelFamily) -> Result<ModelSpec> {
    if events.len() < 2 {
        return Err(HawkesError::InsufficientData("need at least two events".into()));
    }
    let eta = 0.5;
    let gap = events.mean_gap();
    let kernel = match family {
        KernelFamily::Exponential => OffspringKernel::exponential(gap)?,
        KernelFamily::Omori => OffspringKernel::omori(gap, 1.0)?,
    };
    Ok(ModelSpec::new(
        ImmigrationModel::weibull(1.0, events.stopping_time() / events.len() as f64)?,
        OffspringModel::new(eta, kernel)?,
    ))
}

/// Expected complete-data log-likelihood at `model` under `weights`.
fn surrogate(weights: &BranchingWeights, events: &EventSeries, model: &ModelSpec, opts: &EmOptions) -> f64 {
    let r = events.stopping_time();
    let times = events.times();
    let imm = match &model.immigration {
        ImmigrationModel::Weibull(w) => {
            let (lags, cens) = immigrant_samples(weights, events, opts.censored_immigration);
            lags.iter().map(|&(x, c)| c * w.log_density(x)).sum::<f64>()
                - cens.iter().map(|&(y, c)| c * w.cumulative_hazard(y)).sum::<f64>()
        }
        ImmigrationModel::Homogeneous { rate } => weights.immigrant_mass() * rate.ln() - rate * r,
        _ => 0.0,
    };
    let eta = model.offspring.eta;
    let off: f64 = weights
        .parent_lags(times)
        .iter()
        .map(|&(x, p)| p * (eta.ln() + model.offspring.kernel.log_density(x)))
        .sum::<f64>()
        - eta * times.iter().map(|&t| model.offspring.kernel.cdf(r - t)).sum::<f64>();
    imm + off
}

/// Runs the complete-data EM from `init`.
pub fn fit_complete_em(events: &EventSeries, init: &ModelSpec, opts: &EmOptions) -> Result<FitReport> {
    opts.validate()?;
    if events.len() < 2 {
        return Err(HawkesError::InsufficientData("need at least two events".into()));
    }
    let mut model = init.clone();
    if let (Some(k), ImmigrationModel::Weibull(w)) = (opts.fixed_shape, &model.immigration) {
        model.immigration = ImmigrationModel::Weibull(WeibullRenewal::new(k, w.scale())?);
    }
    match model.immigration {
        ImmigrationModel::Weibull(_) | ImmigrationModel::Homogeneous { .. } => {}
        _ => {
            return Err(HawkesError::Unsupported(
                "complete-data EM fits Weibull or homogeneous immigration",
            ))
        }
    }
    let r = events.stopping_time();
    let mut report = FitReport::new("em_complete", model.clone(), events);
    if opts.fixed_shape.is_some() {
        report.k -= 1;
    }
    let mut monitor = ConvergenceMonitor::new(model.params(), opts.convergence_tol, 3);
    let mut last_weights = None;

    for it in 1..=opts.max_iterations {
        let w = e_step(events, &model, opts)?;

        // immigration
        let mut boundary = false;
        let immigration = match &model.immigration {
            ImmigrationModel::Weibull(_) => {
                let step = m_step_immigration_with(
                    &w,
                    events,
                    &ImmigrationStepOptions {
                        fixed_shape: opts.fixed_shape,
                        censored: opts.censored_immigration,
                    },
                )?;
                boundary = step.at_boundary;
                ImmigrationModel::Weibull(step.renewal)
            }
            ImmigrationModel::Homogeneous { .. } => {
                ImmigrationModel::homogeneous(w.immigrant_mass() / r)?
            }
            _ => unreachable!(),
        };
        if boundary {
            report.warn("shape estimate reached its search bound");
        }

        // offspring
        let offspring = if w.offspring_mass() <= 0.0 {
            OffspringModel::new(0.0, model.offspring.kernel.clone())?
        } else if opts.censored_offspring && !matches!(model.offspring.kernel, OffspringKernel::Histogram(_)) {
            let (eta, kernel) = m_step_offspring_censored(&w, events, &model.offspring.kernel)?;
            OffspringModel::new(eta, kernel)?
        } else {
            let kernel = match &model.offspring.kernel {
                OffspringKernel::Exponential(_) => {
                    m_step_offspring_parametric(&w, events, KernelFamily::Exponential)?
                }
                OffspringKernel::Omori(_) => m_step_offspring_parametric(&w, events, KernelFamily::Omori)?,
                OffspringKernel::Histogram(h) => {
                    let support = h.support_end();
                    let lags = w.parent_lags(events.times());
                    let nh = w.offspring_mass().floor() as usize;
                    let hist = if opts.resample && nh > 0 {
                        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                        rng.set_stream(it as u64);
                        resampled_histogram(&lags, nh, h.bin_width(), support, &mut rng)?
                    } else {
                        weighted_histogram(&lags, h.bin_width(), support)?
                    };
                    OffspringKernel::Histogram(hist)
                }
            };
            let eta = m_step_eta(&w, events, &kernel)?;
            OffspringModel::new(eta, kernel)?
        };

        model = ModelSpec::new(immigration, offspring);
        let objective = surrogate(&w, events, &model, opts);
        let exact = exact_loglik(&model, events).ok();
        let params = model.params();
        let done = monitor.update(&params);
        report.push_trace(TraceEntry {
            iteration: it,
            params,
            objective,
            exact_loglik: exact,
        });
        last_weights = Some(w);
        if done {
            report.converged = true;
            break;
        }
    }

    if !report.converged {
        report.warn("maximum iterations reached before convergence");
    }
    if !model.offspring.is_stationary() {
        report.warn("branching ratio is at least one (non-stationary fit)");
    }
    report.model = model.clone();
    report.param_names = model.param_names();
    if let OffspringKernel::Histogram(_) = model.offspring.kernel {
        report.k = model.free_parameters() - usize::from(opts.fixed_shape.is_some());
    }
    if let Some(w) = last_weights {
        report.set_weights(w);
    }
    if opts.mc_samples > 0 {
        let est = mc_loglik(
            &model,
            events,
            &GofOptions {
                mc_samples: opts.mc_samples,
                seed: opts.seed,
                ..GofOptions::default()
            },
        )?;
        report.set_loglik(Loglik {
            value: est.value,
            method: LoglikMethod::MonteCarlo {
                samples: opts.mc_samples,
                standard_error: est.standard_error,
            },
        });
    }
    Ok(report)
}

/// Runs the EM from each starting point and keeps the fit with the largest
/// log-likelihood.
pub fn fit_complete_em_multistart(
    events: &EventSeries,
    inits: &[ModelSpec],
    opts: &EmOptions,
) -> Result<FitReport> {
    let mut best: Option<FitReport> = None;
    let mut last_err = None;
    for init in inits {
        match fit_complete_em(events, init, opts) {
            Ok(rep) => {
                let score = rep.loglik.map_or(f64::NEG_INFINITY, |l| l.value);
                let best_score = best
                    .as_ref()
                    .and_then(|b| b.loglik)
                    .map_or(f64::NEG_INFINITY, |l| l.value);
                if best.is_none() || score > best_score {
                    best = Some(rep);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => Err(HawkesError::Config("no starting points given".into())),
    }
}

/// Random starting points around `base`: scales multiplied by a
/// log-uniform factor in `[1/4, 4]`, branching ratio uniform on `[0.1, 0.9]`.
pub fn perturbed_inits(base: &ModelSpec, count: usize, seed: u64) -> Result<Vec<ModelSpec>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut factor = || (rng.random_range(-1.0..1.0) * 4f64.ln()).exp();
        let immigration = match &base.immigration {
            ImmigrationModel::Weibull(w) => ImmigrationModel::weibull(w.shape(), w.scale() * factor())?,
            ImmigrationModel::Homogeneous { rate } => ImmigrationModel::homogeneous(rate * factor())?,
            other => other.clone(),
        };
        let kernel = match &base.offspring.kernel {
            OffspringKernel::Exponential(k) => OffspringKernel::exponential(k.tau0() * factor())?,
            OffspringKernel::Omori(k) => OffspringKernel::omori(k.c() * factor(), k.alpha())?,
            h => h.clone(),
        };
        let eta = rng.random_range(0.1..0.9);
        out.push(ModelSpec::new(immigration, OffspringModel::new(eta, kernel)?));
    }
    Ok(out)
}

/// `fit_complete_em` from `init` and `opts.restarts` perturbed copies of it.
pub fn fit_complete_em_restarts(events: &EventSeries, init: &ModelSpec, opts: &EmOptions) -> Result<FitReport> {
    let mut inits = vec![init.clone()];
    inits.extend(perturbed_inits(init, opts.restarts, opts.seed)?);
    fit_complete_em_multistart(events, &inits, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ImmigrantVector, OmegaEntry};
    use crate::simulate::simulate_hawkes_renewal;
    use proptest::prelude::*;
    use rand::Rng;

    fn spec(shape: f64, scale: f64, eta: f64, tau: f64) -> ModelSpec {
        ModelSpec::new(
            ImmigrationModel::weibull(shape, scale).unwrap(),
            OffspringModel::new(eta, OffspringKernel::exponential(tau).unwrap()).unwrap(),
        )
    }

    fn exact_opts() -> EmOptions {
        EmOptions {
            omega_cutoff: 0.0,
            ..EmOptions::default()
        }
    }

    fn times_from_gaps(gaps: &[f64]) -> Vec<f64> {
        let mut t = 0.0;
        gaps.iter()
            .map(|g| {
                t += g;
                t
            })
            .collect()
    }

    /// `omega_{i,j} = pi_j prod_{m=j+1}^{i-1} (1 - pi_{m|j})` from scratch.
    fn direct_omega(times: &[f64], model: &ModelSpec, i: usize, j: usize) -> f64 {
        let phi: Vec<f64> = (0..times.len())
            .map(|m| {
                (0..m)
                    .map(|q| model.offspring.intensity_term(times[m] - times[q]))
                    .sum()
            })
            .collect();
        let cond = |m: usize, k: usize| {
            let mu = model.immigration.rate(times[m], times[k]);
            mu / (mu + phi[m])
        };
        // immigrant probabilities by the same chain, computed recursively
        // over the full joint law of the last immigrant
        let mut pis = vec![1.0];
        for m in 1..times.len() {
            let mut p = 0.0;
            for k in 0..m {
                p += direct_last(&cond, &pis, m, k) * cond(m, k);
            }
            pis.push(p);
        }
        direct_last(&cond, &pis, i, j)
    }

    fn direct_last(
        cond: &dyn Fn(usize, usize) -> f64,
        pis: &[f64],
        i: usize,
        j: usize,
    ) -> f64 {
        let mut w = pis[j];
        for m in j + 1..i {
            w *= 1.0 - cond(m, j);
        }
        w
    }

    #[test]
    fn two_events() {
        let ev = EventSeries::new(vec![1.0, 1.5], 2.0).unwrap();
        let w = e_step(&ev, &spec(0.7, 1.0, 0.5, 0.5), &exact_opts()).unwrap();
        assert_eq!(w.omega[1].len(), 1);
        assert_eq!(w.omega[1][0].weight, 1.0);
        assert!((w.pi_row_sum(1).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(w.immigrant[0], 1.0);
    }

    #[test]
    fn symmetric_case_gives_one_half() {
        // homogeneous mu equal to Phi at the second event
        let tau: f64 = 1.0;
        let eta = 0.5;
        let phi = eta / tau * (-1.0f64).exp();
        let m = ModelSpec::new(
            ImmigrationModel::homogeneous(phi).unwrap(),
            OffspringModel::new(eta, OffspringKernel::exponential(tau).unwrap()).unwrap(),
        );
        let ev = EventSeries::new(vec![1.0, 2.0], 3.0).unwrap();
        let w = e_step(&ev, &m, &exact_opts()).unwrap();
        assert!((w.immigrant[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn recursion_matches_direct_product_n8() {
        let times = times_from_gaps(&[0.3, 0.1, 0.7, 0.05, 1.2, 0.4, 0.2, 0.9]);
        let ev = EventSeries::new(times.clone(), 5.0).unwrap();
        let m = spec(0.6, 0.8, 0.7, 0.3);
        let opts = EmOptions {
            weight_mode: WeightMode::ChainMarginal,
            ..exact_opts()
        };
        let w = e_step(&ev, &m, &opts).unwrap();
        for i in 1..times.len() {
            for &OmegaEntry { index, weight, .. } in &w.omega[i] {
                let d = direct_omega(&times, &m, i, index);
                assert!((weight - d).abs() < 1e-12, "({i},{index}) {weight} vs {d}");
            }
            assert_eq!(w.omega[i].len(), i);
        }
    }

    #[test]
    fn mixture_rows_follow_normalized_hadamard_step() {
        let times = times_from_gaps(&[0.3, 0.1, 0.7, 0.05, 1.2, 0.4, 0.2, 0.9]);
        let ev = EventSeries::new(times.clone(), 5.0).unwrap();
        let m = spec(0.6, 0.8, 0.7, 0.3);
        let w = e_step(&ev, &m, &exact_opts()).unwrap();
        for i in 2..times.len() {
            let prev = &w.omega[i - 1];
            let mut raw: Vec<f64> = prev.iter().map(|e| e.weight * (1.0 - e.cond)).collect();
            raw.push(w.immigrant[i - 1]);
            let s: f64 = raw.iter().sum();
            for (e, r) in w.omega[i].iter().zip(&raw) {
                assert!((e.weight - r / s).abs() < 1e-12);
            }
            let mu_star: f64 = w.omega[i]
                .iter()
                .map(|e| e.weight * m.immigration.rate(times[i], times[e.index]))
                .sum();
            assert!((w.mu_star[i] - mu_star).abs() < 1e-12 * mu_star.max(1.0));
        }
    }

    #[test]
    fn eta_step_examples() {
        let ev = EventSeries::new(vec![1.0, 2.0], 100.0).unwrap();
        let k = OffspringKernel::exponential(1e-3).unwrap();
        let mut w = e_step(&ev, &spec(1.0, 1.0, 0.0, 1.0), &exact_opts()).unwrap();
        assert_eq!(m_step_eta(&w, &ev, &k).unwrap(), 0.0);
        w.immigrant = vec![1.0, 0.5];
        assert!((m_step_eta(&w, &ev, &k).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn weibull_step_examples() {
        let s = weighted_weibull_mle(&[(3.0, 1.0)], &[], Some(1.0)).unwrap();
        assert!((s.renewal.scale() - 3.0).abs() < 1e-12);
        let s = weighted_weibull_mle(&[(1.0, 1.0), (4.0, 1.0)], &[], Some(1.0)).unwrap();
        assert!((s.renewal.scale() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn weibull_step_recovers_truth_from_hard_weights() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Weibull};
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = Weibull::new(10.0, 1.0).unwrap();
        let lags: Vec<(f64, f64)> = (0..500).map(|_| (d.sample(&mut rng), 1.0)).collect();
        let s = weighted_weibull_mle(&lags, &[], None).unwrap();
        assert!((s.renewal.shape() - 1.0).abs() < 0.1);
        assert!((s.renewal.scale() - 10.0).abs() < 1.5);
    }

    #[test]
    fn exponential_step_examples() {
        assert_eq!(weighted_exponential_mle(&[(2.0, 1.0)]).unwrap(), 2.0);
        assert_eq!(weighted_exponential_mle(&[(1.0, 0.5), (3.0, 0.5)]).unwrap(), 2.0);
        assert!(weighted_exponential_mle(&[]).is_err());
    }

    #[test]
    fn omori_step_recovers_truth() {
        use rand::SeedableRng;
        let k = OffspringKernel::omori(1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let sample: Vec<f64> = (0..10_000).map(|_| k.sample(&mut rng)).collect();
        let fit = |xs: &[f64]| {
            let lags: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 1.0)).collect();
            weighted_omori_mle(&lags, 1e4).unwrap()
        };
        let (c, a) = fit(&sample);
        // bootstrap standard errors
        let mut cs = Vec::new();
        let mut as_ = Vec::new();
        for _ in 0..30 {
            let boot: Vec<f64> = (0..sample.len())
                .map(|_| sample[rng.random_range(0..sample.len())])
                .collect();
            let (bc, ba) = fit(&boot);
            cs.push(bc);
            as_.push(ba);
        }
        let sd = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
        };
        assert!((c - 1.0).abs() < 3.0 * sd(&cs), "c {c} sd {}", sd(&cs));
        assert!((a - 1.0).abs() < 3.0 * sd(&as_), "alpha {a} sd {}", sd(&as_));
    }

    #[test]
    fn histogram_examples() {
        let h = weighted_histogram(&[(0.5, 1.0)], 1.0, 2.0).unwrap();
        assert_eq!(h.masses(), &[1.0, 0.0]);
        let lags: Vec<(f64, f64)> = (0..1000).map(|i| ((i as f64 + 0.5) / 500.0, 1.0)).collect();
        let h = weighted_histogram(&lags, 1.0, 2.0).unwrap();
        assert!((h.masses()[0] - 0.5).abs() < 1e-12);
        assert!(weighted_histogram(&lags, 1.0, 0.5).is_err());
    }

    #[test]
    fn resampled_histogram_is_close_to_weighted() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let lags: Vec<(f64, f64)> = (0..1000)
            .map(|_| (rng.random::<f64>() * 5.0, rng.random::<f64>()))
            .collect();
        let a = weighted_histogram(&lags, 0.5, 5.0).unwrap();
        let b = resampled_histogram(&lags, 10_000, 0.5, 5.0, &mut rng).unwrap();
        let tv: f64 = a
            .masses()
            .iter()
            .zip(b.masses())
            .map(|(x, y)| 0.5 * (x - y).abs() * 0.5)
            .sum();
        assert!(tv < 0.05, "tv {tv}");
    }

    #[test]
    fn eta_zero_data_stays_near_zero() {
        use rand::SeedableRng;
        let truth = spec(0.7, 5.0, 0.0, 1.0);
        let sim = simulate_hawkes_renewal(&truth, 2500.0, &mut ChaCha8Rng::seed_from_u64(24)).unwrap();
        let init = spec(1.0, 5.0, 0.0, 1.0);
        let rep = fit_complete_em(
            &sim.events,
            &init,
            &EmOptions {
                mc_samples: 0,
                ..EmOptions::default()
            },
        )
        .unwrap();
        assert_eq!(rep.model.offspring.eta, 0.0);
        let direct = weighted_weibull_mle(
            &sim.events
                .times()
                .windows(2)
                .map(|w| (w[1] - w[0], 1.0))
                .collect::<Vec<_>>(),
            &[],
            None,
        )
        .unwrap();
        let w = rep.model.immigration.renewal().unwrap();
        assert!((w.shape() - direct.renewal.shape()).abs() < 1e-8);
        assert!((w.scale() - direct.renewal.scale()).abs() < 1e-8);
    }

    #[test]
    fn fit_is_deterministic() {
        use rand::SeedableRng;
        let truth = spec(0.5, 5.0, 0.5, 1.0);
        let sim = simulate_hawkes_renewal(&truth, 600.0, &mut ChaCha8Rng::seed_from_u64(25)).unwrap();
        let opts = EmOptions {
            mc_samples: 20,
            seed: 3,
            ..EmOptions::default()
        };
        let init = default_init(&sim.events, KernelFamily::Exponential).unwrap();
        let a = fit_complete_em(&sim.events, &init, &opts).unwrap();
        let b = fit_complete_em(&sim.events, &init, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ascent_with_unit_shape() {
        use rand::SeedableRng;
        for seed in 0..3 {
            let truth = spec(1.0, 2.0, 0.5, 0.5);
            let sim =
                simulate_hawkes_renewal(&truth, 300.0, &mut ChaCha8Rng::seed_from_u64(100 + seed)).unwrap();
            let opts = EmOptions {
                fixed_shape: Some(1.0),
                censored_immigration: true,
                censored_offspring: true,
                max_iterations: 60,
                mc_samples: 0,
                ..EmOptions::default()
            };
            let init = spec(1.0, 0.7, 0.2, 3.0);
            let rep = fit_complete_em(&sim.events, &init, &opts).unwrap();
            let mut prev = crate::gof::exact_loglik(&init, &sim.events).unwrap();
            for e in &rep.trace {
                let v = e.exact_loglik.unwrap();
                assert!(v >= prev - 1e-8, "seed {seed} iter {}: {v} < {prev}", e.iteration);
                prev = v;
            }
        }
    }

    fn random_instance(gaps: &[f64]) -> EventSeries {
        let times = times_from_gaps(gaps);
        let r = times.last().unwrap() + 0.5;
        EventSeries::new(times, r).unwrap()
    }

    proptest! {
        #[test]
        fn rows_are_normalized(
            gaps in proptest::collection::vec(0.01f64..2.0, 2..40),
            shape in 0.3f64..3.0,
            eta in 0.0f64..0.95,
            band in proptest::option::of(1usize..6),
            cutoff in prop_oneof![Just(0.0), Just(1e-12), Just(1e-3)],
        ) {
            let ev = random_instance(&gaps);
            let opts = EmOptions { band_width: band, omega_cutoff: cutoff, ..EmOptions::default() };
            let w = e_step(&ev, &spec(shape, 1.0, eta, 0.4), &opts).unwrap();
            prop_assert_eq!(w.immigrant[0], 1.0);
            for i in 0..ev.len() {
                prop_assert!((w.pi_row_sum(i).unwrap() - 1.0).abs() < 1e-9);
                if i >= 1 {
                    prop_assert!((w.omega_row_sum(i) - 1.0).abs() < 1e-9);
                }
                if let Some(nf) = band {
                    prop_assert!(w.parents.as_ref().unwrap()[i].probs.len() <= nf);
                }
            }
            let s: f64 = w.omega_final.iter().map(|e| e.1).sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert_eq!(w.omega[1][0].weight, 1.0);
        }

        #[test]
        fn eta_estimate_is_bounded(
            gaps in proptest::collection::vec(0.01f64..2.0, 2..40),
            eta in 0.0f64..0.95,
        ) {
            let ev = random_instance(&gaps);
            let w = e_step(&ev, &spec(0.8, 1.0, eta, 0.4), &exact_opts()).unwrap();
            let k = OffspringKernel::exponential(0.4).unwrap();
            let e = m_step_eta(&w, &ev, &k).unwrap();
            let r = ev.stopping_time();
            let denom: f64 = ev.times().iter().map(|&t| k.cdf(r - t)).sum();
            prop_assert!(e >= 0.0 && e <= ev.len() as f64 / denom + 1e-12);
        }

        #[test]
        fn histogram_step_integrates_to_one(
            lags in proptest::collection::vec((0.0f64..3.0, 0.0f64..1.0), 1..200),
            width in 0.1f64..1.0,
        ) {
            prop_assume!(lags.iter().any(|l| l.1 > 0.0));
            let h = weighted_histogram(&lags, width, 3.0).unwrap();
            let total: f64 = h.masses().iter().sum::<f64>() * width;
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn immigrant_vector_sampler_is_valid(
            gaps in proptest::collection::vec(0.01f64..2.0, 1..40),
            seed in any::<u64>(),
        ) {
            use rand::SeedableRng;
            let ev = random_instance(&gaps);
            let m = spec(0.6, 1.0, 0.8, 0.4);
            let z = crate::simulate::sample_immigrant_vector(
                &ev, &m, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(z.as_slice()[0]);
            prop_assert_eq!(z.len(), ev.len());
            prop_assert!(ImmigrantVector::new(z.as_slice().to_vec()).is_ok());
        }
    }
}
