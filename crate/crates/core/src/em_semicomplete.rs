//! EM with only the immigrant indicators as missing data.
//!
//! The E-step needs the immigrant probabilities alone. The offspring
//! parameters are then fitted jointly by numerical maximization of
//! `sum_i (1 - pi_i) ln Phi(t_i) - eta sum_i H(r - t_i)`, with `eta`
//! profiled out in closed form. The immigration part is a Weibull renewal
//! fit, a homogeneous rate, or a reflected kernel estimate of an
//! inhomogeneous Poisson rate.

use serde::{Deserialize, Serialize};

use crate::em_complete::{
    m_step_immigration_with, weighted_omori_mle, ImmigrationStepOptions, ALPHA_BOUNDS, SCALE_LOWER,
    SCALE_UPPER,
};
use crate::error::{HawkesError, Result};
use crate::estep::{compute_weights, EStepConfig};
use crate::gof::{exact_loglik, is_z_independent, mc_loglik, GofOptions};
use crate::model::intensity::offspring_intensities;
use crate::model::{
    silverman_bandwidth, BandwidthRule, BranchingWeights, EventSeries, ImmigrationModel,
    InhomogeneousEstimate, ModelSpec, OffspringKernel, OffspringModel, WeightMode,
};
use crate::optim::{maximize, BfgsOptions, FnObjective, Objective};
use crate::report::{ConvergenceMonitor, FitReport, Loglik, LoglikMethod, TraceEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImmigrationMode {
    Renewal,
    Homogeneous,
    Inhomogeneous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SemiEmOptions {
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub bandwidth: BandwidthRule,
    /// Starting points per joint offspring step: current value, then scale
    /// parameters divided and multiplied by ten.
    pub restarts: usize,
    pub omega_cutoff: f64,
    pub weight_mode: WeightMode,
    pub fixed_shape: Option<f64>,
    pub censored_immigration: bool,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for SemiEmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            convergence_tol: 1e-6,
            bandwidth: BandwidthRule::Silverman,
            restarts: 3,
            omega_cutoff: 1e-12,
            weight_mode: WeightMode::MixtureIntensity,
            fixed_shape: None,
            censored_immigration: false,
            mc_samples: 200,
            seed: 0,
        }
    }
}

impl SemiEmOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(HawkesError::Config("max_iterations must be at least 1".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(HawkesError::Config("convergence_tol must be positive".into()));
        }
        if let BandwidthRule::Fixed(b) = self.bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return Err(HawkesError::InvalidParameter {
                    name: "bandwidth",
                    value: b,
                    reason: "must be finite and positive",
                });
            }
        }
        if self.restarts == 0 {
            return Err(HawkesError::Config("restarts must be at least 1".into()));
        }
        if !(self.omega_cutoff >= 0.0) {
            return Err(HawkesError::Config("omega_cutoff must be non-negative".into()));
        }
        Ok(())
    }
}

/// Immigrant probabilities and most-recent-immigrant weights.
pub fn semi_e_step(events: &EventSeries, model: &ModelSpec, opts: &SemiEmOptions) -> Result<BranchingWeights> {
    compute_weights(
        events,
        model,
        EStepConfig {
            band_width: None,
            omega_cutoff: opts.omega_cutoff,
            mode: opts.weight_mode,
            materialize_parents: false,
        },
    )
}

/// Profiled semi-complete offspring objective for the exponential kernel
/// in `u = ln tau0`, evaluated in linear time with its derivative.
pub struct ExponentialJointObjective<'a> {
    gaps: Vec<f64>,
    tails: Vec<f64>,
    weights: &'a [f64],
    total: f64,
}

impl<'a> ExponentialJointObjective<'a> {
    /// `offspring_weights[i] = 1 - pi_i`.
    pub fn new(events: &EventSeries, offspring_weights: &'a [f64]) -> Self {
        let times = events.times();
        let r = events.stopping_time();
        let mut gaps = vec![0.0; times.len()];
        for i in 1..times.len() {
            gaps[i] = times[i] - times[i - 1];
        }
        Self {
            gaps,
            tails: times.iter().map(|&t| r - t).collect(),
            weights: offspring_weights,
            total: offspring_weights.iter().sum(),
        }
    }

    /// `(sum_i w_i ln A_i(tau), sum_i H(r - t_i))` and derivatives in tau.
    fn parts(&self, tau: f64, with_grad: bool) -> (f64, f64, f64, f64) {
        let mut log_a = f64::NEG_INFINITY;
        let mut ratio = 0.0;
        let mut s = 0.0;
        let mut ds = 0.0;
        for i in 1..self.gaps.len() {
            let d = self.gaps[i];
            let prev_a = log_a.exp();
            if with_grad {
                ratio = d / (tau * tau) + ratio * prev_a / (1.0 + prev_a);
            }
            log_a = -d / tau + prev_a.ln_1p();
            let w = self.weights[i];
            if w > 0.0 {
                s += w * log_a;
                ds += w * ratio;
            }
        }
        let mut mass = 0.0;
        let mut dmass = 0.0;
        for &y in &self.tails {
            let e = (-y / tau).exp();
            mass += -(-y / tau).exp_m1();
            if with_grad {
                dmass -= e * y / (tau * tau);
            }
        }
        (s, ds, mass, dmass)
    }

    /// Objective at `tau0` with `eta` profiled out.
    pub fn value_at(&self, tau: f64) -> f64 {
        let (s, _, mass, _) = self.parts(tau, false);
        self.finish(s, tau, mass)
    }

    fn finish(&self, s: f64, tau: f64, mass: f64) -> f64 {
        let p = self.total;
        s - p * tau.ln() + xlogx(p) - p * mass.ln() - p
    }
}

fn xlogx(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

impl Objective for ExponentialJointObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.value_at(x[0].exp())
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let tau = x[0].exp();
        let (s, ds, mass, dmass) = self.parts(tau, true);
        let p = self.total;
        let v = self.finish(s, tau, mass);
        let dtau = ds - p / tau - p * dmass / mass;
        (v, vec![dtau * tau])
    }
}

/// The same objective by direct summation over all pairs.
pub fn joint_objective_direct(events: &EventSeries, offspring_weights: &[f64], offspring: &OffspringModel) -> f64 {
    let times = events.times();
    let r = events.stopping_time();
    let mut v = 0.0;
    for i in 1..times.len() {
        let w = offspring_weights[i];
        if w > 0.0 {
            let phi: f64 = (0..i).map(|j| offspring.intensity_term(times[i] - times[j])).sum();
            v += w * phi.ln();
        }
    }
    v - offspring.eta * times.iter().map(|&t| offspring.kernel.cdf(r - t)).sum::<f64>()
}

/// Joint objective at a given kernel with `eta` at its profile optimum.
pub fn joint_objective_profiled(events: &EventSeries, offspring_weights: &[f64], kernel: &OffspringKernel) -> f64 {
    let total: f64 = offspring_weights.iter().sum();
    let r = events.stopping_time();
    let mass: f64 = events.times().iter().map(|&t| kernel.cdf(r - t)).sum();
    let eta = if total > 0.0 { total / mass } else { 0.0 };
    match OffspringModel::new(eta, kernel.clone()) {
        Ok(off) if total > 0.0 => {
            let phi = offspring_intensities(&off, events.times());
            let mut v = 0.0;
            for (i, &w) in offspring_weights.iter().enumerate() {
                if w > 0.0 {
                    v += w * phi[i].ln();
                }
            }
            v - total
        }
        _ => 0.0,
    }
}

/// Joint M-step for `(eta, kernel)` from the immigrant probabilities.
pub fn m_step_offspring_joint(
    events: &EventSeries,
    immigrant: &[f64],
    current: &OffspringKernel,
    restarts: usize,
) -> Result<(f64, OffspringKernel, bool)> {
    let weights: Vec<f64> = immigrant.iter().map(|p| (1.0 - p).max(0.0)).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Ok((0.0, current.clone(), true));
    }
    let r = events.stopping_time();
    let lo = (SCALE_LOWER * r).ln();
    let hi = (SCALE_UPPER * r).ln();
    let factors = [1.0, 0.1, 10.0, 0.01, 100.0];
    let opts = BfgsOptions::default();
    // staying at the current point counts as converged
    let mut converged = true;
    let kernel = match current {
        OffspringKernel::Exponential(k) => {
            let obj = ExponentialJointObjective::new(events, &weights);
            let mut best = (k.tau0().ln(), obj.value(&[k.tau0().ln()]));
            for f in factors.iter().take(restarts.max(1)) {
                let x0 = (k.tau0() * f).ln().clamp(lo, hi);
                let res = maximize(&obj, &[x0], &[lo], &[hi], &opts);
                if res.value > best.1 || !best.1.is_finite() {
                    best = (res.x[0], res.value);
                    converged = res.converged;
                }
            }
            OffspringKernel::exponential(best.0.exp())?
        }
        OffspringKernel::Omori(k) => {
            let obj = FnObjective(|x: &[f64]| match OffspringKernel::omori(x[0].exp(), x[1].exp()) {
                Ok(kern) => joint_objective_profiled(events, &weights, &kern),
                Err(_) => f64::NEG_INFINITY,
            });
            let lower = [lo, ALPHA_BOUNDS.0.ln()];
            let upper = [hi, ALPHA_BOUNDS.1.ln()];
            let start = [k.c().ln(), k.alpha().ln()];
            let mut best = (start.to_vec(), obj.value(&start));
            let mut starts: Vec<[f64; 2]> = factors
                .iter()
                .take(restarts.max(1))
                .map(|f| [(k.c() * f).ln(), k.alpha().ln()])
                .collect();
            if restarts > 1 {
                // weighted fit to the lags from each event to its predecessor
                let lags: Vec<(f64, f64)> = events
                    .times()
                    .windows(2)
                    .zip(&weights[1..])
                    .map(|(w, &p)| (w[1] - w[0], p))
                    .collect();
                if let Ok((c, a)) = weighted_omori_mle(&lags, r) {
                    starts.push([c.ln(), a.ln()]);
                }
            }
            for x0 in starts {
                let res = maximize(&obj, &x0, &lower, &upper, &opts);
                if res.value > best.1 || !best.1.is_finite() {
                    best = (res.x, res.value);
                    converged = res.converged;
                }
            }
            OffspringKernel::omori(best.0[0].exp(), best.0[1].exp())?
        }
        OffspringKernel::Histogram(_) => {
            return Err(HawkesError::Unsupported(
                "the joint offspring step needs a parametric kernel",
            ))
        }
    };
    let mass: f64 = events.times().iter().map(|&t| kernel.cdf(r - t)).sum();
    if !(mass > 0.0) {
        return Err(HawkesError::DegenerateDenominator("sum of H(r - t_i) vanishes"));
    }
    Ok((total / mass, kernel, converged))
}

/// Reflected kernel estimate of the immigration rate with mass `pi_i` at
/// each event.
pub fn m_step_mu_kernel(
    events: &EventSeries,
    immigrant: &[f64],
    bandwidth: BandwidthRule,
) -> Result<InhomogeneousEstimate> {
    let r = events.stopping_time();
    let b = match bandwidth {
        BandwidthRule::Fixed(b) => b,
        BandwidthRule::Silverman => silverman_bandwidth(events.times(), immigrant, r),
    };
    InhomogeneousEstimate::new(events.times().to_vec(), immigrant.to_vec(), b, r)
}

fn immigration_surrogate(weights: &BranchingWeights, events: &EventSeries, imm: &ImmigrationModel) -> f64 {
    let r = events.stopping_time();
    match imm {
        ImmigrationModel::Weibull(w) => weights
            .immigrant_lags(events.times())
            .iter()
            .map(|&(x, c)| c * w.log_density(x))
            .sum(),
        ImmigrationModel::Homogeneous { rate } => weights.immigrant_mass() * rate.ln() - rate * r,
        ImmigrationModel::Inhomogeneous(e) => e
            .rates(events.times())
            .iter()
            .zip(&weights.immigrant)
            .map(|(&mu, &p)| if p > 0.0 { p * mu.ln() } else { 0.0 })
            .sum::<f64>()
            - e.total_mass(),
        ImmigrationModel::Sinusoidal(_) => 0.0,
    }
}

/// Runs the semi-complete-data EM from `init`.
pub fn fit_semicomplete_em(
    events: &EventSeries,
    init: &ModelSpec,
    opts: &SemiEmOptions,
    mode: ImmigrationMode,
) -> Result<FitReport> {
    opts.validate()?;
    if events.len() < 2 {
        return Err(HawkesError::InsufficientData("need at least two events".into()));
    }
    match (mode, &init.immigration) {
        (ImmigrationMode::Renewal, ImmigrationModel::Weibull(_))
        | (ImmigrationMode::Homogeneous, ImmigrationModel::Homogeneous { .. })
        | (ImmigrationMode::Inhomogeneous, _) => {}
        _ => {
            return Err(HawkesError::Config(format!(
                "{} immigration cannot start a {mode:?} fit",
                init.immigration.kind_name()
            )))
        }
    }
    let mut model = init.clone();
    if let (Some(k), ImmigrationModel::Weibull(w)) = (opts.fixed_shape, &model.immigration) {
        model.immigration = ImmigrationModel::weibull(k, w.scale())?;
    }
    let mut report = FitReport::new("em_semicomplete", model.clone(), events);
    let mut monitor = ConvergenceMonitor::new(model.params(), opts.convergence_tol, 3);
    let mut last_weights = None;

    for it in 1..=opts.max_iterations {
        let w = semi_e_step(events, &model, opts)?;
        let immigration = match mode {
            ImmigrationMode::Renewal => {
                let step = m_step_immigration_with(
                    &w,
                    events,
                    &ImmigrationStepOptions {
                        fixed_shape: opts.fixed_shape,
                        censored: opts.censored_immigration,
                    },
                )?;
                if step.at_boundary {
                    report.warn("shape estimate reached its search bound");
                }
                ImmigrationModel::Weibull(step.renewal)
            }
            ImmigrationMode::Homogeneous => {
                ImmigrationModel::homogeneous(w.immigrant_mass() / events.stopping_time())?
            }
            ImmigrationMode::Inhomogeneous => {
                ImmigrationModel::Inhomogeneous(m_step_mu_kernel(events, &w.immigrant, opts.bandwidth)?)
            }
        };
        let (eta, kernel, ok) =
            m_step_offspring_joint(events, &w.immigrant, &model.offspring.kernel, opts.restarts)?;
        if !ok {
            report.warn("offspring optimizer stopped before meeting its tolerance");
        }
        let offspring_weights: Vec<f64> = w.immigrant.iter().map(|p| 1.0 - p).collect();
        let objective = immigration_surrogate(&w, events, &immigration)
            + joint_objective_profiled(events, &offspring_weights, &kernel);
        model = ModelSpec::new(immigration, OffspringModel::new(eta, kernel)?);
        let exact = if is_z_independent(&model) {
            exact_loglik(&model, events).ok()
        } else {
            None
        };
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
    report.param_names = model.param_names();
    report.k = model.free_parameters() - usize::from(opts.fixed_shape.is_some() && mode == ImmigrationMode::Renewal);
    report.model = model.clone();
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
        let method = if is_z_independent(&model) {
            LoglikMethod::Exact
        } else {
            LoglikMethod::MonteCarlo {
                samples: opts.mc_samples,
                standard_error: est.standard_error,
            }
        };
        report.set_loglik(Loglik {
            value: est.value,
            method,
        });
    }
    Ok(report)
}
