//! Direct maximum likelihood for the standard Hawkes process with a
//! homogeneous Poisson immigration rate.
//!
//! Parameters are optimized on the log scale inside box bounds with the same
//! quasi-Newton routine the semi-complete EM uses. The exponential kernel
//! has a linear-time analytic gradient; Omori falls back to differences.

use crate::em_complete::{ALPHA_BOUNDS, SCALE_LOWER, SCALE_UPPER};
use crate::error::{HawkesError, Result};
use crate::model::intensity::{exp_recursion, offspring_intensities};
use crate::model::{
    EventSeries, ImmigrationModel, KernelFamily, ModelSpec, OffspringKernel, OffspringModel,
};
use crate::optim::{maximize, BfgsOptions, Objective};
use crate::report::{FitReport, Loglik, LoglikMethod, TraceEntry};

/// Bounds on the branching ratio during optimization.
pub const ETA_BOUNDS: (f64, f64) = (1e-10, 10.0);

/// `sum ln(mu + Phi(t_i)) - mu r - eta sum H(r - t_i)`.
pub fn standard_loglik(mu: f64, offspring: &OffspringModel, events: &EventSeries) -> Result<f64> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(HawkesError::InvalidParameter {
            name: "mu",
            value: mu,
            reason: "must be finite and positive",
        });
    }
    let r = events.stopping_time();
    let phi = offspring_intensities(offspring, events.times());
    let mut ll = 0.0;
    for (i, p) in phi.iter().enumerate() {
        let lam = mu + p;
        if !(lam.is_finite() && lam > 0.0) {
            return Err(HawkesError::NonFiniteIntensity { index: i });
        }
        ll += lam.ln();
    }
    let tail: f64 = events
        .times()
        .iter()
        .map(|&t| offspring.kernel.cdf(r - t))
        .sum();
    Ok(ll - mu * r - offspring.eta * tail)
}

struct StandardObjective<'a> {
    events: &'a EventSeries,
    family: KernelFamily,
}

impl StandardObjective<'_> {
    fn model(&self, x: &[f64]) -> Option<(f64, OffspringModel)> {
        let kernel = match self.family {
            KernelFamily::Exponential => OffspringKernel::exponential(x[2].exp()),
            KernelFamily::Omori => OffspringKernel::omori(x[2].exp(), x[3].exp()),
        }
        .ok()?;
        Some((x[0].exp(), OffspringModel::new(x[1].exp(), kernel).ok()?))
    }
}

impl Objective for StandardObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        match self.model(x) {
            Some((mu, off)) => standard_loglik(mu, &off, self.events).unwrap_or(f64::NEG_INFINITY),
            None => f64::NEG_INFINITY,
        }
    }

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        if self.family != KernelFamily::Exponential {
            let f = self.value(x);
            return (f, crate::optim::fd_gradient(|y| self.value(y), x));
        }
        let (mu, eta, tau) = (x[0].exp(), x[1].exp(), x[2].exp());
        let times = self.events.times();
        let r = self.events.stopping_time();
        let a = exp_recursion(times, tau);
        let tau2 = tau * tau;
        let (mut ll, mut gmu, mut geta, mut gtau) = (0.0, 0.0, 0.0, 0.0);
        // derivative of A_i in tau
        let mut b = 0.0;
        for i in 0..times.len() {
            if i > 0 {
                let d = times[i] - times[i - 1];
                b = (-d / tau).exp() * (d / tau2 * (1.0 + a[i - 1]) + b);
            }
            let lam = mu + eta * a[i] / tau;
            if !(lam.is_finite() && lam > 0.0) {
                return (f64::NEG_INFINITY, vec![0.0; 3]);
            }
            ll += lam.ln();
            gmu += 1.0 / lam;
            geta += a[i] / tau / lam;
            gtau += eta * (b / tau - a[i] / tau2) / lam;
        }
        let mut s = 0.0;
        let mut ds = 0.0;
        for &t in times {
            let y = r - t;
            s += -(-y / tau).exp_m1();
            ds -= (-y / tau).exp() * y / tau2;
        }
        ll -= mu * r + eta * s;
        gmu -= r;
        geta -= s;
        gtau -= eta * ds;
        (ll, vec![gmu * mu, geta * eta, gtau * tau])
    }
}

/// Starting point from the event rate: half the events are immigrants and
/// the kernel scale is the mean gap.
pub fn default_standard_init(events: &EventSeries, family: KernelFamily) -> Result<ModelSpec> {
    if events.len() < 2 {
        return Err(HawkesError::InsufficientData("need at least two events".into()));
    }
    let gap = events.mean_gap();
    let kernel = match family {
        KernelFamily::Exponential => OffspringKernel::exponential(gap)?,
        KernelFamily::Omori => OffspringKernel::omori(gap, 1.0)?,
    };
    Ok(ModelSpec::new(
        ImmigrationModel::homogeneous(0.5 * events.len() as f64 / events.stopping_time())?,
        OffspringModel::new(0.5, kernel)?,
    ))
}

/// Maximum likelihood fit of the standard process. Restart `k` scales the
/// initial kernel scale by `1, 0.1, 10, 0.01, 100, ...` in turn.
pub fn fit_standard_mle(
    events: &EventSeries,
    family: KernelFamily,
    init: &ModelSpec,
    restarts: usize,
) -> Result<FitReport> {
    if events.len() < 2 {
        return Err(HawkesError::InsufficientData("need at least two events".into()));
    }
    let ImmigrationModel::Homogeneous { rate } = init.immigration else {
        return Err(HawkesError::Config(
            "baseline fit needs homogeneous immigration".into(),
        ));
    };
    let (scale, alpha) = match (&init.offspring.kernel, family) {
        (OffspringKernel::Exponential(k), KernelFamily::Exponential) => (k.tau0(), None),
        (OffspringKernel::Omori(k), KernelFamily::Omori) => (k.c(), Some(k.alpha())),
        _ => {
            return Err(HawkesError::Config(
                "initial kernel does not match the requested family".into(),
            ))
        }
    };
    let n = events.len() as f64;
    let r = events.stopping_time();
    let mut lo = vec![(1e-6 * n / r).ln(), ETA_BOUNDS.0.ln(), (SCALE_LOWER * r).ln()];
    let mut hi = vec![(10.0 * n / r).ln(), ETA_BOUNDS.1.ln(), (SCALE_UPPER * r).ln()];
    if alpha.is_some() {
        lo.push(ALPHA_BOUNDS.0.ln());
        hi.push(ALPHA_BOUNDS.1.ln());
    }
    let obj = StandardObjective { events, family };
    let opts = BfgsOptions::default();
    let mut report = FitReport::new("baseline_mle", init.clone(), events);
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for k in 0..restarts.max(1) {
        let factor = match k {
            0 => 1.0,
            k if k % 2 == 1 => 10f64.powi(-((k as i32 + 1) / 2)),
            k => 10f64.powi(k as i32 / 2),
        };
        let mut x0 = vec![rate.ln(), init.offspring.eta.max(ETA_BOUNDS.0).ln(), (scale * factor).ln()];
        if let Some(a) = alpha {
            x0.push(a.ln());
        }
        let res = maximize(&obj, &x0, &lo, &hi, &opts);
        if res.value.is_finite() {
            let m = obj.model(&res.x).map(|(mu, off)| {
                let mut p = vec![mu, off.eta];
                p.extend(off.kernel.params());
                p
            });
            report.push_trace(TraceEntry {
                iteration: k + 1,
                params: m.unwrap_or_default(),
                objective: res.value,
                exact_loglik: Some(res.value),
            });
            if best.as_ref().is_none_or(|b| res.value > b.1) {
                best = Some((res.x, res.value, res.converged));
            }
        }
    }
    let Some((x, value, converged)) = best else {
        return Err(HawkesError::OptimizationFailed(
            "no restart reached a finite log-likelihood".into(),
        ));
    };
    let (mu, off) = obj
        .model(&x)
        .ok_or_else(|| HawkesError::Internal("optimum outside the parameter space".into()))?;
    report.model = ModelSpec::new(ImmigrationModel::homogeneous(mu)?, off);
    report.param_names = report.model.param_names();
    report.k = report.model.free_parameters();
    report.converged = converged;
    if !converged {
        report.warn("optimizer stopped before meeting its tolerance");
    }
    if !report.model.offspring.is_stationary() {
        report.warn("branching ratio is at least one (non-stationary fit)");
    }
    report.set_loglik(Loglik {
        value,
        method: LoglikMethod::Exact,
    });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::simulate_hawkes_renewal;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn off(eta: f64, tau: f64) -> OffspringModel {
        OffspringModel::new(eta, OffspringKernel::exponential(tau).unwrap()).unwrap()
    }

    fn hawkes(mu: f64, eta: f64, tau: f64) -> ModelSpec {
        ModelSpec::new(ImmigrationModel::homogeneous(mu).unwrap(), off(eta, tau))
    }

    fn direct(mu: f64, o: &OffspringModel, ev: &EventSeries) -> f64 {
        let t = ev.times();
        let r = ev.stopping_time();
        let mut v = 0.0;
        for i in 0..t.len() {
            let phi: f64 = (0..i).map(|j| o.eta * o.kernel.density(t[i] - t[j])).sum();
            v += (mu + phi).ln();
        }
        v - mu * r - t.iter().map(|&s| o.eta * o.kernel.cdf(r - s)).sum::<f64>()
    }

    #[test]
    fn poisson_case() {
        let ev = EventSeries::new(vec![1.0, 2.0, 4.0], 5.0).unwrap();
        let v = standard_loglik(0.7, &off(0.0, 1.0), &ev).unwrap();
        assert!((v - (3.0 * 0.7f64.ln() - 3.5)).abs() < 1e-12);
    }

    #[test]
    fn recursion_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let sim = simulate_hawkes_renewal(&hawkes(1.0, 0.6, 0.7), 100.0, &mut rng).unwrap();
        assert!(sim.events.len() <= 300);
        for _ in 0..50 {
            let mu = rng.random_range(0.1..3.0);
            let o = off(rng.random_range(0.0..1.5), rng.random_range(0.05..5.0));
            let a = standard_loglik(mu, &o, &sim.events).unwrap();
            let b = direct(mu, &o, &sim.events);
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let sim = simulate_hawkes_renewal(&hawkes(1.0, 0.5, 1.0), 100.0, &mut rng).unwrap();
        let obj = StandardObjective {
            events: &sim.events,
            family: KernelFamily::Exponential,
        };
        for x in [[0.0, -0.7, 0.0], [-1.0, -2.0, 1.5], [0.5, 0.1, -2.0]] {
            let (_, g) = obj.value_and_gradient(&x);
            let fd = crate::optim::fd_gradient(|y| obj.value(y), &x);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() < 1e-5 * b.abs().max(1.0), "{g:?} vs {fd:?}");
            }
        }
    }

    #[test]
    fn truth_dominates_perturbations() {
        let truth = hawkes(1.0, 0.5, 1.0);
        let mut wins = 0;
        for s in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
            let sim = simulate_hawkes_renewal(&truth, 2000.0, &mut rng).unwrap();
            let sign = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { 1.2 } else { 0.8 };
            let at_truth = standard_loglik(1.0, &off(0.5, 1.0), &sim.events).unwrap();
            let mu = sign(&mut rng);
            let o = off(0.5 * sign(&mut rng), sign(&mut rng));
            if at_truth > standard_loglik(mu, &o, &sim.events).unwrap() {
                wins += 1;
            }
        }
        assert!(wins >= 95, "{wins}");
    }

    #[test]
    fn recovers_standard_hawkes() {
        let truth = hawkes(1.0, 0.5, 3.0);
        let fit = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sim = crate::simulate::simulate_n_events(&truth, 5000, &mut rng).unwrap();
            let init = default_standard_init(&sim.events, KernelFamily::Exponential).unwrap();
            let rep = fit_standard_mle(&sim.events, KernelFamily::Exponential, &init, 3).unwrap();
            let init_ll = exact(&init, &sim.events);
            assert!(rep.loglik.unwrap().value >= init_ll);
            assert_eq!(rep.k, 3);
            rep.params()
        };
        let est = fit(43);
        let boot: Vec<Vec<f64>> = (0..20).map(|s| fit(500 + s)).collect();
        for (p, &t) in [1.0, 0.5, 3.0].iter().enumerate() {
            let v: Vec<f64> = boot.iter().map(|b| b[p]).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
            assert!((est[p] - t).abs() < 3.0 * sd, "param {p}: {} vs {t} (sd {sd})", est[p]);
        }
    }

    fn exact(m: &ModelSpec, ev: &EventSeries) -> f64 {
        let ImmigrationModel::Homogeneous { rate } = m.immigration else {
            unreachable!()
        };
        standard_loglik(rate, &m.offspring, ev).unwrap()
    }

    #[test]
    fn omori_fit_reports_four_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let sim = simulate_hawkes_renewal(&hawkes(1.0, 0.5, 1.0), 300.0, &mut rng).unwrap();
        let init = default_standard_init(&sim.events, KernelFamily::Omori).unwrap();
        let rep = fit_standard_mle(&sim.events, KernelFamily::Omori, &init, 3).unwrap();
        assert_eq!(rep.k, 4);
        let aic = rep.aic.unwrap();
        assert!((aic - (8.0 - 2.0 * rep.loglik.unwrap().value)).abs() < 1e-9);
        assert!(rep.loglik.unwrap().value >= exact(&init, &sim.events));
    }
}
