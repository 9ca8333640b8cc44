//! Conditional intensities and compensators.
//!
//! `Phi(t) = sum_{t_j < t} eta h(t - t_j)` is the offspring part. For the
//! exponential kernel the values at the events follow the linear-time
//! recursion `A_i = exp(-(t_i - t_{i-1})/tau0) (1 + A_{i-1})`, `A_1 = 0`,
//! with `Phi(t_i) = eta/tau0 * A_i`.

use super::{EventSeries, ImmigrantVector, ImmigrationModel, ModelSpec, OffspringKernel, OffspringModel};
use crate::error::{HawkesError, Result};

fn check_time(events: &EventSeries, t: f64) -> Result<()> {
    if !(t >= 0.0 && t <= events.stopping_time()) {
        return Err(HawkesError::Domain {
            what: "evaluation time",
            value: t,
        });
    }
    Ok(())
}

/// Index of the first event that can still influence time `t`.
#[inline]
pub(crate) fn first_in_support(times: &[f64], kernel: &OffspringKernel, t: f64) -> usize {
    match kernel.support_end() {
        Some(s) => times.partition_point(|&x| x <= t - s),
        None => 0,
    }
}

/// `Phi(t | H_t)`; events at exactly `t` are excluded.
pub fn offspring_intensity(offspring: &OffspringModel, events: &EventSeries, t: f64) -> Result<f64> {
    check_time(events, t)?;
    let times = events.times();
    let end = times.partition_point(|&x| x < t);
    let start = first_in_support(times, &offspring.kernel, t).min(end);
    Ok(times[start..end]
        .iter()
        .map(|&tj| offspring.intensity_term(t - tj))
        .sum())
}

/// Recursive partial sums `A_i` for the exponential kernel.
pub fn exp_recursion_state(events: &EventSeries, offspring: &OffspringModel) -> Result<Vec<f64>> {
    match offspring.kernel {
        OffspringKernel::Exponential(k) => Ok(exp_recursion(events.times(), k.tau0())),
        _ => Err(HawkesError::Unsupported(
            "the linear-time recursion requires an exponential kernel",
        )),
    }
}

pub(crate) fn exp_recursion(times: &[f64], tau0: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(times.len());
    let mut a = 0.0;
    for (i, &t) in times.iter().enumerate() {
        if i > 0 {
            a = (-(t - times[i - 1]) / tau0).exp() * (1.0 + a);
        }
        out.push(a);
    }
    out
}

/// `Phi(t_i)` at every event.
pub fn offspring_intensities(offspring: &OffspringModel, times: &[f64]) -> Vec<f64> {
    match offspring.kernel {
        OffspringKernel::Exponential(k) => {
            let scale = offspring.eta / k.tau0();
            exp_recursion(times, k.tau0())
                .into_iter()
                .map(|a| scale * a)
                .collect()
        }
        _ => times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let start = first_in_support(times, &offspring.kernel, t).min(i);
                times[start..i]
                    .iter()
                    .map(|&tj| offspring.intensity_term(t - tj))
                    .sum()
            })
            .collect(),
    }
}

/// `sum_{j<i} eta H(t_i - t_j)` at every event.
pub fn offspring_compensators(offspring: &OffspringModel, times: &[f64]) -> Vec<f64> {
    match offspring.kernel {
        OffspringKernel::Exponential(k) => exp_recursion(times, k.tau0())
            .into_iter()
            .enumerate()
            .map(|(i, a)| offspring.eta * (i as f64 - a))
            .collect(),
        _ => times
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let start = first_in_support(times, &offspring.kernel, t).min(i);
                let inner: f64 = times[start..i]
                    .iter()
                    .map(|&tj| offspring.kernel.cdf(t - tj))
                    .sum();
                offspring.eta * (start as f64 + inner)
            })
            .collect(),
    }
}

/// `sum_{t_i < t} eta H(t - t_i)`.
pub fn offspring_compensator(offspring: &OffspringModel, events: &EventSeries, t: f64) -> Result<f64> {
    check_time(events, t)?;
    let times = events.times();
    let end = times.partition_point(|&x| x < t);
    let start = first_in_support(times, &offspring.kernel, t).min(end);
    let inner: f64 = times[start..end]
        .iter()
        .map(|&tj| offspring.kernel.cdf(t - tj))
        .sum();
    Ok(offspring.eta * (start as f64 + inner))
}

/// `eta sum_i H(r - t_i)`, the expected number of offspring inside the window.
pub fn offspring_total_compensator(offspring: &OffspringModel, events: &EventSeries) -> f64 {
    let r = events.stopping_time();
    offspring.eta
        * events
            .times()
            .iter()
            .map(|&t| offspring.kernel.cdf(r - t))
            .sum::<f64>()
}

/// `int_0^t mu(s - t_{I[N(s)]} | z) ds`, integrated between consecutive
/// immigrants from the virtual origin.
pub fn immigration_compensator(
    immigration: &ImmigrationModel,
    events: &EventSeries,
    z: &ImmigrantVector,
    t: f64,
) -> Result<f64> {
    check_time(events, t)?;
    z.check_len(events.len())?;
    let mut acc = 0.0;
    let mut last = 0.0;
    let mut prev = 0.0;
    for (&ti, &is_imm) in events.times().iter().zip(z.as_slice()) {
        if ti >= t {
            break;
        }
        acc += immigration.integral(prev, ti, last);
        prev = ti;
        if is_imm {
            last = ti;
        }
    }
    acc += immigration.integral(prev, t, last);
    Ok(acc)
}

/// `Lambda(t | z)` = immigration compensator + offspring compensator.
pub fn compensator(model: &ModelSpec, events: &EventSeries, z: &ImmigrantVector, t: f64) -> Result<f64> {
    Ok(immigration_compensator(&model.immigration, events, z, t)?
        + offspring_compensator(&model.offspring, events, t)?)
}

/// Immigration compensator at each event.
pub fn immigration_compensators(
    immigration: &ImmigrationModel,
    events: &EventSeries,
    z: &ImmigrantVector,
) -> Result<Vec<f64>> {
    z.check_len(events.len())?;
    let mut out = Vec::with_capacity(events.len());
    let mut acc = 0.0;
    let mut last = 0.0;
    let mut prev = 0.0;
    for (&ti, &is_imm) in events.times().iter().zip(z.as_slice()) {
        acc += immigration.integral(prev, ti, last);
        out.push(acc);
        prev = ti;
        if is_imm {
            last = ti;
        }
    }
    Ok(out)
}

/// `Lambda(t_i | z)` at every event.
pub fn compensator_at_events(
    model: &ModelSpec,
    events: &EventSeries,
    z: &ImmigrantVector,
) -> Result<Vec<f64>> {
    let imm = immigration_compensators(&model.immigration, events, z)?;
    let off = offspring_compensators(&model.offspring, events.times());
    Ok(imm.into_iter().zip(off).map(|(a, b)| a + b).collect())
}
