//! Forward computation of immigrant, parent and most-recent-immigrant
//! probabilities shared by both EM variants.

use crate::error::{HawkesError, Result};
use crate::model::intensity::{first_in_support, offspring_intensities};
use crate::model::{
    BranchingWeights, EventSeries, ModelSpec, OffspringKernel, OmegaEntry, ParentRow, WeightMode,
};

#[derive(Debug, Clone, Copy)]
pub(crate) struct EStepConfig {
    pub band_width: Option<usize>,
    pub omega_cutoff: f64,
    pub mode: WeightMode,
    pub materialize_parents: bool,
}

/// First candidate parent of event `i`.
#[inline]
fn band_start(times: &[f64], kernel: &OffspringKernel, band: Option<usize>, i: usize) -> usize {
    let support = first_in_support(times, kernel, times[i]).min(i);
    match band {
        Some(nf) => support.max(i.saturating_sub(nf)),
        None => support,
    }
}

pub(crate) fn compute_weights(
    events: &EventSeries,
    model: &ModelSpec,
    cfg: EStepConfig,
) -> Result<BranchingWeights> {
    let times = events.times();
    let n = times.len();
    if n == 0 {
        return Err(HawkesError::InsufficientData("no events".into()));
    }
    if !(cfg.omega_cutoff >= 0.0) {
        return Err(HawkesError::Config("omega cutoff must be non-negative".into()));
    }
    let off = &model.offspring;
    let kernel = &off.kernel;

    // Offspring intensity at each event and, optionally, the raw parent terms.
    let mut parent_terms: Option<Vec<ParentRow>> = None;
    let phi: Vec<f64> = if cfg.materialize_parents {
        let mut rows = Vec::with_capacity(n);
        let mut phi = Vec::with_capacity(n);
        for i in 0..n {
            let first = band_start(times, kernel, cfg.band_width, i);
            let probs: Vec<f64> = (first..i)
                .map(|j| off.intensity_term(times[i] - times[j]))
                .collect();
            phi.push(probs.iter().sum());
            rows.push(ParentRow { first, probs });
        }
        parent_terms = Some(rows);
        phi
    } else if cfg.band_width.is_none() {
        offspring_intensities(off, times)
    } else {
        (0..n)
            .map(|i| {
                let first = band_start(times, kernel, cfg.band_width, i);
                (first..i)
                    .map(|j| off.intensity_term(times[i] - times[j]))
                    .sum()
            })
            .collect()
    };
    for (i, p) in phi.iter().enumerate() {
        if !p.is_finite() {
            return Err(HawkesError::NonFiniteIntensity { index: i });
        }
    }

    let imm = &model.immigration;
    let mut immigrant = Vec::with_capacity(n);
    let mut mu_star = Vec::with_capacity(n);
    let mut omega: Vec<Vec<OmegaEntry>> = Vec::with_capacity(n);
    let mut omega_final: Vec<(usize, f64)> = Vec::new();

    if imm.is_renewal() {
        // Candidate most recent immigrants for the current event.
        let mut cur: Vec<(usize, f64)> = Vec::new();
        for i in 0..n {
            if i == 0 {
                let mu = imm.rate(times[0], 0.0);
                if !(mu.is_finite() && mu > 0.0) {
                    return Err(HawkesError::NonFiniteIntensity { index: 0 });
                }
                immigrant.push(1.0);
                mu_star.push(mu);
                omega.push(Vec::new());
                cur.push((0, 1.0));
                continue;
            }
            let ti = times[i];
            let ph = phi[i];
            let mut row = Vec::with_capacity(cur.len());
            let mut ms = 0.0;
            let mut chain = 0.0;
            for &(k, w) in &cur {
                let mu = imm.rate(ti, times[k]);
                let denom = mu + ph;
                if !(denom.is_finite() && denom > 0.0) {
                    return Err(HawkesError::NonFiniteIntensity { index: i });
                }
                let cond = mu / denom;
                ms += w * mu;
                chain += w * cond;
                row.push(OmegaEntry {
                    index: k,
                    weight: w,
                    cond,
                });
            }
            let pi = match cfg.mode {
                WeightMode::ChainMarginal => chain,
                WeightMode::MixtureIntensity => {
                    if ph > 0.0 {
                        ms / (ms + ph)
                    } else {
                        1.0
                    }
                }
            };
            let pi = pi.clamp(0.0, 1.0);
            immigrant.push(pi);
            mu_star.push(ms);

            // Hadamard step: survive as most recent immigrant or be replaced
            // by the current event.
            let mut next: Vec<(usize, f64)> = Vec::with_capacity(row.len() + 1);
            let mut dropped = false;
            for e in &row {
                let w = e.weight * (1.0 - e.cond);
                if w < cfg.omega_cutoff || (w == 0.0 && cfg.omega_cutoff > 0.0) {
                    dropped = true;
                } else {
                    next.push((e.index, w));
                }
            }
            if pi >= cfg.omega_cutoff && !(pi == 0.0 && cfg.omega_cutoff > 0.0) {
                next.push((i, pi));
            } else {
                dropped = true;
            }
            if dropped || cfg.mode == WeightMode::MixtureIntensity {
                let s: f64 = next.iter().map(|e| e.1).sum();
                if !(s > 0.0) {
                    return Err(HawkesError::NoImmigrantMass);
                }
                for e in &mut next {
                    e.1 /= s;
                }
            }
            omega.push(row);
            cur = next;
        }
        omega_final = cur;
    } else {
        let rates = imm.poisson_rates(times);
        for (i, &mu) in rates.iter().enumerate() {
            if !(mu.is_finite() && mu > 0.0) {
                return Err(HawkesError::NonFiniteIntensity { index: i });
            }
            let pi = if i == 0 { 1.0 } else { mu / (mu + phi[i]) };
            immigrant.push(pi);
            mu_star.push(mu);
            omega.push(Vec::new());
        }
    }

    let parents = parent_terms.map(|mut rows| {
        for (i, row) in rows.iter_mut().enumerate() {
            let scale = if phi[i] > 0.0 {
                (1.0 - immigrant[i]) / phi[i]
            } else {
                0.0
            };
            for p in &mut row.probs {
                *p *= scale;
            }
        }
        rows
    });

    Ok(BranchingWeights {
        immigrant,
        parents,
        omega,
        omega_final,
        phi,
        mu_star,
        band_width: cfg.band_width,
        omega_cutoff: cfg.omega_cutoff,
        mode: cfg.mode,
    })
}
