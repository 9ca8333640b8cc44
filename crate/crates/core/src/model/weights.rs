//! Expected branching structure.
//!
//! `immigrant[i]` is the probability that event `i` is an immigrant,
//! `parents[i]` the probabilities that each earlier event in the band is its
//! parent, and `omega[i]` the distribution of the most recent immigrant
//! strictly before event `i`, each entry carrying the conditional immigrant
//! probability of event `i` given that immigrant. `omega_final` is the
//! distribution of the last immigrant before the stopping time.

use serde::{Deserialize, Serialize};

/// How the immigrant probability of an event combines the candidate most
/// recent immigrants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// `pi_i = sum_k omega_ik pi_{i|k}`. Keeps every omega row a probability
    /// vector without renormalization, so omega is exactly the last-immigrant
    /// distribution of the thinning chain.
    ChainMarginal,
    /// `pi_i = mu*/(mu* + Phi)` with `mu* = sum_k omega_ik mu(t_i - t_k)`.
    /// Omega rows are renormalized after each step.
    #[default]
    MixtureIntensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentRow {
    /// Index of the first stored candidate parent (0-based).
    pub first: usize,
    /// Probabilities for candidates `first..i`.
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaEntry {
    /// Candidate most recent immigrant (0-based event index).
    pub index: usize,
    pub weight: f64,
    /// Probability that the current event is an immigrant given `index` is
    /// the most recent one.
    pub cond: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchingWeights {
    pub immigrant: Vec<f64>,
    /// Present only when parent weights were materialized.
    pub parents: Option<Vec<ParentRow>>,
    /// One row per event; empty rows for Poisson-type immigration and for
    /// the first event (whose predecessor is the origin).
    pub omega: Vec<Vec<OmegaEntry>>,
    pub omega_final: Vec<(usize, f64)>,
    /// Offspring intensity at each event over the stored band.
    pub phi: Vec<f64>,
    /// Immigration intensity at each event, averaged over omega rows.
    pub mu_star: Vec<f64>,
    pub band_width: Option<usize>,
    pub omega_cutoff: f64,
    pub mode: WeightMode,
}

impl BranchingWeights {
    pub fn len(&self) -> usize {
        self.immigrant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.immigrant.is_empty()
    }

    /// `sum_i pi_i`.
    pub fn immigrant_mass(&self) -> f64 {
        self.immigrant.iter().sum()
    }

    /// `n - sum_i pi_i`.
    pub fn offspring_mass(&self) -> f64 {
        self.immigrant.iter().map(|p| 1.0 - p).sum()
    }

    /// `pi_i + sum_j pi_{i,j}` for a materialized row.
    pub fn pi_row_sum(&self, i: usize) -> Option<f64> {
        let parents = self.parents.as_ref()?;
        Some(self.immigrant[i] + parents[i].probs.iter().sum::<f64>())
    }

    pub fn omega_row_sum(&self, i: usize) -> f64 {
        self.omega[i].iter().map(|e| e.weight).sum()
    }

    /// `(lag, weight)` pairs `(t_i - t_j, pi_{i,j})` over stored parents.
    pub fn parent_lags(&self, times: &[f64]) -> Vec<(f64, f64)> {
        let Some(parents) = &self.parents else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for (i, row) in parents.iter().enumerate() {
            for (off, &p) in row.probs.iter().enumerate() {
                if p > 0.0 {
                    out.push((times[i] - times[row.first + off], p));
                }
            }
        }
        out
    }

    /// `(lag, weight)` pairs `(t_i - t_k, omega_{i,k} pi_{i|k})` between
    /// consecutive immigrants.
    pub fn immigrant_lags(&self, times: &[f64]) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for (i, row) in self.omega.iter().enumerate() {
            for e in row {
                let w = e.weight * e.cond;
                if w > 0.0 {
                    out.push((times[i] - times[e.index], w));
                }
            }
        }
        out
    }

    /// `(r - t_k, omega_final_k)`: censored lag of the last immigrant.
    pub fn censored_lags(&self, times: &[f64], stopping_time: f64) -> Vec<(f64, f64)> {
        self.omega_final
            .iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|&(k, w)| (stopping_time - times[k], w))
            .collect()
    }
}
