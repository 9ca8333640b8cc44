//! Fit results shared by all estimators.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{BranchingWeights, EventSeries, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub params: Vec<f64>,
    /// The surrogate the algorithm maximizes in this iteration.
    pub objective: f64,
    /// Exact incomplete-data log-likelihood when it is cheap to evaluate.
    pub exact_loglik: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum LoglikMethod {
    Exact,
    MonteCarlo { samples: usize, standard_error: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Loglik {
    pub value: f64,
    #[serde(flatten)]
    pub method: LoglikMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsSummary {
    pub immigrant_mass: f64,
    pub offspring_mass: f64,
    pub immigrant_probabilities: Vec<f64>,
}

impl From<&BranchingWeights> for WeightsSummary {
    fn from(w: &BranchingWeights) -> Self {
        Self {
            immigrant_mass: w.immigrant_mass(),
            offspring_mass: w.offspring_mass(),
            immigrant_probabilities: w.immigrant.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub algorithm: String,
    pub model: ModelSpec,
    pub param_names: Vec<String>,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub loglik: Option<Loglik>,
    /// Free-parameter count used for the AIC.
    pub k: usize,
    pub aic: Option<f64>,
    pub n_events: usize,
    pub stopping_time: f64,
    pub data_fingerprint: String,
    pub warnings: Vec<String>,
    pub weights_summary: Option<WeightsSummary>,
    /// Final weights; kept in memory only.
    #[serde(skip)]
    pub weights: Option<BranchingWeights>,
}

impl FitReport {
    pub(crate) fn new(algorithm: &str, model: ModelSpec, events: &EventSeries) -> Self {
        let k = model.free_parameters();
        Self {
            algorithm: algorithm.to_string(),
            param_names: model.param_names(),
            model,
            iterations: 0,
            trace: Vec::new(),
            converged: false,
            loglik: None,
            k,
            aic: None,
            n_events: events.len(),
            stopping_time: events.stopping_time(),
            data_fingerprint: events.fingerprint(),
            warnings: Vec::new(),
            weights_summary: None,
            weights: None,
        }
    }

    pub(crate) fn set_loglik(&mut self, loglik: Loglik) {
        self.aic = Some(2.0 * self.k as f64 - 2.0 * loglik.value);
        self.loglik = Some(loglik);
    }

    pub(crate) fn set_weights(&mut self, w: BranchingWeights) {
        self.weights_summary = Some(WeightsSummary::from(&w));
        self.weights = Some(w);
    }

    pub(crate) fn push_trace(&mut self, entry: TraceEntry) {
        self.trace.push(entry);
        self.iterations = self.trace.len();
    }

    pub(crate) fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        if !self.warnings.contains(&msg) {
            self.warnings.push(msg);
        }
    }

    /// Final parameter vector in `param_names` order.
    pub fn params(&self) -> Vec<f64> {
        self.model.params()
    }

    /// Per-iteration trace as delimited text.
    pub fn write_trace<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "iteration")?;
        for name in &self.param_names {
            write!(w, ",{name}")?;
        }
        writeln!(w, ",objective,exact_loglik")?;
        for e in &self.trace {
            write!(w, "{}", e.iteration)?;
            for p in &e.params {
                write!(w, ",{p}")?;
            }
            match e.exact_loglik {
                Some(v) => writeln!(w, ",{},{v}", e.objective)?,
                None => writeln!(w, ",{},", e.objective)?,
            }
        }
        Ok(())
    }
}

/// Stopping rule: cumulative absolute parameter change over the last
/// `window` iterations below `tol`.
#[derive(Debug, Clone)]
pub(crate) struct ConvergenceMonitor {
    window: usize,
    tol: f64,
    changes: Vec<f64>,
    prev: Vec<f64>,
}

impl ConvergenceMonitor {
    pub fn new(initial: Vec<f64>, tol: f64, window: usize) -> Self {
        Self {
            window,
            tol,
            changes: Vec::new(),
            prev: initial,
        }
    }

    /// Records the parameters after one iteration; true once converged.
    pub fn update(&mut self, params: &[f64]) -> bool {
        let change: f64 = if params.len() == self.prev.len() {
            params
                .iter()
                .zip(&self.prev)
                .map(|(a, b)| (a - b).abs())
                .sum()
        } else {
            f64::INFINITY
        };
        self.changes.push(change);
        self.prev = params.to_vec();
        self.changes.len() >= self.window
            && self.changes[self.changes.len() - self.window..]
                .iter()
                .sum::<f64>()
                < self.tol
    }
}
