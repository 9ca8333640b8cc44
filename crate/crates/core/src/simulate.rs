//! Simulation by the branching construction and sampling of immigrant
//! indicators.
//!
//! Immigrants come from the renewal (or Poisson) process started at the
//! origin. Every point then spawns a Poisson(`eta`) number of children at
//! i.i.d. lags from the offspring density; children falling beyond the
//! stopping time are dropped together with their descendants.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson, Weibull};
use serde::{Deserialize, Serialize};

use crate::error::{HawkesError, Result};
use crate::model::intensity::offspring_intensities;
use crate::model::{EventSeries, ImmigrantVector, ImmigrationModel, ModelSpec};

/// Default cap on the number of simulated points.
pub const DEFAULT_MAX_POINTS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub max_points: usize,
    /// Length of a warm-up period simulated before the window and then
    /// discarded. Events whose parent fell in the warm-up become roots.
    pub burn_in: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            max_points: DEFAULT_MAX_POINTS,
            burn_in: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub events: EventSeries,
    /// 1-based index of the parent in `events`, 0 for immigrants.
    pub parent: Vec<usize>,
    pub generation: Vec<u32>,
}

impl SimulationResult {
    pub fn immigrant_vector(&self) -> Result<ImmigrantVector> {
        ImmigrantVector::new(self.parent.iter().map(|&p| p == 0).collect())
    }

    pub fn offspring_count(&self) -> usize {
        self.parent.iter().filter(|&&p| p != 0).count()
    }

    /// Writes `time,parent_index,generation` rows preceded by `# r=` and any
    /// extra `#` metadata lines.
    pub fn write_text<W: Write>(&self, mut w: W, metadata: &[String]) -> Result<()> {
        for line in metadata {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "# r={}", self.events.stopping_time())?;
        writeln!(w, "time,parent_index,generation")?;
        for ((t, p), g) in self.events.times().iter().zip(&self.parent).zip(&self.generation) {
            writeln!(w, "{t},{p},{g}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut r = None;
        let mut times = Vec::new();
        let mut parent = Vec::new();
        let mut generation = Vec::new();
        let mut header = false;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                if let Some(v) = c.trim().strip_prefix("r=") {
                    r = Some(v.trim().parse::<f64>().map_err(|e| HawkesError::Parse {
                        line: lineno,
                        message: e.to_string(),
                    })?);
                }
                continue;
            }
            if !header {
                if line != "time,parent_index,generation" {
                    return Err(HawkesError::Parse {
                        line: lineno,
                        message: format!("unexpected header `{line}`"),
                    });
                }
                header = true;
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(HawkesError::Parse {
                    line: lineno,
                    message: "expected three columns".into(),
                });
            }
            let bad = |m: String| HawkesError::Parse {
                line: lineno,
                message: m,
            };
            times.push(cols[0].parse::<f64>().map_err(|e| bad(e.to_string()))?);
            parent.push(cols[1].parse::<usize>().map_err(|e| bad(e.to_string()))?);
            generation.push(cols[2].parse::<u32>().map_err(|e| bad(e.to_string()))?);
        }
        let r = r.ok_or_else(|| HawkesError::InvalidEvents("missing `# r=` line".into()))?;
        Ok(Self {
            events: EventSeries::new(times, r)?,
            parent,
            generation,
        })
    }
}

/// Immigrant times on `(0, r]`.
pub fn simulate_renewal_immigrants<R: Rng + ?Sized>(
    model: &ImmigrationModel,
    r: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(r.is_finite() && r > 0.0) {
        return Err(HawkesError::InvalidParameter {
            name: "stopping_time",
            value: r,
            reason: "must be finite and positive",
        });
    }
    let mut out = Vec::new();
    match model {
        ImmigrationModel::Weibull(w) => {
            let dist = Weibull::new(w.scale(), w.shape())
                .map_err(|e| HawkesError::Config(format!("weibull sampler: {e}")))?;
            let mut t = 0.0;
            loop {
                t += dist.sample(rng);
                if t > r {
                    break;
                }
                out.push(t);
            }
        }
        ImmigrationModel::Homogeneous { rate } => {
            let dist = Exp::new(*rate).map_err(|e| HawkesError::Config(format!("{e}")))?;
            let mut t = 0.0;
            loop {
                t += dist.sample(rng);
                if t > r {
                    break;
                }
                out.push(t);
            }
        }
        ImmigrationModel::Sinusoidal(s) => {
            thin(|t| s.rate(t), s.max_rate(), r, rng, &mut out)?;
        }
        ImmigrationModel::Inhomogeneous(e) => {
            thin(|t| e.rate(t), e.upper_bound(), r, rng, &mut out)?;
        }
    }
    Ok(out)
}

fn thin<R: Rng + ?Sized>(
    rate: impl Fn(f64) -> f64,
    bound: f64,
    r: f64,
    rng: &mut R,
    out: &mut Vec<f64>,
) -> Result<()> {
    if !(bound.is_finite() && bound > 0.0) {
        return Err(HawkesError::Config(format!(
            "thinning needs a finite positive majorant, got {bound}"
        )));
    }
    let dist = Exp::new(bound).map_err(|e| HawkesError::Config(format!("{e}")))?;
    let mut t = 0.0;
    loop {
        t += dist.sample(rng);
        if t > r {
            return Ok(());
        }
        let u: f64 = rng.random();
        if u * bound <= rate(t) {
            out.push(t);
        }
    }
}

struct Point {
    time: f64,
    parent: Option<usize>,
    generation: u32,
}

/// Simulates the process on `(0, r]`.
pub fn simulate_hawkes_renewal<R: Rng + ?Sized>(
    model: &ModelSpec,
    r: f64,
    rng: &mut R,
) -> Result<SimulationResult> {
    simulate_hawkes_renewal_with(model, r, &SimulationOptions::default(), rng)
}

pub fn simulate_hawkes_renewal_with<R: Rng + ?Sized>(
    model: &ModelSpec,
    r: f64,
    opts: &SimulationOptions,
    rng: &mut R,
) -> Result<SimulationResult> {
    if !(opts.burn_in >= 0.0 && opts.burn_in.is_finite()) {
        return Err(HawkesError::InvalidParameter {
            name: "burn_in",
            value: opts.burn_in,
            reason: "must be finite and non-negative",
        });
    }
    let total = r + opts.burn_in;
    let eta = model.offspring.eta;
    let immigrants = simulate_renewal_immigrants(&model.immigration, total, rng)?;
    let mut points: Vec<Point> = immigrants
        .into_iter()
        .map(|time| Point {
            time,
            parent: None,
            generation: 0,
        })
        .collect();
    if points.len() > opts.max_points {
        return Err(HawkesError::Explosion {
            cap: opts.max_points,
            eta,
        });
    }
    if eta > 0.0 {
        let children = Poisson::new(eta).map_err(|e| HawkesError::Config(format!("{e}")))?;
        let mut queue: VecDeque<usize> = (0..points.len()).collect();
        while let Some(p) = queue.pop_front() {
            let count = children.sample(rng) as usize;
            let (tp, gp) = (points[p].time, points[p].generation);
            for _ in 0..count {
                let mut t = tp + model.offspring.kernel.sample(rng);
                while t <= tp {
                    // lag below the resolution of tp; redraw
                    t = tp + model.offspring.kernel.sample(rng);
                }
                if t > total {
                    continue;
                }
                points.push(Point {
                    time: t,
                    parent: Some(p),
                    generation: gp + 1,
                });
                if points.len() > opts.max_points {
                    return Err(HawkesError::Explosion {
                        cap: opts.max_points,
                        eta,
                    });
                }
                queue.push_back(points.len() - 1);
            }
        }
    }

    let mut order: Vec<usize> = (0..points.len())
        .filter(|&i| points[i].time > opts.burn_in)
        .collect();
    order.sort_by(|&a, &b| points[a].time.total_cmp(&points[b].time));
    let mut rank = vec![usize::MAX; points.len()];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos;
    }
    let mut times = Vec::with_capacity(order.len());
    let mut parent = Vec::with_capacity(order.len());
    let mut generation = Vec::with_capacity(order.len());
    // generation relative to the nearest retained root
    let mut gen_out = vec![0u32; points.len()];
    for &i in &order {
        let p = &points[i];
        times.push(p.time - opts.burn_in);
        match p.parent {
            Some(q) if rank[q] != usize::MAX => {
                parent.push(rank[q] + 1);
                gen_out[i] = gen_out[q] + 1;
            }
            _ => {
                parent.push(0);
                gen_out[i] = 0;
            }
        }
        generation.push(gen_out[i]);
    }
    Ok(SimulationResult {
        events: EventSeries::new(times, r)?,
        parent,
        generation,
    })
}

/// Simulates until at least `n` events exist and keeps the first `n`, with
/// the stopping time set to the `n`-th event.
pub fn simulate_n_events<R: Rng + ?Sized>(
    model: &ModelSpec,
    n: usize,
    rng: &mut R,
) -> Result<SimulationResult> {
    if n == 0 {
        return Err(HawkesError::InsufficientData("need at least one event".into()));
    }
    let eta = model.offspring.eta;
    let base_rate = match &model.immigration {
        ImmigrationModel::Weibull(w) => 1.0 / w.mean(),
        ImmigrationModel::Homogeneous { rate } => *rate,
        ImmigrationModel::Sinusoidal(s) => s.offset(),
        ImmigrationModel::Inhomogeneous(e) => e.total_mass() / e.stopping_time(),
    };
    let amplification = if eta < 1.0 { 1.0 / (1.0 - eta) } else { 10.0 };
    let mut window = 1.5 * n as f64 / (base_rate * amplification) + 1.0;
    for _ in 0..40 {
        let sim = simulate_hawkes_renewal(model, window, rng)?;
        if sim.events.len() >= n {
            let rn = sim.events.times()[n - 1];
            let times = sim.events.times()[..n].to_vec();
            return Ok(SimulationResult {
                events: EventSeries::new(times, rn)?,
                parent: sim.parent[..n].to_vec(),
                generation: sim.generation[..n].to_vec(),
            });
        }
        window *= 2.0;
    }
    Err(HawkesError::InsufficientData(format!(
        "could not generate {n} events"
    )))
}

/// Precomputed offspring intensities for repeated immigrant-vector draws.
#[derive(Debug, Clone)]
pub struct ImmigrantSampler<'a> {
    model: &'a ModelSpec,
    times: &'a [f64],
    phi: Vec<f64>,
}

impl<'a> ImmigrantSampler<'a> {
    pub fn new(model: &'a ModelSpec, events: &'a EventSeries) -> Self {
        Self {
            model,
            times: events.times(),
            phi: offspring_intensities(&model.offspring, events.times()),
        }
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// `pi_{i|k}`: probability that event `i` is an immigrant given that `k`
    /// is the most recent one (`None` for the origin).
    #[inline]
    pub fn conditional(&self, i: usize, k: Option<usize>) -> f64 {
        let last = k.map_or(0.0, |k| self.times[k]);
        let mu = self.model.immigration.rate(self.times[i], last);
        let ph = self.phi[i];
        if ph <= 0.0 {
            1.0
        } else {
            mu / (mu + ph)
        }
    }

    /// Forward thinning: accept each event as an immigrant with probability
    /// `pi_{i|k}` where `k` is the last accepted immigrant.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ImmigrantVector {
        let n = self.times.len();
        let mut z = Vec::with_capacity(n);
        let mut last = 0;
        for i in 0..n {
            if i == 0 {
                z.push(true);
                continue;
            }
            let p = self.conditional(i, Some(last));
            let accept = p >= 1.0 || rng.random::<f64>() < p;
            if accept {
                last = i;
            }
            z.push(accept);
        }
        ImmigrantVector::new(z).expect("first entry is set")
    }

    /// Probability of drawing `z` under the thinning chain.
    pub fn probability(&self, z: &ImmigrantVector) -> f64 {
        let mut p = 1.0;
        let mut last = 0;
        for (i, &zi) in z.as_slice().iter().enumerate().skip(1) {
            let c = self.conditional(i, Some(last));
            if zi {
                p *= c;
                last = i;
            } else {
                p *= 1.0 - c;
            }
        }
        p
    }
}

pub fn sample_immigrant_vector<R: Rng + ?Sized>(
    events: &EventSeries,
    model: &ModelSpec,
    rng: &mut R,
) -> Result<ImmigrantVector> {
    if events.is_empty() {
        return Err(HawkesError::InsufficientData("no events".into()));
    }
    Ok(ImmigrantSampler::new(model, events).sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OffspringKernel, OffspringModel, SinusoidalRate};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(shape: f64, scale: f64, eta: f64, tau0: f64) -> ModelSpec {
        ModelSpec::new(
            ImmigrationModel::weibull(shape, scale).unwrap(),
            OffspringModel::new(eta, OffspringKernel::exponential(tau0).unwrap()).unwrap(),
        )
    }

    #[test]
    fn poisson_immigrant_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = ImmigrationModel::weibull(1.0, 10.0).unwrap();
        let t = simulate_renewal_immigrants(&m, 1e4, &mut rng).unwrap();
        assert!((t.len() as f64 - 1000.0).abs() < 3.0 * 1000f64.sqrt());
    }

    #[test]
    fn nearly_deterministic_renewal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = ImmigrationModel::weibull(200.0, 10.0).unwrap();
        let t = simulate_renewal_immigrants(&m, 100.0, &mut rng).unwrap();
        let mut prev = 0.0;
        for x in t {
            assert!((x - prev - 10.0).abs() < 1.0);
            prev = x;
        }
    }

    #[test]
    fn sinusoid_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = ImmigrationModel::Sinusoidal(SinusoidalRate::new(1.5, 1.0, 250.0).unwrap());
        let mut total = 0usize;
        let reps = 20;
        for _ in 0..reps {
            total += simulate_renewal_immigrants(&m, 250.0, &mut rng).unwrap().len();
        }
        let mean = total as f64 / reps as f64;
        assert!((mean - 375.0).abs() < 3.0 * (375.0f64 / reps as f64).sqrt());
    }

    #[test]
    fn no_offspring_gives_immigrants_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = simulate_hawkes_renewal(&model(0.7, 5.0, 0.0, 1.0), 500.0, &mut rng).unwrap();
        assert!(s.parent.iter().all(|&p| p == 0));
        assert!(s.generation.iter().all(|&g| g == 0));
    }

    #[test]
    fn mean_rate_matches_branching_amplification() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = 1e5;
        let s = simulate_hawkes_renewal(&model(1.0, 10.0, 0.5, 3.0), r, &mut rng).unwrap();
        let rate = s.events.len() as f64 / r;
        // cluster sizes have variance eta/(1-eta)^3 per immigrant
        let clusters = r / 10.0;
        let sd = ((1.0 / 0.5f64.powi(2) + 0.5 / 0.5f64.powi(3)) * clusters).sqrt() / r;
        assert!((rate - 0.2).abs() < 3.0 * sd, "rate {rate} sd {sd}");
        let frac = s.offspring_count() as f64 / s.events.len() as f64;
        assert!((frac - 0.5).abs() < 0.02);
    }

    #[test]
    fn same_seed_same_output() {
        let m = model(0.5, 2.0, 0.6, 0.3);
        let a = simulate_hawkes_renewal(&m, 300.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = simulate_hawkes_renewal(&m, 300.0, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forest_bookkeeping() {
        let m = model(0.5, 2.0, 0.8, 0.3);
        let s = simulate_hawkes_renewal(&m, 500.0, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        for (i, &p) in s.parent.iter().enumerate() {
            if p == 0 {
                assert_eq!(s.generation[i], 0);
            } else {
                assert!(p - 1 < i);
                assert_eq!(s.generation[p - 1] + 1, s.generation[i]);
            }
        }
    }

    #[test]
    fn explosion_is_reported() {
        let m = model(1.0, 1.0, 1.5, 1.0);
        let opts = SimulationOptions {
            max_points: 10_000,
            burn_in: 0.0,
        };
        let err = simulate_hawkes_renewal_with(&m, 1e4, &opts, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(err, Err(HawkesError::Explosion { .. })));
    }

    #[test]
    fn first_n_events() {
        let m = model(0.5, 5.0, 0.5, 3.0);
        let s = simulate_n_events(&m, 500, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(s.events.len(), 500);
        assert_eq!(s.events.stopping_time(), *s.events.times().last().unwrap());
    }

    #[test]
    fn text_round_trip() {
        let m = model(0.5, 2.0, 0.5, 0.3);
        let s = simulate_hawkes_renewal(&m, 50.0, &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        let mut buf = Vec::new();
        s.write_text(&mut buf, &["seed=12".to_string()]).unwrap();
        assert_eq!(SimulationResult::read_text(&buf[..]).unwrap(), s);
    }

    #[test]
    fn zero_eta_samples_all_ones() {
        let m = model(0.5, 2.0, 0.0, 0.3);
        let ev = EventSeries::new(vec![0.5, 0.6, 2.0], 3.0).unwrap();
        let z = sample_immigrant_vector(&ev, &m, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(z.immigrant_count(), 3);
    }

    fn enumerate(n: usize) -> Vec<ImmigrantVector> {
        (0..1u32 << (n - 1))
            .map(|mask| {
                let mut z = vec![true];
                for b in 0..n - 1 {
                    z.push(mask >> b & 1 == 1);
                }
                ImmigrantVector::new(z).unwrap()
            })
            .collect()
    }

    #[test]
    fn weak_offspring_product_frequency() {
        let m = model(0.7, 1.0, 0.05, 0.5);
        let ev = EventSeries::new(vec![0.4, 0.7, 1.5], 2.0).unwrap();
        let sampler = ImmigrantSampler::new(&m, &ev);
        let p = sampler.conditional(1, Some(0)) * sampler.conditional(2, Some(1));
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let draws = 10_000;
        let hits = (0..draws)
            .filter(|_| sampler.sample(&mut rng).immigrant_count() == 3)
            .count();
        let freq = hits as f64 / draws as f64;
        let sd = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((freq - p).abs() < 3.0 * sd, "{freq} vs {p}");
    }

    #[test]
    fn sampler_matches_enumeration_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let m = model(0.6, 1.0, 0.8, 0.5);
        let ev = EventSeries::new(vec![0.3, 0.5, 0.9, 1.2], 2.0).unwrap();
        let sampler = ImmigrantSampler::new(&m, &ev);
        let all = enumerate(4);
        let probs: Vec<f64> = all.iter().map(|z| sampler.probability(z)).collect();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut counts = vec![0usize; all.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let draws = 100_000;
        for _ in 0..draws {
            let z = sampler.sample(&mut rng);
            counts[all.iter().position(|v| *v == z).unwrap()] += 1;
        }
        let stat: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| {
                let e = p * draws as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let pval = 1.0 - ChiSquared::new(7.0).unwrap().cdf(stat);
        assert!(pval > 0.01, "chi-square p = {pval}");
    }
}
