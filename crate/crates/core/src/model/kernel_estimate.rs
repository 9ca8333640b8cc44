//! Weighted Gaussian kernel estimate of a Poisson immigration intensity on
//! `(0, r]` with reflecting boundaries.
//!
//! Each atom `(x, m)` spreads mass `m` as a Gaussian of width `b`. Mass
//! falling outside the window is folded back by the method of images
//! (`x + 2kr` and `-x + 2kr` for all integers `k`), so the integral over
//! `(0, r]` equals the total atom mass. Evaluation only visits atoms within
//! `WINDOW_SIGMAS * b` of the query point.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{HawkesError, Result};

const WINDOW_SIGMAS: f64 = 10.0;
/// Hermite terms per box in [`InhomogeneousEstimate::rates`]. With boxes of
/// width `b` the truncation error is below `1e-19` of the total mass.
const HERMITE_TERMS: usize = 24;
/// Below this many atom-target pairs `rates` evaluates directly.
const DIRECT_PAIRS: usize = 1 << 18;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Bandwidth choice for the kernel estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum BandwidthRule {
    Fixed(f64),
    /// `0.9 min(sd, IQR/1.34) n_eff^(-1/5)` on the weighted atom locations.
    Silverman,
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::Silverman
    }
}

/// Weighted Silverman rule of thumb. Falls back to `r / n_eff` when the
/// weighted spread is degenerate.
pub fn silverman_bandwidth(locations: &[f64], weights: &[f64], stopping_time: f64) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || locations.is_empty() {
        return stopping_time;
    }
    let mean = locations.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / total;
    let var = locations
        .iter()
        .zip(weights)
        .map(|(x, w)| w * (x - mean).powi(2))
        .sum::<f64>()
        / total;
    let sd = var.sqrt();
    let q = |p: f64| -> f64 {
        // locations are sorted by construction of event series
        let target = p * total;
        let mut acc = 0.0;
        for (x, w) in locations.iter().zip(weights) {
            acc += w;
            if acc >= target {
                return *x;
            }
        }
        *locations.last().unwrap()
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let b = 0.9 * spread * total.powf(-0.2);
    if b.is_finite() && b > 0.0 {
        b
    } else {
        stopping_time / total.max(1.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawEstimate {
    locations: Vec<f64>,
    masses: Vec<f64>,
    bandwidth: f64,
    stopping_time: f64,
}

/// `mu(t) = sum_i m_i k(t - x_i; b)` on `(0, r]`, reflected at both ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEstimate", into = "RawEstimate")]
pub struct InhomogeneousEstimate {
    locations: Vec<f64>,
    masses: Vec<f64>,
    bandwidth: f64,
    stopping_time: f64,
    prefix: Vec<f64>,
}

impl TryFrom<RawEstimate> for InhomogeneousEstimate {
    type Error = HawkesError;

    fn try_from(raw: RawEstimate) -> Result<Self> {
        Self::new(raw.locations, raw.masses, raw.bandwidth, raw.stopping_time)
    }
}

impl From<InhomogeneousEstimate> for RawEstimate {
    fn from(e: InhomogeneousEstimate) -> Self {
        RawEstimate {
            locations: e.locations,
            masses: e.masses,
            bandwidth: e.bandwidth,
            stopping_time: e.stopping_time,
        }
    }
}

impl InhomogeneousEstimate {
    pub fn new(
        locations: Vec<f64>,
        masses: Vec<f64>,
        bandwidth: f64,
        stopping_time: f64,
    ) -> Result<Self> {
        if locations.len() != masses.len() {
            return Err(HawkesError::Config(
                "kernel estimate needs one mass per location".into(),
            ));
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(HawkesError::InvalidParameter {
                name: "bandwidth",
                value: bandwidth,
                reason: "must be finite and positive",
            });
        }
        if !(stopping_time.is_finite() && stopping_time > 0.0) {
            return Err(HawkesError::InvalidParameter {
                name: "stopping_time",
                value: stopping_time,
                reason: "must be finite and positive",
            });
        }
        for (&x, &m) in locations.iter().zip(&masses) {
            if !(0.0..=stopping_time).contains(&x) {
                return Err(HawkesError::Domain {
                    what: "atom location",
                    value: x,
                });
            }
            if !(m.is_finite() && m >= 0.0) {
                return Err(HawkesError::InvalidParameter {
                    name: "atom mass",
                    value: m,
                    reason: "must be finite and non-negative",
                });
            }
        }
        let (locations, masses) = if locations.windows(2).all(|w| w[0] <= w[1]) {
            (locations, masses)
        } else {
            let mut pairs: Vec<(f64, f64)> = locations.into_iter().zip(masses).collect();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            pairs.into_iter().unzip()
        };
        let mut prefix = Vec::with_capacity(masses.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for m in &masses {
            acc += m;
            prefix.push(acc);
        }
        Ok(Self {
            locations,
            masses,
            bandwidth,
            stopping_time,
            prefix,
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn stopping_time(&self) -> f64 {
        self.stopping_time
    }

    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.locations.iter().copied().zip(self.masses.iter().copied())
    }

    pub fn total_mass(&self) -> f64 {
        *self.prefix.last().unwrap_or(&0.0)
    }

    fn window(&self) -> f64 {
        WINDOW_SIGMAS * self.bandwidth
    }

    /// Range of image shifts `2kr` that can land within the window of any
    /// point in `[0, r]`.
    fn shift_range(&self) -> std::ops::RangeInclusive<i64> {
        let r = self.stopping_time;
        let k = ((self.window() + r) / (2.0 * r)).ceil() as i64 + 1;
        -k..=k
    }

    fn index_range(&self, lo: f64, hi: f64) -> (usize, usize) {
        let a = self.locations.partition_point(|&x| x < lo);
        let b = self.locations.partition_point(|&x| x <= hi);
        (a, b.max(a))
    }

    /// Folded density of a unit atom at `x`, evaluated at `t`.
    fn atom_density(&self, x: f64, t: f64) -> f64 {
        let b = self.bandwidth;
        let r = self.stopping_time;
        let w = self.window();
        let mut s = 0.0;
        for k in self.shift_range() {
            let shift = 2.0 * k as f64 * r;
            for p in [x + shift, shift - x] {
                let d = t - p;
                if d.abs() <= w {
                    let z = d / b;
                    s += (-0.5 * z * z).exp();
                }
            }
        }
        s * INV_SQRT_2PI / b
    }

    /// Mass of a unit atom at `x` falling in `(0, t]` after folding.
    fn atom_cdf(&self, x: f64, t: f64) -> f64 {
        let b = self.bandwidth;
        let r = self.stopping_time;
        let w = self.window();
        let mut s = 0.0;
        for k in self.shift_range() {
            let shift = 2.0 * k as f64 * r;
            for p in [x + shift, shift - x] {
                if p + w < 0.0 || p - w > t {
                    continue;
                }
                s += std_normal_cdf((t - p) / b) - std_normal_cdf(-p / b);
            }
        }
        s
    }

    /// Intensity at `t` in `[0, r]`.
    pub fn rate(&self, t: f64) -> f64 {
        let r = self.stopping_time;
        let w = self.window();
        let mut total = 0.0;
        let mut visited: Vec<(usize, usize)> = Vec::new();
        for k in self.shift_range() {
            let shift = 2.0 * k as f64 * r;
            // direct images x + shift near t, mirrored images shift - x near t
            for (lo, hi) in [
                (t - w - shift, t + w - shift),
                (shift - t - w, shift - t + w),
            ] {
                let (a, b) = self.index_range(lo.max(0.0), hi.min(r));
                if a < b {
                    visited.push((a, b));
                }
            }
        }
        for (a, b) in merge_ranges(visited) {
            for i in a..b {
                total += self.masses[i] * self.atom_density(self.locations[i], t);
            }
        }
        total
    }

    /// Intensity at each of `ts` (all in `[0, r]`).
    ///
    /// Large problems expand the folded Gaussian sum in Hermite functions
    /// about the centers of boxes of width `b`, which costs
    /// `O((atoms + targets) * boxes)` instead of `O(atoms * targets)`.
    pub fn rates(&self, ts: &[f64]) -> Vec<f64> {
        if self.locations.len().saturating_mul(ts.len()) < DIRECT_PAIRS {
            return ts.iter().map(|&t| self.rate(t)).collect();
        }
        let b = self.bandwidth;
        let r = self.stopping_time;
        let w = self.window();
        let h = std::f64::consts::SQRT_2 * b;
        let lo = -w;
        let nb = ((r + 2.0 * w) / b).ceil() as usize + 1;
        let center = |k: usize| lo + (k as f64 + 0.5) * b;
        let mut coef = vec![[0.0f64; HERMITE_TERMS]; nb];
        let mut used = vec![false; nb];
        let mut inv_fact = [1.0f64; HERMITE_TERMS];
        for n in 1..HERMITE_TERMS {
            inv_fact[n] = inv_fact[n - 1] / n as f64;
        }
        for (&x, &m) in self.locations.iter().zip(&self.masses) {
            if m == 0.0 {
                continue;
            }
            for k in self.shift_range() {
                let shift = 2.0 * k as f64 * r;
                for p in [x + shift, shift - x] {
                    if p < lo || p > r + w {
                        continue;
                    }
                    let kb = (((p - lo) / b) as usize).min(nb - 1);
                    let d = (p - center(kb)) / h;
                    let mut pow = m;
                    for (n, c) in coef[kb].iter_mut().enumerate() {
                        *c += pow * inv_fact[n];
                        pow *= d;
                    }
                    used[kb] = true;
                }
            }
        }
        let scale = INV_SQRT_2PI / b;
        ts.iter()
            .map(|&t| {
                let first = ((t - w - b - lo) / b).floor().max(0.0) as usize;
                let last = (((t + w + b - lo) / b).ceil() as usize).min(nb - 1);
                let mut total = 0.0;
                for kb in first..=last {
                    if !used[kb] {
                        continue;
                    }
                    let u = (t - center(kb)) / h;
                    let a = &coef[kb];
                    // Hermite polynomials by the forward recurrence
                    let (mut h0, mut h1) = (1.0, 2.0 * u);
                    let mut s = a[0] + a[1] * h1;
                    for (n, &c) in a.iter().enumerate().skip(2) {
                        let h2 = 2.0 * u * h1 - 2.0 * (n - 1) as f64 * h0;
                        s += c * h2;
                        h0 = h1;
                        h1 = h2;
                    }
                    total += (-u * u).exp() * s;
                }
                (total * scale).max(0.0)
            })
            .collect()
    }

    /// `int_0^t mu(s) ds` for `t` in `[0, r]`.
    pub fn cumulative(&self, t: f64) -> f64 {
        let r = self.stopping_time;
        let w = self.window();
        let t = t.clamp(0.0, r);
        let near = [
            self.index_range(0.0, w),
            self.index_range(t - w, t + w),
            self.index_range(r - w, r),
        ];
        let exact = merge_ranges(near.into_iter().filter(|(a, b)| a < b).collect());
        // atoms strictly below t - w carry their whole mass into (0, t]
        let below = self.locations.partition_point(|&x| x < t - w);
        let mut total = self.prefix[below];
        for &(a, b) in &exact {
            let a_clip = a.min(below);
            let b_clip = b.min(below);
            total -= self.prefix[b_clip] - self.prefix[a_clip];
            for i in a..b {
                total += self.masses[i] * self.atom_cdf(self.locations[i], t);
            }
        }
        total
    }

    /// `int_a^b mu(s) ds`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.cumulative(b) - self.cumulative(a)
    }

    /// Samples `(t, mu(t))` on a uniform grid of `points` values over `[0, r]`.
    pub fn grid(&self, points: usize) -> Vec<(f64, f64)> {
        let points = points.max(2);
        (0..points)
            .map(|i| {
                let t = self.stopping_time * i as f64 / (points - 1) as f64;
                (t, self.rate(t))
            })
            .collect()
    }

    /// Maximum of the intensity, bounded by the total mass times the peak of
    /// a folded unit kernel.
    pub fn upper_bound(&self) -> f64 {
        let per_atom = 2.0 * INV_SQRT_2PI / self.bandwidth
            * (1.0 + self.bandwidth / self.stopping_time * 2.0);
        self.total_mass() * per_atom
    }
}

fn merge_ranges(mut ranges: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    ranges.sort_unstable();
    let mut out: Vec<(usize, usize)> = Vec::with_capacity(ranges.len());
    for (a, b) in ranges {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}
