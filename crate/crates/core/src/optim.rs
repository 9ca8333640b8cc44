//! Bounded quasi-Newton maximization and one-dimensional search.
//!
//! Parameters are usually logarithms of positive quantities, so the box
//! constraints are plain coordinate bounds. The BFGS update works on the
//! inverse Hessian; steps are projected onto the box and accepted by an
//! Armijo backtracking rule. Non-finite objective values are treated as
//! infeasible and shrink the step.

/// A function to maximize. Implement `value_and_gradient` when an analytic
/// gradient exists; the default uses central differences.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;

    fn value_and_gradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let f = self.value(x);
        (f, fd_gradient(|y| self.value(y), x))
    }
}

/// Adapter for closures without gradients.
pub struct FnObjective<F: Fn(&[f64]) -> f64>(pub F);

impl<F: Fn(&[f64]) -> f64> Objective for FnObjective<F> {
    fn value(&self, x: &[f64]) -> f64 {
        (self.0)(x)
    }
}

pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        g[i] = match (fp.is_finite(), fm.is_finite()) {
            (true, true) => (fp - fm) / (2.0 * h),
            (true, false) => (fp - f(x)) / h,
            (false, true) => (f(x) - fm) / h,
            (false, false) => 0.0,
        };
    }
    g
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Stop when the projected gradient's largest component is below this.
    pub grad_tol: f64,
    /// Stop when the relative objective change is below this twice in a row.
    pub value_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            grad_tol: 1e-8,
            value_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn neg(v: f64) -> f64 {
    if v.is_finite() {
        -v
    } else {
        f64::INFINITY
    }
}

/// Maximizes `obj` over the box `[lo, hi]` from `x0`.
pub fn maximize(
    obj: &dyn Objective,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &BfgsOptions,
) -> OptimResult {
    let d = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (fv, gv) = obj.value_and_gradient(&x);
    let mut f = neg(fv);
    if !f.is_finite() {
        return OptimResult {
            x,
            value: fv,
            iterations: 0,
            converged: false,
        };
    }
    let mut g: Vec<f64> = gv.iter().map(|v| -v).collect();
    let identity = |d: usize| {
        let mut h = vec![0.0; d * d];
        for i in 0..d {
            h[i * d + i] = 1.0;
        }
        h
    };
    let mut hinv = identity(d);
    let mut fresh = true;
    let mut small_changes = 0;
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..opts.max_iterations {
        iterations = it + 1;
        // projected gradient test
        let pg = (0..d)
            .map(|i| ((x[i] - g[i]).clamp(lo[i], hi[i]) - x[i]).abs())
            .fold(0.0, f64::max);
        if pg < opts.grad_tol {
            converged = true;
            break;
        }
        let free: Vec<bool> = (0..d)
            .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
            .collect();
        let mut dir = vec![0.0; d];
        for i in 0..d {
            if !free[i] {
                continue;
            }
            let mut s = 0.0;
            for j in 0..d {
                if free[j] {
                    s -= hinv[i * d + j] * g[j];
                }
            }
            dir[i] = s;
        }
        let mut slope: f64 = (0..d).map(|i| dir[i] * g[i]).sum();
        if !(slope < 0.0) {
            hinv = identity(d);
            fresh = true;
            for i in 0..d {
                dir[i] = if free[i] { -g[i] } else { 0.0 };
            }
            slope = (0..d).map(|i| dir[i] * g[i]).sum();
            if !(slope < 0.0) {
                converged = true;
                break;
            }
        }
        // cap the first step of a fresh metric
        if fresh {
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1.0 {
                for v in &mut dir {
                    *v /= norm;
                }
            }
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = (0..d).map(|i| x[i] + step * dir[i]).collect();
            project(&mut xn, lo, hi);
            let decrease: f64 = (0..d).map(|i| g[i] * (xn[i] - x[i])).sum();
            let fnew = neg(obj.value(&xn));
            if fnew.is_finite() && fnew <= f + 1e-4 * decrease {
                accepted = Some((xn, fnew));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if fresh {
                break;
            }
            hinv = identity(d);
            fresh = true;
            continue;
        };
        let (fv2, gv2) = obj.value_and_gradient(&xn);
        let gn: Vec<f64> = gv2.iter().map(|v| -v).collect();
        let fnew = if fv2.is_finite() { -fv2 } else { fnew };
        let s: Vec<f64> = (0..d).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..d).map(|i| gn[i] - g[i]).collect();
        let sy: f64 = (0..d).map(|i| s[i] * y[i]).sum();
        let snorm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if sy > 1e-12 * snorm * ynorm && gn.iter().all(|v| v.is_finite()) {
            if fresh {
                // scale the initial metric
                let yy: f64 = y.iter().map(|v| v * v).sum();
                let scale = sy / yy;
                for v in &mut hinv {
                    *v *= scale;
                }
            }
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..d)
                .map(|i| (0..d).map(|j| hinv[i * d + j] * y[j]).sum())
                .collect();
            let yhy: f64 = (0..d).map(|i| y[i] * hy[i]).sum();
            for i in 0..d {
                for j in 0..d {
                    hinv[i * d + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            fresh = false;
        }
        let rel = (f - fnew).abs() / (1.0 + f.abs());
        x = xn;
        f = fnew;
        g = gn;
        if rel < opts.value_tol || snorm < 1e-14 {
            small_changes += 1;
            if small_changes >= 2 {
                converged = true;
                break;
            }
        } else {
            small_changes = 0;
        }
    }
    OptimResult {
        x,
        value: -f,
        iterations,
        converged,
    }
}

/// Maximizes `f` on `[lo, hi]`: a coarse grid locates the best bracket,
/// then golden-section search refines it to `tol`.
pub fn maximize_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    const GRID: usize = 24;
    let eval = |x: f64| {
        let v = f(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let pts: Vec<f64> = (0..=GRID)
        .map(|k| lo + (hi - lo) * k as f64 / GRID as f64)
        .collect();
    let vals: Vec<f64> = pts.iter().map(|&x| eval(x)).collect();
    let best = (0..=GRID)
        .max_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap();
    let mut a = pts[best.saturating_sub(1)];
    let mut b = pts[(best + 1).min(GRID)];
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = eval(c);
    let mut fd = eval(d);
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = eval(d);
        }
    }
    let mut x = 0.5 * (a + b);
    let mut fx = eval(x);
    for (&p, &v) in pts.iter().zip(&vals) {
        if v > fx {
            x = p;
            fx = v;
        }
    }
    (x, fx)
}
