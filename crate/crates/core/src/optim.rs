//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Minimizes a smooth objective that reports its value and gradient.
//! Non-finite values mark infeasible points; the line search backs off
//! from them.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when `|f_k - f_{k+1}| <= f_rel_tol * max(|f_{k+1}|, 1)`.
    pub f_rel_tol: f64,
    /// Stop when the step's max-norm falls below this.
    pub x_tol: f64,
    /// Stop when the gradient's max-norm falls below this.
    pub g_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 8,
            max_iter: 500,
            f_rel_tol: 1e-8,
            x_tol: 1e-8,
            g_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

struct Objective<F> {
    f: F,
    evaluations: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Objective<F> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evaluations += 1;
        let v = (self.f)(x, g);
        if v.is_finite() && g.iter().all(|d| d.is_finite()) {
            v
        } else {
            f64::INFINITY
        }
    }
}

struct Point {
    alpha: f64,
    f: f64,
    slope: f64,
}

/// Strong-Wolfe line search along `dir`; on success `x_new`, `g_new` hold
/// the accepted point and its value is returned.
#[allow(clippy::too_many_arguments)]
fn line_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    obj: &mut Objective<F>,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    dir: &[f64],
    alpha_init: f64,
    x_new: &mut [f64],
    g_new: &mut [f64],
) -> Option<f64> {
    let slope0 = dot(g0, dir);
    if !(slope0 < 0.0) {
        return None;
    }
    let mut probe = |alpha: f64, xn: &mut [f64], gn: &mut [f64]| -> Point {
        for i in 0..x.len() {
            xn[i] = x[i] + alpha * dir[i];
        }
        let f = obj.eval(xn, gn);
        let slope = if f.is_finite() { dot(gn, dir) } else { f64::NAN };
        Point { alpha, f, slope }
    };

    let armijo = |p: &Point| p.f.is_finite() && p.f <= f0 + C1 * p.alpha * slope0;
    let curvature = |p: &Point| p.slope.abs() <= -C2 * slope0;

    let mut prev = Point {
        alpha: 0.0,
        f: f0,
        slope: slope0,
    };
    let mut alpha = alpha_init;
    let mut best_lo: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    let (mut lo, mut hi);
    let mut i = 0;
    loop {
        let cur = probe(alpha, x_new, g_new);
        if !armijo(&cur) || (i > 0 && cur.f >= prev.f) {
            lo = prev;
            hi = cur;
            break;
        }
        if curvature(&cur) {
            return Some(cur.f);
        }
        if cur.slope >= 0.0 {
            best_lo = Some((x_new.to_vec(), g_new.to_vec(), cur.f));
            hi = prev;
            lo = cur;
            break;
        }
        best_lo = Some((x_new.to_vec(), g_new.to_vec(), cur.f));
        prev = cur;
        alpha *= 2.0;
        i += 1;
        if i >= 30 {
            let (xb, gb, fb) = best_lo?;
            x_new.copy_from_slice(&xb);
            g_new.copy_from_slice(&gb);
            return Some(fb);
        }
    }

    // zoom
    for _ in 0..40 {
        let (a, b) = (lo.alpha, hi.alpha);
        let width = b - a;
        let mut trial = if hi.f.is_finite() && lo.slope.is_finite() {
            // minimizer of the quadratic through (a, f_lo, slope_lo) and (b, f_hi)
            let denom = 2.0 * (hi.f - lo.f - lo.slope * width);
            if denom > 0.0 {
                a - lo.slope * width * width / denom
            } else {
                a + 0.5 * width
            }
        } else {
            a + 0.5 * width
        };
        let (lo_b, hi_b) = if a < b {
            (a + 0.1 * width, b - 0.1 * width)
        } else {
            (b - 0.1 * width, a + 0.1 * width)
        };
        if !(trial >= lo_b.min(hi_b) && trial <= lo_b.max(hi_b)) {
            trial = a + 0.5 * width;
        }
        if width.abs() < 1e-16 * a.abs().max(1.0) {
            break;
        }
        let cur = probe(trial, x_new, g_new);
        if !armijo(&cur) || cur.f >= lo.f {
            hi = cur;
        } else {
            if curvature(&cur) {
                return Some(cur.f);
            }
            best_lo = Some((x_new.to_vec(), g_new.to_vec(), cur.f));
            if cur.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    let (xb, gb, fb) = best_lo?;
    x_new.copy_from_slice(&xb);
    g_new.copy_from_slice(&gb);
    Some(fb)
}

/// Minimizes `f` starting at `x0`. `f(x, grad)` returns the value and fills
/// the gradient.
pub fn minimize<F>(f: F, x0: &[f64], opts: &LbfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut obj = Objective { f, evaluations: 0 };
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = obj.eval(&x, &mut g);
    let finish = |x: Vec<f64>, f: f64, iterations, evaluations, converged| Minimum {
        x,
        f,
        iterations,
        evaluations,
        converged,
    };
    if !fx.is_finite() {
        return finish(x, fx, 0, obj.evaluations, false);
    }
    if n == 0 {
        return finish(x, fx, 0, obj.evaluations, true);
    }
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut alpha_buf = vec![0.0; opts.memory];

    for iter in 0..opts.max_iter {
        if max_abs(&g) <= opts.g_tol {
            return finish(x, fx, iter, obj.evaluations, true);
        }
        // two-loop recursion
        dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
        for (j, (s, y, rho)) in memory.iter().enumerate().rev() {
            let a = rho * dot(s, &dir);
            alpha_buf[j] = a;
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= a * yi);
        }
        if let Some((s, y, _)) = memory.back() {
            let scale = dot(s, y) / dot(y, y);
            dir.iter_mut().for_each(|d| *d *= scale);
        }
        for (j, (s, y, rho)) in memory.iter().enumerate() {
            let b = rho * dot(y, &dir);
            let a = alpha_buf[j];
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (a - b) * si);
        }
        let alpha_init = if memory.is_empty() {
            (1.0 / max_abs(&dir)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = line_search(&mut obj, &x, fx, &g, &dir, alpha_init, &mut x_new, &mut g_new);
        if accepted.is_none() && !memory.is_empty() {
            memory.clear();
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            let a0 = (1.0 / max_abs(&dir)).min(1.0);
            accepted = line_search(&mut obj, &x, fx, &g, &dir, a0, &mut x_new, &mut g_new);
        }
        let Some(f_new) = accepted else {
            // No further decrease is attainable at working precision.
            let ok = max_abs(&g) <= 1e-3;
            return finish(x, fx, iter, obj.evaluations, ok);
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s.clone(), y, 1.0 / sy));
        }
        let f_change = (fx - f_new).abs();
        let step = max_abs(&s);
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
        if f_change <= opts.f_rel_tol * fx.abs().max(1.0) || step <= opts.x_tol {
            return finish(x, fx, iter + 1, obj.evaluations, true);
        }
    }
    finish(x, fx, opts.max_iter, obj.evaluations, false)
}

/// Central-difference gradient of `f` at `x`; returns `f(x)`.
pub fn numeric_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], grad: &mut [f64]) -> f64 {
    let fx = f(x);
    if !fx.is_finite() {
        return fx;
    }
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-5 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    fx
}
