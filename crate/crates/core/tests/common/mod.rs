//! Independent reference implementations used by the integration tests.
//!
//! Everything here works on the explicit stacked observation vector:
//! `V = Z G Zᵀ + R` is formed as a dense matrix and the Gaussian density is
//! evaluated directly, with no use of the library's low-rank algebra.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splineperm::{Dataset, Subject};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Knots `lo + c (hi - lo) / (C + 1)`, c = 1..C.
pub fn interior_knots(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (1..=count)
        .map(|c| lo + c as f64 * (hi - lo) / (count + 1) as f64)
        .collect()
}

pub struct Dense {
    pub y: DVector<f64>,
    /// column `k * q + a`: fixed effect `a` of outcome `k`
    pub x: DMatrix<f64>,
    /// column `k * C + c`: knot `c` of outcome `k`
    pub z: DMatrix<f64>,
    /// (subject, outcome) of each stacked row
    pub rows: Vec<(usize, usize)>,
    pub q: usize,
    pub k: usize,
}

pub fn dense(ds: &Dataset, knots: &[f64], include_s: bool) -> Dense {
    let k = ds.k();
    let q = 1 + ds.p() + usize::from(include_s);
    let c = if include_s { knots.len() } else { 0 };
    let mut rows = Vec::new();
    for (i, subj) in ds.subjects().iter().enumerate() {
        for kk in 0..k {
            if subj.y[kk].is_some() {
                rows.push((i, kk));
            }
        }
    }
    let n = rows.len();
    let mut y = DVector::zeros(n);
    let mut x = DMatrix::zeros(n, q * k);
    let mut z = DMatrix::zeros(n, c * k);
    for (row, &(i, kk)) in rows.iter().enumerate() {
        let subj = &ds.subjects()[i];
        y[row] = subj.y[kk].unwrap();
        x[(row, kk * q)] = 1.0;
        for (a, v) in subj.x.iter().enumerate() {
            x[(row, kk * q + 1 + a)] = *v;
        }
        if include_s {
            x[(row, kk * q + q - 1)] = subj.s;
            for (cc, kn) in knots.iter().enumerate() {
                z[(row, kk * c + cc)] = (subj.s - kn).max(0.0);
            }
        }
    }
    Dense { y, x, z, rows, q, k }
}

impl Dense {
    pub fn v(&self, spline_var: &[f64], sigma: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.rows.len();
        let mut v = DMatrix::from_fn(n, n, |a, b| {
            let (i, j) = self.rows[a];
            let (i2, j2) = self.rows[b];
            if i == i2 {
                sigma[(j, j2)]
            } else {
                0.0
            }
        });
        if !spline_var.is_empty() && self.z.ncols() > 0 {
            let c = self.z.ncols() / self.k;
            let g = DMatrix::from_fn(c * self.k, c * self.k, |a, b| {
                if a == b {
                    spline_var[a / c]
                } else {
                    0.0
                }
            });
            v += &self.z * g * self.z.transpose();
        }
        v
    }

    /// Log-density of `y` at fixed `beta` (q x K); REML adds the usual
    /// `-½ log|Xᵀ V⁻¹ X|` and adjusts the constant.
    pub fn loglik(&self, beta: &DMatrix<f64>, spline_var: &[f64], sigma: &DMatrix<f64>, reml: bool) -> f64 {
        let v = self.v(spline_var, sigma);
        let b = DVector::from_column_slice(beta.as_slice());
        let r = &self.y - &self.x * b;
        let vinv = v.clone().try_inverse().unwrap();
        let quad = (r.transpose() * &vinv * &r)[0];
        let logdet = v.determinant().ln();
        let n = self.rows.len() as f64;
        if reml {
            let h = self.x.transpose() * &vinv * &self.x;
            let nf = self.x.ncols() as f64;
            -0.5 * ((n - nf) * LN_2PI + logdet + h.determinant().ln() + quad)
        } else {
            -0.5 * (n * LN_2PI + logdet + quad)
        }
    }

    /// GLS estimate of `beta` (q x K) at the given covariance.
    pub fn gls(&self, spline_var: &[f64], sigma: &DMatrix<f64>) -> DMatrix<f64> {
        let vinv = self.v(spline_var, sigma).try_inverse().unwrap();
        let h = self.x.transpose() * &vinv * &self.x;
        let b = h.try_inverse().unwrap() * self.x.transpose() * &vinv * &self.y;
        DMatrix::from_column_slice(self.q, self.k, b.as_slice())
    }

    pub fn profile(&self, spline_var: &[f64], sigma: &DMatrix<f64>, reml: bool) -> f64 {
        let beta = self.gls(spline_var, sigma);
        self.loglik(&beta, spline_var, sigma, reml)
    }

    /// `G Zᵀ V⁻¹ (y - X β)` as C x K.
    pub fn blup(&self, beta: &DMatrix<f64>, spline_var: &[f64], sigma: &DMatrix<f64>) -> DMatrix<f64> {
        let c = self.z.ncols() / self.k;
        let vinv = self.v(spline_var, sigma).try_inverse().unwrap();
        let b = DVector::from_column_slice(beta.as_slice());
        let u = self.z.transpose() * vinv * (&self.y - &self.x * b);
        DMatrix::from_fn(c, self.k, |cc, kk| spline_var[kk] * u[kk * c + cc])
    }
}

/// Symmetric positive-definite matrix from an unconstrained vector via a
/// Cholesky factor with exponentiated diagonal.
pub fn sigma_from(params: &[f64], k: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(k, k);
    let mut idx = 0;
    for i in 0..k {
        for j in 0..=i {
            l[(i, j)] = if i == j { params[idx].exp() } else { params[idx] };
            idx += 1;
        }
    }
    &l * l.transpose()
}

/// Derivative-free Nelder–Mead minimization with restarts.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], step: f64, iters: usize, restarts: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut best = x0.to_vec();
    let mut fbest = f(&best);
    for _ in 0..=restarts {
        let mut simplex: Vec<Vec<f64>> = vec![best.clone()];
        for i in 0..n {
            let mut p = best.clone();
            p[i] += step;
            simplex.push(p);
        }
        let mut vals: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
        for _ in 0..iters {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            vals = order.iter().map(|&i| vals[i]).collect();
            if (vals[n] - vals[0]).abs() < 1e-13 {
                break;
            }
            let centroid: Vec<f64> = (0..n)
                .map(|d| simplex[..n].iter().map(|p| p[d]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                (0..n)
                    .map(|d| centroid[d] + t * (simplex[n][d] - centroid[d]))
                    .collect()
            };
            let xr = along(-1.0);
            let fr = f(&xr);
            if fr < vals[0] {
                let xe = along(-2.0);
                let fe = f(&xe);
                if fe < fr {
                    simplex[n] = xe;
                    vals[n] = fe;
                } else {
                    simplex[n] = xr;
                    vals[n] = fr;
                }
            } else if fr < vals[n - 1] {
                simplex[n] = xr;
                vals[n] = fr;
            } else {
                let xc = if fr < vals[n] { along(-0.5) } else { along(0.5) };
                let fc = f(&xc);
                if fc < vals[n].min(fr) {
                    simplex[n] = xc;
                    vals[n] = fc;
                } else {
                    for i in 1..=n {
                        simplex[i] = (0..n)
                            .map(|d| simplex[0][d] + 0.5 * (simplex[i][d] - simplex[0][d]))
                            .collect();
                        vals[i] = f(&simplex[i]);
                    }
                }
            }
        }
        let i = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        if vals[i] <= fbest {
            fbest = vals[i];
            best = simplex[i].clone();
        }
    }
    (best, fbest)
}

/// Small random dataset: `n` subjects, `k` outcomes, `p` covariates, s in
/// [-2, 2], optionally with some outcomes missing.
pub fn random_dataset(seed: u64, n: usize, k: usize, p: usize, missing: bool) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = (0..n)
        .map(|i| {
            let s = rng.random_range(-2.0..2.0);
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut y: Vec<Option<f64>> = (0..k)
                .map(|kk| Some((s * (kk as f64 + 1.0)).sin() + rng.random_range(-1.0..1.0)))
                .collect();
            if missing && k > 1 && i % 3 == 1 {
                y[i % k] = None;
            }
            Subject::new(format!("s{i}"), s, x, y)
        })
        .collect();
    Dataset::from_subjects(subjects)
}

/// Random symmetric positive-definite K x K matrix.
pub fn random_sigma(seed: u64, k: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let a = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(k, k) * 0.5
}

pub struct BruteForce {
    pub loglik: f64,
    pub spline_var: Vec<f64>,
    pub sigma: DMatrix<f64>,
    /// The optimum is interior: Σ well conditioned and spline variances
    /// bounded. Otherwise the likelihood is taken to be unbounded.
    pub regular: bool,
}

/// Bivariate ML alternative fit by Nelder–Mead from a spread of starts over
/// (τ1, τ2, log-Cholesky Σ), with σ²_a = τ² and β profiled by GLS.
pub fn brute_force_alt(d: &Dense) -> BruteForce {
    assert_eq!(d.k, 2);
    let objective = |t: &[f64]| {
        let v = -d.profile(&[t[0] * t[0], t[1] * t[1]], &sigma_from(&t[2..], 2), false);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let mut best = (Vec::new(), f64::INFINITY);
    for tau in [[0.0, 0.0], [0.5, 0.5], [0.1, 1.0], [1.0, 0.1], [3.0, 0.1], [0.1, 3.0], [3.0, 3.0]] {
        for logsd in [-0.5, -2.0] {
            let x0 = [tau[0], tau[1], logsd, 0.0, logsd];
            let run = nelder_mead(objective, &x0, 0.3, 6000, 4);
            if run.1 < best.1 {
                best = run;
            }
        }
    }
    let t = best.0;
    let spline_var = vec![t[0] * t[0], t[1] * t[1]];
    let sigma = sigma_from(&t[2..], 2);
    let eig = sigma.clone().symmetric_eigen().eigenvalues;
    let cond = eig.max() / eig.min();
    let regular = cond < 1e6 && spline_var.iter().all(|v| *v < 1e4);
    BruteForce {
        loglik: -best.1,
        spline_var,
        sigma,
        regular,
    }
}
