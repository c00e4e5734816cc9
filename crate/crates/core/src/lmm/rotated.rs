//! Balanced-data likelihood in the eigenbasis of the spline design.
//!
//! With every outcome observed, `V = Σ ⊗ I_N + D² ⊗ Z Zᵀ` (D² the diagonal of
//! spline variances). Rotating subjects by the eigenvectors of `Z Zᵀ`
//! splits the NK-dimensional Gaussian into `r = rank(Z)` independent
//! K-vectors with covariance `Σ + λ_c D²` and `N - r` with covariance `Σ`.
//! This is the spectral form of the capacity matrix: it needs only K x K
//! factorizations per evaluation and yields a cheap analytic gradient.

use nalgebra::DMatrix;

use super::params::{chain_to_theta, CovParams};
use super::small;
use super::stats::SuffStats;
use super::woodbury::{Profile, QUAD_TOL};
use crate::error::{Error, Result};
use crate::model::Estimation;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Matrices are stored row-major in flat vectors.
pub(crate) struct RotatedEngine {
    k: usize,
    q: usize,
    n: usize,
    /// Eigenvalues of Zᵀ Z kept as random-effect directions.
    lambda: Vec<f64>,
    /// Rotated fixed-effect rows (r x q).
    xr: Vec<f64>,
    /// Rotated outcomes (r x K).
    yr: Vec<f64>,
    /// Outer products x_c x_cᵀ of the rotated rows (r blocks of q x q).
    pxx: Vec<f64>,
    /// Cross-products over the complement of the spline directions.
    sxx0: Vec<f64>,
    sxy0: Vec<f64>,
    syy0: Vec<f64>,
}

struct Work {
    loglik: f64,
    /// Fixed effects, entry `j * q + a` for outcome j and column a.
    beta: Vec<f64>,
    sigma_inv: Vec<f64>,
    /// r blocks of K x K.
    v_inv: Vec<f64>,
}

fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        out.extend(m.row(i).iter());
    }
    out
}

impl RotatedEngine {
    /// Requires balanced statistics.
    pub fn new(stats: &SuffStats) -> Result<Self> {
        if !stats.is_balanced() {
            return Err(Error::InvalidData("rotated likelihood requires balanced data".into()));
        }
        let pat = &stats.patterns[0];
        let (k, q) = (stats.k, stats.q);
        let (lambda, xr, yr) = if stats.c > 0 {
            let eig = pat.szz.clone().symmetric_eigen();
            let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
            let keep: Vec<usize> = (0..stats.c)
                .filter(|&i| eig.eigenvalues[i] > max * 1e-10 && eig.eigenvalues[i] > 0.0)
                .collect();
            let r = keep.len();
            let mut xr = DMatrix::zeros(r, q);
            let mut yr = DMatrix::zeros(r, k);
            let mut lambda = Vec::with_capacity(r);
            for (row, &i) in keep.iter().enumerate() {
                let l = eig.eigenvalues[i];
                let u = eig.eigenvectors.column(i);
                let scale = 1.0 / l.sqrt();
                xr.row_mut(row).copy_from(&((u.transpose() * &pat.szx) * scale));
                yr.row_mut(row).copy_from(&((u.transpose() * &pat.szy) * scale));
                lambda.push(l);
            }
            (lambda, xr, yr)
        } else {
            (Vec::new(), DMatrix::zeros(0, q), DMatrix::zeros(0, k))
        };
        let sxx0 = &pat.sxx - xr.transpose() * &xr;
        let sxy0 = &pat.sxy - xr.transpose() * &yr;
        let syy0 = &pat.syy - yr.transpose() * &yr;
        let mut pxx = Vec::with_capacity(xr.nrows() * q * q);
        for c in 0..xr.nrows() {
            for a in 0..q {
                for b in 0..q {
                    pxx.push(xr[(c, a)] * xr[(c, b)]);
                }
            }
        }
        Ok(Self {
            k,
            q,
            n: stats.n_subjects,
            lambda,
            pxx,
            xr: flatten(&xr),
            yr: flatten(&yr),
            sxx0: flatten(&sxx0),
            sxy0: flatten(&sxy0),
            syy0: flatten(&syy0),
        })
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    fn work(&self, params: &CovParams, estimation: Estimation) -> Result<Work> {
        let (k, q) = (self.k, self.q);
        if !params.well_conditioned() {
            return Err(Error::SingularCovariance);
        }
        let kk2 = k * k;
        let l = flatten(&params.sigma_chol);
        let mut logdet_sigma = 0.0;
        for j in 0..k {
            if !(l[j * k + j] > 0.0) {
                return Err(Error::SingularCovariance);
            }
            logdet_sigma += 2.0 * l[j * k + j].ln();
        }
        let mut sigma_inv = vec![0.0; kk2];
        small::inverse(&l, k, &mut sigma_inv);
        let mut sigma = vec![0.0; kk2];
        for i in 0..k {
            for j in 0..=i {
                let v: f64 = (0..=j).map(|t| l[i * k + t] * l[j * k + t]).sum();
                sigma[i * k + j] = v;
                sigma[j * k + i] = v;
            }
        }
        let r = self.rank();
        let n0 = (self.n - r) as f64;

        let nf = q * k;
        let mut h = vec![0.0; nf * nf];
        let mut hy = vec![0.0; nf];
        let mut yvy = 0.0;
        for j in 0..k {
            for m in 0..k {
                let w = sigma_inv[j * k + m];
                yvy += w * self.syy0[m * k + j];
                for a in 0..q {
                    hy[j * q + a] += w * self.sxy0[a * k + m];
                }
            }
        }
        let mut logdet_v = n0 * logdet_sigma;

        let has_spline = params.has_spline();
        let mut v_inv = vec![0.0; r * kk2];
        let mut v = vec![0.0; kk2];
        let mut viy = vec![0.0; k];
        for c in 0..r {
            let vi = &mut v_inv[c * kk2..(c + 1) * kk2];
            if has_spline {
                v.copy_from_slice(&sigma);
                for j in 0..k {
                    v[j * k + j] += self.lambda[c] * params.spline_var[j];
                }
                logdet_v += small::cholesky(&mut v, k).ok_or(Error::SingularCovariance)?;
                small::inverse(&v, k, vi);
            } else {
                logdet_v += logdet_sigma;
                vi.copy_from_slice(&sigma_inv);
            }
            let x = &self.xr[c * q..(c + 1) * q];
            let y = &self.yr[c * k..(c + 1) * k];
            for j in 0..k {
                viy[j] = (0..k).map(|m| vi[j * k + m] * y[m]).sum();
                yvy += y[j] * viy[j];
            }
            for j in 0..k {
                for a in 0..q {
                    hy[j * q + a] += x[a] * viy[j];
                }
            }
        }
        // H = Σ⁻¹ ⊗ Sxx0 + Σ_c V_c⁻¹ ⊗ x_c x_cᵀ; only the lower block
        // triangle is read by the factorization.
        let qq = q * q;
        let mut acc = vec![0.0; qq];
        for j in 0..k {
            for m in 0..=j {
                let w0 = sigma_inv[j * k + m];
                for (t, v) in acc.iter_mut().enumerate() {
                    *v = w0 * self.sxx0[t];
                }
                for (vi, p) in v_inv.chunks_exact(kk2).zip(self.pxx.chunks_exact(qq)) {
                    let w = vi[j * k + m];
                    for (v, pv) in acc.iter_mut().zip(p) {
                        *v += w * pv;
                    }
                }
                for a in 0..q {
                    let row = (j * q + a) * nf + m * q;
                    h[row..row + q].copy_from_slice(&acc[a * q..(a + 1) * q]);
                }
            }
        }

        let logdet_h = small::cholesky(&mut h, nf).ok_or(Error::CollinearCovariates { rank: 0, cols: nf })?;
        let mut beta = hy.clone();
        small::solve(&h, nf, &mut beta);
        let quad = yvy - hy.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
        if quad < -QUAD_TOL * yvy.abs() {
            return Err(Error::SingularCovariance);
        }
        let n_obs = (self.n * k) as f64;
        let loglik = match estimation {
            Estimation::Ml => -0.5 * (n_obs * LN_2PI + logdet_v + quad),
            Estimation::Reml => -0.5 * ((n_obs - nf as f64) * LN_2PI + logdet_v + logdet_h + quad),
        };
        if !loglik.is_finite() {
            return Err(Error::SingularCovariance);
        }
        Ok(Work {
            loglik,
            beta,
            sigma_inv,
            v_inv,
        })
    }

    pub fn profile(&self, params: &CovParams, estimation: Estimation) -> Result<Profile> {
        let w = self.work(params, estimation)?;
        Ok(Profile {
            loglik: w.loglik,
            beta: DMatrix::from_column_slice(self.q, self.k, &w.beta),
        })
    }

    /// Profiled ML log-likelihood at θ and its gradient with respect to θ.
    pub fn profile_with_gradient(&self, theta: &[f64], with_spline: bool, grad: &mut [f64]) -> Result<Profile> {
        let (k, q) = (self.k, self.q);
        let params = &CovParams::from_theta(theta, k, with_spline);
        let w = self.work(params, Estimation::Ml)?;
        let b = &w.beta;
        let kk2 = k * k;
        // Null-space residual cross-product E0 = Syy0 - Sxy0ᵀB - BᵀSxy0 + BᵀSxx0B.
        let mut e0 = self.syy0.clone();
        let mut sxx_b = vec![0.0; q * k];
        for a in 0..q {
            for j in 0..k {
                sxx_b[a * k + j] = (0..q).map(|t| self.sxx0[a * q + t] * b[j * q + t]).sum();
            }
        }
        for i in 0..k {
            for j in 0..k {
                let mut v = 0.0;
                for a in 0..q {
                    v += -self.sxy0[a * k + i] * b[j * q + a] - b[i * q + a] * self.sxy0[a * k + j]
                        + b[i * q + a] * sxx_b[a * k + j];
                }
                e0[i * k + j] += v;
            }
        }
        let n0 = (self.n - self.rank()) as f64;
        let si = &w.sigma_inv;
        let mut tmp = vec![0.0; kk2];
        for i in 0..k {
            for j in 0..k {
                tmp[i * k + j] = (0..k).map(|t| si[i * k + t] * e0[t * k + j]).sum();
            }
        }
        let mut big_w = vec![0.0; kk2];
        for i in 0..k {
            for j in 0..k {
                let sesi: f64 = (0..k).map(|t| tmp[i * k + t] * si[t * k + j]).sum();
                big_w[i * k + j] = n0 * si[i * k + j] - sesi;
            }
        }
        let mut d_var = vec![0.0; if with_spline { k } else { 0 }];
        let mut resid = vec![0.0; k];
        let mut u = vec![0.0; k];
        for c in 0..self.rank() {
            let x = &self.xr[c * q..(c + 1) * q];
            let y = &self.yr[c * k..(c + 1) * k];
            for j in 0..k {
                resid[j] = y[j] - (0..q).map(|a| x[a] * b[j * q + a]).sum::<f64>();
            }
            let vi = &w.v_inv[c * kk2..(c + 1) * kk2];
            for j in 0..k {
                u[j] = (0..k).map(|m| vi[j * k + m] * resid[m]).sum();
            }
            for i in 0..k {
                for j in 0..k {
                    let wc = vi[i * k + j] - u[i] * u[j];
                    big_w[i * k + j] += wc;
                    if i == j && with_spline {
                        d_var[i] += self.lambda[c] * wc;
                    }
                }
            }
        }
        let d_sigma = DMatrix::from_row_slice(k, k, &big_w) * -0.5;
        for d in &mut d_var {
            *d *= -0.5;
        }
        chain_to_theta(params, &theta[..d_var.len()], &d_var, &d_sigma, grad);
        Ok(Profile {
            loglik: w.loglik,
            beta: DMatrix::from_column_slice(q, k, b),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::SplineBasis;
    use crate::lmm::woodbury::WoodburyEngine;
    use crate::optim::numeric_gradient;
    use crate::simgen::{generate, ErrorDist, GammaPattern, SimScenario};

    fn stats() -> SuffStats {
        let ds = generate(&SimScenario::new(40, 3, 0.4, GammaPattern::Uniform, ErrorDist::Normal), 3);
        let basis = SplineBasis::equally_spaced(-2.0, 2.0, 8).unwrap();
        SuffStats::build(&ds, true, Some(&basis))
    }

    fn params() -> CovParams {
        let sigma = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.2, 0.3, 0.9, 0.25, 0.2, 0.25, 1.1]);
        CovParams::from_sigma(vec![0.05, 0.2, 0.01], &sigma).unwrap()
    }

    #[test]
    fn agrees_with_capacity_matrix_engine() {
        let st = stats();
        let p = params();
        for est in [Estimation::Ml, Estimation::Reml] {
            let a = RotatedEngine::new(&st).unwrap().profile(&p, est).unwrap();
            let b = WoodburyEngine::new(&st).profile(&p, est).unwrap();
            assert!((a.loglik - b.loglik).abs() < 1e-8, "{} vs {}", a.loglik, b.loglik);
            assert!((a.beta - b.beta).abs().max() < 1e-8);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let st = stats();
        let e = RotatedEngine::new(&st).unwrap();
        let mut theta = params().to_theta();
        // negative coordinates reach the same variances
        theta[1] = -theta[1];
        let mut g = vec![0.0; theta.len()];
        e.profile_with_gradient(&theta, true, &mut g).unwrap();
        let mut gn = vec![0.0; theta.len()];
        numeric_gradient(
            |t| e.profile(&CovParams::from_theta(t, 3, true), Estimation::Ml).unwrap().loglik,
            &theta,
            &mut gn,
        );
        for (a, b) in g.iter().zip(&gn) {
            assert!((a - b).abs() < 1e-4 * b.abs().max(1.0), "{g:?}\n{gn:?}");
        }
    }
}
