//! Marginal likelihood through the capacity matrix of the random effects.
//!
//! With `R` block-diagonal by subject and `V = R + Z G Zᵀ`,
//! `V⁻¹ = R⁻¹ - R⁻¹ Z Γ M⁻¹ Γ Zᵀ R⁻¹` and `log|V| = log|R| + log|M|` where
//! `Γ = G^{1/2}` and `M = I + Γ Zᵀ R⁻¹ Z Γ` is at most CK x CK. Blocks of
//! outcomes whose spline variance is zero contribute identity rows to `M`
//! and are dropped. Works for any missingness pattern.

use nalgebra::{DMatrix, DVector};

use super::params::CovParams;
use super::stats::SuffStats;
use crate::error::{Error, Result};
use crate::model::Estimation;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A GLS quadratic form below `-QUAD_TOL · yᵀV⁻¹y` signals lost precision.
pub(crate) const QUAD_TOL: f64 = 1e-8;

pub(crate) struct WoodburyEngine<'a> {
    stats: &'a SuffStats,
}

/// Generalized-least-squares pieces at fixed covariance parameters.
struct Pieces {
    /// Xᵀ V⁻¹ X (qK x qK)
    h: DMatrix<f64>,
    /// Xᵀ V⁻¹ y
    hy: DVector<f64>,
    /// yᵀ V⁻¹ y
    yvy: f64,
    logdet_v: f64,
    /// Present when some spline variance is positive.
    random: Option<RandomPart>,
}

struct RandomPart {
    /// Active outcome blocks (σ²_ak > 0).
    active: Vec<usize>,
    m_chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    /// Γ Zᵀ R⁻¹ X restricted to active blocks
    f: DMatrix<f64>,
    /// Γ Zᵀ R⁻¹ y restricted to active blocks
    fy: DVector<f64>,
    gamma: DVector<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Profile {
    pub loglik: f64,
    /// q x K
    pub beta: DMatrix<f64>,
}

impl<'a> WoodburyEngine<'a> {
    pub fn new(stats: &'a SuffStats) -> Self {
        Self { stats }
    }

    fn pieces(&self, params: &CovParams) -> Result<Pieces> {
        let st = self.stats;
        let (k, q, c) = (st.k, st.q, st.c);
        if params.k() != k {
            return Err(Error::Dimension(format!(
                "covariance has {} outcomes, data has {k}",
                params.k()
            )));
        }
        if !params.well_conditioned() {
            return Err(Error::SingularCovariance);
        }
        let sigma = params.sigma();
        let use_random = params.has_spline() && c > 0;
        let active: Vec<usize> = if use_random {
            (0..k).filter(|&kk| params.spline_var[kk] > 0.0).collect()
        } else {
            Vec::new()
        };
        let na = active.len();
        let dim_x = q * k;
        let dim_z = c * na;

        let mut a_xx = DMatrix::zeros(dim_x, dim_x);
        let mut a_xy = DVector::zeros(dim_x);
        let mut a_zz = DMatrix::zeros(dim_z, dim_z);
        let mut a_zx = DMatrix::zeros(dim_z, dim_x);
        let mut a_zy = DVector::zeros(dim_z);
        let mut a_yy = 0.0;
        let mut logdet_r = 0.0;
        // position of outcome kk among active blocks
        let mut slot = vec![usize::MAX; k];
        for (i, &kk) in active.iter().enumerate() {
            slot[kk] = i;
        }

        for pat in &st.patterns {
            let obs = &pat.observed;
            let sub = DMatrix::from_fn(obs.len(), obs.len(), |a, b| sigma[(obs[a], obs[b])]);
            let chol = sub.cholesky().ok_or(Error::SingularCovariance)?;
            logdet_r += pat.count as f64 * 2.0 * chol.l_dirty().diagonal().iter().map(|d: &f64| d.ln()).sum::<f64>();
            let inv = chol.inverse();
            // W restricted to observed outcomes; sxy W, szy W only need observed columns.
            for (a, &j) in obs.iter().enumerate() {
                for (b, &kk) in obs.iter().enumerate() {
                    let w = inv[(a, b)];
                    a_yy += w * pat.syy[(kk, j)];
                    for r in 0..q {
                        a_xy[j * q + r] += w * pat.sxy[(r, kk)];
                        for s in 0..q {
                            a_xx[(j * q + r, kk * q + s)] += w * pat.sxx[(r, s)];
                        }
                    }
                    if slot[j] != usize::MAX {
                        let zj = slot[j] * c;
                        for r in 0..c {
                            a_zy[zj + r] += w * pat.szy[(r, kk)];
                            for s in 0..q {
                                a_zx[(zj + r, kk * q + s)] += w * pat.szx[(r, s)];
                            }
                        }
                        if slot[kk] != usize::MAX {
                            let zk = slot[kk] * c;
                            for r in 0..c {
                                for s in 0..c {
                                    a_zz[(zj + r, zk + s)] += w * pat.szz[(r, s)];
                                }
                            }
                        }
                    }
                }
            }
        }

        if na == 0 {
            return Ok(Pieces {
                h: a_xx,
                hy: a_xy,
                yvy: a_yy,
                logdet_v: logdet_r,
                random: None,
            });
        }

        let gamma = DVector::from_fn(dim_z, |i, _| params.spline_var[active[i / c]].sqrt());
        let mut m = a_zz;
        for i in 0..dim_z {
            for j in 0..dim_z {
                m[(i, j)] *= gamma[i] * gamma[j];
            }
            m[(i, i)] += 1.0;
        }
        let m_chol = m.cholesky().ok_or(Error::SingularCovariance)?;
        let logdet_m = 2.0 * m_chol.l_dirty().diagonal().iter().map(|d: &f64| d.ln()).sum::<f64>();
        let mut f = a_zx;
        for i in 0..dim_z {
            f.row_mut(i).scale_mut(gamma[i]);
        }
        let fy = a_zy.component_mul(&gamma);
        let minv_f = m_chol.solve(&f);
        let minv_fy = m_chol.solve(&fy);
        let h = a_xx - f.transpose() * &minv_f;
        let hy = a_xy - f.transpose() * &minv_fy;
        let yvy = a_yy - fy.dot(&minv_fy);
        Ok(Pieces {
            h,
            hy,
            yvy,
            logdet_v: logdet_r + logdet_m,
            random: Some(RandomPart {
                active,
                m_chol,
                f,
                fy,
                gamma,
            }),
        })
    }

    fn n_fixed(&self) -> usize {
        self.stats.q * self.stats.k
    }

    /// Log-likelihood at fixed `beta` (q x K).
    pub fn loglik_at(&self, params: &CovParams, beta: &DMatrix<f64>, estimation: Estimation) -> Result<f64> {
        let st = self.stats;
        if beta.nrows() != st.q || beta.ncols() != st.k {
            return Err(Error::Dimension(format!(
                "beta is {}x{}, expected {}x{}",
                beta.nrows(),
                beta.ncols(),
                st.q,
                st.k
            )));
        }
        let p = self.pieces(params)?;
        let b = DVector::from_column_slice(beta.as_slice());
        let quad = p.yvy - 2.0 * b.dot(&p.hy) + b.dot(&(&p.h * &b));
        let n = st.n_obs as f64;
        match estimation {
            Estimation::Ml => Ok(-0.5 * (n * LN_2PI + p.logdet_v + quad)),
            Estimation::Reml => {
                let chol = p.h.clone().cholesky().ok_or(Error::SingularCovariance)?;
                let logdet_h = 2.0 * chol.l_dirty().diagonal().iter().map(|d: &f64| d.ln()).sum::<f64>();
                let nf = self.n_fixed() as f64;
                Ok(-0.5 * ((n - nf) * LN_2PI + p.logdet_v + logdet_h + quad))
            }
        }
    }

    /// Log-likelihood maximized over the fixed effects (GLS).
    pub fn profile(&self, params: &CovParams, estimation: Estimation) -> Result<Profile> {
        let st = self.stats;
        let p = self.pieces(params)?;
        let chol = p.h.clone().cholesky().ok_or(Error::CollinearCovariates {
            rank: rank_of(&p.h),
            cols: p.h.nrows(),
        })?;
        let b = chol.solve(&p.hy);
        let quad = p.yvy - p.hy.dot(&b);
        if quad < -QUAD_TOL * p.yvy.abs() || !quad.is_finite() {
            return Err(Error::SingularCovariance);
        }
        let n = st.n_obs as f64;
        let loglik = match estimation {
            Estimation::Ml => -0.5 * (n * LN_2PI + p.logdet_v + quad),
            Estimation::Reml => {
                let logdet_h = 2.0 * chol.l_dirty().diagonal().iter().map(|d: &f64| d.ln()).sum::<f64>();
                let nf = self.n_fixed() as f64;
                -0.5 * ((n - nf) * LN_2PI + p.logdet_v + logdet_h + quad)
            }
        };
        Ok(Profile {
            loglik,
            beta: DMatrix::from_column_slice(st.q, st.k, b.as_slice()),
        })
    }

    /// `G Zᵀ V⁻¹ (y - X β)` as a C x K matrix.
    pub fn blup(&self, params: &CovParams, beta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let st = self.stats;
        let mut out = DMatrix::zeros(st.c, st.k);
        let p = self.pieces(params)?;
        let Some(rp) = p.random else {
            return Ok(out);
        };
        let b = DVector::from_column_slice(beta.as_slice());
        let resid = &rp.fy - &rp.f * &b;
        let u = rp.m_chol.solve(&resid).component_mul(&rp.gamma);
        for (i, &kk) in rp.active.iter().enumerate() {
            for cc in 0..st.c {
                out[(cc, kk)] = u[i * st.c + cc];
            }
        }
        Ok(out)
    }
}

pub(crate) fn rank_of(m: &DMatrix<f64>) -> usize {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    eig.eigenvalues
        .iter()
        .filter(|&&v| v.abs() > max * 1e-10)
        .count()
}
