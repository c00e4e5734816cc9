//! Covariance parameters and their unconstrained encoding.
//!
//! The optimizer works on `θ = (τ_1..τ_K, log-Cholesky(Σ))`: spline
//! variances are `σ²_ak = τ_k²`, so `τ_k = 0` (the null boundary) is an
//! interior point of the search space, and `Σ = L Lᵀ` with `L` packed row by
//! row, diagonal entries stored as logarithms.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spline variances plus the Cholesky factor of the residual covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovParams {
    /// Empty for the null model.
    pub spline_var: Vec<f64>,
    /// Lower triangular with strictly positive diagonal.
    pub sigma_chol: DMatrix<f64>,
}

const MAX_CONDITION: f64 = 1e12;

/// Number of packed lower-triangular entries of a K x K factor.
pub(crate) fn tri_len(k: usize) -> usize {
    k * (k + 1) / 2
}

impl CovParams {
    pub fn new(spline_var: Vec<f64>, sigma_chol: DMatrix<f64>) -> Result<Self> {
        let k = sigma_chol.nrows();
        if sigma_chol.ncols() != k {
            return Err(Error::Dimension("Cholesky factor must be square".into()));
        }
        if !spline_var.is_empty() && spline_var.len() != k {
            return Err(Error::Dimension(format!(
                "{} spline variances for {k} outcomes",
                spline_var.len()
            )));
        }
        if spline_var.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config("spline variances must be finite and non-negative".into()));
        }
        for i in 0..k {
            if !(sigma_chol[(i, i)] > 0.0) {
                return Err(Error::SingularCovariance);
            }
            for j in (i + 1)..k {
                if sigma_chol[(i, j)] != 0.0 {
                    return Err(Error::Dimension("Cholesky factor must be lower triangular".into()));
                }
            }
        }
        Ok(Self {
            spline_var,
            sigma_chol,
        })
    }

    /// Factors a symmetric positive-definite `Σ`.
    pub fn from_sigma(spline_var: Vec<f64>, sigma: &DMatrix<f64>) -> Result<Self> {
        let chol = sigma.clone().cholesky().ok_or(Error::SingularCovariance)?;
        Self::new(spline_var, chol.l())
    }

    pub fn k(&self) -> usize {
        self.sigma_chol.nrows()
    }

    pub fn has_spline(&self) -> bool {
        !self.spline_var.is_empty()
    }

    pub fn sigma(&self) -> DMatrix<f64> {
        &self.sigma_chol * self.sigma_chol.transpose()
    }

    /// `false` once `Σ` is too close to singular for the likelihood to be
    /// evaluated reliably. Uses `max Σ_ii · max (Σ⁻¹)_ii`, a lower bound on
    /// the condition number within a factor K of it.
    pub(crate) fn well_conditioned(&self) -> bool {
        let l = &self.sigma_chol;
        let k = l.nrows();
        let Some(linv) = l.clone().solve_lower_triangular(&DMatrix::identity(k, k)) else {
            return false;
        };
        let max_var = (0..k).map(|i| l.row(i).norm_squared()).fold(0.0, f64::max);
        let max_prec = (0..k).map(|i| linv.column(i).norm_squared()).fold(0.0, f64::max);
        max_var * max_prec < MAX_CONDITION
    }

    pub fn n_theta(k: usize, with_spline: bool) -> usize {
        tri_len(k) + if with_spline { k } else { 0 }
    }

    pub(crate) fn to_theta(&self) -> Vec<f64> {
        let k = self.k();
        let mut theta: Vec<f64> = self.spline_var.iter().map(|v| v.sqrt()).collect();
        for i in 0..k {
            for j in 0..=i {
                let l = self.sigma_chol[(i, j)];
                theta.push(if i == j { l.ln() } else { l });
            }
        }
        theta
    }

    pub(crate) fn from_theta(theta: &[f64], k: usize, with_spline: bool) -> Self {
        let offset = if with_spline { k } else { 0 };
        let spline_var = theta[..offset].iter().map(|t| t * t).collect();
        let mut l = DMatrix::zeros(k, k);
        let mut idx = offset;
        for i in 0..k {
            for j in 0..=i {
                l[(i, j)] = if i == j { theta[idx].exp() } else { theta[idx] };
                idx += 1;
            }
        }
        Self {
            spline_var,
            sigma_chol: l,
        }
    }
}

/// Maps `∂ℓ/∂σ²_a` and the symmetric `∂ℓ/∂Σ` to `∂ℓ/∂θ`. `tau` carries the
/// signs of the spline coordinates, which `params` has lost.
pub(crate) fn chain_to_theta(
    params: &CovParams,
    tau: &[f64],
    d_spline_var: &[f64],
    d_sigma: &DMatrix<f64>,
    out: &mut [f64],
) {
    let k = params.k();
    let mut idx = 0;
    for (kk, &d) in d_spline_var.iter().enumerate() {
        out[idx] = 2.0 * tau[kk] * d;
        idx += 1;
    }
    let d_l = 2.0 * d_sigma * &params.sigma_chol;
    for i in 0..k {
        for j in 0..=i {
            out[idx] = if i == j {
                d_l[(i, i)] * params.sigma_chol[(i, i)]
            } else {
                d_l[(i, j)]
            };
            idx += 1;
        }
    }
}
