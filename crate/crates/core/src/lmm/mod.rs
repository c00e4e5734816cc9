//! Maximum-likelihood and REML estimation of the multivariate penalized
//! spline model in its mixed-model form:
//!
//! `Y_ik = β_0k + β_1kᵀ x_i + γ_k s_i + Σ_c a_ck (s_i - κ_c)_+ + e_ik`,
//! `a_ck ~ N(0, σ²_ak)`, `e_i ~ N(0, Σ)` with `Σ` unstructured.
//!
//! Fixed effects are profiled out by generalized least squares; the
//! covariance parameters are found by L-BFGS on the profiled likelihood.
//! Balanced data use the spectral engine in [`rotated`] (analytic ML
//! gradient); unbalanced data use the capacity-matrix engine in
//! [`woodbury`].

mod fit;
pub mod params;
mod rotated;
mod small;
pub(crate) mod stats;
mod woodbury;

use nalgebra::DMatrix;

pub use params::CovParams;

pub(crate) use fit::{solve, Problem, SolveOptions};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{FittedModel, ModelSpec};
use stats::SuffStats;
use woodbury::WoodburyEngine;

/// Gaussian log-density of the observed outcomes at fixed `beta` (q x K,
/// rows intercept, covariates, [slope]) and covariance parameters. Under
/// REML the restricted log-likelihood at `beta` is returned. Unlike fitting,
/// evaluation is defined for a single subject.
pub fn loglik(dataset: &Dataset, spec: &ModelSpec, beta: &DMatrix<f64>, cov: &CovParams) -> Result<f64> {
    let violations: Vec<_> = dataset
        .validate()
        .into_iter()
        .filter(|v| v.field != "subjects" || dataset.n() == 0)
        .collect();
    if let Some(v) = violations.first() {
        return Err(Error::InvalidData(v.to_string()));
    }
    let basis = fit::basis_for(dataset, spec)?;
    if spec.include_s != cov.has_spline() {
        return Err(Error::Dimension(
            "spline variances must be given exactly for the alternative model".into(),
        ));
    }
    let stats = SuffStats::build(dataset, spec.include_s, basis.as_ref());
    WoodburyEngine::new(&stats).loglik_at(cov, beta, spec.estimation)
}

/// Log-likelihood maximized over the fixed effects by generalized least
/// squares at fixed covariance parameters; returns it with `β̂` (q x K).
pub fn profile_loglik(dataset: &Dataset, spec: &ModelSpec, cov: &CovParams) -> Result<(f64, DMatrix<f64>)> {
    let problem = Problem::new(dataset, spec)?;
    if spec.include_s != cov.has_spline() {
        return Err(Error::Dimension(
            "spline variances must be given exactly for the alternative model".into(),
        ));
    }
    let p = WoodburyEngine::new(&problem.stats).profile(cov, spec.estimation)?;
    Ok((p.loglik, p.beta))
}

/// Fits `spec` to `dataset`.
pub fn fit(dataset: &Dataset, spec: &ModelSpec) -> Result<FittedModel> {
    let problem = Problem::new(dataset, spec)?;
    solve(&problem, spec, SolveOptions::default())
}

/// Best linear unbiased predictors `Ĝ Zᵀ V̂⁻¹ (y - X β̂)` as a C x K matrix.
pub fn blup(dataset: &Dataset, spec: &ModelSpec, fitted: &FittedModel) -> Result<DMatrix<f64>> {
    let basis = fitted.basis.as_ref().ok_or(Error::NoRandomEffects)?;
    if !spec.include_s {
        return Err(Error::NoRandomEffects);
    }
    let stats = SuffStats::build(dataset, true, Some(basis));
    let cov = CovParams::from_sigma(fitted.spline_var.clone(), &fitted.sigma)?;
    WoodburyEngine::new(&stats).blup(&cov, &fitted.beta)
}

/// Fitted mean curves `ĝ_k(s)` at the given covariate values, one vector
/// per outcome.
pub fn fitted_curve(fitted: &FittedModel, s_grid: &[f64], reference_x: &[f64]) -> Result<Vec<Vec<f64>>> {
    let basis = fitted.basis.as_ref().ok_or(Error::NoRandomEffects)?;
    let blups = fitted.blups.as_ref().ok_or(Error::NoRandomEffects)?;
    if s_grid.is_empty() {
        return Err(Error::Config("evaluation grid is empty".into()));
    }
    let p = fitted.beta.nrows() - 2;
    if reference_x.len() != p {
        return Err(Error::Dimension(format!(
            "reference covariates have length {}, model has {p}",
            reference_x.len()
        )));
    }
    let gamma = fitted.gamma().expect("alternative fit");
    Ok((0..fitted.k())
        .map(|k| {
            let offset = fitted.beta[(0, k)]
                + fitted
                    .covariate_coefs(k)
                    .iter()
                    .zip(reference_x)
                    .map(|(b, x)| b * x)
                    .sum::<f64>();
            let coefs: Vec<f64> = blups.column(k).iter().copied().collect();
            s_grid
                .iter()
                .map(|&s| offset + basis.curve(gamma[k], &coefs, s))
                .collect()
        })
        .collect())
}
