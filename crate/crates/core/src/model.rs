//! Model specification and fitted-model containers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum KnotRule {
    /// Interior equally-spaced knots over a fixed interval.
    Interval { lo: f64, hi: f64 },
    /// Interior equally-spaced knots over the observed range of `s`.
    ObservedRange,
    /// Explicit, strictly increasing knot locations.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Estimation {
    Ml,
    Reml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_knots: usize,
    pub knot_rule: KnotRule,
    /// `false` gives the null model: no linear `s` term and no spline.
    pub include_s: bool,
    pub estimation: Estimation,
    pub convergence_tol: f64,
    pub max_iter: usize,
}

pub const DEFAULT_KNOTS: usize = 30;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 500;

impl ModelSpec {
    pub fn null() -> Self {
        Self {
            n_knots: DEFAULT_KNOTS,
            knot_rule: KnotRule::ObservedRange,
            include_s: false,
            estimation: Estimation::Ml,
            convergence_tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    pub fn alternative(n_knots: usize, knot_rule: KnotRule) -> Self {
        Self {
            n_knots,
            knot_rule,
            include_s: true,
            ..Self::null()
        }
    }

    /// The null model nested in `self`.
    pub fn to_null(&self) -> Self {
        Self {
            include_s: false,
            ..self.clone()
        }
    }

    pub fn with_estimation(mut self, estimation: Estimation) -> Self {
        self.estimation = estimation;
        self
    }

    /// Knot count actually used: explicit lists override `n_knots`.
    pub fn knot_count(&self) -> usize {
        match &self.knot_rule {
            KnotRule::Explicit(k) => k.len(),
            _ => self.n_knots,
        }
    }
}

/// Result of [`crate::lmm::fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    /// Fixed effects, one column per outcome. Rows: intercept, the `p`
    /// adjustment covariates, then (alternative only) the linear `s` slope.
    pub beta: DMatrix<f64>,
    /// Spline variances, one per outcome; empty for the null model.
    pub spline_var: Vec<f64>,
    /// Residual covariance between outcomes (K x K).
    pub sigma: DMatrix<f64>,
    /// Maximized log-likelihood (restricted log-likelihood under REML).
    pub loglik: f64,
    /// Predicted spline coefficients (C x K); `None` for the null model.
    pub blups: Option<DMatrix<f64>>,
    pub basis: Option<SplineBasis>,
    pub estimation: Estimation,
    pub converged: bool,
    pub iterations: usize,
    pub n_params: usize,
}

impl FittedModel {
    pub fn is_alternative(&self) -> bool {
        self.basis.is_some()
    }

    pub fn k(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn intercepts(&self) -> Vec<f64> {
        self.beta.row(0).iter().copied().collect()
    }

    /// Linear `s` slopes; `None` for the null model.
    pub fn gamma(&self) -> Option<Vec<f64>> {
        self.is_alternative()
            .then(|| self.beta.row(self.beta.nrows() - 1).iter().copied().collect())
    }

    /// Adjustment-covariate coefficients for outcome `k`.
    pub fn covariate_coefs(&self, k: usize) -> Vec<f64> {
        let end = if self.is_alternative() {
            self.beta.nrows() - 1
        } else {
            self.beta.nrows()
        };
        (1..end).map(|r| self.beta[(r, k)]).collect()
    }
}
