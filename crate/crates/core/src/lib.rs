//! Multivariate penalized piecewise-linear splines fitted as linear mixed
//! models, with permutation likelihood-ratio tests of "no effect of `s` on
//! any outcome" and a simulation harness for size and power studies.
//!
//! - [`dataset`], [`model`]: data container, model specification and fits
//! - [`basis`]: truncated-line spline basis and knot placement
//! - [`lmm`]: likelihood evaluation, ML/REML fitting, BLUPs, fitted curves
//! - [`lrt`]: likelihood-ratio statistic and the three permutation tests
//! - [`simgen`], [`harness`]: data generation and replicated experiments

pub mod basis;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod lmm;
pub mod lrt;
pub mod model;
pub mod optim;
pub mod rng;
pub mod simgen;

pub use basis::{make_knots, SplineBasis};
pub use dataset::{Dataset, Subject, Violation};
pub use error::{Error, Result};
pub use lmm::{blup, fit, fitted_curve, loglik, profile_loglik, CovParams};
pub use model::{Estimation, FittedModel, KnotRule, ModelSpec};
pub use harness::{run_experiment, table_report, ExperimentPlan, ExperimentResult, MethodSummary};
pub use lrt::{
    bonferroni, lr_statistic, p_value, permutation_test, permute_cholesky_test, permute_covariate_test,
    permute_residual_vector_test, univariate_test, PermutationConfig, PermutationMethod, PermutationResult,
    PermutationTest, TestSpecs,
};
pub use simgen::{generate, sample_sln, ErrorDist, GammaPattern, SimScenario};
