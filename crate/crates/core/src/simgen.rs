//! Simulated datasets for size and power studies.
//!
//! `Y_ik = β0 + β1 X_i + γ_k sin(2 S_i) + b_i + ε_ik` with `(X_i, S_i)`
//! standard bivariate normal with correlation 0.5, `b_i ~ N(0, ρ)` and
//! `ε_ik` of variance `1 - ρ`, either normal or standardized lognormal.
//! Outcomes are therefore compound symmetric with correlation `ρ` and unit
//! conditional variance.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::dataset::{Dataset, Subject};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaPattern {
    Null,
    Sparse,
    NonUniform,
    Uniform,
}

impl GammaPattern {
    pub const ALL: [GammaPattern; 4] = [
        GammaPattern::Null,
        GammaPattern::Sparse,
        GammaPattern::NonUniform,
        GammaPattern::Uniform,
    ];

    /// Coefficients of `sin(2s)` for outcomes `1..=k`.
    pub fn gamma(self, k: usize) -> Vec<f64> {
        (1..=k)
            .map(|j| match self {
                GammaPattern::Null => 0.0,
                GammaPattern::Sparse if j == 1 => 0.3,
                GammaPattern::Sparse => 0.0,
                GammaPattern::NonUniform => 0.5 / j as f64,
                GammaPattern::Uniform => 0.75,
            })
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            GammaPattern::Null => "null",
            GammaPattern::Sparse => "sparse",
            GammaPattern::NonUniform => "non-uniform",
            GammaPattern::Uniform => "uniform",
        }
    }
}

impl fmt::Display for GammaPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GammaPattern {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GammaPattern::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown gamma pattern '{s}' (null, sparse, non-uniform, uniform)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ErrorDist {
    Normal,
    /// Lognormal standardized to mean 0 and variance 1.
    Sln,
}

impl ErrorDist {
    pub fn name(self) -> &'static str {
        match self {
            ErrorDist::Normal => "normal",
            ErrorDist::Sln => "sln",
        }
    }
}

impl fmt::Display for ErrorDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ErrorDist {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(ErrorDist::Normal),
            "sln" => Ok(ErrorDist::Sln),
            _ => Err(format!("unknown error distribution '{s}' (normal, sln)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub n: usize,
    pub k: usize,
    /// Within-subject correlation, in `[0, 1)`.
    pub rho: f64,
    pub gamma_pattern: GammaPattern,
    pub error_dist: ErrorDist,
    pub beta0: f64,
    pub beta1: f64,
}

impl SimScenario {
    pub fn new(n: usize, k: usize, rho: f64, gamma_pattern: GammaPattern, error_dist: ErrorDist) -> Self {
        Self {
            n,
            k,
            rho,
            gamma_pattern,
            error_dist,
            beta0: 0.0,
            beta1: 1.0,
        }
    }

    pub fn gamma(&self) -> Vec<f64> {
        self.gamma_pattern.gamma(self.k)
    }
}

fn sln_from_normal(z: f64) -> f64 {
    let e = std::f64::consts::E;
    (z.exp() - 0.5f64.exp()) / ((e - 1.0) * e).sqrt()
}

/// `n` draws of the standardized lognormal `(e^Z - e^{1/2}) / sqrt((e-1)e)`.
pub fn sample_sln(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::stream(seed, 0);
    (0..n)
        .map(|_| sln_from_normal(rng.sample(StandardNormal)))
        .collect()
}

/// Draws one dataset. Per subject the stream supplies, in order, the two
/// normals for `(X, S)`, the normal for `b_i`, then the `K` error normals.
pub fn generate(scenario: &SimScenario, seed: u64) -> Dataset {
    let mut rng = rng::stream(seed, 0);
    let gamma = scenario.gamma();
    let rho = scenario.rho;
    let b_sd = rho.sqrt();
    let e_sd = (1.0 - rho).sqrt();
    let subjects = (0..scenario.n)
        .map(|i| {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let s = z1;
            let x = 0.5 * z1 + 0.75f64.sqrt() * z2;
            let b = b_sd * rng.sample::<f64, _>(StandardNormal);
            let y: Vec<f64> = gamma
                .iter()
                .map(|g| {
                    let z: f64 = rng.sample(StandardNormal);
                    let eps = match scenario.error_dist {
                        ErrorDist::Normal => z,
                        ErrorDist::Sln => sln_from_normal(z),
                    };
                    scenario.beta0 + scenario.beta1 * x + g * (2.0 * s).sin() + b + e_sd * eps
                })
                .collect();
            Subject::complete(format!("{}", i + 1), s, vec![x], &y)
        })
        .collect();
    Dataset::new(
        subjects,
        vec!["x".into()],
        (1..=scenario.k).map(|k| format!("y{k}")).collect(),
    )
}
