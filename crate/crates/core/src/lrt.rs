//! Likelihood-ratio statistic for "no effect of `s` on any outcome" and its
//! Monte Carlo permutation null distributions.
//!
//! Three ways to build a permutation replicate:
//!
//! - covariate: shuffle `s` across subjects and refit only the alternative;
//!   the observed null log-likelihood is reused because the null model does
//!   not involve `s`.
//! - residual vector: shuffle whole null-model residual vectors; balanced
//!   data only.
//! - Cholesky: whiten the null residuals of each subject by the Cholesky
//!   factor of its block of `Σ̂`, shuffle all scalars jointly, colour them
//!   back.
//!
//! Replicate `m` draws its permutation from stream `m` of the configured
//! seed, so a result does not depend on how replicates are scheduled.

use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::SplineBasis;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::lmm::stats::fixed_row;
use crate::lmm::{solve, Problem, SolveOptions};
use crate::model::{Estimation, FittedModel, KnotRule, ModelSpec};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PermutationMethod {
    Covariate,
    ResidualVector,
    Cholesky,
}

impl PermutationMethod {
    pub const ALL: [PermutationMethod; 3] = [Self::Covariate, Self::ResidualVector, Self::Cholesky];

    pub fn name(self) -> &'static str {
        match self {
            Self::Covariate => "covariate",
            Self::ResidualVector => "residual",
            Self::Cholesky => "cholesky",
        }
    }
}

impl std::fmt::Display for PermutationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PermutationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "covariate" => Ok(Self::Covariate),
            "residual" | "residual-vector" | "residual_vector" => Ok(Self::ResidualVector),
            "cholesky" => Ok(Self::Cholesky),
            other => Err(Error::Config(format!(
                "unknown permutation method {other:?} (expected covariate, residual or cholesky)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationConfig {
    pub method: PermutationMethod,
    /// Number of permutation replicates.
    pub m: usize,
    pub seed: u64,
    /// Replicates with `LR_m >= lr_obs - tie_tol` count as at least as extreme.
    pub tie_tol: f64,
    /// Use `(1 + #)/(M + 1)` instead of the plain proportion `#/M`.
    pub include_observed: bool,
    /// Worker threads for the replicates; 0 uses the ambient rayon pool.
    pub workers: usize,
}

impl PermutationConfig {
    pub fn new(method: PermutationMethod, m: usize, seed: u64) -> Self {
        Self {
            method,
            m,
            seed,
            tie_tol: 1e-8,
            include_observed: false,
            workers: 1,
        }
    }

    fn check(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("number of permutations must be positive".into()));
        }
        if !(self.tie_tol >= 0.0) {
            return Err(Error::Config("tie tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

/// Null and alternative model specifications of one test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpecs {
    pub null: ModelSpec,
    pub alt: ModelSpec,
}

impl TestSpecs {
    /// ML specifications with `n_knots` knots placed by `knot_rule`.
    pub fn new(n_knots: usize, knot_rule: KnotRule) -> Self {
        let alt = ModelSpec::alternative(n_knots, knot_rule);
        Self { null: alt.to_null(), alt }
    }

    fn check(&self) -> Result<()> {
        if self.null.include_s || !self.alt.include_s {
            return Err(Error::Config(
                "null model must exclude s and the alternative must include it".into(),
            ));
        }
        Ok(())
    }

    fn ml(&self) -> Self {
        Self {
            null: self.null.clone().with_estimation(Estimation::Ml),
            alt: self.alt.clone().with_estimation(Estimation::Ml),
        }
    }
}

/// Model fits performed by one test, observed-data fits included.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitCounts {
    pub null_fits: usize,
    pub alt_fits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub lr_obs: f64,
    /// `+∞` marks replicates whose fits failed even after a restart.
    pub lr_replicates: Vec<f64>,
    pub p_value: f64,
    pub n_failed_fits: usize,
    pub method: PermutationMethod,
    pub m: usize,
    pub seed: u64,
    pub fits: FitCounts,
}

/// `max(0, 2 (ℓ_alt - ℓ_null))` from ML fits of both models.
pub fn lr_statistic(
    dataset: &Dataset,
    null_spec: &ModelSpec,
    alt_spec: &ModelSpec,
) -> Result<(f64, FittedModel, FittedModel)> {
    let specs = TestSpecs {
        null: null_spec.clone(),
        alt: alt_spec.clone(),
    };
    let test = PermutationTest::new(dataset, &specs)?;
    Ok((test.lr_obs, test.null_fit, test.alt_fit))
}

fn clamp_lr(alt: f64, null: f64) -> f64 {
    (2.0 * (alt - null)).max(0.0)
}

/// p-value of `lr_obs` against the replicates.
pub fn p_value(lr_obs: f64, replicates: &[f64], tie_tol: f64, include_observed: bool) -> f64 {
    let hits = replicates.iter().filter(|&&lr| lr >= lr_obs - tie_tol).count();
    if include_observed {
        (hits + 1) as f64 / (replicates.len() + 1) as f64
    } else {
        hits as f64 / replicates.len() as f64
    }
}

/// Bonferroni-combined p-value `min(1, K min_k p_k)`.
pub fn bonferroni(p_values: &[f64]) -> f64 {
    if p_values.is_empty() {
        return 1.0;
    }
    let min = p_values.iter().copied().fold(f64::INFINITY, f64::min);
    (p_values.len() as f64 * min).min(1.0)
}

/// Observed-data fits shared by every permutation scheme.
pub struct PermutationTest<'a> {
    dataset: &'a Dataset,
    specs: TestSpecs,
    basis: SplineBasis,
    null_fit: FittedModel,
    alt_fit: FittedModel,
    lr_obs: f64,
}

struct Counters {
    null: AtomicUsize,
    alt: AtomicUsize,
}

/// What a replicate changes in the observed data.
enum Replicate {
    /// Subject `i` receives `s[perm[i]]`.
    Covariate(Vec<usize>),
    /// New outcomes, one row per subject.
    Outcomes(Vec<Vec<f64>>),
}

fn is_permutation(perm: &[usize], len: usize) -> bool {
    let mut seen = vec![false; len];
    perm.len() == len && perm.iter().all(|&i| i < len && !std::mem::replace(&mut seen[i], true))
}

/// Null-model decomposition `y = fitted + residual` at observed entries.
struct NullResiduals {
    fitted: Vec<Vec<f64>>,
    residual: Vec<Vec<f64>>,
}

impl<'a> PermutationTest<'a> {
    /// Fits both models to the observed data.
    pub fn new(dataset: &'a Dataset, specs: &TestSpecs) -> Result<Self> {
        specs.check()?;
        let specs = specs.ml();
        let null_problem = Problem::new(dataset, &specs.null)?;
        let alt_problem = Problem::new(dataset, &specs.alt)?;
        let basis = alt_problem.basis.clone().expect("alternative has a basis");
        let quiet = SolveOptions {
            blups: false,
            ..SolveOptions::default()
        };
        let null_fit = solve(&null_problem, &specs.null, quiet.clone())?;
        let alt_fit = solve(&alt_problem, &specs.alt, SolveOptions::default())?;
        let lr_obs = clamp_lr(alt_fit.loglik, null_fit.loglik);
        Ok(Self {
            dataset,
            specs,
            basis,
            null_fit,
            alt_fit,
            lr_obs,
        })
    }

    pub fn lr_obs(&self) -> f64 {
        self.lr_obs
    }

    pub fn null_fit(&self) -> &FittedModel {
        &self.null_fit
    }

    pub fn alt_fit(&self) -> &FittedModel {
        &self.alt_fit
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    /// Monte Carlo test with `config.m` random permutations.
    pub fn run(&self, config: &PermutationConfig) -> Result<PermutationResult> {
        config.check()?;
        self.check_method(config.method)?;
        // covariate and residual-vector permute subjects; Cholesky permutes
        // pooled scalars
        let len = self.pooled_len(config.method);
        self.run_with(config, config.m, |m| {
            let mut perm: Vec<usize> = (0..len).collect();
            perm.shuffle(&mut rng::stream(config.seed, m as u64));
            perm
        })
    }

    /// Covariate test over every permutation of the subjects (N <= 6);
    /// `config.m` and `config.seed` are ignored.
    pub fn run_exhaustive(&self, config: &PermutationConfig) -> Result<PermutationResult> {
        let n = self.dataset.n();
        if n > 6 {
            return Err(Error::Config(format!(
                "exhaustive enumeration is limited to N <= 6 subjects, got {n}"
            )));
        }
        if config.method != PermutationMethod::Covariate {
            return Err(Error::Config("exhaustive enumeration is offered for the covariate method".into()));
        }
        let perms = all_permutations(n);
        let cfg = PermutationConfig {
            m: perms.len(),
            ..config.clone()
        };
        self.run_with(&cfg, perms.len(), |m| perms[m].clone())
    }

    /// Test over the given permutations, each of length N (or the number
    /// of observed values for the Cholesky method); `config.m` is ignored.
    pub fn run_permutations(&self, config: &PermutationConfig, perms: &[Vec<usize>]) -> Result<PermutationResult> {
        self.check_method(config.method)?;
        let len = self.pooled_len(config.method);
        if let Some(bad) = perms.iter().find(|p| !is_permutation(p, len)) {
            return Err(Error::Config(format!(
                "not a permutation of 0..{len}: {bad:?}"
            )));
        }
        let cfg = PermutationConfig {
            m: perms.len(),
            ..config.clone()
        };
        cfg.check()?;
        self.run_with(&cfg, perms.len(), |m| perms[m].clone())
    }

    /// The data set that permutation `perm` defines under `method`.
    pub fn replicate_dataset(&self, method: PermutationMethod, perm: &[usize]) -> Result<Dataset> {
        self.check_method(method)?;
        let len = self.pooled_len(method);
        if !is_permutation(perm, len) {
            return Err(Error::Config(format!("not a permutation of 0..{len}")));
        }
        Ok(match self.replicate_builder(method)?(perm) {
            Replicate::Covariate(perm) => self.dataset.with_permuted_s(&perm),
            Replicate::Outcomes(y) => self.dataset.with_outcomes(&y),
        })
    }

    fn check_method(&self, method: PermutationMethod) -> Result<()> {
        if method == PermutationMethod::ResidualVector && !self.dataset.is_balanced() {
            return Err(Error::UnbalancedResidualPermutation);
        }
        Ok(())
    }

    fn pooled_len(&self, method: PermutationMethod) -> usize {
        match method {
            PermutationMethod::Cholesky => self.dataset.n_observations(),
            _ => self.dataset.n(),
        }
    }

    fn run_with<P>(&self, config: &PermutationConfig, m_total: usize, perm_of: P) -> Result<PermutationResult>
    where
        P: Fn(usize) -> Vec<usize> + Sync,
    {
        let counters = Counters {
            null: AtomicUsize::new(1),
            alt: AtomicUsize::new(1),
        };
        let builder = self.replicate_builder(config.method)?;
        let one = |m: usize| -> Option<f64> {
            let replicate = builder(&perm_of(m));
            self.replicate_lr(config.method, replicate, &counters)
        };
        let outcomes: Vec<Option<f64>> = if config.workers == 1 {
            (0..m_total).map(one).collect()
        } else if config.workers == 0 {
            (0..m_total).into_par_iter().map(one).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(config.workers)
                .build()
                .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
            pool.install(|| (0..m_total).into_par_iter().map(one).collect())
        };
        let n_failed_fits = outcomes.iter().filter(|o| o.is_none()).count();
        let lr_replicates: Vec<f64> = outcomes.into_iter().map(|o| o.unwrap_or(f64::INFINITY)).collect();
        let p_value = p_value(self.lr_obs, &lr_replicates, config.tie_tol, config.include_observed);
        Ok(PermutationResult {
            lr_obs: self.lr_obs,
            lr_replicates,
            p_value,
            n_failed_fits,
            method: config.method,
            m: m_total,
            seed: config.seed,
            fits: FitCounts {
                null_fits: counters.null.into_inner(),
                alt_fits: counters.alt.into_inner(),
            },
        })
    }

    /// Maps a permutation to the replicate it defines.
    fn replicate_builder(
        &self,
        method: PermutationMethod,
    ) -> Result<Box<dyn Fn(&[usize]) -> Replicate + Sync + '_>> {
        match method {
            PermutationMethod::Covariate => Ok(Box::new(|perm: &[usize]| Replicate::Covariate(perm.to_vec()))),
            PermutationMethod::ResidualVector => {
                let nr = self.null_residuals();
                Ok(Box::new(move |perm: &[usize]| {
                    let y = perm
                        .iter()
                        .enumerate()
                        .map(|(i, &src)| {
                            nr.fitted[i]
                                .iter()
                                .zip(&nr.residual[src])
                                .map(|(f, e)| f + e)
                                .collect()
                        })
                        .collect();
                    Replicate::Outcomes(y)
                }))
            }
            PermutationMethod::Cholesky => {
                let whitened = self.whitened_residuals()?;
                let nr = self.null_residuals();
                Ok(Box::new(move |perm: &[usize]| {
                    let pooled: Vec<f64> = perm.iter().map(|&src| whitened.pooled[src]).collect();
                    let y = (0..nr.fitted.len())
                        .map(|i| {
                            let (start, len) = whitened.blocks[i];
                            let r = &pooled[start..start + len];
                            let l = &whitened.factors[i];
                            let fitted = &nr.fitted[i];
                            (0..len)
                                .map(|a| fitted[a] + (0..=a).map(|b| l[(a, b)] * r[b]).sum::<f64>())
                                .collect::<Vec<f64>>()
                        })
                        .collect();
                    Replicate::Outcomes(expand_observed(self.dataset, y))
                }))
            }
        }
    }

    /// Null fitted values and residuals at each subject's observed outcomes.
    fn null_residuals(&self) -> NullResiduals {
        let beta = &self.null_fit.beta;
        let mut fitted = Vec::with_capacity(self.dataset.n());
        let mut residual = Vec::with_capacity(self.dataset.n());
        for subj in self.dataset.subjects() {
            let x = DVector::from_vec(fixed_row(subj, false));
            let mean = beta.transpose() * x;
            let obs = subj.observed();
            fitted.push(obs.iter().map(|&k| mean[k]).collect::<Vec<_>>());
            residual.push(obs.iter().map(|&k| subj.y[k].unwrap() - mean[k]).collect());
        }
        NullResiduals { fitted, residual }
    }

    fn whitened_residuals(&self) -> Result<Whitened> {
        let nr = self.null_residuals();
        let sigma = &self.null_fit.sigma;
        let mut pooled = Vec::with_capacity(self.dataset.n_observations());
        let mut blocks = Vec::with_capacity(self.dataset.n());
        let mut factors = Vec::with_capacity(self.dataset.n());
        for (subj, e) in self.dataset.subjects().iter().zip(&nr.residual) {
            let obs = subj.observed();
            let sub = DMatrix::from_fn(obs.len(), obs.len(), |a, b| sigma[(obs[a], obs[b])]);
            let l = sub.cholesky().ok_or(Error::NullCovarianceNotPd)?.l();
            let r = l
                .solve_lower_triangular(&DVector::from_column_slice(e))
                .ok_or(Error::NullCovarianceNotPd)?;
            blocks.push((pooled.len(), obs.len()));
            pooled.extend(r.iter());
            factors.push(l);
        }
        Ok(Whitened {
            pooled,
            blocks,
            factors,
        })
    }

    /// Whitened null residuals pooled over subjects and observed outcomes,
    /// in subject order.
    pub fn pooled_whitened_residuals(&self) -> Result<Vec<f64>> {
        Ok(self.whitened_residuals()?.pooled)
    }

    /// LR of one replicate, `None` when a fit fails after its restart.
    fn replicate_lr(&self, method: PermutationMethod, replicate: Replicate, counters: &Counters) -> Option<f64> {
        let data = match replicate {
            Replicate::Covariate(perm) => self.dataset.with_permuted_s(&perm),
            Replicate::Outcomes(y) => self.dataset.with_outcomes(&y),
        };
        let null_ll = match method {
            PermutationMethod::Covariate => self.null_fit.loglik,
            _ => {
                counters.null.fetch_add(1, Ordering::Relaxed);
                self.refit(&data, &self.specs.null, None, counters)?
            }
        };
        counters.alt.fetch_add(1, Ordering::Relaxed);
        let alt_ll = self.refit(&data, &self.specs.alt, Some(&self.basis), counters)?;
        Some(clamp_lr(alt_ll, null_ll))
    }

    fn refit(
        &self,
        data: &Dataset,
        spec: &ModelSpec,
        basis: Option<&SplineBasis>,
        counters: &Counters,
    ) -> Option<f64> {
        let problem = Problem::with_basis(data, spec, basis.cloned()).ok()?;
        let opts = SolveOptions {
            blups: false,
            ..SolveOptions::default()
        };
        match solve(&problem, spec, opts) {
            Ok(fit) if fit.converged => return Some(fit.loglik),
            _ => {}
        }
        // one restart from different starting values with a larger budget
        let counter = if basis.is_some() { &counters.alt } else { &counters.null };
        counter.fetch_add(1, Ordering::Relaxed);
        let retry_spec = ModelSpec {
            max_iter: spec.max_iter * 4,
            ..spec.clone()
        };
        let retry = SolveOptions {
            blups: false,
            start_fractions: vec![0.5, 0.05, 0.001],
            ..SolveOptions::default()
        };
        match solve(&problem, &retry_spec, retry) {
            Ok(fit) if fit.converged => Some(fit.loglik),
            _ => None,
        }
    }
}

struct Whitened {
    pooled: Vec<f64>,
    /// (offset into `pooled`, observed count) per subject
    blocks: Vec<(usize, usize)>,
    /// lower Cholesky factor of each subject's observed block of Σ̂
    factors: Vec<DMatrix<f64>>,
}

/// Places observed-entry values back into full K-rows (missing entries 0).
fn expand_observed(dataset: &Dataset, observed: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    dataset
        .subjects()
        .iter()
        .zip(observed)
        .map(|(subj, vals)| {
            let mut row = vec![0.0; subj.y.len()];
            for (&k, v) in subj.observed().iter().zip(vals) {
                row[k] = v;
            }
            row
        })
        .collect()
}

/// Every permutation of `0..n` in lexicographic order.
fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        out.push(perm.clone());
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| perm[i - 1] < perm[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| perm[j] > perm[i - 1]).unwrap();
        perm.swap(i - 1, j);
        perm[i..].reverse();
    }
}

/// Runs the configured permutation test.
pub fn permutation_test(dataset: &Dataset, specs: &TestSpecs, config: &PermutationConfig) -> Result<PermutationResult> {
    if config.method == PermutationMethod::ResidualVector && !dataset.is_balanced() {
        return Err(Error::UnbalancedResidualPermutation);
    }
    let test = PermutationTest::new(dataset, specs).map_err(|e| match (config.method, e) {
        (PermutationMethod::Cholesky, Error::SingularCovariance) => Error::NullCovarianceNotPd,
        (_, e) => e,
    })?;
    test.run(config)
}

pub fn permute_covariate_test(dataset: &Dataset, specs: &TestSpecs, config: &PermutationConfig) -> Result<PermutationResult> {
    permutation_test(dataset, specs, &with_method(config, PermutationMethod::Covariate))
}

pub fn permute_residual_vector_test(
    dataset: &Dataset,
    specs: &TestSpecs,
    config: &PermutationConfig,
) -> Result<PermutationResult> {
    permutation_test(dataset, specs, &with_method(config, PermutationMethod::ResidualVector))
}

pub fn permute_cholesky_test(dataset: &Dataset, specs: &TestSpecs, config: &PermutationConfig) -> Result<PermutationResult> {
    permutation_test(dataset, specs, &with_method(config, PermutationMethod::Cholesky))
}

fn with_method(config: &PermutationConfig, method: PermutationMethod) -> PermutationConfig {
    PermutationConfig {
        method,
        ..config.clone()
    }
}

/// Test of outcome `outcome` (0-based) alone, on the subjects observing it.
pub fn univariate_test(
    dataset: &Dataset,
    outcome: usize,
    specs: &TestSpecs,
    config: &PermutationConfig,
) -> Result<PermutationResult> {
    if outcome >= dataset.k() {
        return Err(Error::Config(format!(
            "outcome index {outcome} out of range for {} outcomes",
            dataset.k()
        )));
    }
    permutation_test(&dataset.single_outcome(outcome), specs, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutations_are_complete_and_distinct() {
        let perms = all_permutations(4);
        assert_eq!(perms.len(), 24);
        let mut sorted = perms.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 24);
        assert_eq!(perms[0], vec![0, 1, 2, 3]);
        assert_eq!(perms[23], vec![3, 2, 1, 0]);
    }

    #[test]
    fn p_value_counts_ties_within_tolerance() {
        let reps = [0.5, 1.0 - 1e-9, 2.0, f64::INFINITY];
        assert_eq!(p_value(1.0, &reps, 1e-8, false), 0.75);
        assert_eq!(p_value(1.0, &reps, 0.0, false), 0.5);
        assert_eq!(p_value(1.0, &reps, 1e-8, true), 0.8);
    }

    #[test]
    fn bonferroni_caps_at_one() {
        assert_eq!(bonferroni(&[0.01, 0.2, 0.5]), 0.03);
        assert_eq!(bonferroni(&[0.5, 0.6]), 1.0);
    }

    #[test]
    fn method_names_round_trip() {
        for m in PermutationMethod::ALL {
            assert_eq!(m.name().parse::<PermutationMethod>().unwrap(), m);
        }
        assert!("bootstrap".parse::<PermutationMethod>().is_err());
    }
}
