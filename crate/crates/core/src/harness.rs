//! Replicated simulation experiments: rejection rates of the permutation
//! tests over datasets drawn from one scenario.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lrt::{PermutationConfig, PermutationMethod, PermutationTest, TestSpecs};
use crate::model::KnotRule;
use crate::rng::derive_seed;
use crate::simgen::{generate, SimScenario};

/// Seed domains: datasets, then one per permutation method.
const DOMAIN_DATA: u64 = 0;

fn method_domain(method: PermutationMethod) -> u64 {
    match method {
        PermutationMethod::Covariate => 1,
        PermutationMethod::ResidualVector => 2,
        PermutationMethod::Cholesky => 3,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub scenario: SimScenario,
    pub methods: Vec<PermutationMethod>,
    /// Simulation replications.
    pub r: usize,
    /// Permutations per test.
    pub m: usize,
    pub alpha: f64,
    pub base_seed: u64,
    pub n_knots: usize,
    pub knot_lo: f64,
    pub knot_hi: f64,
    /// Worker threads over replications; 0 uses the ambient rayon pool.
    pub workers: usize,
}

impl ExperimentPlan {
    /// Plan with α = 0.05 and 30 knots equally spaced on [-2, 2].
    pub fn new(scenario: SimScenario, methods: Vec<PermutationMethod>, r: usize, m: usize, base_seed: u64) -> Self {
        Self {
            scenario,
            methods,
            r,
            m,
            alpha: 0.05,
            base_seed,
            n_knots: 30,
            knot_lo: -2.0,
            knot_hi: 2.0,
            workers: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r < 1 {
            return Err(Error::Config("at least one replication is required".into()));
        }
        if self.m < 19 {
            return Err(Error::Config(format!(
                "at least 19 permutations are required, got {}",
                self.m
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no permutation methods requested".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        let sc = &self.scenario;
        if !(0.0..1.0).contains(&sc.rho) {
            return Err(Error::Config("rho must lie in [0, 1)".into()));
        }
        if sc.k < 1 || sc.n < 2 {
            return Err(Error::Config("scenario needs N >= 2 and K >= 1".into()));
        }
        Ok(())
    }

    pub fn specs(&self) -> TestSpecs {
        TestSpecs::new(
            self.n_knots,
            KnotRule::Interval {
                lo: self.knot_lo,
                hi: self.knot_hi,
            },
        )
    }

    /// Seed of dataset `r`.
    pub fn dataset_seed(&self, r: usize) -> u64 {
        derive_seed(self.base_seed, DOMAIN_DATA, r as u64)
    }

    /// Permutation seed of `method` on dataset `r`.
    pub fn test_seed(&self, method: PermutationMethod, r: usize) -> u64 {
        derive_seed(self.base_seed, method_domain(method), r as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: PermutationMethod,
    pub rejections: usize,
    /// Rejections over all R replications; errored replications count as
    /// non-rejections.
    pub rejection_rate: f64,
    /// `sqrt(p (1 - p) / R)`
    pub se: f64,
    /// Mean observed LR over the replications that ran.
    pub mean_lr_obs: f64,
    /// Replications whose test raised an error.
    pub n_errors: usize,
    /// Permutation replicates whose fits failed, summed over replications.
    pub n_failed_fits: usize,
    /// Per replication, `None` where the test errored.
    pub p_values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub scenario: SimScenario,
    pub r: usize,
    pub m: usize,
    pub alpha: f64,
    pub methods: Vec<MethodSummary>,
    pub wall_time_secs: f64,
}

impl ExperimentResult {
    pub fn summary(&self, method: PermutationMethod) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == method)
    }
}

struct ReplicateOutcome {
    lr_obs: Option<f64>,
    /// per method: p-value and failed fits, or `None` on error
    tests: Vec<Option<(f64, usize)>>,
}

fn run_replicate(plan: &ExperimentPlan, specs: &TestSpecs, r: usize) -> ReplicateOutcome {
    let data = generate(&plan.scenario, plan.dataset_seed(r));
    let Ok(test) = PermutationTest::new(&data, specs) else {
        return ReplicateOutcome {
            lr_obs: None,
            tests: vec![None; plan.methods.len()],
        };
    };
    let tests = plan
        .methods
        .iter()
        .map(|&method| {
            let config = PermutationConfig::new(method, plan.m, plan.test_seed(method, r));
            test.run(&config).ok().map(|res| (res.p_value, res.n_failed_fits))
        })
        .collect();
    ReplicateOutcome {
        lr_obs: Some(test.lr_obs()),
        tests,
    }
}

pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentResult> {
    plan.validate()?;
    let start = Instant::now();
    let specs = plan.specs();
    let one = |r: usize| run_replicate(plan, &specs, r);
    let outcomes: Vec<ReplicateOutcome> = match plan.workers {
        1 => (0..plan.r).map(one).collect(),
        0 => (0..plan.r).into_par_iter().map(one).collect(),
        w => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?
            .install(|| (0..plan.r).into_par_iter().map(one).collect()),
    };

    let lrs: Vec<f64> = outcomes.iter().filter_map(|o| o.lr_obs).collect();
    let mean_lr = if lrs.is_empty() {
        f64::NAN
    } else {
        lrs.iter().sum::<f64>() / lrs.len() as f64
    };
    let methods = plan
        .methods
        .iter()
        .enumerate()
        .map(|(j, &method)| {
            let p_values: Vec<Option<f64>> = outcomes.iter().map(|o| o.tests[j].map(|t| t.0)).collect();
            let rejections = p_values.iter().flatten().filter(|&&p| p <= plan.alpha).count();
            let rate = rejections as f64 / plan.r as f64;
            MethodSummary {
                method,
                rejections,
                rejection_rate: rate,
                se: (rate * (1.0 - rate) / plan.r as f64).sqrt(),
                mean_lr_obs: mean_lr,
                n_errors: p_values.iter().filter(|p| p.is_none()).count(),
                n_failed_fits: outcomes.iter().filter_map(|o| o.tests[j].map(|t| t.1)).sum(),
                p_values,
            }
        })
        .collect();
    Ok(ExperimentResult {
        scenario: plan.scenario.clone(),
        r: plan.r,
        m: plan.m,
        alpha: plan.alpha,
        methods,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct ColumnKey {
    dist: String,
    pattern: usize,
    rho_milli: i64,
}

fn column_key(result: &ExperimentResult) -> ColumnKey {
    let sc = &result.scenario;
    ColumnKey {
        dist: sc.error_dist.name().to_string(),
        pattern: crate::simgen::GammaPattern::ALL
            .iter()
            .position(|p| *p == sc.gamma_pattern)
            .unwrap_or(0),
        rho_milli: (sc.rho * 1000.0).round() as i64,
    }
}

fn column_label(key: &ColumnKey) -> String {
    format!(
        "{}/{} rho={}",
        key.dist,
        crate::simgen::GammaPattern::ALL[key.pattern].name(),
        key.rho_milli as f64 / 1000.0
    )
}

/// Rejection rates laid out with rows `(N, K) x method` and one column per
/// `(error distribution, γ pattern, ρ)`, plus a CSV with one row per
/// `(scenario, method)`.
pub fn table_report(results: &[ExperimentResult]) -> (String, String) {
    let columns: Vec<ColumnKey> = results.iter().map(column_key).collect::<BTreeSet<_>>().into_iter().collect();
    let mut rows: Vec<(usize, usize, PermutationMethod)> = Vec::new();
    for res in results {
        for s in &res.methods {
            let row = (res.scenario.n, res.scenario.k, s.method);
            if !rows.contains(&row) {
                rows.push(row);
            }
        }
    }
    rows.sort_by_key(|&(n, k, m)| (n, k, method_domain(m)));

    let labels: Vec<String> = columns.iter().map(column_label).collect();
    let widths: Vec<usize> = labels.iter().map(|l| l.len().max(6)).collect();
    let mut text = String::new();
    let _ = write!(text, "{:<8} {:<10}", "(N,K)", "method");
    for (l, w) in labels.iter().zip(&widths) {
        let _ = write!(text, " {l:>w$}");
    }
    text.push('\n');
    for &(n, k, method) in &rows {
        let _ = write!(text, "{:<8} {:<10}", format!("({n},{k})"), method.name());
        for (col, w) in columns.iter().zip(&widths) {
            let cell = results
                .iter()
                .filter(|r| r.scenario.n == n && r.scenario.k == k && column_key(r) == *col)
                .find_map(|r| r.summary(method))
                .map_or_else(|| "-".to_string(), |s| format!("{:.3}", s.rejection_rate));
            let _ = write!(text, " {cell:>w$}");
        }
        text.push('\n');
    }

    let mut csv = String::from(
        "n,k,rho,pattern,error_dist,method,r,m,alpha,rejection_rate,se,mean_lr_obs,n_errors,n_failed_fits\n",
    );
    for res in results {
        let sc = &res.scenario;
        for s in &res.methods {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                sc.n,
                sc.k,
                sc.rho,
                sc.gamma_pattern.name(),
                sc.error_dist.name(),
                s.method.name(),
                res.r,
                res.m,
                res.alpha,
                s.rejection_rate,
                s.se,
                s.mean_lr_obs,
                s.n_errors,
                s.n_failed_fits
            );
        }
    }
    (text, csv)
}
