//! `test`: joint (and optionally per-outcome) permutation LR test with a
//! JSON report.

use std::path::PathBuf;

use serde::Serialize;
use splineperm::rng::derive_seed;
use splineperm::{
    bonferroni, Dataset, Error, FittedModel, KnotRule, PermutationConfig, PermutationMethod, PermutationResult,
    PermutationTest, TestSpecs,
};

use crate::error::{CliError, CliResult};
use crate::{data, knot_range_label, VERSION};

/// Seed domain of the per-outcome tests.
const DOMAIN_UNIVARIATE: u64 = 0x756e_6976;

#[derive(Debug, Clone, clap::Args)]
pub struct TestArgs {
    /// Wide CSV with columns id, s, x_*, y_*
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = ["covariate", "residual", "cholesky"])]
    pub method: String,
    /// Permutation replicates (10000 recommended for final analyses)
    #[arg(long, default_value_t = 1000)]
    pub m: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub knots: usize,
    /// `auto` (observed range of s) or `LO,HI`
    #[arg(long, default_value = "auto", value_parser = crate::parse_knot_range)]
    pub knot_range: KnotRule,
    /// Also test each outcome on its own
    #[arg(long)]
    pub univariate: bool,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// JSON report path; stdout if omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub software: Software,
    pub timestamp: String,
    pub config: ConfigEcho,
    pub data: DataSummary,
    pub knots: Vec<f64>,
    pub estimates: Estimates,
    pub joint: TestOutcome,
    /// Present with `--univariate`.
    pub univariate: Option<Univariate>,
}

#[derive(Debug, Serialize)]
pub struct Software {
    pub name: &'static str,
    pub version: &'static str,
}

#[derive(Debug, Serialize)]
pub struct ConfigEcho {
    pub data: String,
    pub method: String,
    pub m: usize,
    pub seed: u64,
    pub knots: usize,
    pub knot_range: String,
    pub univariate: bool,
    pub alpha: f64,
    pub workers: usize,
    pub estimation: &'static str,
    pub tie_tol: f64,
}

#[derive(Debug, Serialize)]
pub struct DataSummary {
    pub n_subjects: usize,
    pub n_outcomes: usize,
    pub n_covariates: usize,
    pub n_missing: usize,
    pub outcomes: Vec<String>,
    pub covariates: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Estimates {
    pub null: ModelEstimates,
    pub alternative: ModelEstimates,
}

#[derive(Debug, Serialize)]
pub struct ModelEstimates {
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub intercept: Vec<f64>,
    /// Per outcome, the adjustment-covariate coefficients.
    pub covariate_coefs: Vec<Vec<f64>>,
    /// Linear `s` slope per outcome (alternative only).
    pub s_slope: Option<Vec<f64>>,
    /// Spline variance per outcome (alternative only).
    pub spline_var: Option<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
pub struct TestOutcome {
    pub lr_obs: f64,
    pub p_value: f64,
    pub reject: bool,
    pub m: usize,
    pub seed: u64,
    pub n_failed_fits: usize,
}

#[derive(Debug, Serialize)]
pub struct Univariate {
    pub tests: Vec<OutcomeTest>,
    /// `min(1, K min_k p_k)`
    pub bonferroni_p: f64,
    pub bonferroni_reject: bool,
}

#[derive(Debug, Serialize)]
pub struct OutcomeTest {
    pub outcome: String,
    #[serde(flatten)]
    pub test: TestOutcome,
    /// `min(1, K p_k)`
    pub p_adjusted: f64,
}

pub fn run(args: &TestArgs) -> CliResult<()> {
    let report = build_report(args)?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    match &args.out {
        Some(path) => std::fs::write(path, json)
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?,
        None => print!("{json}"),
    }
    Ok(())
}

pub fn build_report(args: &TestArgs) -> CliResult<Report> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(CliError::data("alpha must lie in (0, 1)"));
    }
    let method: PermutationMethod = args.method.parse()?;
    let dataset = data::read_csv(&args.data)?;
    let specs = TestSpecs::new(args.knots, args.knot_range.clone());
    let config = PermutationConfig {
        workers: args.workers,
        ..PermutationConfig::new(method, args.m, args.seed)
    };

    let (test, result) = run_test(&dataset, &specs, &config)?;
    let joint = outcome(&result, args.alpha);

    let univariate = if args.univariate {
        let tests = (0..dataset.k())
            .map(|k| {
                let single = dataset.single_outcome(k);
                let cfg = PermutationConfig {
                    seed: derive_seed(args.seed, DOMAIN_UNIVARIATE, k as u64),
                    ..config.clone()
                };
                let (_, res) = run_test(&single, &specs, &cfg)?;
                Ok(OutcomeTest {
                    outcome: dataset.outcome_names()[k].clone(),
                    p_adjusted: (res.p_value * dataset.k() as f64).min(1.0),
                    test: outcome(&res, args.alpha),
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let p: Vec<f64> = tests.iter().map(|t| t.test.p_value).collect();
        let bonferroni_p = bonferroni(&p);
        Some(Univariate {
            tests,
            bonferroni_p,
            bonferroni_reject: bonferroni_p <= args.alpha,
        })
    } else {
        None
    };

    Ok(Report {
        software: Software {
            name: "splineperm",
            version: VERSION,
        },
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        config: ConfigEcho {
            data: args.data.display().to_string(),
            method: method.name().into(),
            m: args.m,
            seed: args.seed,
            knots: args.knots,
            knot_range: knot_range_label(&args.knot_range),
            univariate: args.univariate,
            alpha: args.alpha,
            workers: args.workers,
            estimation: "ml",
            tie_tol: config.tie_tol,
        },
        data: DataSummary {
            n_subjects: dataset.n(),
            n_outcomes: dataset.k(),
            n_covariates: dataset.p(),
            n_missing: dataset.n_missing(),
            outcomes: dataset.outcome_names().to_vec(),
            covariates: dataset.covariate_names().to_vec(),
        },
        knots: test.basis().knots().to_vec(),
        estimates: Estimates {
            null: estimates(test.null_fit()),
            alternative: estimates(test.alt_fit()),
        },
        joint,
        univariate,
    })
}

fn run_test<'a>(
    dataset: &'a Dataset,
    specs: &TestSpecs,
    config: &PermutationConfig,
) -> CliResult<(PermutationTest<'a>, PermutationResult)> {
    if config.method == PermutationMethod::ResidualVector && !dataset.is_balanced() {
        return Err(Error::UnbalancedResidualPermutation.into());
    }
    let test = PermutationTest::new(dataset, specs).map_err(|e| match (config.method, e) {
        (PermutationMethod::Cholesky, Error::SingularCovariance) => Error::NullCovarianceNotPd,
        (_, e) => e,
    })?;
    let result = test.run(config)?;
    Ok((test, result))
}

fn outcome(res: &PermutationResult, alpha: f64) -> TestOutcome {
    TestOutcome {
        lr_obs: res.lr_obs,
        p_value: res.p_value,
        reject: res.p_value <= alpha,
        m: res.m,
        seed: res.seed,
        n_failed_fits: res.n_failed_fits,
    }
}

fn estimates(fit: &FittedModel) -> ModelEstimates {
    let k = fit.k();
    ModelEstimates {
        loglik: fit.loglik,
        converged: fit.converged,
        iterations: fit.iterations,
        intercept: fit.intercepts(),
        covariate_coefs: (0..k).map(|j| fit.covariate_coefs(j)).collect(),
        s_slope: fit.gamma(),
        spline_var: fit.is_alternative().then(|| fit.spline_var.clone()),
        sigma: (0..k).map(|i| fit.sigma.row(i).iter().copied().collect()).collect(),
    }
}
