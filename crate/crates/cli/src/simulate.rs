//! `simulate`: runs one experiment described by a TOML plan.
//!
//! ```toml
//! n = 100
//! k = 5
//! rho = 0.25
//! pattern = "null"          # null | sparse | non-uniform | uniform
//! error_dist = "normal"     # normal | sln
//! methods = ["covariate", "residual", "cholesky"]   # optional, default all
//! r = 500
//! m = 199
//! alpha = 0.05              # optional
//! seed = 20240601
//! knots = 30                # optional, equally spaced on [-2, 2]
//! ```

use std::path::PathBuf;

use serde::Deserialize;
use splineperm::{run_experiment, table_report, ErrorDist, ExperimentPlan, GammaPattern, PermutationMethod, SimScenario};

use crate::error::{CliError, CliResult};

pub const PLAN_KEYS: [&str; 11] = [
    "n", "k", "rho", "pattern", "error_dist", "methods", "r", "m", "alpha", "seed", "knots",
];

#[derive(Debug, Clone, clap::Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub plan: PathBuf,
    /// CSV of per-method results; the text table always goes to stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub n: usize,
    pub k: usize,
    pub rho: f64,
    pub pattern: GammaPattern,
    pub error_dist: ErrorDist,
    pub methods: Option<Vec<String>>,
    pub r: usize,
    pub m: usize,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub knots: Option<usize>,
}

impl PlanFile {
    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| {
            CliError::data(format!(
                "invalid plan: {}\nvalid keys: {}",
                e.message(),
                PLAN_KEYS.join(", ")
            ))
        })
    }

    pub fn to_plan(&self, workers: usize) -> CliResult<ExperimentPlan> {
        let methods = match &self.methods {
            Some(names) => names
                .iter()
                .map(|m| m.parse::<PermutationMethod>())
                .collect::<Result<Vec<_>, _>>()?,
            None => PermutationMethod::ALL.to_vec(),
        };
        let scenario = SimScenario::new(self.n, self.k, self.rho, self.pattern, self.error_dist);
        let mut plan = ExperimentPlan::new(scenario, methods, self.r, self.m, self.seed);
        if let Some(alpha) = self.alpha {
            plan.alpha = alpha;
        }
        if let Some(knots) = self.knots {
            plan.n_knots = knots;
        }
        plan.workers = workers;
        plan.validate()?;
        Ok(plan)
    }
}

pub fn run(args: &SimulateArgs) -> CliResult<()> {
    let text = std::fs::read_to_string(&args.plan)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", args.plan.display())))?;
    let plan = PlanFile::parse(&text)?.to_plan(args.workers)?;
    let result = run_experiment(&plan)?;
    let (table, csv) = table_report(std::slice::from_ref(&result));
    print!("{table}");
    println!("wall time {:.1} s", result.wall_time_secs);
    if let Some(path) = &args.out {
        std::fs::write(path, csv).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}
