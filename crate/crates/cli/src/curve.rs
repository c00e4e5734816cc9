//! `fit-curve`: fitted mean curves on an evenly spaced `s` grid.

use std::io::Write;
use std::path::PathBuf;

use splineperm::{fit, fitted_curve, Estimation, KnotRule, ModelSpec};

use crate::data;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, clap::Args)]
pub struct CurveArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub knots: usize,
    /// `auto` (observed range of s) or `LO,HI`; also the grid range
    #[arg(long, default_value = "auto", value_parser = crate::parse_knot_range)]
    pub knot_range: KnotRule,
    /// Number of grid points
    #[arg(long, default_value_t = 101)]
    pub grid: usize,
    /// Covariate values the curves are drawn at: `mean`, `zero` or a
    /// comma-separated list with one value per covariate
    #[arg(long, default_value = "mean")]
    pub reference_x: String,
    /// Restricted maximum likelihood (default)
    #[arg(long, conflicts_with = "ml")]
    pub reml: bool,
    /// Maximum likelihood instead of REML
    #[arg(long)]
    pub ml: bool,
    /// CSV path; stdout if omitted
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub struct Curves {
    pub outcomes: Vec<String>,
    pub grid: Vec<f64>,
    /// One vector per outcome.
    pub values: Vec<Vec<f64>>,
}

pub fn run(args: &CurveArgs) -> CliResult<()> {
    let curves = compute(args)?;
    let mut buf = Vec::new();
    write_curves(&curves, &mut buf)?;
    match &args.out {
        Some(path) => std::fs::write(path, buf)
            .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}

pub fn compute(args: &CurveArgs) -> CliResult<Curves> {
    if args.grid < 2 {
        return Err(CliError::data("grid needs at least 2 points"));
    }
    let dataset = data::read_csv(&args.data)?;
    let reference = match args.reference_x.trim() {
        "mean" => data::covariate_means(&dataset),
        "zero" => vec![0.0; dataset.p()],
        list => parse_list(list, dataset.p())?,
    };
    let estimation = if args.ml { Estimation::Ml } else { Estimation::Reml };
    let spec = ModelSpec::alternative(args.knots, args.knot_range.clone()).with_estimation(estimation);
    let fitted = fit(&dataset, &spec)?;

    let (lo, hi) = match args.knot_range {
        KnotRule::Interval { lo, hi } => (lo, hi),
        _ => {
            let s = dataset.s_values();
            (s.iter().copied().fold(f64::INFINITY, f64::min), s.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        }
    };
    let step = (hi - lo) / (args.grid - 1) as f64;
    let grid: Vec<f64> = (0..args.grid)
        .map(|g| if g + 1 == args.grid { hi } else { lo + g as f64 * step })
        .collect();
    let values = fitted_curve(&fitted, &grid, &reference)?;
    Ok(Curves {
        outcomes: dataset.outcome_names().to_vec(),
        grid,
        values,
    })
}

fn parse_list(list: &str, p: usize) -> CliResult<Vec<f64>> {
    let values = list
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::data(format!("invalid reference covariate value {v:?}")))
        })
        .collect::<CliResult<Vec<f64>>>()?;
    if values.len() != p {
        return Err(CliError::data(format!(
            "reference-x lists {} values but the data have {p} covariates",
            values.len()
        )));
    }
    Ok(values)
}

/// Header `s,y_<name>...`, one row per grid point.
pub fn write_curves<W: Write>(curves: &Curves, writer: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["s".to_string()];
    header.extend(curves.outcomes.iter().map(|n| format!("y_{n}")));
    let io = |e: csv::Error| CliError::data(format!("CSV error: {e}"));
    w.write_record(&header).map_err(io)?;
    for (g, s) in curves.grid.iter().enumerate() {
        let mut rec = vec![s.to_string()];
        rec.extend(curves.values.iter().map(|v| v[g].to_string()));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
