use nalgebra::DMatrix;

use super::params::{tri_len, CovParams};
use super::rotated::RotatedEngine;
use super::stats::SuffStats;
use super::woodbury::{rank_of, Profile, WoodburyEngine};
use crate::basis::{make_knots, SplineBasis};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Estimation, FittedModel, ModelSpec};
use crate::optim::{minimize, numeric_gradient, LbfgsOptions};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Validated data reduced to the statistics a fit needs.
pub(crate) struct Problem {
    pub stats: SuffStats,
    pub basis: Option<SplineBasis>,
}

pub(crate) fn check_dataset(dataset: &Dataset) -> Result<()> {
    let violations = dataset.validate();
    if !violations.is_empty() {
        let msg = violations
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::InvalidData(msg));
    }
    let required = dataset.k() + dataset.p() + 1;
    if dataset.n() <= required {
        return Err(Error::InsufficientSubjects {
            n: dataset.n(),
            required,
        });
    }
    Ok(())
}

pub(crate) fn basis_for(dataset: &Dataset, spec: &ModelSpec) -> Result<Option<SplineBasis>> {
    if !spec.include_s {
        return Ok(None);
    }
    let s = dataset.s_values();
    let basis = make_knots(&spec.knot_rule, spec.n_knots, &s)?;
    let mut sorted = s.clone();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let required = basis.len() + 2;
    if sorted.len() < required {
        return Err(Error::TooFewDistinct {
            distinct: sorted.len(),
            required,
        });
    }
    Ok(Some(basis))
}

impl Problem {
    pub fn new(dataset: &Dataset, spec: &ModelSpec) -> Result<Self> {
        check_dataset(dataset)?;
        let basis = basis_for(dataset, spec)?;
        Self::with_basis(dataset, spec, basis)
    }

    /// Skips knot placement; `basis` must match `spec.include_s`.
    pub fn with_basis(dataset: &Dataset, spec: &ModelSpec, basis: Option<SplineBasis>) -> Result<Self> {
        let stats = SuffStats::build(dataset, spec.include_s, basis.as_ref());
        let sxx = stats.total_sxx();
        let rank = rank_of(&sxx);
        if rank < stats.q {
            return Err(Error::CollinearCovariates { rank, cols: stats.q });
        }
        Ok(Self { stats, basis })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SolveOptions {
    pub blups: bool,
    /// Interior starts, each setting the spline variances to this fraction
    /// of the residual variances of the boundary fit.
    pub start_fractions: Vec<f64>,
    /// Also optimize from every point of the start grid. Always on when
    /// the sample is small relative to the mean model.
    pub multistart: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            blups: true,
            start_fractions: vec![0.1, 0.01],
            multistart: false,
        }
    }
}

struct Solution {
    params: CovParams,
    profile: Profile,
    converged: bool,
    iterations: usize,
}

/// Closed-form fit when every subject observes every outcome and there is
/// no random effect: multivariate least squares.
fn closed_form(stats: &SuffStats, estimation: Estimation) -> Result<Solution> {
    let pat = &stats.patterns[0];
    let (n, k, q) = (stats.n_subjects as f64, stats.k, stats.q);
    let chol = pat.sxx.clone().cholesky().ok_or(Error::CollinearCovariates {
        rank: rank_of(&pat.sxx),
        cols: q,
    })?;
    let beta = chol.solve(&pat.sxy);
    let rss = &pat.syy - pat.sxy.transpose() * &beta;
    let rss = (&rss + rss.transpose()) * 0.5;
    let denom = match estimation {
        Estimation::Ml => n,
        Estimation::Reml => n - q as f64,
    };
    let sigma = rss / denom;
    let sigma_chol = sigma.clone().cholesky().ok_or(Error::SingularCovariance)?;
    let logdet = 2.0 * sigma_chol.l_dirty().diagonal().iter().map(|d: &f64| d.ln()).sum::<f64>();
    let kf = k as f64;
    let loglik = match estimation {
        Estimation::Ml => -0.5 * (n * kf * LN_2PI + n * logdet + n * kf),
        Estimation::Reml => {
            let logdet_sxx = 2.0 * chol.l_dirty().diagonal().iter().map(|d: &f64| d.ln()).sum::<f64>();
            let df = n - q as f64;
            -0.5 * (df * kf * LN_2PI + df * logdet + kf * logdet_sxx + df * kf)
        }
    };
    Ok(Solution {
        params: CovParams::new(Vec::new(), sigma_chol.l())?,
        profile: Profile { loglik, beta },
        converged: true,
        iterations: 0,
    })
}

enum Engine<'a> {
    Rotated(RotatedEngine),
    Woodbury(WoodburyEngine<'a>),
}

impl Engine<'_> {
    fn profile(&self, params: &CovParams, estimation: Estimation) -> Result<Profile> {
        match self {
            Engine::Rotated(e) => e.profile(params, estimation),
            Engine::Woodbury(e) => e.profile(params, estimation),
        }
    }
}

/// Residual variances below this fraction of an outcome's marginal variance
/// mean the fit has collapsed onto the data; the likelihood there is
/// unbounded or lost to cancellation.
const VARIANCE_FLOOR: f64 = 1e-10;

/// Log of the smallest admissible conditional residual variance `L_kk²`.
fn log_floor(stats: &SuffStats) -> Vec<f64> {
    let d = diagonal_start(stats);
    (0..stats.k).map(|kk| (VARIANCE_FLOOR * d[(kk, kk)]).ln()).collect()
}

fn collapsed(theta: &[f64], k: usize, with_spline: bool, log_floor: &[f64]) -> bool {
    let mut idx = if with_spline { k } else { 0 };
    for (kk, floor) in log_floor.iter().enumerate() {
        idx += kk;
        if 2.0 * theta[idx] < *floor {
            return true;
        }
        idx += 1;
    }
    false
}

fn optimize(
    engine: &Engine<'_>,
    start: &CovParams,
    k: usize,
    estimation: Estimation,
    spec: &ModelSpec,
    log_floor: &[f64],
) -> Result<Solution> {
    let with_spline = start.has_spline();
    let theta0 = start.to_theta();
    let opts = LbfgsOptions {
        max_iter: spec.max_iter,
        f_rel_tol: spec.convergence_tol,
        x_tol: spec.convergence_tol,
        ..Default::default()
    };
    let neg_loglik = |theta: &[f64]| -> f64 {
        if collapsed(theta, k, with_spline, log_floor) {
            return f64::NAN;
        }
        let params = CovParams::from_theta(theta, k, with_spline);
        engine
            .profile(&params, estimation)
            .map_or(f64::NAN, |p| -p.loglik)
    };
    let result = match (engine, estimation) {
        (Engine::Rotated(e), Estimation::Ml) => minimize(
            |theta, grad| {
                if collapsed(theta, k, with_spline, log_floor) {
                    return f64::NAN;
                }
                match e.profile_with_gradient(theta, with_spline, grad) {
                    Ok(p) => {
                        grad.iter_mut().for_each(|g| *g = -*g);
                        -p.loglik
                    }
                    Err(_) => f64::NAN,
                }
            },
            &theta0,
            &opts,
        ),
        _ => minimize(
            |theta, grad| numeric_gradient(neg_loglik, theta, grad),
            &theta0,
            &opts,
        ),
    };
    if collapsed(&result.x, k, with_spline, log_floor) {
        return Err(Error::SingularCovariance);
    }
    let params = CovParams::from_theta(&result.x, k, with_spline);
    let profile = engine.profile(&params, estimation)?;
    Ok(Solution {
        params,
        profile,
        converged: result.converged,
        iterations: result.iterations,
    })
}

fn diagonal_start(stats: &SuffStats) -> DMatrix<f64> {
    // per-outcome variance of the observed values
    let k = stats.k;
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    let mut cnt = vec![0.0; k];
    for pat in &stats.patterns {
        for &kk in &pat.observed {
            // intercept is the first fixed-effect column
            sum[kk] += pat.sxy[(0, kk)];
            sq[kk] += pat.syy[(kk, kk)];
            cnt[kk] += pat.count as f64;
        }
    }
    DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            let m = sum[i] / cnt[i];
            (sq[i] / cnt[i] - m * m).max(1e-8)
        } else {
            0.0
        }
    })
}

/// Interior starting point relative to the boundary fit: spline variance
/// `frac[k] · Σ̂_kk`, and outcome `k`'s residual variance scaled by
/// `shrink[k]` (correlations kept).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Start {
    pub frac: Vec<f64>,
    pub shrink: Vec<f64>,
}

impl Start {
    pub fn shared(frac: f64, k: usize) -> Self {
        Self {
            frac: vec![frac; k],
            shrink: vec![1.0; k],
        }
    }

    fn params(&self, sigma_chol: &DMatrix<f64>, diag: &[f64]) -> Result<CovParams> {
        let k = diag.len();
        let var = (0..k).map(|kk| self.frac[kk] * diag[kk]).collect();
        let mut chol = sigma_chol.clone();
        for kk in 0..k {
            let f = self.shrink[kk].sqrt();
            chol.row_mut(kk).iter_mut().for_each(|v| *v *= f);
        }
        CovParams::new(var, chol)
    }
}

const GRID_SCALES: [f64; 6] = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0];
const GRID_SHRINK: [f64; 3] = [1.0, 0.1, 0.01];

/// Multi-start grid: shared spline-variance scales, and (K > 1) one outcome
/// raised at a time, with the raised outcomes' residual variances
/// optionally shrunk.
fn start_grid(k: usize) -> Vec<Start> {
    let floor = GRID_SCALES[0];
    let mut out = Vec::new();
    for &t in &GRID_SCALES {
        for &h in &GRID_SHRINK {
            out.push(Start {
                frac: vec![t; k],
                shrink: vec![h; k],
            });
        }
    }
    if k > 1 {
        for kk in 0..k {
            for &t in &GRID_SCALES[1..] {
                for &h in &GRID_SHRINK {
                    let mut st = Start {
                        frac: vec![floor; k],
                        shrink: vec![1.0; k],
                    };
                    st.frac[kk] = t;
                    st.shrink[kk] = h;
                    out.push(st);
                }
            }
        }
    }
    out
}

fn diag_of(sigma_chol: &DMatrix<f64>) -> Vec<f64> {
    (0..sigma_chol.nrows())
        .map(|i| (0..=i).map(|j| sigma_chol[(i, j)].powi(2)).sum())
        .collect()
}

pub(crate) fn solve(problem: &Problem, spec: &ModelSpec, opts: SolveOptions) -> Result<FittedModel> {
    let stats = &problem.stats;
    let k = stats.k;
    let est = spec.estimation;
    let balanced = stats.is_balanced();
    let alternative = problem.basis.is_some();
    let floor = log_floor(stats);

    let solution = if !alternative {
        if balanced {
            closed_form(stats, est)?
        } else {
            let engine = Engine::Woodbury(WoodburyEngine::new(stats));
            let start = CovParams::from_sigma(Vec::new(), &diagonal_start(stats))?;
            optimize(&engine, &start, k, est, spec, &floor)?
        }
    } else {
        let use_rotated = balanced;
        let engine = if use_rotated {
            Engine::Rotated(RotatedEngine::new(stats)?)
        } else {
            Engine::Woodbury(WoodburyEngine::new(stats))
        };
        // Start (a): spline variances pinned at zero.
        let boundary = if balanced {
            closed_form(stats, est)?
        } else {
            let start = CovParams::from_sigma(Vec::new(), &diagonal_start(stats))?;
            optimize(&engine, &start, k, est, spec, &floor)?
        };
        let sigma_chol = boundary.params.sigma_chol.clone();
        let boundary = Solution {
            params: CovParams::new(vec![0.0; k], sigma_chol.clone())?,
            ..boundary
        };
        // Further starts: positive spline variances at several scales.
        let mut best = boundary;
        let mut converged = true;
        let mut iterations = 0;
        let mut starts: Vec<Start> = opts.start_fractions.iter().map(|&f| Start::shared(f, k)).collect();
        let n_spline = problem.basis.as_ref().map_or(0, SplineBasis::len);
        if opts.multistart || stats.n_subjects <= 2 * (stats.q + n_spline) {
            starts.extend(start_grid(k));
        }
        let diag = diag_of(&sigma_chol);
        for st in &starts {
            let start = st.params(&sigma_chol, &diag)?;
            match optimize(&engine, &start, k, est, spec, &floor) {
                Ok(run) => {
                    converged &= run.converged;
                    iterations += run.iterations;
                    if run.profile.loglik > best.profile.loglik {
                        best = run;
                    }
                }
                Err(_) => converged = false,
            }
        }
        Solution {
            converged,
            iterations,
            ..best
        }
    };

    let blups = match (&problem.basis, opts.blups) {
        (Some(_), true) => {
            Some(WoodburyEngine::new(stats).blup(&solution.params, &solution.profile.beta)?)
        }
        _ => None,
    };
    let n_params = stats.q * k + tri_len(k) + if alternative { k } else { 0 };
    Ok(FittedModel {
        beta: solution.profile.beta,
        spline_var: solution.params.spline_var.clone(),
        sigma: solution.params.sigma(),
        loglik: solution.profile.loglik,
        blups,
        basis: problem.basis.clone(),
        estimation: est,
        converged: solution.converged,
        iterations: solution.iterations,
        n_params,
    })
}

