//! Truncated-line spline basis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::KnotRule;

/// Knots `κ_1 < ... < κ_C` of a piecewise-linear spline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    knots: Vec<f64>,
}

impl SplineBasis {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Knots("at least one knot is required".into()));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::Knots("knots must be finite".into()));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Knots("knots must be strictly increasing".into()));
        }
        Ok(Self { knots })
    }

    /// `count` interior knots `lo + c (hi - lo) / (count + 1)`, `c = 1..=count`.
    pub fn equally_spaced(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Knots("at least one knot is required".into()));
        }
        if !(lo < hi) {
            return Err(Error::Knots(format!("degenerate range [{lo}, {hi}]")));
        }
        let step = (hi - lo) / (count as f64 + 1.0);
        Self::new((1..=count).map(|c| lo + c as f64 * step).collect())
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// `(s - κ_c)_+` for every knot.
    pub fn evaluate(&self, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.knots.len()];
        self.evaluate_into(s, &mut out);
        out
    }

    pub fn evaluate_into(&self, s: f64, out: &mut [f64]) {
        for (o, &k) in out.iter_mut().zip(&self.knots) {
            *o = (s - k).max(0.0);
        }
    }

    /// `γ s + Σ_c a_c (s - κ_c)_+`.
    pub fn curve(&self, slope: f64, coefs: &[f64], s: f64) -> f64 {
        slope * s
            + self
                .knots
                .iter()
                .zip(coefs)
                .map(|(&k, &a)| a * (s - k).max(0.0))
                .sum::<f64>()
    }
}

/// Places knots according to `rule`.
pub fn make_knots(rule: &KnotRule, count: usize, s_values: &[f64]) -> Result<SplineBasis> {
    match rule {
        KnotRule::Interval { lo, hi } => SplineBasis::equally_spaced(*lo, *hi, count),
        KnotRule::ObservedRange => {
            let lo = s_values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s_values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(lo < hi) {
                return Err(Error::Knots("all s values are equal".into()));
            }
            SplineBasis::equally_spaced(lo, hi, count)
        }
        KnotRule::Explicit(knots) => SplineBasis::new(knots.clone()),
    }
}
