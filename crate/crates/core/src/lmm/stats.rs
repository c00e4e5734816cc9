//! Sufficient statistics grouped by missingness pattern.
//!
//! Every likelihood quantity of the model is a sum over subjects of terms
//! that depend on the subject only through `x_i`, `z_i`, its observed set
//! and `y_i`. Subjects sharing an observed set are therefore summarized by
//! cross-product matrices, computed once per dataset.

use nalgebra::{DMatrix, DVector};

use crate::basis::SplineBasis;
use crate::dataset::{Dataset, Subject};

#[derive(Debug, Clone)]
pub(crate) struct PatternStats {
    /// Observed outcome indices, increasing.
    pub observed: Vec<usize>,
    pub count: usize,
    /// Σ x xᵀ (q x q)
    pub sxx: DMatrix<f64>,
    /// Σ z xᵀ (C x q)
    pub szx: DMatrix<f64>,
    /// Σ z zᵀ (C x C)
    pub szz: DMatrix<f64>,
    /// Σ x ỹᵀ (q x K), ỹ zero-filled at missing outcomes
    pub sxy: DMatrix<f64>,
    /// Σ z ỹᵀ (C x K)
    pub szy: DMatrix<f64>,
    /// Σ ỹ ỹᵀ (K x K)
    pub syy: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct SuffStats {
    pub k: usize,
    pub q: usize,
    pub c: usize,
    pub n_subjects: usize,
    pub n_obs: usize,
    pub patterns: Vec<PatternStats>,
}

/// Fixed-effect row `(1, xᵀ, [s])`.
pub(crate) fn fixed_row(subject: &Subject, include_s: bool) -> Vec<f64> {
    let mut row = Vec::with_capacity(subject.x.len() + 2);
    row.push(1.0);
    row.extend_from_slice(&subject.x);
    if include_s {
        row.push(subject.s);
    }
    row
}

impl SuffStats {
    pub fn build(dataset: &Dataset, include_s: bool, basis: Option<&SplineBasis>) -> Self {
        let k = dataset.k();
        let q = 1 + dataset.p() + usize::from(include_s);
        let c = basis.map_or(0, SplineBasis::len);
        let mut patterns: Vec<PatternStats> = Vec::new();
        let mut z = DVector::zeros(c);
        for subj in dataset.subjects() {
            let observed = subj.observed();
            let idx = match patterns.iter().position(|p| p.observed == observed) {
                Some(i) => i,
                None => {
                    patterns.push(PatternStats {
                        observed,
                        count: 0,
                        sxx: DMatrix::zeros(q, q),
                        szx: DMatrix::zeros(c, q),
                        szz: DMatrix::zeros(c, c),
                        sxy: DMatrix::zeros(q, k),
                        szy: DMatrix::zeros(c, k),
                        syy: DMatrix::zeros(k, k),
                    });
                    patterns.len() - 1
                }
            };
            let pat = &mut patterns[idx];
            let x = DVector::from_vec(fixed_row(subj, include_s));
            let y = DVector::from_iterator(k, subj.y.iter().map(|v| v.unwrap_or(0.0)));
            if let Some(b) = basis {
                b.evaluate_into(subj.s, z.as_mut_slice());
            }
            pat.count += 1;
            pat.sxx.ger(1.0, &x, &x, 1.0);
            pat.sxy.ger(1.0, &x, &y, 1.0);
            pat.syy.ger(1.0, &y, &y, 1.0);
            if c > 0 {
                pat.szx.ger(1.0, &z, &x, 1.0);
                pat.szz.ger(1.0, &z, &z, 1.0);
                pat.szy.ger(1.0, &z, &y, 1.0);
            }
        }
        Self {
            k,
            q,
            c,
            n_subjects: dataset.n(),
            n_obs: dataset.n_observations(),
            patterns,
        }
    }

    pub fn is_balanced(&self) -> bool {
        self.patterns.len() == 1 && self.patterns[0].observed.len() == self.k
    }

    /// Σ x xᵀ over all subjects.
    pub fn total_sxx(&self) -> DMatrix<f64> {
        self.patterns
            .iter()
            .fold(DMatrix::zeros(self.q, self.q), |acc, p| acc + &p.sxx)
    }
}
