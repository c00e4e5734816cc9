//! Subject-level data container.
//!
//! Each subject carries one value of the covariate of interest `s`, an
//! adjustment covariate vector `x` and `K` outcomes, any of which may be
//! missing. Missingness is explicit (`Option<f64>`); no sentinel values.

use serde::{Deserialize, Serialize};
use std::fmt;

/// One row of the wide data layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub s: f64,
    pub x: Vec<f64>,
    pub y: Vec<Option<f64>>,
}

impl Subject {
    pub fn new(id: impl Into<String>, s: f64, x: Vec<f64>, y: Vec<Option<f64>>) -> Self {
        Self {
            id: id.into(),
            s,
            x,
            y,
        }
    }

    /// Subject with every outcome observed.
    pub fn complete(id: impl Into<String>, s: f64, x: Vec<f64>, y: &[f64]) -> Self {
        Self::new(id, s, x, y.iter().copied().map(Some).collect())
    }

    /// Indices of the observed outcomes, in increasing order.
    pub fn observed(&self) -> Vec<usize> {
        self.y
            .iter()
            .enumerate()
            .filter_map(|(k, v)| v.map(|_| k))
            .collect()
    }

    pub fn n_observed(&self) -> usize {
        self.y.iter().filter(|v| v.is_some()).count()
    }
}

/// A single invariant violation reported by [`Dataset::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Offending subject, when the violation is attached to one.
    pub subject: Option<String>,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.subject {
            Some(id) => write!(f, "subject {id}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    subjects: Vec<Subject>,
    covariate_names: Vec<String>,
    outcome_names: Vec<String>,
}

impl Dataset {
    /// Wraps subjects without checking invariants; call [`Dataset::validate`]
    /// (fitting code does so) before relying on them.
    pub fn new(subjects: Vec<Subject>, covariate_names: Vec<String>, outcome_names: Vec<String>) -> Self {
        Self {
            subjects,
            covariate_names,
            outcome_names,
        }
    }

    /// Builds a dataset with generated names `x1..xp` and `y1..yK`.
    pub fn from_subjects(subjects: Vec<Subject>) -> Self {
        let p = subjects.first().map_or(0, |s| s.x.len());
        let k = subjects.first().map_or(0, |s| s.y.len());
        Self::new(
            subjects,
            (1..=p).map(|j| format!("x{j}")).collect(),
            (1..=k).map(|j| format!("y{j}")).collect(),
        )
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn outcome_names(&self) -> &[String] {
        &self.outcome_names
    }

    pub fn n(&self) -> usize {
        self.subjects.len()
    }

    pub fn k(&self) -> usize {
        self.outcome_names.len()
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn s_values(&self) -> Vec<f64> {
        self.subjects.iter().map(|s| s.s).collect()
    }

    pub fn n_missing(&self) -> usize {
        self.subjects
            .iter()
            .map(|s| s.y.iter().filter(|v| v.is_none()).count())
            .sum()
    }

    pub fn n_observations(&self) -> usize {
        self.subjects.iter().map(Subject::n_observed).sum()
    }

    pub fn is_balanced(&self) -> bool {
        self.n_missing() == 0
    }

    /// Checks every structural invariant and returns all violations found.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let global = |field, message: String| Violation {
            subject: None,
            field,
            message,
        };
        if self.k() < 1 {
            out.push(global("y", "at least one outcome is required".into()));
        }
        if self.n() < 2 {
            out.push(global("subjects", format!("at least 2 subjects are required, got {}", self.n())));
        }
        let p = self.p();
        let k = self.k();
        for subj in &self.subjects {
            let mut push = |field, message: String| {
                out.push(Violation {
                    subject: Some(subj.id.clone()),
                    field,
                    message,
                })
            };
            if !subj.s.is_finite() {
                push("s", "value is not finite".into());
            }
            if subj.x.len() != p {
                push(
                    "x",
                    format!("inconsistent covariate length: {} (expected {p})", subj.x.len()),
                );
            }
            if subj.x.iter().any(|v| !v.is_finite()) {
                push("x", "covariate value is not finite".into());
            }
            if subj.y.len() != k {
                push("y", format!("outcome vector has length {} (expected {k})", subj.y.len()));
            }
            if subj.y.iter().all(Option::is_none) {
                push("y", "all outcomes are missing".into());
            }
            if subj.y.iter().flatten().any(|v| !v.is_finite()) {
                push("y", "outcome value is not finite".into());
            }
        }
        out
    }

    /// Returns the single-outcome dataset for `outcome` (0-based), keeping
    /// only subjects that observe it.
    pub fn single_outcome(&self, outcome: usize) -> Dataset {
        let subjects = self
            .subjects
            .iter()
            .filter(|s| s.y.get(outcome).copied().flatten().is_some())
            .map(|s| Subject::new(s.id.clone(), s.s, s.x.clone(), vec![s.y[outcome]]))
            .collect();
        Dataset::new(
            subjects,
            self.covariate_names.clone(),
            vec![self.outcome_names[outcome].clone()],
        )
    }

    /// Copy with each subject's `s` replaced by `s[perm[i]]`.
    pub fn with_permuted_s(&self, perm: &[usize]) -> Dataset {
        let mut out = self.clone();
        for (subj, &src) in out.subjects.iter_mut().zip(perm) {
            subj.s = self.subjects[src].s;
        }
        out
    }

    /// Copy with outcomes replaced; `y[i][k]` is ignored where the original is missing.
    pub fn with_outcomes(&self, y: &[Vec<f64>]) -> Dataset {
        let mut out = self.clone();
        for (subj, row) in out.subjects.iter_mut().zip(y) {
            for (v, &new) in subj.y.iter_mut().zip(row) {
                if v.is_some() {
                    *v = Some(new);
                }
            }
        }
        out
    }
}
