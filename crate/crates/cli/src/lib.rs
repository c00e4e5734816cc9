//! Command-line front end: wide-CSV ingestion, permutation tests, fitted
//! curve export and simulation plans.
//!
//! Exit codes: 0 success, 2 data, usage or I/O error, 3 estimation error.

pub mod curve;
pub mod data;
pub mod error;
pub mod simulate;
pub mod test_cmd;

pub use error::{CliError, CliResult};

use splineperm::KnotRule;

/// Parses `auto` or `LO,HI`.
pub fn parse_knot_range(text: &str) -> Result<KnotRule, String> {
    if text.trim() == "auto" {
        return Ok(KnotRule::ObservedRange);
    }
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [lo, hi] = parts[..] else {
        return Err(format!("knot range must be `auto` or `LO,HI`, got {text:?}"));
    };
    let lo: f64 = lo.parse().map_err(|_| format!("invalid lower knot bound {lo:?}"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("invalid upper knot bound {hi:?}"))?;
    if !(lo < hi) {
        return Err(format!("knot range needs LO < HI, got {lo},{hi}"));
    }
    Ok(KnotRule::Interval { lo, hi })
}

/// Human-readable form of a knot rule for report echoes.
pub fn knot_range_label(rule: &KnotRule) -> String {
    match rule {
        KnotRule::ObservedRange => "auto".into(),
        KnotRule::Interval { lo, hi } => format!("{lo},{hi}"),
        KnotRule::Explicit(k) => format!("{k:?}"),
    }
}

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
