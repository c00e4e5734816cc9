//! Fixture generation shared by the CLI tests. Every fixture is synthetic.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use splineperm::{generate, Dataset, ErrorDist, GammaPattern, SimScenario, Subject};
use splineperm_cli::data::{read_csv, write_csv_file};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splineperm"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Simulated dataset with covariate `x_1` and outcomes `y_1..y_K`.
pub fn simulated(n: usize, k: usize, rho: f64, pattern: GammaPattern, seed: u64) -> Dataset {
    let ds = generate(&SimScenario::new(n, k, rho, pattern, ErrorDist::Normal), seed);
    Dataset::new(
        ds.subjects().to_vec(),
        vec!["1".into()],
        (1..=k).map(|j| j.to_string()).collect(),
    )
}

/// Cohort-shaped synthetic data: 487 subjects, two site indicators, a
/// treatment indicator, a baseline score `s` and five correlated outcomes,
/// about 3% of outcome cells missing. Outcomes 1 and 2 depend on `s`
/// nonlinearly; 3 to 5 do not.
pub fn synthetic_cohort(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = (0..487)
        .map(|i| {
            let site = rng.random_range(0..3);
            let treated = f64::from(rng.random_bool(0.5));
            let s: f64 = rng.sample::<f64, _>(StandardNormal);
            let shared: f64 = 0.6 * rng.sample::<f64, _>(StandardNormal);
            let x = vec![f64::from(site == 1), f64::from(site == 2), treated];
            let y = (0..5)
                .map(|k| {
                    let signal = match k {
                        0 => 0.4 * (1.5 * s).sin(),
                        1 => 0.2 * (s - 0.5).max(0.0),
                        _ => 0.0,
                    };
                    let mean = 0.3 * x[0] - 0.2 * x[1] + 0.25 * treated + signal;
                    let v = mean + shared + 0.8 * rng.sample::<f64, _>(StandardNormal);
                    // rounded as a measurement instrument would report
                    let v = (v * 1e4).round() / 1e4;
                    (!rng.random_bool(0.03)).then_some(v)
                })
                .collect();
            Subject::new(format!("P{:04}", i + 1), (s * 1e4).round() / 1e4, x, y)
        })
        .collect();
    Dataset::new(
        subjects,
        vec!["site_b".into(), "site_c".into(), "treated".into()],
        (1..=5).map(|k| format!("outcome{k}")).collect(),
    )
}

/// Checks a shipped fixture against its generator; `WRITE_FIXTURES=1`
/// rewrites it.
pub fn check_fixture(name: &str, ds: &Dataset) {
    let path = fixture(name);
    if std::env::var("WRITE_FIXTURES").is_ok() {
        write_csv_file(ds, &path).unwrap();
    }
    let shipped = read_csv(&path).unwrap();
    assert_eq!(&shipped, ds, "{name} is out of date; rerun with WRITE_FIXTURES=1");
}
