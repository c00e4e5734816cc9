mod common;

use common::{check_fixture, cli, fixture, simulated, synthetic_cohort};
use serde_json::Value;
use splineperm::{fit, Dataset, GammaPattern, KnotRule, ModelSpec, Subject};
use splineperm_cli::curve::{compute, CurveArgs};
use splineperm_cli::data::{covariate_means, parse_csv, read_csv, write_csv, write_csv_file};

/// Seed of the uniform-signal fixture, pinned after checking that the
/// covariate test with M = 99 and `--seed 1` gives p <= 0.05.
const UNIFORM_SEED: u64 = 1;
const NULL_N200_SEED: u64 = 2;
const COHORT_SEED: u64 = 2024;

fn json(out: &std::process::Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn shipped_fixtures_match_their_generators() {
    check_fixture("null_n20_k2.csv", &simulated(20, 2, 0.25, GammaPattern::Null, 1));
    check_fixture("null_n200_k2.csv", &simulated(200, 2, 0.25, GammaPattern::Null, NULL_N200_SEED));
    check_fixture("uniform_n200_k5.csv", &simulated(200, 5, 0.25, GammaPattern::Uniform, UNIFORM_SEED));
    check_fixture("synthetic_cohort.csv", &synthetic_cohort(COHORT_SEED));
}

#[test]
fn csv_round_trip_preserves_values_and_missingness() {
    let awkward = [0.1 + 0.2, -1.0 / 3.0, 1e-300, 6.02214076e23, -0.0, 123456789.123456789];
    let subjects: Vec<Subject> = (0..12)
        .map(|i| {
            let v = awkward[i % awkward.len()] * (i as f64 + 1.0);
            let y = vec![Some(v), (i % 4 != 1).then_some(-v), (i % 5 != 2).then_some(v.sqrt().max(0.0))];
            Subject::new(format!("id-{i}"), v / 7.0, vec![v, f64::from(i as u8 % 2)], y)
        })
        .collect();
    let ds = Dataset::new(subjects, vec!["a".into(), "flag".into()], vec!["p".into(), "q".into(), "r".into()]);
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf).unwrap();
    let back = parse_csv(buf.as_slice()).unwrap();
    assert_eq!(back, ds);
    assert_eq!(back.n_missing(), ds.n_missing());
    assert!(ds.n_missing() > 0);
    // every value agrees to 15 significant digits (here: exactly)
    for (a, b) in ds.subjects().iter().zip(back.subjects()) {
        for (u, v) in a.x.iter().zip(&b.x) {
            assert_eq!(format!("{u:.14e}"), format!("{v:.14e}"));
        }
    }
}

#[test]
fn test_report_p_value_lies_on_lattice_and_matches_schema() {
    let out = cli(&["test", "--data", fixture("null_n20_k2.csv").to_str().unwrap(), "--method", "covariate", "--m", "99", "--seed", "1", "--knots", "5"]);
    let report = json(&out);
    let p = report["joint"]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert!((p * 99.0 - (p * 99.0).round()).abs() < 1e-9, "{p}");
    assert_eq!(report["joint"]["m"], 99);
    assert_eq!(report["config"]["method"], "covariate");
    assert_eq!(report["software"]["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(report["data"]["n_subjects"], 20);
    assert_eq!(report["knots"].as_array().unwrap().len(), 5);
    assert!(report["estimates"]["null"]["s_slope"].is_null());
    assert_eq!(report["estimates"]["alternative"]["spline_var"].as_array().unwrap().len(), 2);
    validate(&report);
}

fn validate(report: &Value) {
    let schema: Value =
        serde_json::from_str(include_str!("../schema/test_report.schema.json")).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(report).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn identical_runs_differ_only_in_timestamp() {
    let data = fixture("null_n20_k2.csv");
    let args = ["test", "--data", data.to_str().unwrap(), "--method", "cholesky", "--m", "39", "--seed", "5", "--knots", "5", "--univariate"];
    let strip = |out: std::process::Output| {
        let mut v = json(&out);
        assert!(v["timestamp"].is_string());
        v["timestamp"] = Value::Null;
        serde_json::to_string(&v).unwrap()
    };
    let a = strip(cli(&args));
    let b = strip(cli(&args));
    assert_eq!(a, b);
}

#[test]
fn univariate_tests_carry_bonferroni_adjustment() {
    let data = fixture("null_n20_k2.csv");
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("report.json");
    let out = cli(&["test", "--data", data.to_str().unwrap(), "--method", "residual", "--m", "19", "--knots", "4", "--univariate", "--alpha", "0.1", "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    validate(&report);
    let uni = &report["univariate"];
    let tests = uni["tests"].as_array().unwrap();
    assert_eq!(tests.len(), 2);
    let ps: Vec<f64> = tests.iter().map(|t| t["p_value"].as_f64().unwrap()).collect();
    let expected = (2.0 * ps[0].min(ps[1])).min(1.0);
    assert_eq!(uni["bonferroni_p"].as_f64().unwrap(), expected);
    for (t, p) in tests.iter().zip(&ps) {
        assert_eq!(t["p_adjusted"].as_f64().unwrap(), (2.0 * p).min(1.0));
    }
    assert_eq!(tests[0]["outcome"], "1");
    assert_ne!(tests[0]["seed"], tests[1]["seed"]);
}

#[test]
fn uniform_signal_fixture_is_detected() {
    let out = cli(&["test", "--data", fixture("uniform_n200_k5.csv").to_str().unwrap(), "--method", "covariate", "--m", "99", "--seed", "1", "--knot-range=-2,2"]);
    let report = json(&out);
    let p = report["joint"]["p_value"].as_f64().unwrap();
    assert!(p <= 0.05, "p = {p}");
    assert_eq!(report["joint"]["reject"], true);
    assert_eq!(report["config"]["knot_range"], "-2,2");
}

fn unbalanced_copy(dir: &std::path::Path) -> std::path::PathBuf {
    let ds = read_csv(&fixture("null_n20_k2.csv")).unwrap();
    let mut subjects = ds.subjects().to_vec();
    subjects[3].y[1] = None;
    let ds = Dataset::new(subjects, ds.covariate_names().to_vec(), ds.outcome_names().to_vec());
    let path = dir.join("unbalanced.csv");
    write_csv_file(&ds, &path).unwrap();
    path
}

#[test]
fn residual_method_on_unbalanced_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = unbalanced_copy(dir.path());
    let out = cli(&["test", "--data", path.to_str().unwrap(), "--method", "residual", "--m", "19", "--knots", "4"]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("balanced") && msg.contains("residual vector"), "{msg}");
    // the other two methods accept the same file
    for method in ["covariate", "cholesky"] {
        let out = cli(&["test", "--data", path.to_str().unwrap(), "--method", method, "--m", "19", "--knots", "4"]);
        assert!(out.status.success(), "{method}: {}", stderr(&out));
    }
}

#[test]
fn data_problems_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "id,s,y_a\n1,0.5,1\n2,oops,2\n").unwrap();
    let missing = dir.path().join("absent.csv");
    for data in [&bad, &missing] {
        let out = cli(&["test", "--data", data.to_str().unwrap(), "--method", "covariate"]);
        assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    }
    let out = cli(&["test", "--data", bad.to_str().unwrap(), "--method", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = cli(&["test", "--data", bad.to_str().unwrap(), "--method", "covariate", "--knot-range", "3,1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn singular_null_covariance_exits_3() {
    // y_2 = 2 y_1 makes the residual covariance singular
    let ds = read_csv(&fixture("null_n20_k2.csv")).unwrap();
    let subjects = ds
        .subjects()
        .iter()
        .map(|s| Subject::new(s.id.clone(), s.s, s.x.clone(), vec![s.y[0], s.y[0].map(|v| 2.0 * v)]))
        .collect();
    let ds = Dataset::new(subjects, ds.covariate_names().to_vec(), ds.outcome_names().to_vec());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("singular.csv");
    write_csv_file(&ds, &path).unwrap();
    let out = cli(&["test", "--data", path.to_str().unwrap(), "--method", "cholesky", "--m", "19", "--knots", "4"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

fn curve_args(data: &str, reference: &str) -> CurveArgs {
    CurveArgs {
        data: fixture(data),
        knots: 10,
        knot_range: KnotRule::ObservedRange,
        grid: 25,
        reference_x: reference.into(),
        reml: false,
        ml: false,
        out: None,
    }
}

#[test]
fn curve_csv_has_grid_rows_and_one_column_per_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("curves.csv");
    let data = fixture("null_n20_k2.csv");
    let out = cli(&["fit-curve", "--data", data.to_str().unwrap(), "--knots", "5", "--grid", "17", "--ml", "--out", out_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut rdr = csv::Reader::from_path(&out_path).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["s", "y_1", "y_2"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 17);
    assert!(rows.iter().all(|r| r.len() == 3));
    let s: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    let observed = read_csv(&data).unwrap().s_values();
    assert_eq!(s[0], observed.iter().copied().fold(f64::INFINITY, f64::min));
    assert_eq!(s[16], observed.iter().copied().fold(f64::NEG_INFINITY, f64::max));
}

#[test]
fn reference_x_zero_and_mean_differ_by_a_vertical_shift() {
    let mean = compute(&curve_args("null_n200_k2.csv", "mean")).unwrap();
    let zero = compute(&curve_args("null_n200_k2.csv", "zero")).unwrap();
    let listed = compute(&curve_args("null_n200_k2.csv", "0")).unwrap();
    assert_eq!(zero.values, listed.values);

    let ds = read_csv(&fixture("null_n200_k2.csv")).unwrap();
    let xbar = covariate_means(&ds);
    let fitted = fit(&ds, &ModelSpec::alternative(10, KnotRule::ObservedRange).with_estimation(splineperm::Estimation::Reml)).unwrap();
    for k in 0..2 {
        let shift: f64 = fitted.covariate_coefs(k).iter().zip(&xbar).map(|(b, x)| b * x).sum();
        assert!(shift.abs() > 1e-6);
        for (m, z) in mean.values[k].iter().zip(&zero.values[k]) {
            assert!((m - z - shift).abs() < 1e-12, "{m} {z} {shift}");
        }
    }
}

/// On the design range [-2, 2]: over the full observed range (about 6 wide
/// at N = 200) sampling noise in the linear slope alone approaches 0.5.
#[test]
fn null_signal_gives_near_flat_curves() {
    let args = CurveArgs {
        knot_range: KnotRule::Interval { lo: -2.0, hi: 2.0 },
        ..curve_args("null_n200_k2.csv", "mean")
    };
    let curves = compute(&args).unwrap();
    for v in &curves.values {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo < 0.5, "range {}", hi - lo);
    }
}

#[test]
fn reference_list_length_is_checked() {
    let err = compute(&curve_args("null_n200_k2.csv", "1,2")).err().unwrap();
    assert_eq!(err.code, 2);
}

fn write_plan(dir: &std::path::Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("plan.toml");
    std::fs::write(&path, body).unwrap();
    path
}

const TINY_PLAN: &str = "n = 30\nk = 2\nrho = 0.25\npattern = \"null\"\nerror_dist = \"normal\"\nr = 2\nm = 19\nseed = 11\nknots = 5\n";

#[test]
fn tiny_plan_reports_rates_in_halves() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), TINY_PLAN);
    let csv_path = dir.path().join("out.csv");
    let out = cli(&["simulate", "--plan", plan.to_str().unwrap(), "--out", csv_path.to_str().unwrap(), "--workers", "2"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("(N,K)"));
    let mut rdr = csv::Reader::from_path(&csv_path).unwrap();
    let col = rdr.headers().unwrap().iter().position(|h| h == "rejection_rate").unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        let rate: f64 = r[col].parse().unwrap();
        assert!([0.0, 0.5, 1.0].contains(&rate), "{rate}");
    }
}

#[test]
fn unknown_plan_key_exits_2_and_lists_valid_keys() {
    let dir = tempfile::tempdir().unwrap();
    let plan = write_plan(dir.path(), &TINY_PLAN.replace("rho =", "rho_ ="));
    let out = cli(&["simulate", "--plan", plan.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("rho_") && msg.contains("valid keys") && msg.contains("rho,"), "{msg}");
}

#[test]
fn invalid_plan_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for body in [
        TINY_PLAN.replace("m = 19", "m = 5"),
        TINY_PLAN.replace("\"null\"", "\"wavy\""),
        TINY_PLAN.replace("knots = 5", "knots = 5\nmethods = [\"shuffle\"]"),
        TINY_PLAN.replace("seed = 11\n", ""),
    ] {
        let plan = write_plan(dir.path(), &body);
        let out = cli(&["simulate", "--plan", plan.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{body}\n{}", stderr(&out));
    }
}

#[test]
fn cohort_fixture_runs_end_to_end() {
    let data = fixture("synthetic_cohort.csv");
    let report = json(&cli(&["test", "--data", data.to_str().unwrap(), "--method", "cholesky", "--m", "19", "--knots", "10"]));
    validate(&report);
    assert_eq!(report["data"]["n_subjects"], 487);
    assert_eq!(report["data"]["n_covariates"], 3);
    assert!(report["data"]["n_missing"].as_u64().unwrap() > 0);
    let out = cli(&["fit-curve", "--data", data.to_str().unwrap(), "--knots", "10", "--grid", "9", "--reference-x", "0,0,1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 10);
}
