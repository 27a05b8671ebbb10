//! End-to-end runs of the command-line front end.

use std::path::Path;
use std::process::Command;

use matchsurv::cli::{io::read_cohort_file, run};
use matchsurv::pipeline::{analyze, AnalysisConfig};
use matchsurv::simulate::{generate_cohort, SimConfig};

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn run_args(args: &[&str]) -> i32 {
    let mut v = vec!["matchsurv"];
    v.extend_from_slice(args);
    run(v)
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn value_at(rows: &[Vec<String>], t: f64, col: usize) -> f64 {
    let row = rows
        .iter()
        .find(|r| r[0].parse::<f64>().unwrap() == t)
        .unwrap_or_else(|| panic!("no row at t = {t}"));
    row[col].parse().unwrap()
}

const HAND: &str = "\
id,obs_time,death,treated,treat_time,z1
1,2.0,1,1,1.0,0
2,3.5,1,1,1.0,0
3,0.5,1,0,,0
4,1.8,1,0,,0
5,2.6,1,0,,0
6,4.0,1,0,,0
7,3.0,1,0,,0
8,1.2,1,0,,0
";

#[test]
fn hand_cohort_reduces_to_nelson_aalen() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("c.csv");
    write(&input, HAND);
    let out = dir.path().join("out");
    let code = run_args(&[
        "estimate",
        "--input",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--times",
        "0.5,1,2.5",
    ]);
    assert_eq!(code, 0);

    // identical scores: both treated take the smallest eligible id (4)
    let matches = read_csv(&out.join("matches.csv"));
    assert_eq!(matches.len(), 2);
    assert!(matches.iter().all(|m| m[1] == "4"));

    // no censoring => unit weights; treated deaths at 1.0 and 2.5 after
    // treatment, the twice-used control dies at 0.8
    let curves = read_csv(&out.join("curves.csv"));
    let s1 = |t| value_at(&curves, t, 1);
    let s0 = |t| value_at(&curves, t, 3);
    assert_eq!(s1(0.5), 1.0);
    assert!((s1(1.0) - (-0.5f64).exp()).abs() < 1e-15);
    assert!((s1(2.5) - (-1.5f64).exp()).abs() < 1e-15);
    assert!((s0(0.5) - 1.0).abs() < 1e-15);
    assert!((s0(0.8) - (-1.0f64).exp()).abs() < 1e-15);
    assert_eq!(value_at(&curves, 0.0, 5), 0.0);

    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["matched"], 2);
    assert_eq!(summary["match_rate"], 1.0);
    let warnings = summary["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("censoring")));
}

#[test]
fn empty_treated_set_succeeds_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("c.csv");
    write(
        &input,
        "id,obs_time,death,treated,treat_time,z1\n1,1.0,1,0,,0.1\n2,2.0,0,0,,0.4\n3,3.0,1,0,,-0.2\n",
    );
    let out = dir.path().join("out");
    let code = run_args(&["estimate", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["matched"], 0);
    assert_eq!(summary["match_rate"], 1.0);
    assert!(!summary["warnings"].as_array().unwrap().is_empty());
    let curves = read_csv(&out.join("curves.csv"));
    assert!(curves.iter().all(|r| r[1] == r[3]));
}

#[test]
fn exit_codes_from_binary() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_matchsurv");

    let bad = dir.path().join("bad.csv");
    write(&bad, "id,obs_time,death,treated,treat_time,z1\n1,2.0,1,0,,0\n2,abc,1,0,,0\n");
    let out = Command::new(bin)
        .args(["estimate", "--input", bad.to_str().unwrap(), "--out"])
        .arg(dir.path().join("o1"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":3:"));

    // two identical covariate columns make every information matrix singular
    let singular = dir.path().join("sing.csv");
    write(
        &singular,
        "id,obs_time,death,treated,treat_time,z1,z2\n\
         1,2.0,1,1,0.5,0.3,0.3\n2,3.0,1,0,,0.1,0.1\n3,1.0,1,0,,-0.4,-0.4\n\
         4,2.5,0,1,1.5,0.9,0.9\n5,4.0,1,0,,-0.1,-0.1\n",
    );
    let out = Command::new(bin)
        .args(["estimate", "--input", singular.to_str().unwrap(), "--out"])
        .arg(dir.path().join("o2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model"));

    let cfg = dir.path().join("bad.conf");
    write(&cfg, "tau = 3\ncaliper = 2\n");
    let out = Command::new(bin)
        .args(["truth", "--config", cfg.to_str().unwrap(), "--out"])
        .arg(dir.path().join("o3"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulated_cohort_round_trips_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cohort_path = dir.path().join("cohort.csv");
    let out = dir.path().join("sim");
    let code = run_args(&[
        "simulate",
        "--preset",
        "medium",
        "--reps",
        "2",
        "--n",
        "300",
        "--truth-m",
        "20000",
        "--seed",
        "11",
        "--out",
        out.to_str().unwrap(),
        "--cohort-out",
        cohort_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    let mut cfg = SimConfig::preset("medium").unwrap();
    cfg.n = 300;
    cfg.seed = 11;
    let (direct, _) = generate_cohort(&cfg, 0).unwrap();
    let parsed = read_cohort_file(&cohort_path).unwrap();
    assert_eq!(direct, parsed);

    let a = analyze(&direct, &AnalysisConfig::new(cfg.criterion, cfg.tau, cfg.tau1)).unwrap();
    let est_out = dir.path().join("est");
    let code = run_args(&[
        "estimate",
        "--input",
        cohort_path.to_str().unwrap(),
        "--out",
        est_out.to_str().unwrap(),
        "--times",
        "1.5",
    ]);
    assert_eq!(code, 0);
    let curves = read_csv(&est_out.join("curves.csv"));
    assert_eq!(value_at(&curves, 1.5, 5), a.delta.eval(1.5).unwrap());
    assert_eq!(
        value_at(&curves, 1.5, 6),
        a.delta.standard_error(1.5).unwrap().unwrap()
    );

    let mc = read_csv(&out.join("mc_summary.csv"));
    assert_eq!(mc.len(), 9);
    assert!(mc.iter().all(|r| r[0] == "medium" && r[5] != "NA"));
}

#[test]
fn single_replication_reports_missing_esd() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let code = run_args(&[
        "simulate", "--preset", "null", "--reps", "1", "--n", "200", "--truth-m", "10000", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let mc = read_csv(&out.join("mc_summary.csv"));
    assert!(mc.iter().all(|r| r[5] == "NA"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("c.csv");
    write(&input, HAND);
    let cfg = dir.path().join("run.conf");
    write(&cfg, "# analysis window\ntau = 0.5\ntau1 = 5\n");
    let out = dir.path().join("a");
    assert_eq!(
        run_args(&["estimate", "--input", input.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]),
        0
    );
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    // both treated at 1.0 fall outside tau = 0.5
    assert_eq!(s["eligible_treated"], 0);

    let out = dir.path().join("b");
    assert_eq!(
        run_args(&["estimate", "--input", input.to_str().unwrap(), "--config", cfg.to_str().unwrap(), "--tau", "3", "--out", out.to_str().unwrap()]),
        0
    );
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["eligible_treated"], 2);
}
