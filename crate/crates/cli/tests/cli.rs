use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aft_cli::{parse_config, read_report, read_rows, write_report, FitDocument};
use aft_core::sim::EfficiencyRow;
use aft_core::RhoKind;
use tempfile::TempDir;

fn aft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aft")).args(args).output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let path = dir.path().join(name);
    fs::write(&path, body).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "n = 50\nreplications = 1\nasymptotic_n = 0\n";

#[test]
fn missing_status_column_is_named() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "c.csv", "time,z1\n1.0,0\n2.0,1\n");
    let out = aft(&["fit", "--input", s(&input)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("status"), "{}", stderr(&out));
}

#[test]
fn all_censored_reports_no_events() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "c.csv", "time,status,z1\n1.0,0,0\n2.0,0,1\n3.0,0,1\n");
    let out = aft(&["fit", "--input", s(&input)]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr(&out).contains("no events"), "{}", stderr(&out));
}

#[test]
fn simulated_case_cohort_fit_is_finite_and_reproducible() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "default.toml", "");
    let cohort = dir.path().join("cohort.csv");
    let out = aft(&["generate", "--config", s(&config), "--out", s(&cohort)]);
    assert!(out.status.success(), "{}", stderr(&out));

    let fit = |name: &str| {
        let path = dir.path().join(name);
        let out = aft(&[
            "fit",
            "--input",
            s(&cohort),
            "--scheme",
            "case_cohort_nonpredictable",
            "--alpha-source",
            "estimated_fractions",
            "--rho",
            "gehan",
            "--out",
            s(&path),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        fs::read(path).unwrap()
    };
    let first = fit("a.json");
    assert_eq!(first, fit("b.json"));
    let doc: serde_json::Value = serde_json::from_slice(&first).unwrap();
    let theta = doc["theta_hat"][0].as_f64().unwrap();
    let (lo, hi) = (doc["intervals"][0][0].as_f64().unwrap(), doc["intervals"][0][1].as_f64().unwrap());
    assert!(theta.is_finite() && lo.is_finite() && hi.is_finite());
    assert!(lo < theta && theta < hi);
    assert!(doc["summary"]["alpha"].is_object(), "estimated fractions are reported");
}

#[test]
fn fit_document_parses_back() {
    let dir = TempDir::new().unwrap();
    let input = write(
        &dir,
        "c.csv",
        "time,status,z1\n1.0,1,0\n2.0,1,1\n3.0,0,1\n4.0,1,0\n5.0,0,1\n6.0,1,0\n",
    );
    let path = dir.path().join("fit.json");
    let out = aft(&["fit", "--input", s(&input), "--transform", "log", "--out", s(&path)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let doc: FitDocument = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
    assert_eq!(doc.n, 6);
    assert_eq!(doc.events, 4);
    assert_eq!(doc.rho, RhoKind::Gehan);
}

#[test]
fn small_simulation_smoke_run() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "small.toml", SMALL);
    let csv = dir.path().join("report.csv");
    let start = std::time::Instant::now();
    let out = aft(&["simulate", "--config", s(&config), "--out", s(&csv)]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(start.elapsed().as_secs_f64() < 5.0);
    let text = fs::read_to_string(&csv).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("alpha_fraction,weight,method,bias,emp_var,ave_var,coverage,asym_var"), "{header}");
    assert_eq!(text.lines().count(), 11);
}

#[test]
fn unknown_error_dist_names_the_key() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "bad.toml", "error_dist = \"cauchy\"\n");
    let out = aft(&["simulate", "--config", s(&config)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("error_dist"), "{}", stderr(&out));
}

#[test]
fn unknown_keys_are_listed() {
    let err = parse_config("n = 100\nreplicates = 4\nseed = 1\n", false).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("replicates") && msg.contains("seed"), "{msg}");
    assert!(parse_config("{\"n\": 100, \"bogus\": 1}", true).unwrap_err().to_string().contains("bogus"));
}

#[test]
fn json_and_toml_configs_agree() {
    let toml = parse_config("n = 300\nmethods = [\"gehan:full\", \"nonpred_est\"]\n", false).unwrap();
    let json = parse_config("{\"n\": 300, \"methods\": [\"gehan:full\", \"nonpred_est\"]}", true).unwrap();
    assert_eq!(toml, json);
    assert_eq!(toml.methods.len(), 3);
}

#[test]
fn empty_grid_is_rejected() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "small.toml", SMALL);
    let out = aft(&["efficiency", "--config", s(&config), "--grid", ""]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_sampling_gives_unit_logrank_efficiency() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "eff.toml", "asymptotic_n = 20000\n");
    let csv = dir.path().join("eff.csv");
    let out = aft(&["efficiency", "--config", s(&config), "--grid", "1.0", "--out", s(&csv)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let rows: Vec<EfficiencyRow> = read_rows(&csv).unwrap();
    assert_eq!(rows.len(), 10);
    for row in rows.iter().filter(|r| r.weight == RhoKind::Logrank) {
        assert!((row.rel_efficiency - 1.0).abs() <= 0.02, "{row:?}");
    }
}

#[test]
fn report_csv_round_trips_exactly() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "small.toml", "n = 120\nreplications = 3\nasymptotic_n = 2000\n");
    let csv = dir.path().join("report.csv");
    let out = aft(&["simulate", "--config", s(&config), "--out", s(&csv)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = read_report(&csv).unwrap();
    let again = dir.path().join("again.csv");
    write_report(&again, &report).unwrap();
    let reread = read_report(&again).unwrap();
    assert_eq!(format!("{report:?}"), format!("{reread:?}"));
    assert_eq!(fs::read(&csv).unwrap(), fs::read(&again).unwrap());
}

#[test]
fn threads_and_seed_flags() {
    let dir = TempDir::new().unwrap();
    let config = write(&dir, "small.toml", "n = 150\nreplications = 6\nasymptotic_n = 2000\n");
    let run = |extra: &[&str], name: &str| {
        let csv = dir.path().join(name);
        let mut args = vec!["simulate", "--config", s(&config), "--out", s(&csv)];
        args.extend_from_slice(extra);
        let out = aft(&args);
        assert!(out.status.success(), "{}", stderr(&out));
        fs::read(csv).unwrap()
    };
    let one = run(&["--threads", "1"], "one.csv");
    assert_eq!(one, run(&["--threads", "4"], "four.csv"));
    assert_ne!(one, run(&["--threads", "1", "--seed", "7"], "seeded.csv"));
    assert_eq!(run(&["--seed", "7"], "s1.csv"), run(&["--seed", "7", "--threads", "3"], "s2.csv"));
}
