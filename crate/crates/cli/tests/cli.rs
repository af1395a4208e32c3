use std::f64::consts::SQRT_2;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chshsim::model::ChannelParams;
use chshsim::optimizer::{optimize_mu, Experiment, DEFAULT_TOL};
use serde_json::Value;

fn chshsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chshsim")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name).display().to_string()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

/// Data rows of a CSV artifact as maps from column name to value.
fn csv_rows(text: &str) -> Vec<Vec<(String, String)>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect())
        .collect()
}

fn column(row: &[(String, String)], name: &str) -> f64 {
    row.iter().find(|(k, _)| k == name).unwrap().1.parse().unwrap()
}

#[test]
fn sweep_reference_channel() {
    let o = chshsim(&["sweep", "--tau-a-db", "-10", "--tau-b-db", "-9.2", "--t-int-ns", "3", "--mu-min", "1e-3", "--mu-max", "0.5", "--points", "200"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("# config: {")));
    assert!(text.lines().any(|l| l == "mu,s,delta_s,fom,flag"));
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 200);
    assert!((column(&rows[0], "mu") - 1e-3).abs() < 1e-15);
    let s: Vec<f64> = rows.iter().map(|r| column(r, "s")).collect();
    assert!(s.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    assert!(s[0] > 2.0 && s[199] < 2.0);
}

#[test]
fn sweep_low_brightness_limit() {
    let o = chshsim(&["sweep", "--mu-min", "1e-9", "--mu-max", "1e-8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for row in csv_rows(&stdout(&o)) {
        assert!((column(&row, "s") - 2.0 * SQRT_2).abs() <= 1e-6);
    }
}

#[test]
fn usage_errors_exit_one() {
    let o = chshsim(&["sweep", "--points"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--points"));
    let o = chshsim(&["mc", "--t-acq", "0.01"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage: chshsim mc"));
    let o = chshsim(&["calibrate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(chshsim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(chshsim(&["sweep", "--tau-a", "0.1", "--tau-a-db", "-10"]).status.code(), Some(1));
    assert_eq!(chshsim(&["--help"]).status.code(), Some(0));
    assert_eq!(chshsim(&["--version"]).status.code(), Some(0));
}

#[test]
fn domain_errors_exit_two() {
    assert_eq!(chshsim(&["sweep", "--mu-min", "0.5", "--mu-max", "0.1"]).status.code(), Some(2));
    assert_eq!(chshsim(&["sweep", "--tau-a", "1.5"]).status.code(), Some(2));
    assert_eq!(chshsim(&["optimize", "--alpha=-1"]).status.code(), Some(2));
    assert_eq!(chshsim(&["sweep", "--t-acq", "0"]).status.code(), Some(2));
}

#[test]
fn optimize_json_report() {
    let o = chshsim(&["optimize", "--json", "--tau-a-db", "-10", "--tau-b-db", "-9.2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).expect("stdout is only JSON");
    assert_eq!(v["tool"], "chshsim");
    assert_eq!(v["command"], "optimize");
    assert!(v["config"]["channel"]["tau_a"].is_f64());
    for key in ["mu_star", "fom_star", "s_at_star", "delta_s_at_star", "evaluations"] {
        assert!(v["optimum"][key].is_number(), "{key}");
    }
    assert_eq!(v["optimum"]["bracket"].as_array().unwrap().len(), 2);
    assert_eq!(v["report"]["e_values"].as_array().unwrap().len(), 4);

    let ch = ChannelParams::new(0.1, 10f64.powf(-0.92)).unwrap();
    let lib = optimize_mu(&Experiment::new(ch, 3e-9, 1.0, 1.0), (1e-4, 0.9), DEFAULT_TOL).unwrap();
    let mu_star = v["optimum"]["mu_star"].as_f64().unwrap();
    assert!((mu_star - lib.mu_star).abs() <= DEFAULT_TOL);
}

#[test]
fn optimize_without_violation_exits_three() {
    let o = chshsim(&["optimize", "--mu-min", "0.5", "--mu-max", "0.9"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no CHSH violation"));
}

#[test]
fn validate_default_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "fit.json");
    let o = chshsim(&["validate", "-o", &out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["report"]["selected"]["g_model"], "tanh2");
    assert_eq!(v["report"]["selected"]["coefficient_form"], "reciprocal");
    assert_eq!(v["report"]["candidates"].as_array().unwrap().len(), 6);
    assert!(stderr(&o).contains("max |dE|"));
    assert!(!stderr(&o).contains("warning"));
}

#[test]
fn validate_tiny_gains_warns() {
    let o = chshsim(&["validate", "--gamma-max", "0.0001"]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning: several candidates pass"));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["report"]["degenerate"], true);
}

#[test]
fn validate_malformed_grid_exits_two() {
    assert_eq!(chshsim(&["validate", "--taus", "0.1,abc"]).status.code(), Some(2));
    assert_eq!(chshsim(&["validate", "--gamma-max", "0.7"]).status.code(), Some(2));
    assert_eq!(chshsim(&["validate", "--theta-points", "0"]).status.code(), Some(2));
    assert_eq!(chshsim(&["validate", "--taus", "0.5,1.5"]).status.code(), Some(2));
}

#[test]
fn mc_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (path(dir.path(), "a.csv"), path(dir.path(), "b.csv"), path(dir.path(), "c.csv"));
    let args = ["mc", "--mu", "0.05", "--t-acq", "0.01", "--seed", "9"];
    for out in [&a, &b] {
        let o = chshsim(&[&args[..], &["-o", out.as_str()]].concat());
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let c_args = ["mc", "--mu", "0.05", "--t-acq", "0.01", "--seed", "10", "-o", c.as_str()];
    assert!(chshsim(&c_args).status.success());
    let bytes = |p: &str| std::fs::read(p).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));
    let rows = csv_rows(&String::from_utf8(bytes(&a)).unwrap());
    assert_eq!(rows.len(), 4);
    let windows: f64 = rows[0].iter().filter(|(k, _)| k.starts_with("c_")).map(|(_, v)| v.parse::<f64>().unwrap()).sum();
    assert_eq!(windows, (0.01f64 / 3e-9).floor());
}

#[test]
fn mc_reproduces_analytic_s() {
    let dir = tempfile::tempdir().unwrap();
    let report = path(dir.path(), "report.json");
    let o = chshsim(&["mc", "--mu", "0.1307", "--t-acq", "1", "--seed", "2024", "--report", &report]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let z = v["s_deviation_sigma"].as_f64().unwrap();
    assert!(z.abs() < 3.0, "{z}");
    assert!(v["empirical"]["s"].as_f64().unwrap() > 2.0);
}

#[test]
fn mc_short_acquisition_exits_two() {
    let o = chshsim(&["mc", "--mu", "0.05", "--t-acq", "1e-9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn calibrate_fixture() {
    let o = chshsim(&["calibrate", &fixture("calibration_counts_patterns.csv"), "--mu-convention", "total-pairs"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!stderr(&o).contains("pairwise"));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let r = &v["result"];
    assert!((r["tau_a"].as_f64().unwrap() - 0.1254).abs() < 5e-5);
    assert!((r["tau_b"].as_f64().unwrap() - 0.0977).abs() < 5e-5);
    assert!((v["records"][0]["mu"].as_f64().unwrap() - 4.95e-4).abs() < 5e-7);
    assert!((r["c_gamma"].as_f64().unwrap() - 0.0468).abs() < 1e-4);
    assert_eq!(v["single_point"], true);
    assert!(stderr(&o).contains("single power point"));
}

#[test]
fn calibrate_pairwise_warns() {
    let o = chshsim(&["calibrate", &fixture("calibration_counts_pairwise.csv")]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning: pairwise coincidence columns only"));
}

#[test]
fn calibrate_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let empty = path(dir.path(), "empty.csv");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(chshsim(&["calibrate", &empty]).status.code(), Some(2));
    assert_eq!(chshsim(&["calibrate", &path(dir.path(), "missing.csv")]).status.code(), Some(4));
}

#[test]
fn calibrate_simulated_power_series() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for (k, power) in ["0.5", "1", "2"].iter().enumerate() {
        let out = path(dir.path(), &format!("p{k}.csv"));
        let seed = (40 + k).to_string();
        let args = ["mc", "--setting", "0,0", "--power-mw", power, "--tau-a", "0.5", "--tau-b", "0.4", "--t-acq", "0.05", "--mu-convention", "total-pairs", "--seed", &seed, "-o", &out];
        assert!(chshsim(&args).status.success());
        let text = std::fs::read_to_string(&out).unwrap();
        let mut lines = text.lines().filter(|l| !l.starts_with('#'));
        let header = lines.next().unwrap().to_string();
        if rows.is_empty() {
            rows.push(header);
        }
        rows.extend(lines.map(String::from));
    }
    let input = path(dir.path(), "series.csv");
    std::fs::write(&input, rows.join("\n") + "\n").unwrap();
    let o = chshsim(&["calibrate", &input, "--mu-convention", "total-pairs"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["single_point"], false);
    let c = v["result"]["c_gamma"].as_f64().unwrap();
    assert!((c / 0.0469 - 1.0).abs() < 0.05, "{c}");
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "cfg.json");
    std::fs::write(&cfg, r#"{"mu_min": 0.01, "mu_max": 0.2, "points": 7, "channel": {"tau_a": 0.3}, "setup": {"alpha": 2.0}}"#).unwrap();
    let o = chshsim(&["sweep", "--config", &cfg, "--points", "5", "--tau-b-db", "-3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows = csv_rows(&text);
    assert_eq!(rows.len(), 5);
    assert!((column(&rows[0], "mu") - 0.01).abs() < 1e-15);
    let echo: Value = serde_json::from_str(text.lines().find_map(|l| l.strip_prefix("# config: ")).unwrap()).unwrap();
    assert_eq!(echo["points"], 5);
    assert_eq!(echo["channel"]["tau_a"], 0.3);
    assert!((echo["channel"]["tau_b"].as_f64().unwrap() - 10f64.powf(-0.3)).abs() < 1e-15);
    assert_eq!(echo["setup"]["alpha"], 2.0);

    std::fs::write(&cfg, r#"{"points": 5, "bogus": 1}"#).unwrap();
    assert_eq!(chshsim(&["sweep", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn artifacts_rerun_byte_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (path(dir.path(), "a.csv"), path(dir.path(), "b.csv"));
    let o = chshsim(&["sweep", "--tau-a", "0.2", "--points", "20", "--scale", "linear", "--mu-min", "0.01", "--mu-max", "0.3", "-o", &a]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(chshsim(&["sweep", "--config", &a, "-o", &b]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let meta: Value = serde_json::from_str(&std::fs::read_to_string(format!("{a}.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["version"], chshsim::VERSION);
    assert!(meta["timestamp"].as_u64().unwrap() > 0);
    assert_eq!(meta["config"]["points"], 20);

    let (j1, j2) = (path(dir.path(), "o1.json"), path(dir.path(), "o2.json"));
    assert!(chshsim(&["optimize", "--tau-a", "0.3", "--tau-b", "0.2", "-o", &j1]).status.success());
    assert!(chshsim(&["optimize", "--config", &j1, "-o", &j2]).status.success());
    assert_eq!(std::fs::read(&j1).unwrap(), std::fs::read(&j2).unwrap());
}

#[test]
fn sweep_json_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "sweep.json");
    assert!(chshsim(&["sweep", "--points", "4", "-o", &out]).status.success());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["points"].as_array().unwrap().len(), 4);
    assert!(v["points"][0]["fom"].is_number());
}

#[test]
fn unwritable_output_exits_four() {
    let o = chshsim(&["sweep", "--points", "3", "-o", "/nonexistent-dir/x.csv"]);
    assert_eq!(o.status.code(), Some(4));
}
