use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn shallow_cert(args: &[&str]) -> Run {
    let Output { status, stdout, stderr } = Command::new(env!("CARGO_BIN_EXE_shallow-cert"))
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        code: status.code().expect("exited"),
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

fn config(dir: &TempDir, name: &str, json: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, json).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

fn field(summary: &str, key: &str) -> String {
    summary
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {summary}"))
        .to_string()
}

const RAMP: &str = r#"{"hidden": 1, "alpha": 0.0, "init": {"explicit": [1, 0, 1, 0]}"#;

#[test]
fn risk_of_the_ramp() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&dir, "ramp.json", &format!("{RAMP}, \"r_sweep\": [10, 1000]}}"));
    let run = shallow_cert(&["risk", "--config", s(&cfg)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stdout.starts_with("r,value\n"));
    let rows = rows(&run.stdout);
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][0], "inf");
    assert!((rows[0][1].parse::<f64>().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    let lr: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!((lr[1] - 1.0 / 3.0).abs() < (lr[0] - 1.0 / 3.0).abs());
    assert!((lr[1] - 1.0 / 3.0).abs() < 1e-2);
}

#[test]
fn risk_of_zero_network() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        &dir,
        "z.json",
        r#"{"hidden": 2, "alpha": 1.0, "init": {"explicit": [0, 0, 0, 0, 0, 0, 0]}}"#,
    );
    let run = shallow_cert(&["risk", "--config", s(&cfg)]);
    assert_eq!(run.code, 0);
    assert_eq!(rows(&run.stdout)[0][1].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn grad_of_the_ramp() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&dir, "g.json", &format!("{RAMP}}}"));
    let run = shallow_cert(&["grad", "--config", s(&cfg)]);
    assert_eq!(run.code, 0);
    let rows = rows(&run.stdout);
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["w_1", "b_1", "v_1", "c"]);
    let want = [2.0 / 3.0, 1.0, 2.0 / 3.0, 1.0];
    for (r, w) in rows.iter().zip(want) {
        assert!((r[1].parse::<f64>().unwrap() - w).abs() < 1e-14);
    }
}

#[test]
fn certified_training_reaches_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        &dir,
        "t.json",
        &format!("{RAMP}, \"gate\": \"exact\", \"max_steps\": 100000, \"risk_tol\": 1e-6}}"),
    );
    let out = dir.path().join("trace.csv");
    let run = shallow_cert(&["train", "--config", s(&cfg), "--output", s(&out)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(field(&run.stdout, "certified"), "true");
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("n,risk,grad_norm,v,descent_slack\n"));
    let rows = rows(&csv);
    let last = rows.last().unwrap();
    assert!(last[1].parse::<f64>().unwrap() <= 1e-6);
    assert_eq!(last[4], "");
    assert!(rows[..rows.len() - 1]
        .iter()
        .all(|r| r[4].parse::<f64>().unwrap() >= -1e-12));
    // only the CSV remains in the directory
    let names: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names.len(), 2);
}

#[test]
fn oversized_rate_is_flagged_uncertified() {
    // the exact gate for this start and target is 1/(4 V + 2) with V = 2
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        &dir,
        "u.json",
        &format!("{RAMP}, \"learning_rate\": 1.0, \"max_steps\": 50}}"),
    );
    let out = dir.path().join("trace.csv");
    let run = shallow_cert(&["train", "--config", s(&cfg), "--output", s(&out)]);
    assert_eq!(run.code, 3, "{}", run.stderr);
    assert_eq!(field(&run.stdout, "certified"), "false");
    assert_eq!(rows(&std::fs::read_to_string(&out).unwrap()).len(), 51);
}

#[test]
fn divergence_writes_partial_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        &dir,
        "d.json",
        r#"{"hidden": 1, "alpha": 2.0, "init": {"explicit": [3, 1, 3, 1]}, "learning_rate": 50.0, "max_steps": 10000}"#,
    );
    let out = dir.path().join("trace.csv");
    let run = shallow_cert(&["train", "--config", s(&cfg), "--output", s(&out)]);
    assert_eq!(run.code, 4, "{}{}", run.stdout, run.stderr);
    let rows = rows(&std::fs::read_to_string(&out).unwrap());
    assert!(!rows.is_empty() && rows.len() < 10_001);
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        &dir,
        "t.json",
        &format!("{RAMP}, \"gate\": \"exact\", \"max_steps\": 10}}"),
    );
    let run = shallow_cert(&["train", "--config", s(&cfg), "--output", "/nonexistent/dir/trace.csv"]);
    assert_eq!(run.code, 5);
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (
            r#"{"hidden": 1, "alpha": 0, "init": {"explicit": [1, 0, 1]}, "gate": "exact", "max_steps": 1}"#,
            "init",
        ),
        (
            r#"{"hidden": 1, "alpha": 0, "init": {"explicit": [1, 0, 1, 0]}, "max_steps": 1}"#,
            "learning_rate",
        ),
        (
            r#"{"hidden": 1, "alpha": 0, "init": {"explicit": [1, 0, 1, 0]}, "gate": "exact"}"#,
            "max_steps",
        ),
        (
            r#"{"hidden": 1, "alpha": 0, "init": {"explicit": [1, 0, 1, 0]}, "gate": "exact", "max_steps": 1, "risk_tol": -1}"#,
            "risk_tol",
        ),
        (r#"{"hidden": 1, "alpha": 0, "gamma": 1}"#, "gamma"),
    ];
    for (json, name) in cases {
        let cfg = config(&dir, "bad.json", json);
        let run = shallow_cert(&["train", "--config", s(&cfg)]);
        assert_eq!(run.code, 2, "{json}");
        assert!(run.stderr.contains(name), "{json}: {}", run.stderr);
    }
    let run = shallow_cert(&["train"]);
    assert_eq!(run.code, 2);
    let cfg = config(&dir, "seed.json", &format!("{RAMP}}}"));
    assert_eq!(shallow_cert(&["risk", "--config", s(&cfg), "--seed", "3"]).code, 2);
}

#[test]
fn flow_from_the_ramp_decays() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&dir, "f.json", &format!("{RAMP}, \"horizon\": 10, \"step\": 0.001}}"));
    let out = dir.path().join("flow.csv");
    let run = shallow_cert(&["flow", "--config", s(&cfg), "--output", s(&out)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    for key in ["decay_ok", "sup_norm_ok", "monotone_ok"] {
        assert_eq!(field(&run.stdout, key), "true");
    }
    assert!(field(&run.stdout, "v_identity_max").parse::<f64>().unwrap() < 1e-6);
    assert!(field(&run.stdout, "l_identity_max").parse::<f64>().unwrap() < 1e-6);
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("t,risk,v,grad_sq_norm\n"));
    let rows = rows(&csv);
    assert_eq!(rows.len(), 10_001);
    assert_eq!(rows.last().unwrap()[0].parse::<f64>().unwrap(), 10.0);
}

#[test]
fn stationary_flow_has_constant_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        &dir,
        "s.json",
        r#"{"hidden": 2, "alpha": 0.0, "init": {"explicit": [0, 0, 0, 0, 0, 0, 0]}, "horizon": 1, "step": 0.1}"#,
    );
    let run = shallow_cert(&["flow", "--config", s(&cfg)]);
    assert_eq!(run.code, 0);
    let rows = rows(&run.stdout);
    assert_eq!(rows.len(), 11);
    for r in &rows {
        assert_eq!(r[1..], rows[0][1..]);
    }
}

#[test]
fn general_target_reports_apriori_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        &dir,
        "g.json",
        r#"{"hidden": 2, "target": {"breakpoints": [0, 1], "pieces": [[0, 1]]},
            "init": {"random": {"scale": 1, "seed": 7}}, "horizon": 2, "step": 0.001, "apriori": true}"#,
    );
    let out = dir.path().join("flow.csv");
    let run = shallow_cert(&["flow", "--config", s(&cfg), "--output", s(&out)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(field(&run.stdout, "v_growth_ok"), "true");
    assert_eq!(field(&run.stdout, "norm_growth_ok"), "true");
    assert!(!run.stdout.contains("decay_ok"));
}

#[test]
fn sweep_gaps_shrink() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        &dir,
        "w.json",
        &format!("{RAMP}, \"r_sweep\": [100, 1000, 10000, 100000]}}"),
    );
    let run = shallow_cert(&["sweep", "--config", s(&cfg)]);
    assert_eq!(run.code, 0);
    let gaps: Vec<f64> = rows(&run.stdout).iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(gaps.len(), 4);
    assert!(gaps.windows(2).all(|p| p[1] < p[0]));
    let cfg = config(&dir, "w2.json", &format!("{RAMP}}}"));
    assert_eq!(shallow_cert(&["sweep", "--config", s(&cfg)]).code, 2);
}

#[test]
fn trials_summarize_random_starts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        &dir,
        "e.json",
        r#"{"hidden": 2, "alpha": 1.0, "init": {"random": {"scale": 1, "seed": 3}},
            "gate": "random", "max_steps": 2000, "trials": 4}"#,
    );
    let out = dir.path().join("mean.csv");
    let run = shallow_cert(&["train", "--config", s(&cfg), "--output", s(&out)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(field(&run.stdout, "certificates_ok"), "4/4");
    let first = std::fs::read(&out).unwrap();
    assert!(first.starts_with(b"step,mean_risk\n"));
    shallow_cert(&["train", "--config", s(&cfg), "--output", s(&out)]);
    assert_eq!(first, std::fs::read(&out).unwrap());
    let other = shallow_cert(&["train", "--config", s(&cfg), "--seed", "4"]);
    assert_ne!(other.stdout.as_bytes(), &first[..]);
}

#[test]
fn verify_pass_set_is_seed_independent() {
    let mut statuses = Vec::new();
    for seed in 0..10 {
        let run = shallow_cert(&["verify", "--seed", &seed.to_string()]);
        assert!(run
            .stdout
            .starts_with("suite,anchor,instances,failures,worst,tolerance,status\n"));
        let set: Vec<(String, String)> = run
            .stdout
            .lines()
            .skip(1)
            .map(|l| {
                let suite = l.split(',').next().unwrap().to_string();
                let status = l.rsplit(',').next().unwrap().to_string();
                (suite, status)
            })
            .collect();
        assert_eq!(run.code, if set.iter().all(|(_, st)| st == "pass") { 0 } else { 1 });
        statuses.push(set);
    }
    assert!(statuses.windows(2).all(|p| p[0] == p[1]));
    assert!(statuses[0].iter().all(|(_, st)| st == "pass"), "{:?}", statuses[0]);
}

#[test]
fn verify_reads_scale_from_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(&dir, "v.json", r#"{"scale": "small"}"#);
    let run = shallow_cert(&["verify", "--config", s(&cfg), "--seed", "42"]);
    assert_eq!(run.code, 0);
    assert!(run.stderr.contains("scale=small"));
}
