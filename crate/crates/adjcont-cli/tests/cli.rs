use std::path::Path;
use std::process::{Command, Output};

fn adjcont(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adjcont"))
        .args(args)
        .env("ADJCONT_RUN_DIR", dir)
        .env_remove("RUST_LOG")
        .output()
        .expect("spawn adjcont")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SMALL: [&str; 4] = ["--q", "55", "--p-rot", "34"];

#[test]
fn osc_adjoint_prints_the_endpoint_multipliers() {
    let tmp = tempfile::tempdir().unwrap();
    let o = adjcont(tmp.path(), &["osc-adjoint"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("4.6833e+00"), "{out}");
    assert!(out.contains("-7.3832e-02"), "{out}");
    assert!(tmp.path().join("osc_adjoint/meta.json").exists());
}

#[test]
fn osc_sweep_reports_both_folds() {
    let tmp = tempfile::tempdir().unwrap();
    let o = adjcont(tmp.path(), &["osc-sweep"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let folds: Vec<&str> = out.lines().filter(|l| l.split_whitespace().nth(1) == Some("FP")).collect();
    assert_eq!(folds.len(), 2, "{out}");
    assert!(folds.iter().any(|l| l.contains("1.0621e+00")));
    assert!(folds.iter().any(|l| l.contains("9.2044e-01")));
}

#[test]
fn invalid_options_exit_with_usage_status() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [
        &["--tol", "-1", "osc-adjoint"][..],
        &["--h0", "0", "osc-adjoint"],
        &["invc-continue", "--q", "56", "--p-rot", "34"],
        &["verify", "bogus"],
        &["no-such-command"],
    ] {
        let o = adjcont(tmp.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn verify_suites_pass() {
    let tmp = tempfile::tempdir().unwrap();
    for suite in ["flow", "saltation", "adjoint-fd"] {
        let o = adjcont(tmp.path(), &["verify", suite]);
        let out = stdout(&o);
        assert!(o.status.success(), "{suite}: {out}");
        assert!(!out.contains("FAIL"), "{out}");
        assert!(out.lines().count() >= 4);
    }
    let mut args = vec!["verify", "curve"];
    args.extend(SMALL);
    let o = adjcont(tmp.path(), &args);
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn curve_commands_write_their_files() {
    let tmp = tempfile::tempdir().unwrap();
    for cmd in ["invc-continue", "invc-spectrum", "invc-phase"] {
        let mut args = vec![cmd];
        args.extend(SMALL);
        let o = adjcont(tmp.path(), &args);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let dir = tmp.path().join("invc");
    let decay = std::fs::read_to_string(dir.join("decay.csv")).unwrap();
    let header: Vec<&str> = decay.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 21);
    assert_eq!(decay.lines().count(), 202);
    let curve = std::fs::read_to_string(dir.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 56);
    assert!(dir.join("spectrum.csv").exists());
}

#[test]
fn jsonl_exports_parse() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["--format", "jsonl", "invc-continue"];
    args.extend(SMALL);
    assert!(adjcont(tmp.path(), &args).status.success());
    let text = std::fs::read_to_string(tmp.path().join("invc/curve.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 55);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["v"].as_array().unwrap().len(), 2);
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let read = || {
        let tmp = tempfile::tempdir().unwrap();
        let mut args = vec!["invc-continue"];
        args.extend(SMALL);
        assert!(adjcont(tmp.path(), &args).status.success());
        assert!(adjcont(tmp.path(), &["osc-sweep"]).status.success());
        (
            std::fs::read(tmp.path().join("invc/curve.csv")).unwrap(),
            std::fs::read(tmp.path().join("osc_sweep/branch.csv")).unwrap(),
        )
    };
    assert_eq!(read(), read());
}

#[test]
fn flow_demo_exports_the_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let o = adjcont(tmp.path(), &["flow-demo"]);
    assert!(o.status.success());
    let mut r = csv::Reader::from_path(tmp.path().join("flow_corpus.csv")).unwrap();
    let rows: Vec<_> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 16);
    assert!(rows.iter().all(|r| &r[4] == "true"));
}

#[test]
fn hybrid_demo_matches_differences() {
    let tmp = tempfile::tempdir().unwrap();
    let o = adjcont(tmp.path(), &["hybrid-demo"]);
    assert!(o.status.success());
    for line in stdout(&o).lines().filter(|l| l.trim_start().starts_with("mu") || l.trim_start().starts_with("r ")) {
        let f: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(f[1], f[2], "{line}");
    }
}
