use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use gaugempc::config::SystemConfig;
use gaugempc::polytope::Polytope;
use gaugempc_cli::{main_with_args, run_from, Exit};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gaugempc"))
}

fn args(out: &Path, rest: &[&str]) -> Vec<String> {
    let mut v = vec!["gaugempc".to_string(), "--out".into(), out.display().to_string()];
    v.extend(rest.iter().map(|s| s.to_string()));
    v
}

fn run_ok(out: &Path, rest: &[&str]) -> (PathBuf, serde_json::Value) {
    let (_, report) = run_from(args(out, rest)).unwrap_or_else(|e| panic!("{rest:?}: {e}"));
    assert_eq!(report.exit, Exit::Ok, "{rest:?}: {}", report.text);
    (report.run_dir, report.summary)
}

#[test]
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let st = bin().arg(flag).output().unwrap();
        assert_eq!(st.status.code(), Some(0));
    }
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(main_with_args(["gaugempc", "frobnicate"]), 2);
    assert_eq!(main_with_args(["gaugempc"]), 2);
    let missing = tmp.path().join("nope.toml");
    let st = bin()
        .args(["--out", tmp.path().to_str().unwrap(), "--system", missing.to_str().unwrap(), "phase1"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(2));
    // nothing was created for a rejected command
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
    let code = main_with_args(args(tmp.path(), &["eval", "--weights", "missing.json"]));
    assert_eq!(code, 2);
    let code = main_with_args(args(tmp.path(), &["eval", "--oracle", "--phase1-policy"]));
    assert_eq!(code, 2);
    let code = main_with_args(args(tmp.path(), &["bench"]));
    assert_eq!(code, 2);
}

#[test]
fn malformed_system_file_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("bad.toml");
    fs::write(&p, "horizon = \"five\"\n").unwrap();
    let code = main_with_args(args(tmp.path(), &["--system", p.to_str().unwrap(), "phase1", "--samples", "10"]));
    assert_eq!(code, 2);
}

#[test]
fn weak_actuation_has_no_phase_one_law() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = SystemConfig::bundled();
    cfg.sets.input = Polytope::hypercube(2, 0.01);
    cfg.phase1 = None;
    let p = tmp.path().join("weak.toml");
    fs::write(&p, cfg.to_toml_string().unwrap()).unwrap();
    let st = bin()
        .args(["--out", tmp.path().to_str().unwrap(), "--system", p.to_str().unwrap(), "phase1", "--samples", "10"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(Exit::PhaseOneInfeasible.code() as i32));
    assert!(String::from_utf8_lossy(&st.stderr).contains("--phase1 lp"));
}

#[test]
fn system_config_round_trips() {
    let cfg = SystemConfig::bundled();
    let text = cfg.to_toml_string().unwrap();
    let back = SystemConfig::from_toml_str(&text).unwrap();
    assert_eq!(back.to_toml_string().unwrap(), text);
    assert_eq!(back.horizon, cfg.horizon);
    assert_eq!(back.dynamics.a, cfg.dynamics.a);
}

#[test]
fn phase1_writes_a_certificate() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, summary) = run_ok(tmp.path(), &["phase1", "--samples", "500"]);
    assert!(summary["margin"].as_f64().unwrap() < 0.0);
    assert_eq!(summary["rollout_failures"], 0);
    assert!(dir.join("phase1.json").is_file());
    assert!(dir.join("certification.json").is_file());
    assert!(dir.join("run.json").is_file());
}

#[test]
fn rci_writes_a_system_file_that_loads() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, summary) = run_ok(tmp.path(), &["rci", "--feedback", "--margin", "0.01"]);
    assert_eq!(summary["certified"], true);
    let cfg = SystemConfig::load(&dir.join("system.toml")).unwrap();
    cfg.system().unwrap();
}

#[test]
fn oracle_has_zero_delta() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, summary) = run_ok(tmp.path(), &["eval", "--oracle", "--n-val", "10"]);
    assert!(summary["delta"].as_f64().unwrap().abs() < 1e-12);
    let csv = fs::read_to_string(dir.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn pipeline_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path();
    let train = |name: &str| {
        run_ok(
            out,
            &[
                "--run-name", name, "--seed", "5", "train", "--kind", "gauge", "--iterations", "20", "--width", "16",
                "--batch-size", "16", "--n-val", "10", "--validate-every", "10",
            ],
        )
        .0
    };
    let a = train("a");
    let b = train("b");
    for f in ["trace.csv", "weights.json", "train.json", "phase1.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let w = a.join("weights.json");
    let (e, summary) = run_ok(out, &["eval", "--weights", w.to_str().unwrap(), "--n-val", "10"]);
    assert!(summary["max_residual"].as_f64().unwrap() <= 1e-7);
    assert!(e.join("eval.csv").is_file());

    let bench = |name: &str| {
        run_ok(
            out,
            &[
                "--run-name", name, "bench", "--weights", w.to_str().unwrap(), "--weights", w.to_str().unwrap(),
                "--phase1-policy", "--n-traj", "4", "--steps", "10", "--seeds", "1,2", "--warmup", "1", "--n-val",
                "5",
            ],
        )
    };
    let (b1, summary) = bench("bench-1");
    let (b2, _) = bench("bench-2");
    // three policies, two seeds, four trajectories
    assert_eq!(summary["rows"], 24);
    let csv = fs::read_to_string(b1.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 25);
    assert!(csv.contains("gauge#2"));
    for f in ["bench.csv", "quartiles.csv"] {
        assert_eq!(fs::read(b1.join(f)).unwrap(), fs::read(b2.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn run_directories_are_never_clobbered() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, _) = run_ok(tmp.path(), &["--run-name", "same", "phase1", "--samples", "10"]);
    let (b, _) = run_ok(tmp.path(), &["--run-name", "same", "phase1", "--samples", "10"]);
    assert_ne!(a, b);
    assert!(b.ends_with("same-2"));
    let code = main_with_args(args(tmp.path(), &["--run-name", "../x", "phase1"]));
    assert_eq!(code, 2);
}

#[test]
fn json_output_is_one_object() {
    let tmp = tempfile::tempdir().unwrap();
    let st = bin()
        .args(["--out", tmp.path().to_str().unwrap(), "--json", "eval", "--oracle", "--n-val", "5"])
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&st.stdout).unwrap();
    assert_eq!(v["policy"], "oracle");
}
