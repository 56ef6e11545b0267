use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const GOLDEN_MODEL: &str = "kappa = [[2.0]]\nmu = [1.0]\nn = 60\n";
const TWO_TYPE_TINY: &str = "types = [\"a\", \"b\"]\nkappa = [[1.0, 3.0], [3.0, 1.0]]\nmu = [0.5, 0.5]\nn = 4\n";

fn mtgl(dir: &Path, args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mtgl"));
    cmd.args(args).current_dir(dir).env_remove("MTGL_SEED");
    if let Some(s) = env_seed {
        cmd.env("MTGL_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn setup(files: &[(&str, &str)]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in files {
        std::fs::write(dir.path().join(name), text).unwrap();
    }
    dir
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("json on stdout")
}

#[test]
fn criticality_of_single_type_kernel() {
    let d = setup(&[("m.toml", GOLDEN_MODEL)]);
    let o = mtgl(d.path(), &["model", "criticality", "--model", "m.toml", "--format", "json"], None);
    assert!(o.status.success());
    let v = json(&o);
    assert_eq!(v["result"]["sigma"], 2.0);
    assert_eq!(v["result"]["regime"], "supercritical");
    assert_eq!(v["manifest"]["command"], "model criticality --model m.toml");
}

#[test]
fn verify_tiny_representation() {
    let d = setup(&[("tiny.toml", TWO_TYPE_TINY)]);
    let o = mtgl(d.path(), &["cpp", "verify", "--model", "tiny.toml", "--format", "json"], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(&o);
    assert!(v["result"]["tv_distance"].as_f64().unwrap() <= 1e-12);
    assert_eq!(v["result"]["pass"], true);
}

#[test]
fn exit_codes() {
    let d = setup(&[
        ("sub.toml", "kappa = [[0.5]]\nmu = [1.0]\nn = 10\n"),
        ("asym.toml", "kappa = [[1.0, 2.0], [3.0, 1.0]]\nmu = [0.5, 0.5]\nn = 10\n"),
    ]);
    let o = mtgl(d.path(), &["model", "validate", "--model", "sub.toml", "--bogus"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(mtgl(d.path(), &["--help"], None).status.code(), Some(0));
    assert_eq!(mtgl(d.path(), &["frobnicate"], None).status.code(), Some(1));
    assert_eq!(mtgl(d.path(), &["model", "validate", "--model", "missing.toml"], None).status.code(), Some(1));
    assert_eq!(mtgl(d.path(), &["model", "validate", "--model", "asym.toml"], None).status.code(), Some(1));
    assert_eq!(mtgl(d.path(), &["conn", "exact", "--model", "sub.toml", "--k", "1,x"], None).status.code(), Some(1));
    // The second-order coefficient of the subcritical component-count rate vanishes here.
    let o = mtgl(d.path(), &["rates", "eval", "--model", "sub.toml", "--which", "isub", "--x", "1"], None);
    assert_eq!(o.status.code(), Some(2));
    let o = mtgl(d.path(), &["rates", "eval", "--model", "sub.toml", "--which", "I", "--x", "1"], None);
    assert_eq!(o.status.code(), Some(2));
    let o = mtgl(d.path(), &["rates", "eval", "--model", "sub.toml", "--which", "Jsub", "--k", "1", "--x", "-1", "--format", "json"], None);
    assert!(o.status.success());
    assert!((json(&o)["result"]["value"].as_f64().unwrap() - 0.46555).abs() < 1e-5);
}

#[test]
fn seed_override_is_recorded() {
    let d = setup(&[("m.toml", "kappa = [[2.0]]\nmu = [1.0]\nn = 60\nseed = 4\n")]);
    let args = ["sim", "run", "--model", "m.toml", "--replicates", "5", "--format", "json"];
    let from_env = json(&mtgl(d.path(), &args, Some("99")));
    assert_eq!(from_env["manifest"]["master_seed"], 99);
    assert_eq!(from_env["manifest"]["seed_source"], "environment");
    let from_cfg = json(&mtgl(d.path(), &args, None));
    assert_eq!(from_cfg["manifest"]["master_seed"], 4);
    assert_eq!(from_cfg["manifest"]["seed_source"], "config");
    assert_ne!(from_env["result"], from_cfg["result"]);
    assert_eq!(mtgl(d.path(), &args, Some("abc")).status.code(), Some(1));
}

#[test]
fn outputs_and_timing_sidecar() {
    let d = setup(&[("m.toml", GOLDEN_MODEL)]);
    let o = mtgl(d.path(), &["dual", "solve", "--model", "m.toml", "--out", "dual.json"], None);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let q_line = text.lines().find(|l| l.starts_with("q ")).unwrap();
    assert!(q_line.trim_end().ends_with("0.1619025594729769"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("dual.json")).unwrap()).unwrap();
    assert_eq!(report["result"]["regime"], "supercritical");
    let timing: Value = serde_json::from_str(&std::fs::read_to_string(d.path().join("dual.timing.json")).unwrap()).unwrap();
    assert!(timing["elapsed_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn sim_run_matches_golden_files() {
    let d = setup(&[("model.toml", GOLDEN_MODEL)]);
    let args = [
        "sim", "run", "--model", "model.toml", "--replicates", "20", "--seed", "5", "--track-k", "1;2", "--csv",
        "run.csv", "--out", "run.json",
    ];
    assert!(mtgl(d.path(), &args, None).status.success());
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for f in ["run.csv", "run.json"] {
        let got = std::fs::read_to_string(d.path().join(f)).unwrap();
        let want = std::fs::read_to_string(golden.join(f)).unwrap();
        assert_eq!(got, want, "{f} differs from the golden copy");
    }
}
