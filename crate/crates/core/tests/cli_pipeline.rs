//! End-to-end runs of the command-line tool on a reduced configuration.

use std::path::Path;
use std::process::Command;

use flapwing::cli::{EvalFile, OrbitFile};
use flapwing::config::{AlgoSettings, AlgoTable, ExperimentConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flapwing"))
}

fn small_config(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::desk();
    let s = AlgoSettings { n_hidden: 8, n_data: 16 };
    c.algorithms = AlgoTable { bc: s, dagger: s, dart: s, coil: s };
    c.n_zero = 4;
    c.il.n_iter = 1;
    c.il.rollouts_per_iter = 1;
    c.il.rollout_periods = 2;
    c.il.train.max_iter = 30;
    c.sweep.n_traj = 3;
    c.sweep.horizon = 10;
    c.bench_periods = 1;
    c.output_dir = out.to_path_buf();
    c
}

fn run(args: &[&str]) -> (i32, String, String) {
    let o = bin().args(args).env("RUST_LOG", "warn").output().expect("spawn");
    (o.status.code().unwrap_or(-1), String::from_utf8_lossy(&o.stdout).into(), String::from_utf8_lossy(&o.stderr).into())
}

#[test]
fn help_on_every_command() {
    assert_eq!(run(&["--help"]).0, 0);
    for sub in ["init-config", "find-orbit", "gen-data", "train", "evaluate", "compare", "integrator-bench"] {
        let (code, out, _) = run(&[sub, "--help"]);
        assert_eq!(code, 0, "{sub}");
        assert!(out.contains("Usage"), "{sub}");
    }
    assert_eq!(run(&["no-such-command"]).0, 1);
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    // missing input file
    assert_eq!(run(&["--out", out, "train", "bc"]).0, 1);
    // an orbit search capped at one iteration cannot converge
    let mut c = small_config(dir.path());
    c.orbit.max_iter = 1;
    let cfg = dir.path().join("c.json");
    flapwing::io::write_json(&cfg, &c).unwrap();
    assert_eq!(run(&["--config", cfg.to_str().unwrap(), "find-orbit"]).0, 3);
}

#[test]
fn reduced_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg_path = dir.path().join("config.json");
    let c = small_config(&out);
    flapwing::io::write_json(&cfg_path, &c).unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let step = |args: &[&str]| {
        let mut full = vec!["--config", cfg, "--jobs", "1"];
        full.extend_from_slice(args);
        let (code, _, err) = run(&full);
        assert_eq!(code, 0, "{args:?}: {err}");
    };
    step(&["find-orbit"]);
    step(&["integrator-bench", "--orbit", out.join("orbit.json").to_str().unwrap()]);
    step(&["gen-data"]);
    step(&["train", "bc"]);
    step(&["train", "coil"]);
    for a in ["bc", "coil"] {
        step(&["evaluate", "--policy", out.join(format!("policy_{a}.json")).to_str().unwrap(), "--noise", "1e-3"]);
    }
    let evals: Vec<String> = ["bc", "coil"].iter().map(|a| out.join(format!("eval_{a}.json")).display().to_string()).collect();
    let mut args = vec!["compare"];
    args.extend(evals.iter().map(|s| s.as_str()));
    step(&args);

    let hash = c.hash();
    let orbit: OrbitFile = flapwing::io::read_json(&out.join("orbit.json")).unwrap();
    assert!(orbit.orbit.defect <= 1e-4);
    assert_eq!(orbit.config_hash, hash);
    for f in ["dataset.csv", "train_bc.csv", "train_coil.csv", "envelope_coil.csv", "noise_coil.csv", "compare.csv", "orthogonality.csv"] {
        let text = std::fs::read_to_string(out.join(f)).unwrap();
        assert!(text.contains(&format!("config_hash={hash}")), "{f}");
        assert!(text.contains("tool_version="), "{f}");
    }
    let e: EvalFile = flapwing::io::read_json(&out.join("eval_coil.json")).unwrap();
    assert_eq!(e.n_traj, 3);
    assert_eq!(e.noise.as_ref().unwrap().sigma, 1e-3);
    assert!(e.result.zero_output_norm.is_finite() && e.result.mse.is_finite());
    assert!(e.latency_s > 0.0);
    let compare = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    assert!(compare.contains("metric,bc,coil"));

    // same config and seeds give identical metric files
    let first: Vec<String> =
        ["train_coil.csv", "envelope_coil.csv"].iter().map(|f| std::fs::read_to_string(out.join(f)).unwrap()).collect();
    step(&["train", "coil"]);
    step(&["evaluate", "--policy", out.join("policy_coil.json").to_str().unwrap()]);
    let second: Vec<String> =
        ["train_coil.csv", "envelope_coil.csv"].iter().map(|f| std::fs::read_to_string(out.join(f)).unwrap()).collect();
    assert_eq!(first, second);
}
