use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rtedmd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtedmd"))
        .args(args)
        .current_dir(dir)
        .env_remove("RTEDMD_OUT_DIR")
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

/// Small OU setup that runs in well under a second.
fn small_config(dir: &Path, initial: usize) -> PathBuf {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        format!(
            r#"name = "small"
seed = 7

[model]
kind = "ornstein_uhlenbeck"
mu = -0.5
sigma = 0.02

[domain]
kind = "ball"
radius = 2.0

[dictionary]
max_degree = 3
include_constant = false

[sampling]
paths_per_state = 10
horizon = 1.0
integration_step = 0.01

[sampling.initial]
count = {initial}
region = [[-1.0, 1.0]]

[estimators]
methods = ["rt_mod", "edmd"]

[estimators.rt_mod]
lambda = 1e6
mu = 6.0

[sweep]
frequencies = [50.0, 100.0]
trials = 3
"#
        ),
    )
    .unwrap();
    path
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn experiment_writes_spectra_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), 40);
    let out = tmp.path().join("run");
    let o = rtedmd(
        &[
            "experiment",
            "ou",
            "--trials",
            "1",
            "--freq",
            "100",
            "--seed",
            "7",
            "-c",
            cfg.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for m in ["rt_mod", "edmd"] {
        assert!(out.join(format!("spectrum_{m}_100.csv")).is_file());
    }
    // --freq overrides the configured sweep
    assert!(!out.join("spectrum_rt_mod_50.csv").exists());
    let rows = read_csv(&out.join("mae_summary.csv"));
    assert!(rows.len() > 1);
    let col = rows[0].iter().position(|h| h == "mae").unwrap();
    for r in &rows[1..] {
        let v: f64 = r[col].parse().unwrap();
        assert!(v.is_finite() && v >= 0.0);
    }
    assert!(out.join("config_used.toml").is_file());
}

#[test]
fn estimate_then_spectrum_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), 40);
    let cfg = cfg.to_str().unwrap();
    let out = tmp.path().join("est");
    let out_s = out.to_str().unwrap();
    let o = rtedmd(
        &[
            "estimate",
            "-c",
            cfg,
            "--method",
            "rt_mod",
            "--freq",
            "100",
            "--out-dir",
            out_s,
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let generator = out.join("generator_rt_mod.json");
    assert!(generator.is_file());
    let o = rtedmd(
        &[
            "spectrum",
            "--generator",
            generator.to_str().unwrap(),
            "-c",
            cfg,
            "--out-dir",
            out_s,
        ],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let spectrum = read_csv(&out.join("spectrum_rt_mod.csv"));
    assert_eq!(
        spectrum[0],
        ["index", "re", "im", "ref_re", "ref_im", "abs_err"]
    );
    assert_eq!(spectrum.len(), 4);
    let mae = read_csv(&out.join("mae_rt_mod.csv"));
    let v: f64 = mae[1][2].parse().unwrap();
    assert!(v < 0.05, "mae {v}");
}

#[test]
fn missing_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rtedmd(&["simulate", "-c", "does/not/exist.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does/not/exist.toml"));
}

#[test]
fn unknown_subcommand_and_flag_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(rtedmd(&["frobnicate"], tmp.path()).status.code(), Some(1));
    assert_eq!(
        rtedmd(&["simulate", "--bogus"], tmp.path()).status.code(),
        Some(1)
    );
    assert_eq!(rtedmd(&["--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn rank_deficient_data_is_a_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    // two initial states cannot determine three observables
    let cfg = small_config(tmp.path(), 2);
    let o = rtedmd(
        &[
            "estimate",
            "-c",
            cfg.to_str().unwrap(),
            "--method",
            "rt_mod",
            "--out-dir",
            "x",
        ],
        tmp.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn output_directory_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), 40);
    let cfg = cfg.to_str().unwrap();
    let simulate = |extra: &[&str], env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_rtedmd"));
        c.args(["simulate", "-c", cfg])
            .args(extra)
            .current_dir(tmp.path())
            .env_remove("RTEDMD_OUT_DIR");
        if let Some(v) = env {
            c.env("RTEDMD_OUT_DIR", v);
        }
        assert!(c.output().unwrap().status.success());
    };
    simulate(&[], None);
    assert!(tmp.path().join("rtedmd-out/ensemble.json").is_file());
    simulate(&[], Some("from-env"));
    assert!(tmp.path().join("from-env/ensemble.csv").is_file());
    simulate(&["--out-dir", "from-flag"], Some("from-env"));
    assert!(tmp.path().join("from-flag/ensemble.json").is_file());
}
