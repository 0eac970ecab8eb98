//! Command-line behavior: schema strictness, exit codes, overrides,
//! artifact layout.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mfglab")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mfglab-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let out = dir.join("out").display().to_string();
    std::fs::write(&path, body.replace("OUTDIR", &out)).unwrap();
    path
}

const MINIMAL: &str = r#"
[model]
name = "free"
beta = 0.3
T = 0.5

[grid]
dim = 1
half_width = 8.0
points_per_axis = 64

[solver]
steps = 10

[output]
dir = "OUTDIR"
seed = 7
"#;

#[test]
fn solve_free_model_succeeds_quickly() {
    let dir = scratch("solve");
    let cfg = write_config(&dir, MINIMAL);
    let out = Command::new(bin())
        .args(["solve", "-c", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    // run directory carries a manifest and the summary
    let runs: Vec<_> = std::fs::read_dir(dir.join("out/solve")).unwrap().collect();
    assert_eq!(runs.len(), 1);
    let run = runs[0].as_ref().unwrap().path();
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], true);
    assert!(summary["iterations"].as_u64().unwrap() <= 2);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["root_seed"], 7);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(run.join("u.mfgf").exists() && run.join("p.mfgf").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn beta_outside_half_open_interval_exits_2() {
    let dir = scratch("beta");
    let cfg = write_config(&dir, &MINIMAL.replace("beta = 0.3", "beta = 0.7"));
    let out = Command::new(bin())
        .args(["solve", "-c", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("(H3) requires beta in (0, 1/2)"),
        "stderr: {stderr}"
    );
    let parsed: serde_json::Value = serde_json::from_str(stderr.lines().next().unwrap()).unwrap();
    assert_eq!(parsed["error"]["kind"], "config");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = scratch("unknown");
    let cfg = write_config(&dir, &format!("{MINIMAL}\n[solver2]\nsteps = 3\n"));
    let out = Command::new(bin())
        .args(["solve", "-c", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("solver2"), "stderr: {stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn unknown_field_inside_section_is_an_error() {
    let dir = scratch("field");
    let cfg = write_config(
        &dir,
        &MINIMAL.replace("steps = 10", "steps = 10\nstep_count = 4"),
    );
    let out = Command::new(bin())
        .args(["solve", "-c", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn dotted_overrides_reach_scalar_leaves() {
    let dir = scratch("override");
    let cfg = write_config(&dir, MINIMAL);
    // beta override through the CLI must hit the same validation
    let out = Command::new(bin())
        .args(["solve", "-c", cfg.to_str().unwrap(), "--model.beta=0.9"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("(H3)"));
    // a valid override passes through
    let out = Command::new(bin())
        .args([
            "solve",
            "-c",
            cfg.to_str().unwrap(),
            "--solver.steps=12",
            "--model.beta=0.25",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn override_of_missing_section_fails() {
    let dir = scratch("badoverride");
    let cfg = write_config(&dir, MINIMAL);
    let out = Command::new(bin())
        .args(["solve", "-c", cfg.to_str().unwrap(), "--nonexistent.knob=1"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn study_gate_rejects_unlisted_command() {
    let dir = scratch("gate");
    let cfg = write_config(
        &dir,
        &format!("{MINIMAL}\n[study]\nrun = [\"nashgap\"]\n\n[sim]\nn_players = [16]\nsteps = 20\nseeds = 2\n"),
    );
    let out = Command::new(bin())
        .args(["converge", "-c", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("study.run"));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn missing_config_flag_exits_2() {
    let out = Command::new(bin()).args(["solve"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing --config"));
}

#[test]
fn thread_env_fallback_is_honored() {
    let dir = scratch("envthreads");
    let cfg = write_config(&dir, MINIMAL);
    let out = Command::new(bin())
        .env("MFG_THREADS", "1")
        .args(["solve", "-c", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let runs: Vec<_> = std::fs::read_dir(dir.join("out/solve")).unwrap().collect();
    let run = runs[0].as_ref().unwrap().path();
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["threads"], 1);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn selftest_passes_without_config() {
    let out = Command::new(bin()).args(["selftest"]).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[PASS]"));
    assert!(!stdout.contains("[FAIL]"));
}
