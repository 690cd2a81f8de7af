use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_gbesq");

const HITTING: &str = r#"
[rng]
master_seed = 5

[model]
d = 4.0
z = 2.0
sigma_lo_sq = 0.5
sigma_hi_sq = 1.0

[grid]
horizon = 20.0
n_steps = 2560

[family]
variant = "constant_grid"
count = 2

[check]
command = "hitting-check"
a = 1.0
b = 4.0
n_paths = 4000
"#;

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn hitting_check_reports_closed_form_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "hit.toml", HITTING);
    let out = dir.path().join("out");
    let status = Command::new(BIN).arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out.join("hitting-check.json")).unwrap()).unwrap();
    assert_eq!(report["check_id"], "hitting-check");
    assert_eq!(report["passed"], true);
    let cf = report["values"]["closed_form"].as_f64().unwrap();
    assert_eq!(format!("{cf:.6}"), "0.666667");
    assert!(report["version"].is_string());
    assert_eq!(report["config"]["model"]["d"], 4.0);
    let csv = std::fs::read_to_string(out.join("hitting.csv")).unwrap();
    assert!(csv.starts_with("control,"));
}

#[test]
fn missing_sigma_hi_sq_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &HITTING.replace("sigma_hi_sq = 1.0\n", ""));
    let out = Command::new(BIN).arg("-c").arg(&cfg).arg("-o").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sigma_hi_sq"));
}

#[test]
fn failing_assertion_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    // a one-path tolerance cannot hold for an exit split measured on 50 paths
    let text = HITTING.replace("n_paths = 4000", "n_paths = 50\ntolerance_se = 0.0\ntolerance_abs = 0.0");
    let cfg = write(dir.path(), "strict.toml", &text);
    let status = Command::new(BIN).arg("-c").arg(&cfg).arg("-o").arg(dir.path()).status().unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn unstable_time_step_names_required_steps() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
[rng]
master_seed = 1
[model]
d = 1.0
z = 0.0
sigma_lo_sq = 1.0
sigma_hi_sq = 1.0
[grid]
horizon = 1.0
n_steps = 1
[check]
command = "pde-solve"
[[check.heat]]
payoff = { kind = "square" }
half_width = 4.0
n_x = 200
n_t = 10
x = 0.0
"#;
    let cfg = write(dir.path(), "cfl.toml", text);
    let out = Command::new(BIN).arg("-c").arg(&cfg).arg("-o").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("n_t"), "{err}");
}

#[test]
fn seed_override_changes_estimates_and_reruns_match() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "hit.toml", &HITTING.replace("n_paths = 4000", "n_paths = 500"));
    let run = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        let st = Command::new(BIN)
            .arg("-c")
            .arg(&cfg)
            .arg("-o")
            .arg(&out)
            .arg("--seed")
            .arg(seed)
            .env("GBESQ_WORKERS", "2")
            .status()
            .unwrap();
        assert!(st.code().is_some_and(|c| c <= 1));
        let mut r: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out.join("hitting-check.json")).unwrap()).unwrap();
        r["config"]["rng"] = serde_json::Value::Null;
        r
    };
    let a = run("11", "a");
    assert_eq!(a, run("11", "b"));
    assert_ne!(a, run("12", "c"));
}
