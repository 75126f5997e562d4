use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY_WELL: &str = r#"
n_states = 1
seed = 7

[network]
hidden_layers = 3
hidden_width = 16
main_outputs = 1
init = "xavier-uniform"

[weights]
boundary = 1000.0

[metrics]
integral = "mse"
pde = "mse"
normalization = "sse"
boundary = "sse"

[optimizer]
lr = 0.003
beta1 = 0.9
beta2 = 0.999
eps = 1e-8
final_lr_factor = 0.01

[schedule]
energy_decay_fraction = 0.2
pde_ramp_fraction = 0.5
pde_ramp_factor = 10.0

[sampler]
batch_size = 64
eval_points = 128

[convergence]
total_threshold = 0.1
pde_threshold = 0.005
max_epochs = 20000
"#;

fn qpinn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpinn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run qpinn")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[network]\nhidden_width = 0\n").unwrap();
    let out = qpinn(&["solve", "--config", path(&cfg), "--out", path(&dir.path().join("run"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hidden_width"));
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[weights]\nintegrall = 1.0\n").unwrap();
    let out = qpinn(&["solve", "--config", path(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_flag_exits_2() {
    let out = qpinn(&["solve", "--states", "many"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exhausted_budget_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY_WELL).unwrap();
    let run = dir.path().join("run");
    let out = qpinn(&["solve", "--config", path(&cfg), "--max-epochs", "10", "--out", path(&run)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    // The partial run is still written.
    assert!(run.join("manifest.json").exists());
}

#[test]
fn evaluate_without_run_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = qpinn(&["evaluate", "--out", path(dir.path())]);
    assert!(!out.status.success());
    let out = qpinn(&["export-plots", "--out", path(&dir.path().join("missing"))]);
    assert!(!out.status.success());
}

#[test]
fn solve_evaluate_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    fs::write(&cfg, TINY_WELL).unwrap();
    let run = dir.path().join("run");

    let out = qpinn(&["solve", "--config", path(&cfg), "--out", path(&run)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["manifest.json", "checkpoints/state_0.json", "history/state_0.csv", "states/state_0.csv"] {
        assert!(run.join(f).exists(), "missing {f}");
    }

    let out = qpinn(&["evaluate", "--out", path(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("system,n,E_pinn,E_exact,err_E,fidelity"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "well");
    assert_eq!(row[1], "1");
    let fidelity: f64 = row[5].parse().unwrap();
    assert!(fidelity > 0.99, "fidelity {fidelity}");

    let out = qpinn(&["export-plots", "--out", path(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let listed = String::from_utf8_lossy(&out.stdout);
    assert!(listed.lines().any(|l| l.ends_with(".svg")));
    assert!(listed.lines().any(|l| l.ends_with(".csv")));
    for l in listed.lines().filter(|l| l.ends_with(".svg")) {
        let svg = fs::read_to_string(l).unwrap();
        assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
