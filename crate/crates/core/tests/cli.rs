//! End-to-end checks through the command-line binary and the experiment
//! runner, including the byte-determinism criterion.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use airfed_core::channel::{ChannelModel, ChannelSampler};
use airfed_core::scheduler::{self, SchedulingInstance};
use airfed_core::sysmodel::SystemParams;

const CONFIG: &str = r#"
[system]
n_devices = 6
model_dim = 8
grad_bound = 15.0
sigma_b = 1.0
sigma_e = 1.0
power_budget = 5.0
scale_b = 1.0
scale_e = 1.0
channel_seed = 21

[privacy]
epsilon = 12.0
zeta = 0.05

[security]
upsilon = 1.5
grad_range_lo = -1.0
grad_range_hi = 1.0

[learning]
loss = "linreg"
rounds = 20
batch_size = 8
samples_per_device = 32
heterogeneity = 0.05
label_noise = 0.1
data_seed = 13
rate_mode = "inverse-time"

[experiment]
scheduler = "spa"
aggregator = "cwpp"
replicates = 2
master_seed = 99
output_dir = "out"
"#;

fn run_cli(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_airfed"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    entries.sort();
    entries
}

#[test]
fn c09_run_is_byte_deterministic() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.toml");
    fs::write(&config_path, CONFIG).unwrap();
    for out in ["out_a", "out_b"] {
        let output = run_cli(
            &["run", "--config", "config.toml", "--out", out],
            dir.path(),
        );
        assert!(
            output.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let a = dir_bytes(&dir.path().join("out_a"));
    let b = dir_bytes(&dir.path().join("out_b"));
    assert!(!a.is_empty());
    assert_eq!(a.len(), b.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(&b) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "artifact {name_a} differs between runs");
    }
    println!(
        "criterion 9 (determinism): PASS - {} artifacts byte-identical, {:?}",
        a.len(),
        start.elapsed()
    );
}

#[test]
fn malformed_config_key_fails_with_named_key() {
    let dir = tempfile::tempdir().unwrap();
    let bad = CONFIG.replace("upsilon = 1.5", "upsilonn = 1.5");
    fs::write(dir.path().join("config.toml"), bad).unwrap();
    let output = run_cli(&["run", "--config", "config.toml"], dir.path());
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("upsilon"), "stderr: {stderr}");
}

#[test]
fn esm_over_cap_suggests_spa() {
    let dir = tempfile::tempdir().unwrap();
    let big = CONFIG
        .replace("n_devices = 6", "n_devices = 25")
        .replace("scheduler = \"spa\"", "scheduler = \"esm\"");
    fs::write(dir.path().join("config.toml"), big).unwrap();
    let output = run_cli(&["run", "--config", "config.toml"], dir.path());
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("spa"), "stderr: {stderr}");
}

#[test]
fn xi_table_prints_grid() {
    let dir = tempfile::tempdir().unwrap();
    let output = run_cli(
        &["xi-table", "--t-max", "1.0", "--t-step", "0.5"],
        dir.path(),
    );
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "t,xi");
    assert_eq!(lines.len(), 4);
}

#[test]
fn validate_bound_reports_success() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.toml"), CONFIG).unwrap();
    let output = run_cli(
        &[
            "validate-bound",
            "--config",
            "config.toml",
            "--out",
            "bound_out",
            "--scheduler",
            "full",
        ],
        dir.path(),
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("bound holds: true"), "stdout: {stdout}");
    assert!(dir.path().join("bound_out/bound_report.csv").exists());
}

#[test]
fn svm_experiment_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let svm = CONFIG
        .replace("loss = \"linreg\"", "loss = \"svm\"\nsvm_iota = 0.2")
        .replace("rounds = 20", "rounds = 10");
    fs::write(dir.path().join("config.toml"), svm).unwrap();
    let output = run_cli(
        &["run", "--config", "config.toml", "--out", "svm_out"],
        dir.path(),
    );
    assert!(
        output.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let out = dir.path().join("svm_out");
    assert!(out.join("trace_rep000.csv").exists());
    assert!(out.join("summary.csv").exists());
    // bound report only applies to linear regression
    assert!(!out.join("bound_report.csv").exists());
}

#[test]
fn spa_is_faster_than_esm_at_moderate_scale() {
    // timing trend: exhaustive search cost explodes past N = 14 while the
    // sequential-promotion pass stays quadratic
    let mut params = SystemParams {
        n_devices: 14,
        model_dim: 64,
        grad_bound: 10.0,
        sigma_b: 1.0,
        sigma_e: 1.0,
        power_budgets: vec![5.0; 14],
        epsilon: 12.0,
        zeta: 0.05,
        upsilon: 1.5,
        grad_range_lo: -1.0,
        grad_range_hi: 1.0,
    };
    for n in [14usize, 16] {
        params.n_devices = n;
        params.power_budgets = vec![5.0; n];
        let params = params.clone().validated().unwrap();
        let channel = ChannelModel::new(1.0, 1.0, 33).unwrap();
        let mut spa_total = 0u128;
        let mut esm_total = 0u128;
        for i in 0..5u64 {
            let devices = channel.sample_round(&params, i);
            let inst = SchedulingInstance::new(devices, params.clone()).unwrap();
            spa_total += scheduler::solve_spa(&inst).elapsed.as_micros();
            esm_total += scheduler::solve_esm(&inst).unwrap().elapsed.as_micros();
        }
        assert!(
            spa_total < esm_total,
            "N={n}: SPA {spa_total}us not faster than ESM {esm_total}us"
        );
    }
}
