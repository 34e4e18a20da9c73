use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const QUICK: &[&str] = &["--train-frames", "6", "--outer-epochs", "1", "--loop-epochs", "1", "--test-frames", "30"];

fn hdsync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdsync"))
        .args(args)
        .env_remove("HDSYNC_WORKERS")
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> String {
    let out = hdsync(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generate_writes_versioned_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = run_ok(&["generate", "--seeds", "3,8", "--output-dir", path(dir.path())]);
    assert_eq!(stdout.lines().count(), 2);
    for seed in [3, 8] {
        let text = fs::read_to_string(dir.path().join(format!("seed_{seed}/scenario.json"))).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["initial_period_s"].as_array().unwrap().len(), 16);
        assert!(v["config"]["radio"]["p_th_dbm"].is_number());
    }
}

#[test]
fn train_is_byte_identical_across_processes() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let mut args = vec!["train", "--seeds", "2", "--output-dir", path(d.path())];
        args.extend_from_slice(QUICK);
        run_ok(&args);
    }
    let read = |d: &tempfile::TempDir, f: &str| fs::read(d.path().join("seed_2").join(f)).unwrap();
    for f in ["models.json", "training.json", "scenario.json"] {
        assert_eq!(read(&dirs[0], f), read(&dirs[1], f), "{f} differs");
    }
    let models: serde_json::Value = serde_json::from_slice(&read(&dirs[0], "models.json")).unwrap();
    assert_eq!(models["format_version"], 1);
    assert_eq!(models["models"].as_array().unwrap().len(), 32);
}

#[test]
fn evaluate_from_files_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let trained = dir.path().join("trained");
    let mut args = vec!["train", "--seeds", "4", "--output-dir", path(&trained)];
    args.extend_from_slice(QUICK);
    run_ok(&args);

    let eval = dir.path().join("eval");
    let scenario = trained.join("seed_4/scenario.json");
    let models = trained.join("seed_4/models.json");
    let mut args = vec!["evaluate", "--scenario", path(&scenario), "--models", path(&models), "--output-dir", path(&eval)];
    args.extend_from_slice(QUICK);
    let stdout = run_ok(&args);
    assert_eq!(stdout.matches("steady NPDR").count(), 3);
    for f in ["summary.json", "trace_essbs.csv", "trace_pfdsa.csv", "trace_classic_no_period.csv"] {
        assert!(eval.join(f).exists(), "{f}");
    }
    let trace = fs::read_to_string(eval.join("trace_pfdsa.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 30 * 16);
    assert!(trace.starts_with("slot,npdr,mean_period_s,period_range_s,phase_1_s"));

    let plots = dir.path().join("plots");
    let mut args = vec!["plotdata", "--run-dir", path(&eval), "--output-dir", path(&plots)];
    args.extend_from_slice(QUICK);
    run_ok(&args);
    for f in ["fig2.csv", "fig4a.csv", "fig4b.csv", "fig5.csv", "fig6.csv", "fig7.csv"] {
        assert!(plots.join(f).exists(), "{f}");
    }
}

#[test]
fn montecarlo_reads_worker_count_from_env_and_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    fs::write(
        &config,
        r#"{ "scenario_count": 2, "test_frames": 30, "algorithms": ["essbs", "pfdsa"],
             "training": { "frames": 6, "outer_epochs": 1, "loop_epochs": 1 } }"#,
    )
    .unwrap();
    let out_dir = dir.path().join("mc");
    let out = Command::new(env!("CARGO_BIN_EXE_hdsync"))
        .args(["montecarlo", "--config", path(&config), "--output-dir", path(&out_dir)])
        .env("HDSYNC_WORKERS", "1")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("2/2 scenarios succeeded"));
    for f in ["montecarlo_summary.json", "scenarios.csv", "hist_npdr.csv", "hist_T.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn failed_scenarios_give_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    // no deployment is 95% connected; every seed exhausts its budget
    let base = ["--connectivity-target", "0.95", "--connectivity-tolerance", "0.01", "--retry-budget", "2"];
    let mut args = vec!["montecarlo", "--scenario-count", "2", "--output-dir", path(dir.path())];
    args.extend_from_slice(&base);
    let out = hdsync(&args);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("failed"));

    let mut args = vec!["generate", "--seeds", "1", "--output-dir", path(dir.path())];
    args.extend_from_slice(&base);
    assert_eq!(hdsync(&args).status.code(), Some(1));
}

#[test]
fn invalid_configuration_is_rejected() {
    let out = hdsync(&["evaluate", "--test-frames", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("test_frames"));
    let out = hdsync(&["montecarlo", "--seeds", "1,1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = hdsync(&["generate", "--algorithms", "nonsense"]);
    assert!(!out.status.success());
}
