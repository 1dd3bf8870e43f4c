use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gridlode::griddata::{load_dataset, MeasurementType};
use gridlode::lode::{Checkpoint, LodeConfig};
use gridlode::workflow::init_model;
use tempfile::TempDir;

const TINY: &str = "\
latent_dim = 3
gru_hidden = 6
dyn_hidden = 8
dyn_layers = 1
batch_size = 10
iteration_unit = batch
rtol = 1e-4
atol = 1e-5
";

fn gridlode(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridlode"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path.to_str().unwrap().to_string()
}

fn generated(seed: &str) -> TempDir {
    let dir = TempDir::new().unwrap();
    ok(&gridlode(
        &["generate", "--out", "out", "--seed", seed],
        dir.path(),
    ));
    dir
}

fn trained(iterations: usize) -> TempDir {
    let dir = generated("5");
    let cfg = config(dir.path(), &format!("iterations = {iterations}\n"));
    ok(&gridlode(
        &["train", "--out", "out", "--seed", "5", "--config", &cfg],
        dir.path(),
    ));
    dir
}

#[test]
fn generate_writes_multirate_dataset() {
    let dir = generated("1");
    let out = dir.path().join("out");
    let feeder = fs::read_to_string(out.join("feeder.txt")).unwrap();
    let spec = gridlode::griddata::FeederSpec::parse(&feeder).unwrap();
    assert_eq!(spec.len(), 37);

    let ds = load_dataset(out.join("dataset.csv")).unwrap();
    assert_eq!(ds.times().len(), 1440);
    for r in &ds.records {
        let obs: Vec<f64> = r.observed().map(|(t, _)| t).collect();
        match r.kind {
            MeasurementType::V => {
                assert!(obs.len() > 1300 && obs.len() <= 1440, "{}", obs.len());
            }
            _ => {
                assert!(obs.len() > 80 && obs.len() <= 96, "{}", obs.len());
                assert!(obs.iter().all(|t| t % 15.0 == 0.0));
            }
        }
    }
    let truth = load_dataset(out.join("truth.csv")).unwrap();
    assert!(truth.records.iter().all(|r| r.observed_count() == 1440));
}

#[test]
fn generate_is_byte_identical_for_a_seed() {
    let a = generated("9");
    let b = generated("9");
    for name in ["dataset.csv", "truth.csv", "feeder.txt"] {
        let x = fs::read(a.path().join("out").join(name)).unwrap();
        let y = fs::read(b.path().join("out").join(name)).unwrap();
        assert!(x == y, "{name} differs");
    }
}

#[test]
fn missing_feeder_spec_exits_2_without_output() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), "feeder = nowhere.txt\n");
    let out = gridlode(&["generate", "--out", "out", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.txt"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bad_config_exits_2_before_side_effects() {
    let dir = TempDir::new().unwrap();
    for extra in ["colour = blue\n", "lr_init = -1\n", "holdout_frac = 2\n"] {
        let cfg = config(dir.path(), extra);
        let out = gridlode(&["generate", "--out", "out", "--config", &cfg], dir.path());
        assert_eq!(out.status.code(), Some(2), "{extra}");
        assert!(!dir.path().join("out").exists());
    }
    let out = gridlode(&["train", "--grad-mode", "sideways"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_without_dataset_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = gridlode(&["train", "--out", "out"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn zero_iterations_checkpoint_is_the_initialization() {
    let dir = trained(0);
    let ck = Checkpoint::load(dir.path().join("out/checkpoint.json")).unwrap();
    let cfg = LodeConfig {
        latent_dim: 3,
        gru_hidden: 6,
        dyn_hidden: 8,
        dyn_layers: 1,
        ..LodeConfig::default()
    };
    assert_eq!(ck.model().unwrap(), init_model(cfg, 5).unwrap());
    assert_eq!(ck.adam.step, 0);
    let log = fs::read_to_string(dir.path().join("out/loss.csv")).unwrap();
    assert_eq!(log, "iteration,neg_elbo,mse_pct\n");
}

#[test]
fn resume_continues_the_step_counter() {
    let dir = trained(2);
    let cfg = config(dir.path(), "iterations = 2\ndataset = out/dataset.csv\n");
    ok(&gridlode(
        &[
            "train",
            "--out",
            "resumed",
            "--seed",
            "5",
            "--config",
            &cfg,
            "--checkpoint",
            "out/checkpoint.json",
        ],
        dir.path(),
    ));
    let resumed = Checkpoint::load(dir.path().join("resumed/checkpoint.json")).unwrap();
    assert_eq!(resumed.adam.step, 4);
    let steps: Vec<u64> = resumed.loss_log.iter().map(|e| e.iteration).collect();
    assert_eq!(steps, vec![0, 1, 2, 3]);

    let straight = trained(4);
    let straight = Checkpoint::load(straight.path().join("out/checkpoint.json")).unwrap();
    assert_eq!(resumed.model().unwrap(), straight.model().unwrap());
}

#[test]
fn divergence_exits_3() {
    let dir = generated("5");
    let cfg = config(dir.path(), "iterations = 1\nmax_steps = 1\n");
    let out = gridlode(&["train", "--out", "out", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.path().join("out/checkpoint.json").exists());
}

#[test]
fn checkpoint_against_other_dataset_exits_2() {
    let dir = trained(1);
    ok(&gridlode(
        &["generate", "--out", "other", "--seed", "6"],
        dir.path(),
    ));
    let cfg = config(dir.path(), "dataset = other/dataset.csv\n");
    let out = gridlode(&["impute", "--out", "out", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));

    fs::write(
        dir.path().join("bad.json"),
        r#"{"format": "gridlode-checkpoint", "version": 99}"#,
    )
    .unwrap();
    let out = gridlode(
        &["impute", "--out", "out", "--checkpoint", "bad.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version"));
}

#[test]
fn impute_on_observed_grid_has_one_row_per_grid_time() {
    let dir = trained(1);
    let cfg = config(dir.path(), "query_grid = observed\n");
    ok(&gridlode(
        &["impute", "--out", "out", "--config", &cfg],
        dir.path(),
    ));
    let summary = fs::read_to_string(dir.path().join("out/impute/summary.json")).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&summary).unwrap();
    let records = summary["records"].as_array().unwrap();
    assert_eq!(records.len(), 14);
    assert_eq!(summary["extrapolation"], false);
    for r in records {
        let file = dir
            .path()
            .join("out/impute")
            .join(r["file"].as_str().unwrap());
        let text = fs::read_to_string(file).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("time_min,truth,observed,imputed,baseline")
        );
        assert_eq!(lines.count(), 1440);
    }
}

#[test]
fn predict_past_the_day_is_flagged() {
    let dir = trained(1);
    let cfg = config(dir.path(), "horizon_end_min = 1800\nquery_grid = 15\n");
    ok(&gridlode(
        &["predict", "--out", "out", "--config", &cfg],
        dir.path(),
    ));
    let summary = fs::read_to_string(dir.path().join("out/predict/summary.json")).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(summary["extrapolation"], true);
    assert_eq!(summary["points"], 72);
    assert_eq!(summary["last_time_min"], 1785.0);

    let cfg = config(dir.path(), "query_grid = 15\n");
    ok(&gridlode(
        &["predict", "--out", "out", "--config", &cfg],
        dir.path(),
    ));
    let summary = fs::read_to_string(dir.path().join("out/predict/summary.json")).unwrap();
    assert!(summary.contains("\"extrapolation\": false"));
}

#[test]
fn evaluate_reports_model_and_baseline_reproducibly() {
    let run = || {
        let dir = trained(2);
        ok(&gridlode(&["evaluate", "--out", "out"], dir.path()));
        let csv = fs::read_to_string(dir.path().join("out/evaluate/report.csv")).unwrap();
        let json = fs::read_to_string(dir.path().join("out/evaluate/report.json")).unwrap();
        let json: serde_json::Value = serde_json::from_str(&json).unwrap();
        (csv, json)
    };
    let (csv, json) = run();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.contains("lode_mse_pct") && header.contains("baseline_mse_pct"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2 * 15);
    assert!(rows.iter().any(|r| r.starts_with("imputation,all,")));
    assert!(rows.iter().any(|r| r.starts_with("prediction,all,")));
    for task in ["imputation", "prediction"] {
        assert!(json[task]["lode_mse_pct"].as_f64().unwrap().is_finite());
        assert!(json[task]["baseline_mse_pct"].as_f64().unwrap() > 0.0);
    }
    let (again, _) = run();
    assert_eq!(csv, again);
}

#[test]
fn evaluate_needs_truth() {
    let dir = trained(0);
    fs::remove_file(dir.path().join("out/truth.csv")).unwrap();
    let out = gridlode(&["evaluate", "--out", "out"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out/evaluate").exists());
}
