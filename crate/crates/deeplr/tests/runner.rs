//! End-to-end checks of the figure-experiment runner on a deliberately tiny
//! configuration: artifact shape, manifest contents, and byte-level
//! determinism of the CSV across reruns.

use deeplr::experiments::runner::run_experiment;
use deeplr::experiments::{grid_1d, preset, ExperimentKind};
use deeplr::nn::{Activation, MlpSpec};

fn tiny_config(out_dir: &std::path::Path) -> deeplr::experiments::ExperimentConfig {
    let mut config = preset(ExperimentKind::ToyRegression);
    config.n = 16;
    config.spec = MlpSpec::mean_variance(1, vec![8], vec![3], Activation::Elu, 1e-4);
    config.train.epochs = 25;
    config.train.batch_size = 8;
    config.train.variance_warmup_epochs = 12;
    config.grid = grid_1d(-1.0, 1.0, 5);
    config.ensemble_members = 2;
    config.out_dir = out_dir.to_path_buf();
    config
}

#[test]
fn experiment_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(dir.path());
    let artifact = run_experiment(&config, 2).unwrap();
    assert_eq!(artifact.rows, 5);

    let csv = std::fs::read_to_string(&artifact.csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "x0,f_base,lr_lo,lr_hi,ens_lo,ens_hi,truth,flags");
    assert_eq!(lines.count(), 5);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&artifact.manifest_path).unwrap()).unwrap();
    assert_eq!(manifest["experiment"], "toy-regression");
    assert_eq!(manifest["rows"], 5);
    assert_eq!(manifest["config_hash"], config.hash().unwrap());
    assert!(manifest["normalization"]["sd"].as_f64().unwrap() > 0.0);
}

#[test]
fn experiment_rerun_is_byte_identical() {
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = run_experiment(&tiny_config(dir_a.path()), 2).unwrap();
    let b = run_experiment(&tiny_config(dir_b.path()), 1).unwrap();
    let csv_a = std::fs::read(&a.csv_path).unwrap();
    let csv_b = std::fs::read(&b.csv_path).unwrap();
    assert_eq!(csv_a, csv_b, "worker count or rerun changed the artifact");
}

#[test]
fn interval_rows_contain_fit_and_respect_order() {
    let dir = tempfile::tempdir().unwrap();
    let artifact = run_experiment(&tiny_config(dir.path()), 2).unwrap();
    let csv = std::fs::read_to_string(&artifact.csv_path).unwrap();
    let mut prev_x = f64::NEG_INFINITY;
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let x: f64 = fields[0].parse().unwrap();
        let f: f64 = fields[1].parse().unwrap();
        let lo: f64 = fields[2].parse().unwrap();
        let hi: f64 = fields[3].parse().unwrap();
        assert!(x > prev_x, "rows not in grid order");
        prev_x = x;
        if !f.is_nan() {
            assert!(lo <= f && f <= hi, "row {line:?} violates containment");
        }
    }
}
