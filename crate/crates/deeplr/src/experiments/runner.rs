//! The figure-experiment runner: train the base model and the ensemble on a
//! generated dataset, build both intervals over the evaluation grid, and
//! write a plot-ready CSV plus a manifest tying the artifact to its exact
//! configuration.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Record, WeightedDataset};
use crate::ensemble::{ensemble_interval, train_ensemble, Ensemble};
use crate::error::{Error, Result};
use crate::heads::Head;
use crate::lr::{
    eval_head_for, interval_from_pair, train_perturbed_pair, ConfidenceInterval,
    IntervalDocument,
};
use crate::nn::{init_params, ParamVector};
use crate::optim::{derive_seed, train, TrainConfig};

use super::{datasets, ExperimentConfig, ExperimentKind};

pub(crate) const POINT_SALT: u64 = 0x706f_696e;
const ENSEMBLE_SALT: u64 = 0x656e_7365;

/// Affine target transform fitted on training targets and inverted for
/// reporting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub sd: f64,
}

impl Normalization {
    pub fn identity() -> Normalization {
        Normalization { mean: 0.0, sd: 1.0 }
    }

    /// Zero-mean unit-variance transform of the targets (population sd).
    pub fn fit(data: &WeightedDataset) -> Result<Normalization> {
        let n = data.len() as f64;
        let mean = data.records().iter().map(|r| r.y).sum::<f64>() / n;
        let var = data.records().iter().map(|r| (r.y - mean) * (r.y - mean)).sum::<f64>() / n;
        if var <= 0.0 {
            return Err(Error::DegenerateData("targets have zero variance".into()));
        }
        Ok(Normalization { mean, sd: var.sqrt() })
    }

    pub fn apply(&self, data: &WeightedDataset) -> WeightedDataset {
        WeightedDataset::new(
            data.records()
                .iter()
                .map(|r| Record { x: r.x.clone(), y: (r.y - self.mean) / self.sd, ..r.clone() })
                .collect(),
        )
        .expect("normalization preserves validity")
    }

    pub fn to_original(&self, v: f64) -> f64 {
        v * self.sd + self.mean
    }
}

/// Map an interval from normalized-target space back to original units.
/// Profile c values move with the endpoints; statistics and lambdas do not.
pub fn denormalize_interval(iv: &ConfidenceInterval, norm: &Normalization) -> ConfidenceInterval {
    ConfidenceInterval {
        lo: norm.to_original(iv.lo),
        hi: norm.to_original(iv.hi),
        f_base: norm.to_original(iv.f_base),
        profile: iv.profile.iter().map(|&(c, t)| (norm.to_original(c), t)).collect(),
        ..iv.clone()
    }
}

/// Generate the training set a configuration calls for.
pub fn generate_dataset(config: &ExperimentConfig) -> Result<WeightedDataset> {
    let kind = config.experiment.data_kind().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "experiment {} has no synthetic dataset",
            config.experiment.id()
        ))
    })?;
    match kind {
        ExperimentKind::ToyRegression => datasets::gen_toy_regression(config.n, config.dataset_seed),
        ExperimentKind::ToyClassification => {
            datasets::gen_toy_classification(config.n, config.dataset_seed)
        }
        ExperimentKind::TwoMoon => {
            datasets::gen_two_moons(config.n, config.noise_sd.unwrap_or(0.1), config.dataset_seed)
        }
        _ => unreachable!("data_kind filters to generator-backed kinds"),
    }
}

/// A trained base model with everything needed to cut intervals at points.
#[derive(Debug, Clone)]
pub struct FittedExperiment {
    pub config: ExperimentConfig,
    /// Training data in original units.
    pub data: WeightedDataset,
    pub norm: Normalization,
    /// Training data as the model sees it.
    pub train_data: WeightedDataset,
    pub base: ParamVector,
    /// Head used for likelihood evaluation (profiled variance where needed).
    pub eval_head: Head,
}

/// Generate data, fit the normalization, and train the base network.
pub fn fit_experiment(config: &ExperimentConfig) -> Result<FittedExperiment> {
    config.validate()?;
    let data = generate_dataset(config)?;
    let norm = if config.normalize_targets {
        Normalization::fit(&data)?
    } else {
        Normalization::identity()
    };
    let train_data = norm.apply(&data);
    let init = init_params(&config.spec, config.train.seed)?;
    let base = train(&config.spec, &init, &train_data, &config.head, &config.train)?;
    let eval_head = eval_head_for(&config.spec, &base, &train_data, &config.head)?;
    Ok(FittedExperiment { config: config.clone(), data, norm, train_data, base, eval_head })
}

impl FittedExperiment {
    /// Likelihood-ratio interval at one point, reported in original units.
    /// `tag` decorrelates the perturbation-training seeds between points.
    pub fn lr_interval_at(&self, x: &[f64], tag: u64) -> Result<ConfidenceInterval> {
        let point_config = TrainConfig {
            seed: derive_seed(self.config.train.seed, POINT_SALT ^ tag),
            ..self.config.train
        };
        let pair = train_perturbed_pair(
            &self.config.spec,
            &self.base,
            &self.train_data,
            &self.config.head,
            &point_config,
            x,
            self.config.search.delta,
        )?;
        let iv = interval_from_pair(
            &pair,
            &self.train_data,
            &self.config.spec,
            &self.eval_head,
            self.config.alpha,
            &self.config.search,
        )?;
        Ok(denormalize_interval(&iv, &self.norm))
    }

    /// Like [`Self::lr_interval_at`] but also returns the JSON document (in
    /// original units).
    pub fn lr_document_at(&self, x: &[f64], tag: u64) -> Result<(ConfidenceInterval, IntervalDocument)> {
        let point_config = TrainConfig {
            seed: derive_seed(self.config.train.seed, POINT_SALT ^ tag),
            ..self.config.train
        };
        let pair = train_perturbed_pair(
            &self.config.spec,
            &self.base,
            &self.train_data,
            &self.config.head,
            &point_config,
            x,
            self.config.search.delta,
        )?;
        let iv = interval_from_pair(
            &pair,
            &self.train_data,
            &self.config.spec,
            &self.eval_head,
            self.config.alpha,
            &self.config.search,
        )?;
        let reported = denormalize_interval(&iv, &self.norm);
        let mut doc = IntervalDocument::from_lr(&pair, &reported);
        doc.f_plus = Some(self.norm.to_original(pair.f_plus));
        doc.f_minus = Some(self.norm.to_original(pair.f_minus));
        Ok((reported, doc))
    }

    /// The ensemble baseline for this experiment, trained on the same data
    /// under a decorrelated seed block.
    pub fn train_baseline(&self) -> Result<Ensemble> {
        let ens_config = TrainConfig {
            seed: derive_seed(self.config.train.seed, ENSEMBLE_SALT),
            ..self.config.train
        };
        train_ensemble(
            &self.config.spec,
            &self.train_data,
            &self.config.head,
            &ens_config,
            self.config.ensemble_members,
        )
    }

    pub fn ensemble_interval_at(&self, ensemble: &Ensemble, x: &[f64]) -> Result<ConfidenceInterval> {
        let iv = ensemble_interval(ensemble, x, self.config.alpha, &self.config.head)?;
        Ok(denormalize_interval(&iv, &self.norm))
    }
}

/// One CSV row of a figure experiment.
#[derive(Debug, Clone)]
pub struct ExperimentRow {
    pub x: Vec<f64>,
    pub f_base: f64,
    pub lr_lo: f64,
    pub lr_hi: f64,
    pub ens_lo: f64,
    pub ens_hi: f64,
    pub truth: f64,
    pub flags: Vec<String>,
}

/// Where the runner put its outputs.
#[derive(Debug, Clone)]
pub struct ExperimentArtifact {
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub rows: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    config_hash: String,
    dataset_seed: u64,
    train_seed: u64,
    normalization: Option<Normalization>,
    rows: usize,
    csv: String,
    columns: Vec<String>,
}

fn rows_for(fitted: &FittedExperiment, ensemble: &Ensemble) -> Result<Vec<ExperimentRow>> {
    let config = &fitted.config;
    config
        .grid
        .par_iter()
        .enumerate()
        .map(|(idx, x)| {
            let ens = fitted.ensemble_interval_at(ensemble, x)?;
            let truth = super::truth_at(config.experiment.data_kind().expect("validated"), x)
                .unwrap_or(f64::NAN);
            let row = match fitted.lr_interval_at(x, idx as u64) {
                Ok(lr) => ExperimentRow {
                    x: x.clone(),
                    f_base: lr.f_base,
                    lr_lo: lr.lo,
                    lr_hi: lr.hi,
                    ens_lo: ens.lo,
                    ens_hi: ens.hi,
                    truth,
                    flags: lr.diagnostics.iter().map(|d| d.id().to_string()).collect(),
                },
                Err(Error::UnreachableDirection(_)) => ExperimentRow {
                    x: x.clone(),
                    f_base: f64::NAN,
                    lr_lo: f64::NAN,
                    lr_hi: f64::NAN,
                    ens_lo: ens.lo,
                    ens_hi: ens.hi,
                    truth,
                    flags: vec!["unreachable-direction".to_string()],
                },
                Err(other) => return Err(other),
            };
            Ok(row)
        })
        .collect()
}

/// Compute all grid rows for a figure experiment. A grid point whose
/// perturbation moved the wrong way yields NaN likelihood-ratio bounds and
/// an explanatory flag rather than aborting the run; training failures
/// propagate.
pub fn compute_rows(config: &ExperimentConfig, workers: usize) -> Result<Vec<ExperimentRow>> {
    super::run_in_pool(workers, || {
        let fitted = fit_experiment(config)?;
        let ensemble = fitted.train_baseline()?;
        rows_for(&fitted, &ensemble)
    })
}

fn csv_header(dim: usize) -> String {
    let mut cols: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    cols.extend(
        ["f_base", "lr_lo", "lr_hi", "ens_lo", "ens_hi", "truth", "flags"]
            .iter()
            .map(|s| s.to_string()),
    );
    cols.join(",")
}

fn rows_to_csv(dim: usize, rows: &[ExperimentRow]) -> String {
    let mut out = csv_header(dim);
    out.push('\n');
    for row in rows {
        for v in &row.x {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.f_base,
            row.lr_lo,
            row.lr_hi,
            row.ens_lo,
            row.ens_hi,
            row.truth,
            row.flags.join(";")
        ));
    }
    out
}

/// Run a figure experiment end to end and write `<id>.csv` plus
/// `<id>.manifest.json` into the configured output directory. Output files
/// appear only after every row has been computed.
pub fn run_experiment(config: &ExperimentConfig, workers: usize) -> Result<ExperimentArtifact> {
    match config.experiment {
        ExperimentKind::ToyRegression | ExperimentKind::ToyClassification | ExperimentKind::TwoMoon => {}
        other => {
            return Err(Error::InvalidArgument(format!(
                "run_experiment handles the figure experiments; {} has its own runner",
                other.id()
            )))
        }
    }
    config.validate()?;
    let (rows, norm) = super::run_in_pool(workers, || -> Result<_> {
        let fitted = fit_experiment(config)?;
        let ensemble = fitted.train_baseline()?;
        let rows = rows_for(&fitted, &ensemble)?;
        let norm = config.normalize_targets.then_some(fitted.norm);
        Ok((rows, norm))
    })?;

    std::fs::create_dir_all(&config.out_dir)?;
    let csv_name = format!("{}.csv", config.experiment.id());
    let csv_path = config.out_dir.join(&csv_name);
    let manifest_path = config.out_dir.join(format!("{}.manifest.json", config.experiment.id()));

    let dim = config.spec.input_dim;
    std::fs::write(&csv_path, rows_to_csv(dim, &rows))?;

    let manifest = Manifest {
        experiment: config.experiment.id(),
        config_hash: config.hash()?,
        dataset_seed: config.dataset_seed,
        train_seed: config.train.seed,
        normalization: norm,
        rows: rows.len(),
        csv: csv_name,
        columns: csv_header(dim).split(',').map(str::to_string).collect(),
    };
    std::fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;

    Ok(ExperimentArtifact { csv_path, manifest_path, rows: rows.len() })
}
