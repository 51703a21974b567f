//! Monte-Carlo coverage evaluation: replicate the full pipeline on fresh
//! dataset draws and count how often the interval captures the truth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{derive_seed, TrainConfig};

use super::runner::fit_experiment;
use super::{truth_at, ExperimentConfig};

const REP_SALT: u64 = 0x7265_7073;

/// One interval/truth pair from one replication at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub truth: f64,
    pub lo: f64,
    pub hi: f64,
    pub f_base: f64,
}

impl TrialOutcome {
    /// Containment is inclusive on both ends.
    pub fn hit(&self) -> bool {
        self.lo <= self.truth && self.truth <= self.hi
    }
}

/// Aggregates for one grid point across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCoverage {
    pub x: Vec<f64>,
    pub trials: usize,
    pub hits: usize,
    pub coverage: f64,
    pub mean_width: f64,
    /// Mean of (hi − f_base) / (f_base − lo) over trials where the ratio is
    /// finite; NaN if none are.
    pub mean_asymmetry: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub nominal_level: f64,
    pub replications_requested: usize,
    pub replications_used: usize,
    pub failures: usize,
    pub points: Vec<PointCoverage>,
    /// Hits over all points and replications combined.
    pub pooled_coverage: f64,
    /// Provenance of a pipeline run: configuration hash and base seeds.
    pub config_hash: Option<String>,
    pub dataset_seed: Option<u64>,
    pub train_seed: Option<u64>,
}

/// Fold per-replication trial rows into the report. Pure, so forced
/// interval shapes can exercise the hit logic directly.
pub fn coverage_from_trials(
    nominal_level: f64,
    grid: &[Vec<f64>],
    per_rep: &[Vec<TrialOutcome>],
    failures: usize,
) -> CoverageReport {
    let used = per_rep.len();
    let mut points = Vec::with_capacity(grid.len());
    let mut pooled_hits = 0usize;
    let mut pooled_trials = 0usize;
    for (pi, x) in grid.iter().enumerate() {
        let outcomes: Vec<&TrialOutcome> = per_rep.iter().map(|rep| &rep[pi]).collect();
        let hits = outcomes.iter().filter(|o| o.hit()).count();
        let widths: f64 = outcomes.iter().map(|o| o.hi - o.lo).sum();
        let ratios: Vec<f64> = outcomes
            .iter()
            .map(|o| (o.hi - o.f_base) / (o.f_base - o.lo))
            .filter(|r| r.is_finite())
            .collect();
        let mean_asymmetry = if ratios.is_empty() {
            f64::NAN
        } else {
            ratios.iter().sum::<f64>() / ratios.len() as f64
        };
        pooled_hits += hits;
        pooled_trials += outcomes.len();
        points.push(PointCoverage {
            x: x.clone(),
            trials: outcomes.len(),
            hits,
            coverage: if outcomes.is_empty() { f64::NAN } else { hits as f64 / outcomes.len() as f64 },
            mean_width: if outcomes.is_empty() { f64::NAN } else { widths / outcomes.len() as f64 },
            mean_asymmetry,
        });
    }
    CoverageReport {
        nominal_level,
        replications_requested: used + failures,
        replications_used: used,
        failures,
        points,
        pooled_coverage: if pooled_trials == 0 {
            f64::NAN
        } else {
            pooled_hits as f64 / pooled_trials as f64
        },
        config_hash: None,
        dataset_seed: None,
        train_seed: None,
    }
}

/// Run `r` independent replications of the full pipeline (fresh data draw,
/// base training, perturbation pair and interval per grid point) and report
/// empirical coverage of the true function values. Failed replications are
/// excluded and counted.
pub fn run_coverage(config: &ExperimentConfig, r: usize, workers: usize) -> Result<CoverageReport> {
    if r < 2 {
        return Err(Error::InvalidArgument(format!("coverage needs R >= 2, got {r}")));
    }
    config.validate()?;
    let data_kind = config.experiment.data_kind().ok_or_else(|| {
        Error::InvalidArgument(format!("{} has no dataset to cover", config.experiment.id()))
    })?;
    if truth_at(data_kind, &config.grid[0]).is_none() {
        return Err(Error::InvalidArgument(format!(
            "{} has no closed-form truth; coverage is undefined",
            data_kind.id()
        )));
    }

    let results: Vec<Result<Vec<TrialOutcome>>> = super::run_in_pool(workers, || {
        (0..r)
            .into_par_iter()
            .map(|rep| {
                let rep_tag = REP_SALT ^ rep as u64;
                let rep_config = ExperimentConfig {
                    dataset_seed: derive_seed(config.dataset_seed, rep_tag),
                    train: TrainConfig {
                        seed: derive_seed(config.train.seed, rep_tag),
                        ..config.train
                    },
                    ..config.clone()
                };
                let fitted = fit_experiment(&rep_config)?;
                rep_config
                    .grid
                    .iter()
                    .enumerate()
                    .map(|(idx, x)| {
                        let iv = fitted.lr_interval_at(x, idx as u64)?;
                        Ok(TrialOutcome {
                            truth: truth_at(data_kind, x).expect("checked above"),
                            lo: iv.lo,
                            hi: iv.hi,
                            f_base: iv.f_base,
                        })
                    })
                    .collect()
            })
            .collect()
    });

    let mut per_rep = Vec::with_capacity(r);
    let mut failures = 0usize;
    for res in results {
        match res {
            Ok(trials) => per_rep.push(trials),
            Err(_) => failures += 1,
        }
    }
    if per_rep.is_empty() {
        return Err(Error::DegenerateData("every coverage replication failed".into()));
    }
    let mut report = coverage_from_trials(1.0 - config.alpha, &config.grid, &per_rep, failures);
    report.config_hash = Some(config.hash()?);
    report.dataset_seed = Some(config.dataset_seed);
    report.train_seed = Some(config.train.seed);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<Vec<f64>> {
        vec![vec![-0.6], vec![0.6]]
    }

    fn forced(lo: f64, hi: f64, truth: f64) -> TrialOutcome {
        TrialOutcome { truth, lo, hi, f_base: 0.5 * (lo + hi) }
    }

    #[test]
    fn forced_infinite_intervals_cover_everything() {
        let reps: Vec<Vec<TrialOutcome>> = (0..5)
            .map(|_| {
                vec![
                    forced(f64::NEG_INFINITY, f64::INFINITY, 0.72),
                    forced(f64::NEG_INFINITY, f64::INFINITY, -3.0),
                ]
            })
            .collect();
        let report = coverage_from_trials(0.95, &grid(), &reps, 0);
        assert_eq!(report.pooled_coverage, 1.0);
        for p in &report.points {
            assert_eq!(p.coverage, 1.0);
        }
    }

    #[test]
    fn forced_empty_intervals_cover_nothing() {
        // lo > hi can never contain anything.
        let reps: Vec<Vec<TrialOutcome>> = (0..4)
            .map(|_| vec![forced(1.0, -1.0, 0.0), forced(1.0, -1.0, 0.0)])
            .collect();
        let report = coverage_from_trials(0.95, &grid(), &reps, 0);
        assert_eq!(report.pooled_coverage, 0.0);
    }

    #[test]
    fn hit_is_inclusive_at_endpoints() {
        assert!(forced(0.0, 1.0, 0.0).hit());
        assert!(forced(0.0, 1.0, 1.0).hit());
        assert!(!forced(0.0, 1.0, 1.0000001).hit());
    }

    #[test]
    fn failures_are_counted() {
        let reps: Vec<Vec<TrialOutcome>> =
            vec![vec![forced(0.0, 1.0, 0.5), forced(0.0, 1.0, 2.0)]];
        let report = coverage_from_trials(0.9, &grid(), &reps, 3);
        assert_eq!(report.failures, 3);
        assert_eq!(report.replications_requested, 4);
        assert_eq!(report.replications_used, 1);
        assert_eq!(report.pooled_coverage, 0.5);
    }

    #[test]
    fn coverage_rejects_r_below_two() {
        let config = crate::experiments::preset(crate::experiments::ExperimentKind::Coverage);
        assert!(run_coverage(&config, 1, 1).is_err());
    }

    #[test]
    fn coverage_rejects_two_moon() {
        let config = crate::experiments::preset(crate::experiments::ExperimentKind::TwoMoon);
        assert!(run_coverage(&config, 2, 1).is_err());
    }
}
