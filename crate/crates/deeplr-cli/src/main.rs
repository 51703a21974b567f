//! Command-line front end: dataset generation, training, single-point
//! confidence intervals, figure experiments, coverage studies, and the
//! Monte-Carlo distribution checks.
//!
//! Errors leave through stderr as one machine-readable JSON object and a
//! nonzero exit code.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use deeplr::ensemble::{ensemble_interval, train_ensemble};
use deeplr::experiments::coverage::run_coverage;
use deeplr::experiments::mc::{run_markov_mc, run_wilks_mc};
use deeplr::experiments::runner::{generate_dataset, run_experiment};
use deeplr::experiments::{preset, ExperimentConfig, ExperimentKind};
use deeplr::lr::{
    eval_head_for, interval_from_pair, train_perturbed_pair, CombinationSpace, IntervalDocument,
};
use deeplr::nn::{init_params, load_checkpoint, save_checkpoint};
use deeplr::optim::train;
use deeplr::{Error, Result, WeightedDataset};

#[derive(Parser)]
#[command(
    name = "deeplr",
    version,
    about = "Likelihood-ratio confidence intervals for neural network predictions"
)]
struct Cli {
    /// Worker threads for parallel sections; 0 uses the default pool.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and write it as CSV.
    Gen {
        /// One of: toy-regression, toy-classification, two-moon.
        experiment: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Two-moon point noise (default 0.1).
        #[arg(long)]
        noise_sd: Option<f64>,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a network on a dataset CSV and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Named preset supplying architecture, head, and training settings.
        #[arg(long)]
        preset: Option<String>,
        /// JSON experiment configuration (alternative to --preset).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output checkpoint file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Confidence interval for a trained model at one input point.
    Ci {
        /// Checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// The dataset the model was trained on.
        #[arg(long)]
        data: PathBuf,
        /// Query input, comma-separated coordinates in one token.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x0: Vec<f64>,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Chi-squared degrees of freedom for the threshold (1 or 2).
        #[arg(long)]
        dof: Option<u32>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        lambda_max: Option<f64>,
        /// Parameter-combination space: natural or logit.
        #[arg(long)]
        combination: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// deeplr (default) or ensemble.
        #[arg(long, default_value = "deeplr")]
        method: String,
        /// Ensemble size when --method ensemble.
        #[arg(long)]
        members: Option<usize>,
        /// Output JSON file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a figure experiment preset and write CSV + manifest.
    Experiment {
        /// One of: toy-regression, toy-classification, two-moon.
        preset: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        dof: Option<u32>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        lambda_max: Option<f64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo coverage study over dataset replications.
    Coverage {
        #[arg(long, default_value = "coverage")]
        preset: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short = 'R', long)]
        replications: Option<usize>,
        /// 1-D grid override, comma-separated x values in one token.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        dof: Option<u32>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        lambda_max: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for coverage.json; stdout only when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// KS check of the Gaussian-mean LR statistic against chi-squared(1).
    WilksMc {
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        #[arg(long, default_value_t = 50)]
        n_per_rep: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rejection-rate check of the chi-squared(2) Markov bound.
    MarkovMc {
        #[arg(long, default_value_t = 20_000)]
        reps: usize,
        #[arg(long, default_value_t = 20)]
        n_per_rep: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = if cli.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.workers)
            .build()
            .expect("worker pool");
        pool.install(|| run(cli))
    } else {
        run(cli)
    };
    if let Err(e) = result {
        let payload = serde_json::json!({
            "error": { "kind": e.kind(), "message": e.to_string() }
        });
        eprintln!("{payload}");
        std::process::exit(1);
    }
}

/// Resolve a configuration from --config (wins) or a preset name.
fn load_config(preset_name: Option<&str>, config_path: Option<&Path>) -> Result<ExperimentConfig> {
    if let Some(path) = config_path {
        return ExperimentConfig::from_json_str(&std::fs::read_to_string(path)?);
    }
    let name = preset_name.ok_or_else(|| {
        Error::InvalidArgument("either --preset or --config is required".into())
    })?;
    Ok(preset(ExperimentKind::parse(name)?))
}

struct Overrides {
    seed: Option<u64>,
    alpha: Option<f64>,
    dof: Option<u32>,
    delta: Option<f64>,
    lambda_max: Option<f64>,
}

/// --seed moves both the dataset draw and the training stream.
fn apply_overrides(config: &mut ExperimentConfig, ov: &Overrides) {
    if let Some(seed) = ov.seed {
        config.dataset_seed = seed;
        config.train.seed = seed;
    }
    if let Some(alpha) = ov.alpha {
        config.alpha = alpha;
    }
    if let Some(dof) = ov.dof {
        config.search.dof = dof;
    }
    if let Some(delta) = ov.delta {
        config.search.delta = delta;
    }
    if let Some(lambda_max) = ov.lambda_max {
        config.search.lambda_max = lambda_max;
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            std::fs::write(path, text)?;
            println!("{}", serde_json::json!({ "written": path.display().to_string() }));
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { experiment, n, seed, noise_sd, out } => {
            let kind = ExperimentKind::parse(&experiment)?;
            let mut config = preset(kind);
            if kind.data_kind().is_none() {
                return Err(Error::InvalidArgument(format!(
                    "{experiment} has no dataset to generate"
                )));
            }
            if let Some(n) = n {
                config.n = n;
            }
            if let Some(seed) = seed {
                config.dataset_seed = seed;
            }
            if noise_sd.is_some() {
                config.noise_sd = noise_sd;
            }
            let data = generate_dataset(&config)?;
            data.write_csv(&out)?;
            println!(
                "{}",
                serde_json::json!({
                    "written": out.display().to_string(),
                    "records": data.len(),
                    "input_dim": data.input_dim(),
                })
            );
            Ok(())
        }

        Command::Train { data, preset, config, seed, out } => {
            let mut cfg = load_config(preset.as_deref(), config.as_deref())?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            let dataset = WeightedDataset::read_csv(&data)?;
            let init = init_params(&cfg.spec, cfg.train.seed)?;
            let fitted = train(&cfg.spec, &init, &dataset, &cfg.head, &cfg.train)?;
            save_checkpoint(&out, &cfg.spec, &fitted)?;
            println!(
                "{}",
                serde_json::json!({
                    "written": out.display().to_string(),
                    "params": fitted.values.len(),
                })
            );
            Ok(())
        }

        Command::Ci {
            model,
            data,
            x0,
            preset,
            config,
            alpha,
            dof,
            delta,
            lambda_max,
            combination,
            seed,
            method,
            members,
            out,
        } => {
            let mut cfg = load_config(preset.as_deref(), config.as_deref())?;
            apply_overrides(&mut cfg, &Overrides { seed, alpha, dof, delta, lambda_max });
            if let Some(space) = combination.as_deref() {
                cfg.search.combination = match space {
                    "natural" => CombinationSpace::Natural,
                    "logit" => CombinationSpace::Logit,
                    other => {
                        return Err(Error::InvalidArgument(format!(
                            "combination must be natural or logit, got {other:?}"
                        )))
                    }
                };
            }
            let (spec, params) = load_checkpoint(&model)?;
            let dataset = WeightedDataset::read_csv(&data)?;

            let doc = match method.as_str() {
                "deeplr" => {
                    let pair = train_perturbed_pair(
                        &spec,
                        &params,
                        &dataset,
                        &cfg.head,
                        &cfg.train,
                        &x0,
                        cfg.search.delta,
                    )?;
                    let eval_head = eval_head_for(&spec, &params, &dataset, &cfg.head)?;
                    let interval =
                        interval_from_pair(&pair, &dataset, &spec, &eval_head, cfg.alpha, &cfg.search)?;
                    IntervalDocument::from_lr(&pair, &interval)
                }
                "ensemble" => {
                    let m = members.unwrap_or(cfg.ensemble_members);
                    let ensemble = train_ensemble(&spec, &dataset, &cfg.head, &cfg.train, m)?;
                    let interval = ensemble_interval(&ensemble, &x0, cfg.alpha, &cfg.head)?;
                    IntervalDocument::from_ensemble(&x0, &interval)
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "method must be deeplr or ensemble, got {other:?}"
                    )))
                }
            };
            write_or_print(out.as_deref(), &doc.to_json_string()?)
        }

        Command::Experiment { preset, config, seed, alpha, dof, delta, lambda_max, out } => {
            let mut cfg = load_config(Some(preset.as_str()), config.as_deref())?;
            apply_overrides(&mut cfg, &Overrides { seed, alpha, dof, delta, lambda_max });
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            let artifact = run_experiment(&cfg, 0)?;
            println!(
                "{}",
                serde_json::json!({
                    "csv": artifact.csv_path.display().to_string(),
                    "manifest": artifact.manifest_path.display().to_string(),
                    "rows": artifact.rows,
                })
            );
            Ok(())
        }

        Command::Coverage {
            preset,
            config,
            replications,
            grid,
            alpha,
            dof,
            delta,
            lambda_max,
            seed,
            out,
        } => {
            let mut cfg = load_config(Some(preset.as_str()), config.as_deref())?;
            apply_overrides(&mut cfg, &Overrides { seed, alpha, dof, delta, lambda_max });
            if let Some(xs) = grid {
                if cfg.spec.input_dim != 1 {
                    return Err(Error::InvalidArgument(
                        "--grid applies to 1-D experiments only".into(),
                    ));
                }
                cfg.grid = xs.into_iter().map(|x| vec![x]).collect();
            }
            let r = replications.unwrap_or(cfg.replications);
            let report = run_coverage(&cfg, r, 0)?;
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)?;
                    let path = dir.join("coverage.json");
                    std::fs::write(&path, &text)?;
                    println!(
                        "{}",
                        serde_json::json!({
                            "written": path.display().to_string(),
                            "pooled_coverage": report.pooled_coverage,
                            "failures": report.failures,
                        })
                    );
                }
                None => println!("{text}"),
            }
            Ok(())
        }

        Command::WilksMc { reps, n_per_rep, seed, out } => {
            let report = run_wilks_mc(reps, n_per_rep, seed)?;
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&report)?)
        }

        Command::MarkovMc { reps, n_per_rep, alpha, seed, out } => {
            let report = run_markov_mc(reps, n_per_rep, alpha, seed)?;
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&report)?)
        }
    }
}
