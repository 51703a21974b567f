//! Mini-batch training over weighted datasets with seeded shuffling.
//!
//! One training run is strictly sequential and deterministic: identical
//! (init, data, config) reproduce the trajectory bit for bit on one machine.
//! Independent runs (ensemble members, perturbation pairs, replications)
//! share nothing mutable and may execute in parallel.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WeightedDataset;
use crate::error::{Error, Result};
use crate::heads::Head;
use crate::nn::{loss_and_grad, validate_head, MlpSpec, ParamVector};

/// Loss exceeding this aborts training as diverged.
const DIVERGENCE_GUARD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam { lr: f64, beta1: f64, beta2: f64, epsilon: f64 },
    Sgd { lr: f64 },
}

impl Optimizer {
    /// The stock Adam configuration: lr 1e-3, betas 0.9/0.999, epsilon 1e-8.
    pub fn default_adam() -> Optimizer {
        Optimizer::Adam { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    fn lr(&self) -> f64 {
        match self {
            Optimizer::Adam { lr, .. } | Optimizer::Sgd { lr } => *lr,
        }
    }
}

/// Everything that defines one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs during which the variance branch of a mean-variance network is
    /// frozen (its gradient zeroed). Must be 0 for other heads.
    pub variance_warmup_epochs: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.optimizer.lr() >= 0.0 && self.optimizer.lr().is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Adam moment bookkeeping, laid out like the parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros(n: usize) -> AdamState {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// Deterministic seed derivation (splitmix64 over base ^ tag) so nested
/// components (epochs, ensemble members, perturbation directions,
/// replications) get decorrelated but reproducible streams.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seeded Fisher–Yates permutation of 0..n chunked into batches; the final
/// partial batch is retained.
pub fn make_batches(n: usize, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    assert!(n >= 1 && batch_size >= 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    order.shuffle(&mut rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Train a network, starting from `init`, with fresh optimizer state.
///
/// Batches are reshuffled every epoch from per-epoch derived seeds. During
/// the variance warm-up the variance branch's gradient entries are zeroed so
/// those parameters stay at their initial values.
pub fn train(
    spec: &MlpSpec,
    init: &ParamVector,
    data: &WeightedDataset,
    head: &Head,
    config: &TrainConfig,
) -> Result<ParamVector> {
    config.validate()?;
    validate_head(spec, head)?;
    if data.is_empty() {
        return Err(Error::DegenerateData("cannot train on an empty dataset".into()));
    }
    if data.input_dim() != spec.input_dim {
        return Err(Error::InvalidArgument(format!(
            "dataset dimension {} does not match spec input_dim {}",
            data.input_dim(),
            spec.input_dim
        )));
    }
    if init.values.len() != spec.param_len() {
        return Err(Error::InvalidArgument("init length does not match spec".into()));
    }
    if config.variance_warmup_epochs > 0 && !matches!(head, Head::MeanVarianceGaussian) {
        return Err(Error::InvalidArgument(
            "variance_warmup_epochs only applies to the mean-variance head".into(),
        ));
    }

    let mut params = init.clone();
    let mut adam = AdamState::zeros(params.values.len());
    let variance_range = if matches!(head, Head::MeanVarianceGaussian) {
        Some(spec.branch_param_range(1))
    } else {
        None
    };

    for epoch in 0..config.epochs {
        let batches = make_batches(data.len(), config.batch_size, derive_seed(config.seed, epoch as u64));
        for (bi, batch) in batches.iter().enumerate() {
            let refs: Vec<&crate::data::Record> =
                batch.iter().map(|&i| &data.records()[i]).collect();
            let (loss, mut grad) = loss_and_grad(spec, &params, &refs, head)?;
            if !loss.is_finite() || loss > DIVERGENCE_GUARD {
                return Err(Error::TrainingDiverged { epoch, batch: bi, loss });
            }
            if epoch < config.variance_warmup_epochs {
                if let Some(range) = &variance_range {
                    grad.values[range.clone()].fill(0.0);
                }
            }
            match config.optimizer {
                Optimizer::Sgd { lr } => {
                    for (p, g) in params.values.iter_mut().zip(grad.values.iter()) {
                        *p -= lr * g;
                    }
                }
                Optimizer::Adam { lr, beta1, beta2, epsilon } => {
                    adam.step += 1;
                    let bc1 = 1.0 - beta1.powi(adam.step as i32);
                    let bc2 = 1.0 - beta2.powi(adam.step as i32);
                    for i in 0..params.values.len() {
                        let g = grad.values[i];
                        adam.m[i] = beta1 * adam.m[i] + (1.0 - beta1) * g;
                        adam.v[i] = beta2 * adam.v[i] + (1.0 - beta2) * g * g;
                        let m_hat = adam.m[i] / bc1;
                        let v_hat = adam.v[i] / bc2;
                        params.values[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
    }
    Ok(params)
}

/// Mean loss of `params` over the full dataset; used for descent checks.
pub fn full_loss(
    spec: &MlpSpec,
    params: &ParamVector,
    data: &WeightedDataset,
    head: &Head,
) -> Result<f64> {
    let refs: Vec<&crate::data::Record> = data.records().iter().collect();
    Ok(loss_and_grad(spec, params, &refs, head)?.0)
}
