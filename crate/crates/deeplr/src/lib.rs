//! Likelihood-ratio confidence intervals for neural network predictions.
//!
//! The core idea: to build a confidence interval for a network's output at a
//! query point, retrain two perturbed copies of the network that are pulled
//! toward larger and smaller values at that point while still fitting the
//! data, then scan the linear family between the base and perturbed networks
//! with a likelihood-ratio test statistic thresholded by a chi-squared
//! quantile. Intervals built this way can be asymmetric and widen away from
//! the data.
//!
//! The crate also carries the classical closed-form oracles used to validate
//! the machinery, a deep-ensemble baseline, synthetic data generators, and
//! the experiment runners (figures as CSV, Monte-Carlo distribution checks,
//! coverage studies) behind the `deeplr` CLI.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod heads;
pub mod lr;
pub mod nn;
pub mod optim;
pub mod stats;

pub use data::{Record, WeightedDataset};
pub use error::{Error, Result};
pub use heads::{DistParams, Head};
pub use lr::{ConfidenceInterval, Diagnostic, IntervalDocument, PerturbedPair, SearchOptions};
pub use nn::{Activation, GradVector, MlpSpec, OutputActivation, ParamVector};
pub use optim::{Optimizer, TrainConfig};
