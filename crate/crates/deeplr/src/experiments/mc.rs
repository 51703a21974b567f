//! Monte-Carlo checks of the distributional claims behind the thresholds:
//! the chi-squared(1) limit of the Gaussian-mean likelihood-ratio statistic,
//! and the Markov bound for the chi-squared(2) threshold in a simple-vs-
//! simple test.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{chi2_cdf, ks_distance};

/// KS distances of the simulated Gaussian-mean LR statistic against the
/// chi-squared(1) CDF, under the null, for both noise treatments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilksReport {
    pub reps: usize,
    pub n_per_rep: usize,
    pub seed: u64,
    /// Known sigma: T = n (Ȳ − μ₀)² / σ², exactly chi-squared(1).
    pub ks_known_sigma: f64,
    /// Unknown sigma: T = n ln(1 + n (Ȳ − μ₀)² / Σ(Yᵢ − Ȳ)²); chi-squared(1)
    /// only asymptotically, so worse for small n.
    pub ks_unknown_sigma: f64,
    pub mean_t_known: f64,
}

/// Simulate the Gaussian-mean model under H₀ (μ₀ = 0, σ = 1) and compare the
/// exact LR statistics against the chi-squared(1) CDF.
pub fn run_wilks_mc(reps: usize, n_per_rep: usize, seed: u64) -> Result<WilksReport> {
    if reps < 100 {
        return Err(Error::InvalidArgument(format!("wilks-mc needs reps >= 100, got {reps}")));
    }
    if n_per_rep < 2 {
        return Err(Error::InvalidArgument("wilks-mc needs n_per_rep >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let nf = n_per_rep as f64;
    let mut t_known = Vec::with_capacity(reps);
    let mut t_unknown = Vec::with_capacity(reps);
    for _ in 0..reps {
        let ys: Vec<f64> = (0..n_per_rep).map(|_| normal.sample(&mut rng)).collect();
        let mean = ys.iter().sum::<f64>() / nf;
        let ss: f64 = ys.iter().map(|y| (y - mean) * (y - mean)).sum();
        t_known.push(nf * mean * mean);
        // Degenerate ss cannot occur with continuous draws; guard anyway.
        if ss > 0.0 {
            t_unknown.push(nf * (1.0 + nf * mean * mean / ss).ln());
        }
    }
    let cdf = |x: f64| chi2_cdf(x.max(0.0), 1).expect("x >= 0");
    Ok(WilksReport {
        reps,
        n_per_rep,
        seed,
        ks_known_sigma: ks_distance(&t_known, cdf)?,
        ks_unknown_sigma: ks_distance(&t_unknown, cdf)?,
        mean_t_known: t_known.iter().sum::<f64>() / t_known.len() as f64,
    })
}

/// Rejection rate of the simple-vs-simple likelihood-ratio test against the
/// closed-form chi-squared(2) threshold −2 ln α.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovReport {
    pub reps: usize,
    pub n_per_rep: usize,
    pub alpha: f64,
    pub mu0: f64,
    pub mu1: f64,
    /// −2 ln α, the chi-squared(2) quantile at 1 − α.
    pub threshold: f64,
    /// Fraction of H₀ samples with T > threshold; bounded by α.
    pub rejection_rate: f64,
    /// α plus three binomial standard errors at `reps` draws.
    pub mc_three_sigma_bound: f64,
}

/// Two-point test: H₀ = N(mu0, 1) against H₁ = N(mu1, 1), data drawn from
/// H₀, T = 2(ℓ₁ − ℓ₀).
pub fn run_markov_mc_with(
    reps: usize,
    n_per_rep: usize,
    alpha: f64,
    seed: u64,
    mu0: f64,
    mu1: f64,
) -> Result<MarkovReport> {
    if reps < 1000 {
        return Err(Error::InvalidArgument(format!("markov-mc needs reps >= 1000, got {reps}")));
    }
    if n_per_rep == 0 {
        return Err(Error::InvalidArgument("markov-mc needs n_per_rep >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let threshold = -2.0 * alpha.ln();
    let log_pdf = |y: f64, mu: f64| -0.5 * (y - mu) * (y - mu);
    let mut rejections = 0usize;
    for _ in 0..reps {
        let mut t = 0.0;
        for _ in 0..n_per_rep {
            let z: f64 = normal.sample(&mut rng);
            let y = mu0 + z;
            t += 2.0 * (log_pdf(y, mu1) - log_pdf(y, mu0));
        }
        if t > threshold {
            rejections += 1;
        }
    }
    let nf = reps as f64;
    Ok(MarkovReport {
        reps,
        n_per_rep,
        alpha,
        mu0,
        mu1,
        threshold,
        rejection_rate: rejections as f64 / nf,
        mc_three_sigma_bound: alpha + 3.0 * (alpha * (1.0 - alpha) / nf).sqrt(),
    })
}

/// [`run_markov_mc_with`] at the default alternatives: H₀ = N(0, 1) against
/// H₁ = N(0.5, 1).
pub fn run_markov_mc(reps: usize, n_per_rep: usize, alpha: f64, seed: u64) -> Result<MarkovReport> {
    run_markov_mc_with(reps, n_per_rep, alpha, seed, 0.0, 0.5)
}
