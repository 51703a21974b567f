//! Distribution heads: the mapping from raw network outputs to conditional
//! density parameters, per-example log-likelihoods, the scalar output of
//! interest, and the lambda-linear combination of distribution parameters
//! that defines the constrained density p_c.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor added to every variance so the Gaussian log-likelihood stays finite.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP]; lambda
/// extrapolation can push a combined probability outside (0, 1).
pub const PROB_CLAMP: f64 = 1e-7;

/// The conditional-distribution family a network models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Head {
    /// Gaussian with a single noise variance shared across inputs. The
    /// variance is supplied by the caller: 1.0 during training (equivalent to
    /// mean-squared-error up to scale) and the profiled maximum-likelihood
    /// value (mean squared residual) when evaluating likelihoods.
    HomoscedasticGaussian { variance: f64 },
    /// Gaussian whose mean and variance are both network outputs; the raw
    /// variance output is made positive by softplus plus a small floor.
    MeanVarianceGaussian,
    /// Bernoulli over a logit output, squashed by a sigmoid and clamped.
    BernoulliLogit,
}

/// Parameters of a single predicted conditional distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistParams {
    Gaussian { mean: f64, variance: f64 },
    Bernoulli { prob: f64 },
}

/// The scalar the confidence interval is built for: the regression mean or
/// the class-1 probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputOfInterest(pub f64);

/// Numerically stable ln(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

impl Head {
    /// Number of raw network outputs this head consumes.
    pub fn n_outputs(&self) -> usize {
        match self {
            Head::MeanVarianceGaussian => 2,
            _ => 1,
        }
    }

    /// Map raw network outputs to distribution parameters.
    pub fn params_from_outputs(&self, raw: &[f64]) -> Result<DistParams> {
        if raw.len() != self.n_outputs() {
            return Err(Error::InvalidArgument(format!(
                "head expects {} raw outputs, got {}",
                self.n_outputs(),
                raw.len()
            )));
        }
        Ok(match self {
            Head::HomoscedasticGaussian { variance } => {
                DistParams::Gaussian { mean: raw[0], variance: *variance }
            }
            Head::MeanVarianceGaussian => DistParams::Gaussian {
                mean: raw[0],
                variance: softplus(raw[1]) + VARIANCE_FLOOR,
            },
            Head::BernoulliLogit => DistParams::Bernoulli { prob: clamp_prob(sigmoid(raw[0])) },
        })
    }

    /// log p(y | params) for this head's family.
    pub fn log_likelihood(&self, params: &DistParams, y: f64) -> f64 {
        log_likelihood(params, y)
    }

    /// The output of interest: the mean for Gaussian heads, the class-1
    /// probability for the Bernoulli head.
    pub fn output_of_interest(&self, params: &DistParams) -> OutputOfInterest {
        match params {
            DistParams::Gaussian { mean, .. } => OutputOfInterest(*mean),
            DistParams::Bernoulli { prob } => OutputOfInterest(*prob),
        }
    }

    /// Negative log-likelihood and its exact derivative with respect to the
    /// raw network outputs. This is the derivative of the function actually
    /// computed, clamps and floors included, so it agrees with finite
    /// differences everywhere.
    pub(crate) fn nll_and_grad_raw(&self, raw: &[f64], y: f64) -> (f64, [f64; 2]) {
        match self {
            Head::HomoscedasticGaussian { variance } => {
                let v = *variance;
                let r = raw[0] - y;
                let nll = 0.5 * (2.0 * std::f64::consts::PI * v).ln() + r * r / (2.0 * v);
                (nll, [r / v, 0.0])
            }
            Head::MeanVarianceGaussian => {
                let v = softplus(raw[1]) + VARIANCE_FLOOR;
                let r = raw[0] - y;
                let nll = 0.5 * (2.0 * std::f64::consts::PI * v).ln() + r * r / (2.0 * v);
                let dnll_dv = 0.5 / v - r * r / (2.0 * v * v);
                (nll, [r / v, dnll_dv * sigmoid(raw[1])])
            }
            Head::BernoulliLogit => {
                let p_raw = sigmoid(raw[0]);
                let p = clamp_prob(p_raw);
                let nll = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
                // Inside the clamp band the usual p - y; outside, the loss
                // is locally constant in the logit.
                let g = if p_raw > PROB_CLAMP && p_raw < 1.0 - PROB_CLAMP { p - y } else { 0.0 };
                (nll, [g, 0.0])
            }
        }
    }
}

/// log p(y | params).
pub fn log_likelihood(params: &DistParams, y: f64) -> f64 {
    match params {
        DistParams::Gaussian { mean, variance } => {
            let r = y - mean;
            -0.5 * (2.0 * std::f64::consts::PI * variance).ln() - r * r / (2.0 * variance)
        }
        DistParams::Bernoulli { prob } => y * prob.ln() + (1.0 - y) * (1.0 - prob).ln(),
    }
}

/// Combine two same-family parameter sets as (1−λ)·base + λ·perturbed,
/// componentwise in the parameters' natural space. The combined variance is
/// floored and the combined probability clamped so extrapolated lambdas keep
/// the likelihood finite.
pub fn combine_params(base: &DistParams, perturbed: &DistParams, lambda: f64) -> Result<DistParams> {
    let mix = |a: f64, b: f64| (1.0 - lambda) * a + lambda * b;
    match (base, perturbed) {
        (
            DistParams::Gaussian { mean: m0, variance: v0 },
            DistParams::Gaussian { mean: m1, variance: v1 },
        ) => Ok(DistParams::Gaussian {
            mean: mix(*m0, *m1),
            variance: mix(*v0, *v1).max(VARIANCE_FLOOR),
        }),
        (DistParams::Bernoulli { prob: p0 }, DistParams::Bernoulli { prob: p1 }) => {
            Ok(DistParams::Bernoulli { prob: clamp_prob(mix(*p0, *p1)) })
        }
        _ => Err(Error::InvalidArgument("combine_params requires the same family".into())),
    }
}

/// Alternative combination path for the Bernoulli head: mix in logit space
/// rather than probability space. The two paths generally disagree away from
/// the anchor point; this one exists so the difference can be measured.
pub fn combine_params_logit(
    base: &DistParams,
    perturbed: &DistParams,
    lambda: f64,
) -> Result<DistParams> {
    match (base, perturbed) {
        (DistParams::Bernoulli { prob: p0 }, DistParams::Bernoulli { prob: p1 }) => {
            let logit = |p: f64| (p / (1.0 - p)).ln();
            let z = (1.0 - lambda) * logit(*p0) + lambda * logit(*p1);
            Ok(DistParams::Bernoulli { prob: clamp_prob(sigmoid(z)) })
        }
        _ => Err(Error::InvalidArgument(
            "logit-space combination only applies to the Bernoulli family".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernoulli_logit_zero_is_half() {
        let head = Head::BernoulliLogit;
        let p = head.params_from_outputs(&[0.0]).unwrap();
        assert_eq!(p, DistParams::Bernoulli { prob: 0.5 });
    }

    #[test]
    fn mean_variance_softplus_zero() {
        let head = Head::MeanVarianceGaussian;
        match head.params_from_outputs(&[1.0, 0.0]).unwrap() {
            DistParams::Gaussian { mean, variance } => {
                assert_eq!(mean, 1.0);
                assert!((variance - (2.0f64.ln() + 1e-6)).abs() < 1e-12);
                assert!((variance - 0.693148).abs() < 1e-6);
            }
            _ => panic!("wrong family"),
        }
    }

    #[test]
    fn bernoulli_large_logit_clamps() {
        let head = Head::BernoulliLogit;
        match head.params_from_outputs(&[100.0]).unwrap() {
            DistParams::Bernoulli { prob } => assert_eq!(prob, 1.0 - PROB_CLAMP),
            _ => panic!("wrong family"),
        }
        match head.params_from_outputs(&[-100.0]).unwrap() {
            DistParams::Bernoulli { prob } => assert_eq!(prob, PROB_CLAMP),
            _ => panic!("wrong family"),
        }
    }

    #[test]
    fn dimension_mismatch_is_error() {
        assert!(Head::MeanVarianceGaussian.params_from_outputs(&[0.0]).is_err());
        assert!(Head::BernoulliLogit.params_from_outputs(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn gaussian_log_likelihood_examples() {
        let ll = log_likelihood(&DistParams::Gaussian { mean: 0.0, variance: 1.0 }, 0.0);
        assert!((ll - (-0.918939)).abs() < 1e-6);

        // Maximized over the mean at mean = y.
        let at_y = log_likelihood(&DistParams::Gaussian { mean: 1.3, variance: 0.7 }, 1.3);
        for off in [-0.5, -0.1, 0.1, 0.5] {
            let other =
                log_likelihood(&DistParams::Gaussian { mean: 1.3 + off, variance: 0.7 }, 1.3);
            assert!(other < at_y);
        }
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn bernoulli_log_likelihood_examples() {
        let ll = log_likelihood(&DistParams::Bernoulli { prob: 0.5 }, 1.0);
        assert!((ll - (-0.693147)).abs() < 1e-6);
        for p in [0.1, 0.5, 0.93] {
            for y in [0.0, 1.0] {
                assert!(log_likelihood(&DistParams::Bernoulli { prob: p }, y) <= 0.0);
            }
        }
    }

    #[test]
    fn combine_endpoints_and_midpoint() {
        let a = DistParams::Bernoulli { prob: 0.2 };
        let b = DistParams::Bernoulli { prob: 0.8 };
        assert_eq!(combine_params(&a, &b, 0.0).unwrap(), a);
        assert_eq!(combine_params(&a, &b, 1.0).unwrap(), b);
        assert_eq!(combine_params(&a, &b, 0.5).unwrap(), DistParams::Bernoulli { prob: 0.5 });
    }

    #[test]
    fn combine_floors_extrapolated_variance() {
        let a = DistParams::Gaussian { mean: 0.0, variance: 0.5 };
        let b = DistParams::Gaussian { mean: 1.0, variance: 0.1 };
        match combine_params(&a, &b, 2.0).unwrap() {
            DistParams::Gaussian { variance, .. } => assert_eq!(variance, VARIANCE_FLOOR),
            _ => panic!("wrong family"),
        }
    }

    #[test]
    fn combine_mixed_families_is_error() {
        let a = DistParams::Gaussian { mean: 0.0, variance: 1.0 };
        let b = DistParams::Bernoulli { prob: 0.5 };
        assert!(combine_params(&a, &b, 0.5).is_err());
    }

    #[test]
    fn logit_path_differs_from_natural_path() {
        let a = DistParams::Bernoulli { prob: 0.2 };
        let b = DistParams::Bernoulli { prob: 0.9 };
        let nat = combine_params(&a, &b, 0.5).unwrap();
        let log = combine_params_logit(&a, &b, 0.5).unwrap();
        let (DistParams::Bernoulli { prob: pn }, DistParams::Bernoulli { prob: pl }) = (nat, log)
        else {
            panic!("wrong family");
        };
        assert!((pn - pl).abs() > 1e-3, "paths coincide: {pn} vs {pl}");
    }

    #[test]
    fn output_of_interest_extraction() {
        let head = Head::MeanVarianceGaussian;
        let p = DistParams::Gaussian { mean: 1.5, variance: 0.3 };
        assert_eq!(head.output_of_interest(&p).0, 1.5);
        let head = Head::BernoulliLogit;
        let p = DistParams::Bernoulli { prob: 0.42 };
        assert_eq!(head.output_of_interest(&p).0, 0.42);
    }

    proptest::proptest! {
        /// Extract-then-combine equals combine-then-extract (away from clamps).
        #[test]
        fn combine_is_affine_in_lambda(
            m0 in -3.0f64..3.0, m1 in -3.0f64..3.0,
            v0 in 0.1f64..2.0, v1 in 0.1f64..2.0,
            lambda in 0.0f64..1.0,
        ) {
            let head = Head::MeanVarianceGaussian;
            let a = DistParams::Gaussian { mean: m0, variance: v0 };
            let b = DistParams::Gaussian { mean: m1, variance: v1 };
            let c = combine_params(&a, &b, lambda).unwrap();
            let f = head.output_of_interest(&c).0;
            let want = (1.0 - lambda) * m0 + lambda * m1;
            proptest::prop_assert!((f - want).abs() < 1e-12);
        }

        #[test]
        fn solving_lambda_is_exact(
            p0 in 0.05f64..0.45, p1 in 0.55f64..0.95, c in 0.1f64..0.9,
        ) {
            // lambda = (c - f0) / (f1 - f0) reproduces c through the combination.
            let lambda = (c - p0) / (p1 - p0);
            let a = DistParams::Bernoulli { prob: p0 };
            let b = DistParams::Bernoulli { prob: p1 };
            let combined = combine_params(&a, &b, lambda).unwrap();
            let DistParams::Bernoulli { prob } = combined else { panic!() };
            proptest::prop_assert!((prob - c).abs() < 1e-9);
        }
    }
}
