//! Special functions, quantiles, the exact Gaussian-mean likelihood-ratio
//! interval, and distribution-distance utilities for Monte-Carlo checks.
//!
//! Everything here is a pure function of its inputs. The incomplete gamma
//! function uses the classic series/continued-fraction split; quantiles are
//! obtained by bisection on the corresponding CDF, which trades a few dozen
//! cheap evaluations for not having to reason about Newton edge cases.

use crate::error::{Error, Result};

/// A probability/value pair on some distribution's quantile function.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Quantile {
    /// Probability level, strictly inside (0, 1).
    pub p: f64,
    /// The quantile value itself.
    pub value: f64,
}

impl Quantile {
    /// Standard-normal quantile at level `p`.
    pub fn normal(p: f64) -> Result<Quantile> {
        Ok(Quantile { p, value: normal_quantile(p)? })
    }

    /// Chi-squared quantile at level `p` with `dof` degrees of freedom.
    pub fn chi_squared(p: f64, dof: u32) -> Result<Quantile> {
        Ok(Quantile { p, value: chi2_quantile(p, dof)? })
    }
}

/// A two-sided interval with its nominal confidence level.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IntervalResult {
    pub lo: f64,
    pub hi: f64,
    /// Nominal coverage level, e.g. 0.95.
    pub level: f64,
}

const LANCZOS_G: [f64; 6] = [
    76.18009172947146,
    -86.50532032941677,
    24.01409824083091,
    -1.231739572450155,
    0.1208650973866179e-2,
    -0.5395239384953e-5,
];

/// ln Γ(x) for x > 0 via the Lanczos approximation.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = 1.000000000190015;
    for (j, &c) in LANCZOS_G.iter().enumerate() {
        ser += c / (x + 1.0 + j as f64);
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

const GAMMA_EPS: f64 = 1e-16;
const GAMMA_MAX_ITER: usize = 500;

/// Regularized lower incomplete gamma function P(a, x) for a > 0, x >= 0.
///
/// Series expansion for x < a + 1, Lentz continued fraction for the upper
/// tail otherwise. Absolute error well below 1e-12 over the range used here.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_p_series(a, x)
    } else {
        1.0 - gamma_q_cf(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    for n in 1..GAMMA_MAX_ITER {
        term *= x / (a + n as f64);
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * (a * x.ln() - x - ln_gamma(a)).exp()
}

fn gamma_q_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    h * (a * x.ln() - x - ln_gamma(a)).exp()
}

/// Standard normal CDF Φ(x), computed through the incomplete gamma function:
/// Φ(x) = (1 + sign(x) · P(1/2, x²/2)) / 2.
pub fn normal_cdf(x: f64) -> f64 {
    if x == 0.0 {
        return 0.5;
    }
    let p = gamma_p(0.5, 0.5 * x * x);
    if x > 0.0 {
        0.5 * (1.0 + p)
    } else {
        0.5 * (1.0 - p)
    }
}

const BISECT_WIDTH: f64 = 1e-12;

/// Bisection for a nondecreasing `f` with f(lo) <= target <= f(hi).
fn bisect_nondecreasing(mut lo: f64, mut hi: f64, target: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        if hi - lo <= BISECT_WIDTH {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Standard normal quantile: the x with Φ(x) = p.
///
/// Errors if `p` is not strictly inside (0, 1).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "normal_quantile requires 0 < p < 1, got {p}"
        )));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    // Exploit antisymmetry so the bisection always works on the upper half.
    if p < 0.5 {
        return Ok(-normal_quantile(1.0 - p)?);
    }
    Ok(bisect_nondecreasing(0.0, 40.0, p, normal_cdf))
}

fn check_dof(k: u32) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("chi-squared dof must be >= 1".into()));
    }
    Ok(k as f64)
}

/// Chi-squared CDF with `k` degrees of freedom: P(k/2, x/2).
pub fn chi2_cdf(x: f64, k: u32) -> Result<f64> {
    let kf = check_dof(k)?;
    if x < 0.0 {
        return Err(Error::InvalidArgument(format!("chi2_cdf requires x >= 0, got {x}")));
    }
    Ok(gamma_p(0.5 * kf, 0.5 * x))
}

/// Chi-squared quantile: the x with chi2_cdf(x, k) = p.
pub fn chi2_quantile(p: f64, k: u32) -> Result<f64> {
    check_dof(k)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "chi2_quantile requires 0 < p < 1, got {p}"
        )));
    }
    let cdf = |x: f64| chi2_cdf(x, k).expect("x >= 0 inside bracket");
    // Grow the bracket until it encloses p, then bisect.
    let mut hi = 1.0;
    while cdf(hi) < p {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(Error::InvalidArgument(format!(
                "chi2_quantile bracket overflow at p = {p}"
            )));
        }
    }
    Ok(bisect_nondecreasing(0.0, hi, p, cdf))
}

/// The classical likelihood-ratio interval for the mean of i.i.d. Gaussian
/// samples with unknown variance, in its large-sample z form:
///
/// Ȳ ± z_{1−α/2} · sqrt( (1/n) · (1/(n−1)) · Σ (Yᵢ − Ȳ)² )
///
/// Serves as the exact oracle the network-based interval is checked against.
pub fn gaussian_mean_lr_interval(samples: &[f64], alpha: f64) -> Result<IntervalResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let n = samples.len();
    if n < 2 {
        return Err(Error::DegenerateData(format!(
            "gaussian_mean_lr_interval needs at least 2 samples, got {n}"
        )));
    }
    if samples.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite".into()));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let ss: f64 = samples.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss == 0.0 {
        return Err(Error::DegenerateData("all samples identical (zero variance)".into()));
    }
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let half_width = z * (ss / (nf * (nf - 1.0))).sqrt();
    Ok(IntervalResult { lo: mean - half_width, hi: mean + half_width, level: 1.0 - alpha })
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `samples` and a
/// reference CDF: sup over the sorted samples of |F_n − F|.
pub fn ks_distance(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("ks_distance requires nonempty samples".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN samples"));
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let below = i as f64 / n;
        let above = (i + 1) as f64 / n;
        d = d.max((f - below).abs()).max((above - f).abs());
    }
    Ok(d)
}
