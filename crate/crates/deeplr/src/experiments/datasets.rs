//! Seeded generators for the synthetic desk-scale tasks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Record, WeightedDataset};
use crate::error::{Error, Result};

fn require_even(n: usize, what: &str) -> Result<()> {
    if n == 0 || !n.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "{what} needs a positive even n, got {n}"
        )));
    }
    Ok(())
}

/// Regression task: x uniform on [−1, −0.2] ∪ [0.2, 1] in equal halves,
/// y | x ~ N(2x², 0.1²). All weights 1.
pub fn gen_toy_regression(n: usize, seed: u64) -> Result<WeightedDataset> {
    gen_toy_regression_noisy(n, seed, 0.1)
}

/// [`gen_toy_regression`] with an explicit noise scale; zero noise gives
/// y = 2x² exactly.
pub fn gen_toy_regression_noisy(n: usize, seed: u64, noise_sd: f64) -> Result<WeightedDataset> {
    require_even(n, "gen_toy_regression")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = gaussian_noise(noise_sd)?;
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let x = if i < n / 2 {
            rng.random_range(-1.0..-0.2)
        } else {
            rng.random_range(0.2..1.0)
        };
        let y = 2.0 * x * x + noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
        records.push(Record { x: vec![x], y, weight: 1.0 });
    }
    WeightedDataset::new(records)
}

/// Binary classification task: x uniform on [0, 0.2] ∪ [0.8, 1] in equal
/// halves, y ~ Bernoulli(0.5 + 0.4 cos(6x)).
pub fn gen_toy_classification(n: usize, seed: u64) -> Result<WeightedDataset> {
    require_even(n, "gen_toy_classification")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let x: f64 = if i < n / 2 {
            rng.random_range(0.0..0.2)
        } else {
            rng.random_range(0.8..1.0)
        };
        let p = 0.5 + 0.4 * (6.0 * x).cos();
        let y = if rng.random_range(0.0..1.0) < p { 1.0 } else { 0.0 };
        records.push(Record { x: vec![x], y, weight: 1.0 });
    }
    WeightedDataset::new(records)
}

/// Two interleaving half circles with isotropic Gaussian jitter: moon A is
/// (cos t, sin t) with label 0, moon B is (1 − cos t, 0.5 − sin t) with
/// label 1, t on an inclusive uniform grid over [0, π], n/2 points each.
pub fn gen_two_moons(n: usize, noise_sd: f64, seed: u64) -> Result<WeightedDataset> {
    require_even(n, "gen_two_moons")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = gaussian_noise(noise_sd)?;
    let m = n / 2;
    let t_at = |j: usize| {
        if m == 1 {
            0.0
        } else {
            std::f64::consts::PI * j as f64 / (m - 1) as f64
        }
    };
    let mut records = Vec::with_capacity(n);
    for j in 0..m {
        let t = t_at(j);
        let mut jitter = |v: f64| v + noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
        records.push(Record { x: vec![jitter(t.cos()), jitter(t.sin())], y: 0.0, weight: 1.0 });
    }
    for j in 0..m {
        let t = t_at(j);
        let mut jitter = |v: f64| v + noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
        records.push(Record {
            x: vec![jitter(1.0 - t.cos()), jitter(0.5 - t.sin())],
            y: 1.0,
            weight: 1.0,
        });
    }
    WeightedDataset::new(records)
}

fn gaussian_noise(sd: f64) -> Result<Option<Normal<f64>>> {
    if !(sd >= 0.0 && sd.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise scale must be >= 0, got {sd}")));
    }
    if sd == 0.0 {
        return Ok(None);
    }
    Ok(Some(Normal::new(0.0, sd).expect("positive finite sd")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_shape_and_halves() {
        let ds = gen_toy_regression(80, 7).unwrap();
        assert_eq!(ds.len(), 80);
        let left = ds.records().iter().filter(|r| (-1.0..=-0.2).contains(&r.x[0])).count();
        let right = ds.records().iter().filter(|r| (0.2..=1.0).contains(&r.x[0])).count();
        assert_eq!(left, 40);
        assert_eq!(right, 40);
        assert!(gen_toy_regression(81, 7).is_err());
    }

    #[test]
    fn regression_zero_noise_is_exact() {
        let ds = gen_toy_regression_noisy(20, 3, 0.0).unwrap();
        for r in ds.records() {
            assert_eq!(r.y, 2.0 * r.x[0] * r.x[0]);
        }
    }

    #[test]
    fn regression_noise_is_centered() {
        // Monte-Carlo sanity of the generator: mean residual ~ 0.
        let ds = gen_toy_regression(100_000, 11).unwrap();
        let mean_resid: f64 = ds
            .records()
            .iter()
            .map(|r| r.y - 2.0 * r.x[0] * r.x[0])
            .sum::<f64>()
            / ds.len() as f64;
        assert!(mean_resid.abs() < 0.002, "mean residual {mean_resid}");
    }

    #[test]
    fn classification_shape_and_rate_near_zero() {
        let ds = gen_toy_classification(60, 5).unwrap();
        assert_eq!(ds.len(), 60);
        assert!(gen_toy_classification(61, 5).is_err());

        // Class-1 rate on the left arm approaches p(x) ~ 0.9 for x ~ 0.
        let big = gen_toy_classification(100_000, 13).unwrap();
        let left: Vec<&Record> =
            big.records().iter().filter(|r| r.x[0] < 0.05).collect();
        let rate = left.iter().map(|r| r.y).sum::<f64>() / left.len() as f64;
        let expected: f64 = left
            .iter()
            .map(|r| 0.5 + 0.4 * (6.0 * r.x[0]).cos())
            .sum::<f64>()
            / left.len() as f64;
        assert!((rate - expected).abs() < 0.012, "rate {rate} vs expected {expected}");
    }

    #[test]
    fn two_moons_noise_free_geometry() {
        let ds = gen_two_moons(80, 0.0, 1).unwrap();
        assert_eq!(ds.len(), 80);
        let (a, b): (Vec<&Record>, Vec<&Record>) =
            ds.records().iter().partition(|r| r.y == 0.0);
        assert_eq!(a.len(), 40);
        assert_eq!(b.len(), 40);
        // t = 0 endpoints.
        assert_eq!(a[0].x, vec![1.0, 0.0]);
        assert_eq!(b[0].x, vec![0.0, 0.5]);
        // Noise-free points sit on their unit half circles.
        for r in &a {
            let radius = (r.x[0] * r.x[0] + r.x[1] * r.x[1]).sqrt();
            assert!((radius - 1.0).abs() < 1e-12);
            assert!(r.x[1] >= -1e-12);
        }
        for r in &b {
            let (cx, cy) = (r.x[0] - 1.0, r.x[1] - 0.5);
            let radius = (cx * cx + cy * cy).sqrt();
            assert!((radius - 1.0).abs() < 1e-12);
            assert!(r.x[1] <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(gen_toy_regression(40, 9).unwrap(), gen_toy_regression(40, 9).unwrap());
        assert_ne!(gen_toy_regression(40, 9).unwrap(), gen_toy_regression(40, 10).unwrap());
        assert_eq!(
            gen_two_moons(20, 0.1, 4).unwrap(),
            gen_two_moons(20, 0.1, 4).unwrap()
        );
    }
}
