//! Deep-ensemble baseline: independently initialized members trained on the
//! same data, with a normal-approximation interval on the output of interest.

use rayon::prelude::*;

use crate::data::WeightedDataset;
use crate::error::{Error, Result};
use crate::heads::Head;
use crate::lr::{output_at, ConfidenceInterval, Diagnostic};
use crate::nn::{init_params, validate_head, MlpSpec, ParamVector};
use crate::optim::{train, TrainConfig};
use crate::stats::normal_quantile;

/// Independently trained members sharing one architecture.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub spec: MlpSpec,
    pub members: Vec<ParamVector>,
    pub seeds: Vec<u64>,
}

/// Train `m >= 2` members with seeds `config.seed + j`; each member gets its
/// own random initialization and shuffling stream. Members train in parallel
/// and the result does not depend on scheduling.
pub fn train_ensemble(
    spec: &MlpSpec,
    data: &WeightedDataset,
    head: &Head,
    config: &TrainConfig,
    m: usize,
) -> Result<Ensemble> {
    validate_head(spec, head)?;
    config.validate()?;
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "an ensemble needs at least 2 members, got {m}"
        )));
    }
    let seeds: Vec<u64> = (0..m as u64).map(|j| config.seed.wrapping_add(j)).collect();
    {
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != seeds.len() {
            return Err(Error::InvalidArgument("ensemble member seeds collide".into()));
        }
    }
    let members: Vec<ParamVector> = seeds
        .par_iter()
        .enumerate()
        .map(|(member, &seed)| {
            let member_config = TrainConfig { seed, ..*config };
            init_params(spec, seed)
                .and_then(|init| train(spec, &init, data, head, &member_config))
                .map_err(|e| Error::EnsembleMember { member, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { spec: spec.clone(), members, seeds })
}

/// Normal-approximation interval: member mean ± z_{1−α/2} times the sample
/// standard deviation of the member outputs, clamped to [0, 1] for the
/// Bernoulli head.
pub fn ensemble_interval(
    ensemble: &Ensemble,
    x0: &[f64],
    alpha: f64,
    head: &Head,
) -> Result<ConfidenceInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    let outputs: Vec<f64> = ensemble
        .members
        .iter()
        .map(|params| output_at(&ensemble.spec, params, head, x0))
        .collect::<Result<Vec<_>>>()?;
    let m = outputs.len() as f64;
    let mean = outputs.iter().sum::<f64>() / m;
    let ss: f64 = outputs.iter().map(|f| (f - mean) * (f - mean)).sum();
    let sd = (ss / (m - 1.0)).sqrt();
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let (mut lo, mut hi) = (mean - z * sd, mean + z * sd);
    if matches!(head, Head::BernoulliLogit) {
        lo = lo.clamp(0.0, 1.0);
        hi = hi.clamp(0.0, 1.0);
    }
    Ok(ConfidenceInterval {
        lo,
        hi,
        alpha,
        f_base: mean,
        threshold: None,
        dof: None,
        lambda_at_endpoints: None,
        profile: Vec::new(),
        diagnostics: vec![Diagnostic::NormalApproximation],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Record;
    use crate::nn::{Activation, OutputActivation};
    use crate::optim::Optimizer;

    fn toy_data() -> WeightedDataset {
        WeightedDataset::new(
            (0..12)
                .map(|i| {
                    let x = i as f64 / 11.0;
                    Record { x: vec![x], y: 0.5 * x, weight: 1.0 }
                })
                .collect(),
        )
        .unwrap()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            optimizer: Optimizer::default_adam(),
            epochs: 15,
            batch_size: 4,
            seed: 100,
            variance_warmup_epochs: 0,
        }
    }

    #[test]
    fn member_count_and_rejection_of_one() {
        let spec = MlpSpec::single(1, vec![4], Activation::Elu, OutputActivation::Linear, 0.0);
        let head = Head::HomoscedasticGaussian { variance: 1.0 };
        let data = toy_data();
        let ens = train_ensemble(&spec, &data, &head, &config(), 10).unwrap();
        assert_eq!(ens.members.len(), 10);
        assert!(train_ensemble(&spec, &data, &head, &config(), 1).is_err());
    }

    #[test]
    fn members_differ_and_training_is_deterministic() {
        let spec = MlpSpec::single(1, vec![4], Activation::Elu, OutputActivation::Linear, 0.0);
        let head = Head::HomoscedasticGaussian { variance: 1.0 };
        let data = toy_data();
        let a = train_ensemble(&spec, &data, &head, &config(), 3).unwrap();
        let b = train_ensemble(&spec, &data, &head, &config(), 3).unwrap();
        assert_ne!(a.members[0], a.members[1]);
        for (x, y) in a.members.iter().zip(b.members.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn identical_members_give_point_interval() {
        let spec = MlpSpec::single(1, vec![], Activation::Elu, OutputActivation::Linear, 0.0);
        let member = ParamVector { values: vec![0.0, 0.5] };
        let ens = Ensemble { spec, members: vec![member.clone(), member], seeds: vec![0, 1] };
        let head = Head::HomoscedasticGaussian { variance: 1.0 };
        let iv = ensemble_interval(&ens, &[0.3], 0.05, &head).unwrap();
        assert_eq!((iv.lo, iv.hi), (0.5, 0.5));
    }

    #[test]
    fn interval_is_symmetric_and_contains_mean() {
        let spec = MlpSpec::single(1, vec![], Activation::Elu, OutputActivation::Linear, 0.0);
        let members: Vec<ParamVector> =
            [0.2, 0.4, 0.9].iter().map(|&b| ParamVector { values: vec![0.0, b] }).collect();
        let ens = Ensemble { spec, members, seeds: vec![0, 1, 2] };
        let head = Head::HomoscedasticGaussian { variance: 1.0 };
        let iv = ensemble_interval(&ens, &[0.0], 0.1, &head).unwrap();
        assert!(iv.contains(iv.f_base));
        assert!((iv.hi - iv.f_base - (iv.f_base - iv.lo)).abs() < 1e-12);
        assert!(iv.diagnostics.contains(&Diagnostic::NormalApproximation));
    }

    #[test]
    fn width_scales_with_member_spread() {
        let spec = MlpSpec::single(1, vec![], Activation::Elu, OutputActivation::Linear, 0.0);
        let head = Head::HomoscedasticGaussian { variance: 1.0 };
        let make = |spread: f64| {
            let members: Vec<ParamVector> = [-1.0, 0.0, 1.0]
                .iter()
                .map(|&b| ParamVector { values: vec![0.0, spread * b] })
                .collect();
            let ens = Ensemble { spec: spec.clone(), members, seeds: vec![0, 1, 2] };
            ensemble_interval(&ens, &[0.0], 0.05, &head).unwrap().width()
        };
        let w1 = make(0.3);
        let w2 = make(0.6);
        assert!((w2 - 2.0 * w1).abs() < 1e-12, "{w2} vs 2x{w1}");
    }

    #[test]
    fn bernoulli_interval_clamps_to_unit_range() {
        let spec = MlpSpec::single(1, vec![], Activation::Elu, OutputActivation::Linear, 0.0);
        // Wildly spread logits force the normal interval outside [0, 1].
        let members: Vec<ParamVector> =
            [-6.0, 6.0, 0.0].iter().map(|&b| ParamVector { values: vec![0.0, b] }).collect();
        let ens = Ensemble { spec, members, seeds: vec![0, 1, 2] };
        let iv = ensemble_interval(&ens, &[0.0], 0.05, &Head::BernoulliLogit).unwrap();
        assert!(iv.lo >= 0.0 && iv.hi <= 1.0);
        assert_eq!((iv.lo, iv.hi), (0.0, 1.0));
    }
}
