//! The likelihood-ratio interval construction: augmented datasets, perturbed
//! networks, the test statistic T(c), and the bisection search that assembles
//! the confidence interval.
//!
//! The construction answers: which values c could the network have produced
//! at the query point while still explaining the training data well? A
//! perturbed copy of the network is pulled toward large (small) values at the
//! query point; the family of parameter-space mixtures between the base and
//! perturbed networks is then scanned, and every c whose likelihood-ratio
//! statistic stays below a chi-squared quantile joins the interval.

use serde::{Deserialize, Serialize};

use crate::data::{Record, WeightedDataset};
use crate::error::{Error, Result};
use crate::heads::{self, DistParams, Head};
use crate::nn::{forward, validate_head, MlpSpec, ParamVector};
use crate::optim::{derive_seed, train, TrainConfig};
use crate::stats::chi2_quantile;

/// Base network plus its positively and negatively perturbed copies, with
/// the outputs of interest at the query point and the anchor values used.
#[derive(Debug, Clone)]
pub struct PerturbedPair {
    pub base: ParamVector,
    pub plus: ParamVector,
    pub minus: ParamVector,
    pub f_base: f64,
    pub f_plus: f64,
    pub f_minus: f64,
    pub x0: Vec<f64>,
    pub c_max: f64,
    pub c_min: f64,
}

impl PerturbedPair {
    /// The expected ordering is f_minus <= f_base <= f_plus; a violation is
    /// a diagnostic, not an error, until the violated direction is searched.
    pub fn ordering_violation(&self) -> bool {
        !(self.f_minus <= self.f_base && self.f_base <= self.f_plus)
    }
}

/// Flags surfaced alongside interval results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Diagnostic {
    /// An endpoint sits at the outermost reachable c rather than at a
    /// threshold crossing.
    EndpointClamped,
    /// T crossed the threshold more than once along one direction; the
    /// outermost crossing was kept.
    NonmonotoneProfile,
    /// A raw test statistic was negative (the mixed model beat the base
    /// fit) and was floored to zero.
    NegativeTFloored,
    /// An endpoint required lambda > 1, i.e. extrapolation past the
    /// perturbed network.
    LambdaExtrapolated,
    /// f_minus <= f_base <= f_plus was violated by the trained pair.
    PerturbationOrderViolation,
    /// The interval rests on a normal approximation (ensemble baseline).
    NormalApproximation,
}

impl Diagnostic {
    /// The kebab-case tag used in CSV flag columns and JSON documents.
    pub fn id(&self) -> &'static str {
        match self {
            Diagnostic::EndpointClamped => "endpoint-clamped",
            Diagnostic::NonmonotoneProfile => "nonmonotone-profile",
            Diagnostic::NegativeTFloored => "negative-t-floored",
            Diagnostic::LambdaExtrapolated => "lambda-extrapolated",
            Diagnostic::PerturbationOrderViolation => "perturbation-order-violation",
            Diagnostic::NormalApproximation => "normal-approximation",
        }
    }
}

/// Which space the distribution parameters are mixed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinationSpace {
    /// Mix probabilities, means, and variances directly.
    Natural,
    /// Mix Bernoulli logits instead of probabilities. Exists to measure how
    /// far the construction is from parametrization invariance.
    Logit,
}

/// Tunables of the interval search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Degrees of freedom for the chi-squared threshold: 1 by default, 2 for
    /// the conservative variant.
    pub dof: u32,
    /// Half-width of the anchor perturbation for Gaussian heads, in target
    /// units (assumes normalized targets).
    pub delta: f64,
    /// How far past the perturbed network the mixture may extrapolate.
    pub lambda_max: f64,
    pub combination: CombinationSpace,
    /// Points in the per-direction probe grid used to detect nonmonotone
    /// profiles before bisecting.
    pub profile_points: usize,
    pub max_bisect_iters: usize,
}

impl Default for SearchOptions {
    fn default() -> SearchOptions {
        SearchOptions {
            dof: 1,
            delta: 1.0,
            lambda_max: 1.25,
            combination: CombinationSpace::Natural,
            profile_points: 11,
            max_bisect_iters: 60,
        }
    }
}

impl SearchOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.dof == 1 || self.dof == 2) {
            return Err(Error::InvalidArgument(format!("dof must be 1 or 2, got {}", self.dof)));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::InvalidArgument("delta must be finite and >= 0".into()));
        }
        if self.lambda_max.is_nan() || self.lambda_max < 1.0 {
            return Err(Error::InvalidArgument("lambda_max must be >= 1".into()));
        }
        if self.profile_points < 3 {
            return Err(Error::InvalidArgument("profile_points must be >= 3".into()));
        }
        Ok(())
    }
}

/// A confidence interval with its T(c) profile trace and diagnostics.
///
/// The likelihood-ratio construction fills every field; the ensemble
/// baseline produces the same shape but has no threshold, dof, or lambda.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lo: f64,
    pub hi: f64,
    pub alpha: f64,
    /// The output of interest at the query point (member mean for ensembles).
    pub f_base: f64,
    pub threshold: Option<f64>,
    pub dof: Option<u32>,
    /// Mixing weights at [lo, hi]; a side is None when its endpoint came
    /// from the boundary shortcut rather than a lambda value.
    pub lambda_at_endpoints: Option<[Option<f64>; 2]>,
    /// Probed (c, T(c)) pairs, sorted by c.
    pub profile: Vec<(f64, f64)>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ConfidenceInterval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }
}

/// The JSON document written for any interval result, whichever method
/// produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IntervalDocument {
    pub method: String,
    pub x0: Vec<f64>,
    pub alpha: f64,
    pub dof: Option<u32>,
    pub lo: f64,
    pub hi: f64,
    pub f_base: f64,
    pub f_plus: Option<f64>,
    pub f_minus: Option<f64>,
    pub lambda_at_endpoints: Option<[Option<f64>; 2]>,
    pub threshold: Option<f64>,
    pub profile: Vec<(f64, f64)>,
    pub diagnostics: Vec<Diagnostic>,
}

impl IntervalDocument {
    pub fn from_lr(pair: &PerturbedPair, interval: &ConfidenceInterval) -> IntervalDocument {
        IntervalDocument {
            method: "deeplr".into(),
            x0: pair.x0.clone(),
            alpha: interval.alpha,
            dof: interval.dof,
            lo: interval.lo,
            hi: interval.hi,
            f_base: interval.f_base,
            f_plus: Some(pair.f_plus),
            f_minus: Some(pair.f_minus),
            lambda_at_endpoints: interval.lambda_at_endpoints,
            threshold: interval.threshold,
            profile: interval.profile.clone(),
            diagnostics: interval.diagnostics.clone(),
        }
    }

    pub fn from_ensemble(x0: &[f64], interval: &ConfidenceInterval) -> IntervalDocument {
        IntervalDocument {
            method: "ensemble".into(),
            x0: x0.to_vec(),
            alpha: interval.alpha,
            dof: None,
            lo: interval.lo,
            hi: interval.hi,
            f_base: interval.f_base,
            f_plus: None,
            f_minus: None,
            lambda_at_endpoints: None,
            threshold: None,
            profile: Vec::new(),
            diagnostics: interval.diagnostics.clone(),
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Output of interest of a network at one input.
pub fn output_at(spec: &MlpSpec, params: &ParamVector, head: &Head, x: &[f64]) -> Result<f64> {
    Ok(head.output_of_interest(&dist_params_at(spec, params, head, x)?).0)
}

/// Predicted distribution parameters of a network at one input.
pub fn dist_params_at(
    spec: &MlpSpec,
    params: &ParamVector,
    head: &Head,
    x: &[f64],
) -> Result<DistParams> {
    head.params_from_outputs(&forward(spec, params, x)?)
}

/// Maximum-likelihood noise variance of a Gaussian network on a dataset: the
/// mean squared residual of its mean predictions. This is the variance an
/// MSE-trained network does not carry and must be profiled at evaluation
/// time.
pub fn profile_variance(spec: &MlpSpec, params: &ParamVector, data: &WeightedDataset) -> Result<f64> {
    let probe = Head::HomoscedasticGaussian { variance: 1.0 };
    validate_head(spec, &probe)?;
    let mut acc = 0.0;
    for rec in data.records() {
        let mean = forward(spec, params, &rec.x)?[0];
        acc += (rec.y - mean) * (rec.y - mean);
    }
    let v = acc / data.len() as f64;
    if v <= 0.0 {
        return Err(Error::DegenerateData("zero residual variance; cannot profile".into()));
    }
    Ok(v)
}

/// Number of anchor copies: ceil(2n / batch_size), at least one, so each
/// batch is expected to carry about two anchors.
pub fn n_extra(n: usize, batch_size: usize) -> usize {
    (2 * n).div_ceil(batch_size).max(1)
}

/// The relabelled-and-anchored dataset one perturbed network trains on: the
/// original inputs with the base network's predictions as targets (weight 1),
/// plus `n_extra` copies of (x0, c_target) with weight 1/n_extra so the
/// anchors jointly count as a single data point.
pub fn build_augmented_dataset(
    data: &WeightedDataset,
    spec: &MlpSpec,
    base: &ParamVector,
    head: &Head,
    x0: &[f64],
    c_target: f64,
    n_extra: usize,
) -> Result<WeightedDataset> {
    if n_extra == 0 {
        return Err(Error::InvalidArgument("n_extra must be >= 1".into()));
    }
    let mut records = Vec::with_capacity(data.len() + n_extra);
    for rec in data.records() {
        let target = output_at(spec, base, head, &rec.x)?;
        records.push(Record { x: rec.x.clone(), y: target, weight: 1.0 });
    }
    let anchor_weight = 1.0 / n_extra as f64;
    for _ in 0..n_extra {
        records.push(Record { x: x0.to_vec(), y: c_target, weight: anchor_weight });
    }
    WeightedDataset::new(records)
}

const PLUS_TAG: u64 = 0x706c7573; // "plus"
const MINUS_TAG: u64 = 0x6d696e75; // "minu"

/// Train the positively and negatively perturbed copies of a fitted network.
///
/// Anchor values are f_base ± delta for Gaussian heads and exactly 1/0 for
/// the Bernoulli head. Both copies start from the base parameters and train
/// with the original procedure under direction-derived seeds; the two runs
/// are independent and execute in parallel.
pub fn train_perturbed_pair(
    spec: &MlpSpec,
    base: &ParamVector,
    data: &WeightedDataset,
    head: &Head,
    config: &TrainConfig,
    x0: &[f64],
    delta: f64,
) -> Result<PerturbedPair> {
    validate_head(spec, head)?;
    config.validate()?;
    let f_base = output_at(spec, base, head, x0)?;
    let (c_max, c_min) = match head {
        Head::BernoulliLogit => (1.0, 0.0),
        _ => {
            if !(delta > 0.0 && delta.is_finite()) {
                return Err(Error::DegenerateRequest(format!(
                    "a Gaussian head needs delta > 0, got {delta}"
                )));
            }
            (f_base + delta, f_base - delta)
        }
    };
    let nx = n_extra(data.len(), config.batch_size);
    let d_plus = build_augmented_dataset(data, spec, base, head, x0, c_max, nx)?;
    let d_minus = build_augmented_dataset(data, spec, base, head, x0, c_min, nx)?;
    // The relabelled targets are noise-free, so letting the variance branch
    // train on them collapses the noise estimate and poisons the mixture
    // likelihoods. The perturbation explores the mean function; the variance
    // stays at its fitted values.
    let warmup = match head {
        Head::MeanVarianceGaussian => config.epochs,
        _ => config.variance_warmup_epochs,
    };
    let plus_config = TrainConfig {
        seed: derive_seed(config.seed, PLUS_TAG),
        variance_warmup_epochs: warmup,
        ..*config
    };
    let minus_config = TrainConfig {
        seed: derive_seed(config.seed, MINUS_TAG),
        variance_warmup_epochs: warmup,
        ..*config
    };
    let (plus, minus) = rayon::join(
        || train(spec, base, &d_plus, head, &plus_config),
        || train(spec, base, &d_minus, head, &minus_config),
    );
    let (plus, minus) = (plus?, minus?);
    let f_plus = output_at(spec, &plus, head, x0)?;
    let f_minus = output_at(spec, &minus, head, x0)?;
    Ok(PerturbedPair {
        base: base.clone(),
        plus,
        minus,
        f_base,
        f_plus,
        f_minus,
        x0: x0.to_vec(),
        c_max,
        c_min,
    })
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Precomputed per-record distribution parameters for the three networks,
/// so profile evaluations cost one combination pass rather than three
/// forward passes.
struct ProfileEvaluator {
    ys: Vec<f64>,
    base_params: Vec<DistParams>,
    plus_params: Vec<DistParams>,
    minus_params: Vec<DistParams>,
    ll_base: f64,
    f_base: f64,
    f_plus: f64,
    f_minus: f64,
    combination: CombinationSpace,
    bernoulli: bool,
}

impl ProfileEvaluator {
    fn new(
        pair: &PerturbedPair,
        data: &WeightedDataset,
        spec: &MlpSpec,
        head: &Head,
        combination: CombinationSpace,
    ) -> Result<ProfileEvaluator> {
        validate_head(spec, head)?;
        if data.is_empty() {
            return Err(Error::DegenerateData("test statistic needs a nonempty dataset".into()));
        }
        if matches!(combination, CombinationSpace::Logit) && !matches!(head, Head::BernoulliLogit) {
            return Err(Error::InvalidArgument(
                "logit-space combination requires the Bernoulli head".into(),
            ));
        }
        let mut ys = Vec::with_capacity(data.len());
        let mut base_params = Vec::with_capacity(data.len());
        let mut plus_params = Vec::with_capacity(data.len());
        let mut minus_params = Vec::with_capacity(data.len());
        let mut ll_base = 0.0;
        for rec in data.records() {
            let bp = dist_params_at(spec, &pair.base, head, &rec.x)?;
            ll_base += heads::log_likelihood(&bp, rec.y);
            ys.push(rec.y);
            base_params.push(bp);
            plus_params.push(dist_params_at(spec, &pair.plus, head, &rec.x)?);
            minus_params.push(dist_params_at(spec, &pair.minus, head, &rec.x)?);
        }
        Ok(ProfileEvaluator {
            ys,
            base_params,
            plus_params,
            minus_params,
            ll_base,
            f_base: pair.f_base,
            f_plus: pair.f_plus,
            f_minus: pair.f_minus,
            combination,
            bernoulli: matches!(head, Head::BernoulliLogit),
        })
    }

    /// Lambda solving (1−λ)·f_base + λ·f_dir = c in the active space, along
    /// with the chosen direction's per-record parameters.
    fn lambda_for(&self, c: f64) -> Result<(f64, &[DistParams])> {
        let upper = c > self.f_base;
        let (f_dir, dir_params, name) = if upper {
            (self.f_plus, &self.plus_params, "positive")
        } else {
            (self.f_minus, &self.minus_params, "negative")
        };
        let (target, anchor, reach) = match self.combination {
            CombinationSpace::Natural => (c, self.f_base, f_dir),
            CombinationSpace::Logit => (
                logit(heads::clamp_prob(c)),
                logit(heads::clamp_prob(self.f_base)),
                logit(heads::clamp_prob(f_dir)),
            ),
        };
        let denom = reach - anchor;
        if denom == 0.0 {
            return Err(Error::UnreachableDirection(format!(
                "{name} direction: perturbed output equals the base output ({})",
                self.f_base
            )));
        }
        let lambda = (target - anchor) / denom;
        if lambda < 0.0 {
            return Err(Error::UnreachableDirection(format!(
                "{name} direction moved the wrong way: f_base = {}, f_dir = {f_dir}, c = {c}",
                self.f_base
            )));
        }
        Ok((lambda, dir_params))
    }

    /// The c reached at mixing weight `lambda` along one direction, in the
    /// active combination space.
    fn c_at_lambda(&self, upper: bool, lambda: f64) -> f64 {
        let f_dir = if upper { self.f_plus } else { self.f_minus };
        match self.combination {
            CombinationSpace::Natural => self.f_base + lambda * (f_dir - self.f_base),
            CombinationSpace::Logit => {
                let anchor = logit(heads::clamp_prob(self.f_base));
                let reach = logit(heads::clamp_prob(f_dir));
                heads::sigmoid(anchor + lambda * (reach - anchor))
            }
        }
    }

    /// (raw, floored) test statistic at c.
    fn t(&self, c: f64) -> Result<(f64, f64)> {
        if c == self.f_base {
            return Ok((0.0, 0.0));
        }
        let (lambda, dir_params) = self.lambda_for(c)?;
        let mut ll_c = 0.0;
        for ((y, base), dir) in self.ys.iter().zip(&self.base_params).zip(dir_params) {
            let combined = match self.combination {
                CombinationSpace::Natural => heads::combine_params(base, dir, lambda)?,
                CombinationSpace::Logit => heads::combine_params_logit(base, dir, lambda)?,
            };
            ll_c += heads::log_likelihood(&combined, *y);
        }
        let raw = 2.0 * (self.ll_base - ll_c);
        Ok((raw, raw.max(0.0)))
    }
}

/// The likelihood-ratio statistic T(c) for one hypothesized output value,
/// mixing distribution parameters in their natural space. Floored at zero.
pub fn test_statistic(
    c: f64,
    pair: &PerturbedPair,
    data: &WeightedDataset,
    spec: &MlpSpec,
    head: &Head,
) -> Result<f64> {
    test_statistic_with(c, pair, data, spec, head, CombinationSpace::Natural)
}

/// [`test_statistic`] with an explicit combination space.
pub fn test_statistic_with(
    c: f64,
    pair: &PerturbedPair,
    data: &WeightedDataset,
    spec: &MlpSpec,
    head: &Head,
    combination: CombinationSpace,
) -> Result<f64> {
    let eval = ProfileEvaluator::new(pair, data, spec, head, combination)?;
    Ok(eval.t(c)?.1)
}

struct DirectionResult {
    endpoint: f64,
    lambda: Option<f64>,
    diagnostics: Vec<Diagnostic>,
    profile: Vec<(f64, f64)>,
}

/// Search one direction for the outermost c with T(c) <= threshold.
///
/// The probe grid runs from f_base to the extreme reachable c (lambda_max,
/// clamped to [0,1] for the Bernoulli head). If even the extreme stays under
/// the threshold the endpoint is the extreme itself; otherwise the outermost
/// threshold crossing is bisected down to the tolerance.
fn search_direction(
    eval: &ProfileEvaluator,
    upper: bool,
    threshold: f64,
    tol: f64,
    options: &SearchOptions,
) -> Result<DirectionResult> {
    let f_base = eval.f_base;
    let f_dir = if upper { eval.f_plus } else { eval.f_minus };
    if (upper && f_dir <= f_base) || (!upper && f_dir >= f_base) {
        // A Bernoulli prediction already sitting against its domain boundary
        // cannot be perturbed further that way; the whole span between
        // f_base and the boundary is below the search tolerance, so the
        // boundary is the endpoint.
        if eval.bernoulli {
            let boundary = if upper { 1.0 } else { 0.0 };
            if (boundary - f_base).abs() < tol {
                return Ok(DirectionResult {
                    endpoint: boundary,
                    lambda: None,
                    diagnostics: vec![Diagnostic::EndpointClamped],
                    profile: Vec::new(),
                });
            }
        }
        return Err(Error::UnreachableDirection(format!(
            "{} direction: f_dir = {f_dir} does not move past f_base = {f_base}",
            if upper { "positive" } else { "negative" },
        )));
    }
    let mut c_extreme = eval.c_at_lambda(upper, options.lambda_max);
    if eval.bernoulli {
        c_extreme = c_extreme.clamp(0.0, 1.0);
    }

    let mut diagnostics = Vec::new();
    let mut profile = Vec::new();
    let n = options.profile_points;
    let mut grid_t = Vec::with_capacity(n);
    for i in 0..n {
        let c = f_base + (c_extreme - f_base) * i as f64 / (n - 1) as f64;
        let (raw, t) = eval.t(c)?;
        if raw < 0.0 && !diagnostics.contains(&Diagnostic::NegativeTFloored) {
            diagnostics.push(Diagnostic::NegativeTFloored);
        }
        profile.push((c, t));
        grid_t.push((c, t));
    }

    // Sign changes of T - threshold walking outward from f_base.
    let crossings: Vec<usize> = (0..n - 1)
        .filter(|&i| grid_t[i].1 <= threshold && grid_t[i + 1].1 > threshold)
        .collect();

    if crossings.is_empty() {
        // T(f_base) = 0, so no crossing means the whole reachable stretch
        // stays under the threshold and the extreme is the endpoint.
        diagnostics.push(Diagnostic::EndpointClamped);
        let lambda = eval.lambda_for(c_extreme)?.0;
        if lambda > 1.0 {
            diagnostics.push(Diagnostic::LambdaExtrapolated);
        }
        return Ok(DirectionResult { endpoint: c_extreme, lambda: Some(lambda), diagnostics, profile });
    }
    if crossings.len() > 1 {
        diagnostics.push(Diagnostic::NonmonotoneProfile);
    }

    let bracket = *crossings.last().expect("nonempty");
    let (mut c_in, mut c_out) = (grid_t[bracket].0, grid_t[bracket + 1].0);
    for _ in 0..options.max_bisect_iters {
        if (c_out - c_in).abs() < tol {
            break;
        }
        let mid = 0.5 * (c_in + c_out);
        let (raw, t) = eval.t(mid)?;
        if raw < 0.0 && !diagnostics.contains(&Diagnostic::NegativeTFloored) {
            diagnostics.push(Diagnostic::NegativeTFloored);
        }
        profile.push((mid, t));
        if t <= threshold {
            c_in = mid;
        } else {
            c_out = mid;
        }
    }
    let endpoint = 0.5 * (c_in + c_out);
    let lambda = eval.lambda_for(endpoint)?.0;
    if lambda > 1.0 {
        diagnostics.push(Diagnostic::LambdaExtrapolated);
    }
    Ok(DirectionResult { endpoint, lambda: Some(lambda), diagnostics, profile })
}

/// Cut a confidence interval from an already-trained perturbed pair.
///
/// `head` is used as given for likelihood evaluation; for the homoscedastic
/// head, pass the profiled variance (see [`profile_variance`]) rather than
/// the training-time placeholder. The same pair can be cut at several alpha
/// or dof values; the profile is re-evaluated but the networks are not
/// retrained.
pub fn interval_from_pair(
    pair: &PerturbedPair,
    data: &WeightedDataset,
    spec: &MlpSpec,
    head: &Head,
    alpha: f64,
    options: &SearchOptions,
) -> Result<ConfidenceInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must be in (0, 1), got {alpha}")));
    }
    options.validate()?;
    let threshold = chi2_quantile(1.0 - alpha, options.dof)?;
    let eval = ProfileEvaluator::new(pair, data, spec, head, options.combination)?;
    let tol = if eval.bernoulli { 1e-3 } else { 1e-3 * options.delta };

    let upper = search_direction(&eval, true, threshold, tol, options)?;
    let lower = search_direction(&eval, false, threshold, tol, options)?;

    let mut diagnostics = Vec::new();
    if pair.ordering_violation() {
        diagnostics.push(Diagnostic::PerturbationOrderViolation);
    }
    for d in upper.diagnostics.into_iter().chain(lower.diagnostics) {
        if !diagnostics.contains(&d) {
            diagnostics.push(d);
        }
    }

    let mut profile: Vec<(f64, f64)> = lower.profile.into_iter().chain(upper.profile).collect();
    profile.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite c"));
    profile.dedup();

    let interval = ConfidenceInterval {
        lo: lower.endpoint,
        hi: upper.endpoint,
        alpha,
        f_base: pair.f_base,
        threshold: Some(threshold),
        dof: Some(options.dof),
        lambda_at_endpoints: Some([lower.lambda, upper.lambda]),
        profile,
        diagnostics,
    };
    debug_assert!(interval.lo <= interval.f_base && interval.f_base <= interval.hi);
    Ok(interval)
}

/// The full construction: train the perturbed pair, then cut the interval.
///
/// For the homoscedastic head the noise variance is profiled from the base
/// network's residuals before likelihoods are evaluated; training uses the
/// head exactly as passed.
#[allow(clippy::too_many_arguments)]
pub fn confidence_interval(
    spec: &MlpSpec,
    base: &ParamVector,
    data: &WeightedDataset,
    head: &Head,
    config: &TrainConfig,
    x0: &[f64],
    alpha: f64,
    options: &SearchOptions,
) -> Result<ConfidenceInterval> {
    let pair = train_perturbed_pair(spec, base, data, head, config, x0, options.delta)?;
    let eval_head = eval_head_for(spec, base, data, head)?;
    interval_from_pair(&pair, data, spec, &eval_head, alpha, options)
}

/// The head to evaluate likelihoods with: identical to the training head
/// except that a homoscedastic Gaussian picks up its profiled variance.
pub fn eval_head_for(
    spec: &MlpSpec,
    base: &ParamVector,
    data: &WeightedDataset,
    head: &Head,
) -> Result<Head> {
    Ok(match head {
        Head::HomoscedasticGaussian { .. } => {
            Head::HomoscedasticGaussian { variance: profile_variance(spec, base, data)? }
        }
        other => *other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, Activation, OutputActivation};
    use crate::optim::Optimizer;

    #[test]
    fn n_extra_formula() {
        assert_eq!(n_extra(80, 32), 5);
        assert_eq!(n_extra(10, 3), 7); // ceil(20/3)
        assert_eq!(n_extra(1, 32), 1); // floor would be 0
    }

    fn bias_only_spec() -> MlpSpec {
        MlpSpec::single(1, vec![], Activation::Elu, OutputActivation::Linear, 0.0)
    }

    /// A "network" that is a single constant: weight 0, bias b. The lambda
    /// mixture of two such networks traverses the exact mean-shift family.
    fn bias_net(b: f64) -> ParamVector {
        ParamVector { values: vec![0.0, b] }
    }

    fn const_dataset(ys: &[f64]) -> WeightedDataset {
        WeightedDataset::new(
            ys.iter().map(|&y| Record { x: vec![0.0], y, weight: 1.0 }).collect(),
        )
        .unwrap()
    }

    fn analytic_pair(ys: &[f64]) -> (MlpSpec, WeightedDataset, PerturbedPair, Head) {
        let spec = bias_only_spec();
        let data = const_dataset(ys);
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let pair = PerturbedPair {
            base: bias_net(mean),
            plus: bias_net(mean + 1.0),
            minus: bias_net(mean - 1.0),
            f_base: mean,
            f_plus: mean + 1.0,
            f_minus: mean - 1.0,
            x0: vec![0.0],
            c_max: mean + 1.0,
            c_min: mean - 1.0,
        };
        (spec, data, pair, Head::HomoscedasticGaussian { variance: 1.0 })
    }

    #[test]
    fn augmented_dataset_shape_and_targets() {
        let spec = bias_only_spec();
        let base = bias_net(0.7);
        let head = Head::HomoscedasticGaussian { variance: 1.0 };
        let data = const_dataset(&[1.0, 2.0, 3.0, 4.0]);
        let aug = build_augmented_dataset(&data, &spec, &base, &head, &[0.0], 1.7, 5).unwrap();
        assert_eq!(aug.len(), 4 + 5);
        for rec in &aug.records()[..4] {
            assert_eq!(rec.y, 0.7);
            assert_eq!(rec.weight, 1.0);
        }
        let anchor_sum: f64 = aug.records()[4..].iter().map(|r| r.weight).sum();
        assert!((anchor_sum - 1.0).abs() < 1e-12);
        for rec in &aug.records()[4..] {
            assert_eq!(rec.y, 1.7);
        }
    }

    #[test]
    fn anchor_weights_sum_to_one_exactly() {
        let spec = bias_only_spec();
        let base = bias_net(0.0);
        let head = Head::HomoscedasticGaussian { variance: 1.0 };
        let data = const_dataset(&[0.0, 1.0]);
        // 4 is exact by powers of two; 5 is the n = 80 / batch 32 case and
        // happens to sum exactly as well.
        for nx in [4usize, 5] {
            let aug =
                build_augmented_dataset(&data, &spec, &base, &head, &[0.5], 1.0, nx).unwrap();
            let anchor_sum: f64 = aug.records()[2..].iter().map(|r| r.weight).sum();
            assert_eq!(anchor_sum, 1.0, "n_extra = {nx}");
        }
    }

    #[test]
    fn statistic_is_zero_at_base_and_nonnegative() {
        let (spec, data, pair, head) = analytic_pair(&[0.3, -0.2, 0.8, 0.1]);
        assert_eq!(test_statistic(pair.f_base, &pair, &data, &spec, &head).unwrap(), 0.0);
        for c in [-1.5, -0.4, 0.2, 0.9, 1.5] {
            let t = test_statistic(c, &pair, &data, &spec, &head).unwrap();
            assert!(t >= 0.0);
        }
    }

    #[test]
    fn statistic_matches_mean_shift_oracle() {
        // Constant networks with known sigma = 1: T(c) = n (mean - c)^2.
        let ys = [0.5, 1.5, -0.3, 0.9, 0.2, 1.1];
        let (spec, data, pair, head) = analytic_pair(&ys);
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        for c in [mean - 1.2, mean - 0.5, mean + 0.01, mean + 0.7, mean + 1.25] {
            let t = test_statistic(c, &pair, &data, &spec, &head).unwrap();
            let want = n * (mean - c) * (mean - c);
            assert!((t - want).abs() < 1e-9, "c = {c}: {t} vs {want}");
        }
    }

    #[test]
    fn wrong_way_direction_errors() {
        let (spec, data, mut pair, head) = analytic_pair(&[0.0, 1.0, 2.0]);
        // Break the positive direction: the "perturbed" network went down.
        pair.f_plus = pair.f_base - 0.5;
        let err = test_statistic(pair.f_base + 0.5, &pair, &data, &spec, &head);
        assert!(matches!(err, Err(Error::UnreachableDirection(_))));
        // Zero denominator errors too.
        pair.f_plus = pair.f_base;
        let err = test_statistic(pair.f_base + 0.5, &pair, &data, &spec, &head);
        assert!(matches!(err, Err(Error::UnreachableDirection(_))));
    }

    #[test]
    fn interval_matches_analytic_endpoints() {
        // With T(c) = n (mean - c)^2 the interval is mean ± sqrt(thr / n).
        let ys = [0.4, 1.0, -0.6, 0.8, 0.1, 0.9, -0.2, 0.5];
        let (spec, data, pair, head) = analytic_pair(&ys);
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let options = SearchOptions::default();
        let interval = interval_from_pair(&pair, &data, &spec, &head, 0.05, &options).unwrap();
        let half = (chi2_quantile(0.95, 1).unwrap() / n).sqrt();
        assert!((interval.lo - (mean - half)).abs() < 2e-3, "lo {} vs {}", interval.lo, mean - half);
        assert!((interval.hi - (mean + half)).abs() < 2e-3, "hi {} vs {}", interval.hi, mean + half);
        assert!(interval.contains(mean));
        assert_eq!(interval.dof, Some(1));
    }

    #[test]
    fn intervals_nest_in_alpha_and_dof() {
        let ys = [0.4, 1.0, -0.6, 0.8, 0.1, 0.9, -0.2, 0.5];
        let (spec, data, pair, head) = analytic_pair(&ys);
        let options = SearchOptions::default();
        let tight = interval_from_pair(&pair, &data, &spec, &head, 0.10, &options).unwrap();
        let wide = interval_from_pair(&pair, &data, &spec, &head, 0.05, &options).unwrap();
        assert!(wide.lo <= tight.lo + 2e-3 && wide.hi >= tight.hi - 2e-3);

        let dof2 = SearchOptions { dof: 2, ..options };
        let conservative = interval_from_pair(&pair, &data, &spec, &head, 0.05, &dof2).unwrap();
        assert!(conservative.lo <= wide.lo + 2e-3 && conservative.hi >= wide.hi - 2e-3);
    }

    #[test]
    fn endpoint_clamps_when_threshold_is_unreachable() {
        // Two data points: so little evidence that even the extreme mixture
        // stays under the threshold.
        let (spec, data, pair, head) = analytic_pair(&[0.1, -0.1]);
        let options = SearchOptions::default();
        let interval = interval_from_pair(&pair, &data, &spec, &head, 0.05, &options).unwrap();
        assert!(interval.diagnostics.contains(&Diagnostic::EndpointClamped));
        assert!(interval.diagnostics.contains(&Diagnostic::LambdaExtrapolated));
        let lam = interval.lambda_at_endpoints.unwrap();
        assert!((lam[1].unwrap() - options.lambda_max).abs() < 1e-12);
    }

    #[test]
    fn bernoulli_pair_uses_unit_anchors_and_zero_delta_errors_for_gaussian() {
        let spec = MlpSpec::single(1, vec![4], Activation::Elu, OutputActivation::Linear, 0.0);
        let head = Head::BernoulliLogit;
        let data = WeightedDataset::new(vec![
            Record { x: vec![0.0], y: 0.0, weight: 1.0 },
            Record { x: vec![1.0], y: 1.0, weight: 1.0 },
            Record { x: vec![0.1], y: 0.0, weight: 1.0 },
            Record { x: vec![0.9], y: 1.0, weight: 1.0 },
        ])
        .unwrap();
        let base = init_params(&spec, 0).unwrap();
        let config = TrainConfig {
            optimizer: Optimizer::default_adam(),
            epochs: 40,
            batch_size: 2,
            seed: 8,
            variance_warmup_epochs: 0,
        };
        let trained = train(&spec, &base, &data, &head, &config).unwrap();
        let pair =
            train_perturbed_pair(&spec, &trained, &data, &head, &config, &[0.5], 0.0).unwrap();
        assert_eq!((pair.c_min, pair.c_max), (0.0, 1.0));

        let ghead = Head::HomoscedasticGaussian { variance: 1.0 };
        let gspec = bias_only_spec();
        let gdata = const_dataset(&[0.0, 1.0]);
        let err = train_perturbed_pair(&gspec, &bias_net(0.5), &gdata, &ghead, &config, &[0.0], 0.0);
        assert!(matches!(err, Err(Error::DegenerateRequest(_))));
    }

    #[test]
    fn lambda_round_trip_through_evaluator() {
        let (spec, data, pair, head) = analytic_pair(&[0.2, 0.6, 1.0, -0.4]);
        let eval =
            ProfileEvaluator::new(&pair, &data, &spec, &head, CombinationSpace::Natural).unwrap();
        for c in [pair.f_base + 0.3, pair.f_base - 0.9, pair.f_base + 1.2] {
            let (lambda, dir) = eval.lambda_for(c).unwrap();
            let combined = heads::combine_params(&eval.base_params[0], &dir[0], lambda).unwrap();
            let f = head.output_of_interest(&combined).0;
            assert!((f - c).abs() < 1e-9, "c = {c}, f = {f}");
        }
    }

    #[test]
    fn search_options_reject_bad_dof_and_lambda() {
        let defaults = SearchOptions::default();
        assert!(SearchOptions { dof: 3, ..defaults }.validate().is_err());
        assert!(SearchOptions { dof: 2, ..defaults }.validate().is_ok());
        assert!(SearchOptions { lambda_max: 0.5, ..defaults }.validate().is_err());
    }

    #[test]
    fn logit_space_search_is_coherent() {
        let spec = MlpSpec::single(1, vec![], Activation::Elu, OutputActivation::Linear, 0.0);
        let head = Head::BernoulliLogit;
        let data = WeightedDataset::new(
            [0.0, 1.0, 1.0, 0.0, 1.0]
                .iter()
                .map(|&y| Record { x: vec![0.3], y, weight: 1.0 })
                .collect(),
        )
        .unwrap();
        let logit_net = |b: f64| ParamVector { values: vec![0.0, b] };
        let pair = PerturbedPair {
            base: logit_net(0.4),
            plus: logit_net(2.0),
            minus: logit_net(-2.0),
            f_base: crate::heads::sigmoid(0.4),
            f_plus: crate::heads::sigmoid(2.0),
            f_minus: crate::heads::sigmoid(-2.0),
            x0: vec![0.3],
            c_max: 1.0,
            c_min: 0.0,
        };
        let eval =
            ProfileEvaluator::new(&pair, &data, &spec, &head, CombinationSpace::Logit).unwrap();
        // c_at_lambda and lambda_for invert each other in logit space.
        for lambda in [0.25, 0.8, 1.2] {
            for upper in [true, false] {
                let c = eval.c_at_lambda(upper, lambda);
                let (back, _) = eval.lambda_for(c).unwrap();
                assert!((back - lambda).abs() < 1e-9, "lambda {lambda} -> {back}");
            }
        }
        // Both combination spaces produce valid intervals around f_base.
        let natural =
            interval_from_pair(&pair, &data, &spec, &head, 0.1, &SearchOptions::default())
                .unwrap();
        let logit_options =
            SearchOptions { combination: CombinationSpace::Logit, ..SearchOptions::default() };
        let logit_iv =
            interval_from_pair(&pair, &data, &spec, &head, 0.1, &logit_options).unwrap();
        for iv in [&natural, &logit_iv] {
            assert!(iv.lo >= 0.0 && iv.hi <= 1.0);
            assert!(iv.contains(iv.f_base));
        }
    }

    #[test]
    fn boundary_pinned_bernoulli_documents_round_trip() {
        // A prediction pinned against 0 with a wrong-way minus network: the
        // lower endpoint is the boundary, its lambda is absent, and the
        // emitted document still parses back.
        let spec = MlpSpec::single(1, vec![], Activation::Elu, OutputActivation::Linear, 0.0);
        let head = Head::BernoulliLogit;
        let data = WeightedDataset::new(vec![
            Record { x: vec![0.0], y: 0.0, weight: 1.0 },
            Record { x: vec![0.2], y: 0.0, weight: 1.0 },
            Record { x: vec![0.4], y: 0.0, weight: 1.0 },
        ])
        .unwrap();
        let logit_net = |b: f64| ParamVector { values: vec![0.0, b] };
        let f_of = |b: f64| crate::heads::sigmoid(b).clamp(1e-7, 1.0 - 1e-7);
        let pair = PerturbedPair {
            base: logit_net(-12.0),
            plus: logit_net(-2.0),
            minus: logit_net(-11.0), // wrong way: above the base
            f_base: f_of(-12.0),
            f_plus: f_of(-2.0),
            f_minus: f_of(-11.0),
            x0: vec![0.1],
            c_max: 1.0,
            c_min: 0.0,
        };
        let iv =
            interval_from_pair(&pair, &data, &spec, &head, 0.05, &SearchOptions::default())
                .unwrap();
        assert_eq!(iv.lo, 0.0);
        let lam = iv.lambda_at_endpoints.unwrap();
        assert!(lam[0].is_none() && lam[1].is_some());

        let doc = IntervalDocument::from_lr(&pair, &iv);
        let text = doc.to_json_string().unwrap();
        let parsed: IntervalDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed.lo, 0.0);
        assert_eq!(parsed.lambda_at_endpoints.unwrap()[0], None);
    }

    #[test]
    fn document_serializes_with_stable_field_order() {
        let (spec, data, pair, head) = analytic_pair(&[0.4, 0.6, 0.0, 1.0]);
        let interval =
            interval_from_pair(&pair, &data, &spec, &head, 0.05, &SearchOptions::default())
                .unwrap();
        let doc = IntervalDocument::from_lr(&pair, &interval);
        let a = doc.to_json_string().unwrap();
        let b = doc.to_json_string().unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"method\": \"deeplr\""));
        let parsed: IntervalDocument = serde_json::from_str(&a).unwrap();
        assert_eq!(parsed.lo, doc.lo);
    }
}
