//! Minimal dense feedforward engine with exact reverse-mode gradients.
//!
//! Supports one- and two-branch topologies (the two-branch form carries
//! separate mean and variance stacks joined only at the input), elu/relu/tanh
//! hidden activations, per-layer L2 penalties on the weight matrices, and a
//! flat parameter layout so optimizers and checkpoints can treat a network as
//! a single vector. All arithmetic is f64: the downstream test statistic
//! subtracts two large log-likelihood sums, so precision matters.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Record;
use crate::error::{Error, Result};
use crate::heads::Head;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Relu,
    Tanh,
}

/// Activation of a branch's final layer. `RawVariance` is an identity at the
/// network level; the head transforms it to a positive variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    Sigmoid,
    RawVariance,
}

/// One branch of the network: hidden widths, the output activation, and one
/// L2 constant per dense layer (hidden layers plus the output layer).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub hidden: Vec<usize>,
    pub output: OutputActivation,
    pub l2: Vec<f64>,
}

impl Branch {
    /// Branch with the same L2 constant on every dense layer.
    pub fn with_constant_l2(hidden: Vec<usize>, output: OutputActivation, l2: f64) -> Branch {
        let n_layers = hidden.len() + 1;
        Branch { hidden, output, l2: vec![l2; n_layers] }
    }
}

/// Architecture description: input dimension, hidden activation, and one or
/// two branches each ending in a single output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_activation: Activation,
    pub branches: Vec<Branch>,
}

/// Flat parameter values in the layout given by [`MlpSpec::layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
}

/// Gradient with the same layout as the [`ParamVector`] it differentiates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector {
    pub values: Vec<f64>,
}

/// Where one dense layer's parameters live inside the flat vector.
#[derive(Debug, Clone, Copy)]
pub struct LayerSlot {
    pub branch: usize,
    pub fan_in: usize,
    pub fan_out: usize,
    /// Offset of the row-major (fan_out x fan_in) weight matrix.
    pub weight_off: usize,
    /// Offset of the fan_out bias entries.
    pub bias_off: usize,
    pub l2: f64,
    pub kind: LayerKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Hidden(Activation),
    Output(OutputActivation),
}

impl MlpSpec {
    /// Single-branch network with a constant L2 on every layer.
    pub fn single(
        input_dim: usize,
        hidden: Vec<usize>,
        hidden_activation: Activation,
        output: OutputActivation,
        l2: f64,
    ) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden_activation,
            branches: vec![Branch::with_constant_l2(hidden, output, l2)],
        }
    }

    /// Two-branch mean/variance network: a linear-output mean stack and a
    /// raw-variance stack, sharing nothing but the input.
    pub fn mean_variance(
        input_dim: usize,
        mean_hidden: Vec<usize>,
        var_hidden: Vec<usize>,
        hidden_activation: Activation,
        l2: f64,
    ) -> MlpSpec {
        MlpSpec {
            input_dim,
            hidden_activation,
            branches: vec![
                Branch::with_constant_l2(mean_hidden, OutputActivation::Linear, l2),
                Branch::with_constant_l2(var_hidden, OutputActivation::RawVariance, l2),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be >= 1".into()));
        }
        if self.branches.is_empty() || self.branches.len() > 2 {
            return Err(Error::InvalidArgument(format!(
                "network must have 1 or 2 branches, got {}",
                self.branches.len()
            )));
        }
        for (bi, branch) in self.branches.iter().enumerate() {
            if branch.hidden.contains(&0) {
                return Err(Error::InvalidArgument(format!("branch {bi} has a zero-width layer")));
            }
            if branch.l2.len() != branch.hidden.len() + 1 {
                return Err(Error::InvalidArgument(format!(
                    "branch {bi} needs {} l2 constants, got {}",
                    branch.hidden.len() + 1,
                    branch.l2.len()
                )));
            }
            if branch.l2.iter().any(|&c| c < 0.0 || !c.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "branch {bi} l2 constants must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }

    /// Number of branch outputs (each branch ends in one unit).
    pub fn n_outputs(&self) -> usize {
        self.branches.len()
    }

    /// Total flat parameter count.
    pub fn param_len(&self) -> usize {
        self.layout().last().map(|s| s.bias_off + s.fan_out).unwrap_or(0)
    }

    /// Dense-layer slots in parameter order: branch 0 input-to-output, then
    /// branch 1. Each slot is the row-major weight matrix followed by biases.
    pub fn layout(&self) -> Vec<LayerSlot> {
        let mut slots = Vec::new();
        let mut off = 0;
        for (bi, branch) in self.branches.iter().enumerate() {
            let mut fan_in = self.input_dim;
            for (li, &width) in branch.hidden.iter().enumerate() {
                slots.push(LayerSlot {
                    branch: bi,
                    fan_in,
                    fan_out: width,
                    weight_off: off,
                    bias_off: off + fan_in * width,
                    l2: branch.l2[li],
                    kind: LayerKind::Hidden(self.hidden_activation),
                });
                off += fan_in * width + width;
                fan_in = width;
            }
            slots.push(LayerSlot {
                branch: bi,
                fan_in,
                fan_out: 1,
                weight_off: off,
                bias_off: off + fan_in,
                l2: branch.l2[branch.hidden.len()],
                kind: LayerKind::Output(branch.output),
            });
            off += fan_in + 1;
        }
        slots
    }

    /// Flat-parameter range owned by one branch.
    pub fn branch_param_range(&self, branch: usize) -> std::ops::Range<usize> {
        let slots = self.layout();
        let mut start = None;
        let mut end = 0;
        for slot in &slots {
            if slot.branch == branch {
                start.get_or_insert(slot.weight_off);
                end = slot.bias_off + slot.fan_out;
            }
        }
        start.unwrap_or(0)..end
    }
}

/// Checks that a head's expectations match the network topology.
pub fn validate_head(spec: &MlpSpec, head: &Head) -> Result<()> {
    spec.validate()?;
    let outputs: Vec<OutputActivation> = spec.branches.iter().map(|b| b.output).collect();
    let ok = match head {
        Head::HomoscedasticGaussian { variance } => {
            if !(variance.is_finite() && *variance > 0.0) {
                return Err(Error::HeadSpecMismatch(format!(
                    "homoscedastic variance must be positive and finite, got {variance}"
                )));
            }
            outputs == [OutputActivation::Linear]
        }
        Head::MeanVarianceGaussian => {
            outputs == [OutputActivation::Linear, OutputActivation::RawVariance]
        }
        Head::BernoulliLogit => outputs == [OutputActivation::Linear],
    };
    if ok {
        Ok(())
    } else {
        Err(Error::HeadSpecMismatch(format!(
            "{head:?} does not accept branch outputs {outputs:?}"
        )))
    }
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Elu => {
            if z > 0.0 {
                z
            } else {
                z.exp() - 1.0
            }
        }
        Activation::Relu => z.max(0.0),
        Activation::Tanh => z.tanh(),
    }
}

/// Derivative of the hidden activation, given pre-activation `z` and the
/// already-computed post-activation value `a`.
fn act_deriv(kind: Activation, z: f64, a: f64) -> f64 {
    match kind {
        Activation::Elu => {
            if z > 0.0 {
                1.0
            } else {
                a + 1.0
            }
        }
        Activation::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => 1.0 - a * a,
    }
}

fn out_act(kind: OutputActivation, z: f64) -> f64 {
    match kind {
        OutputActivation::Linear | OutputActivation::RawVariance => z,
        OutputActivation::Sigmoid => crate::heads::sigmoid(z),
    }
}

fn out_act_deriv(kind: OutputActivation, a: f64) -> f64 {
    match kind {
        OutputActivation::Linear | OutputActivation::RawVariance => 1.0,
        OutputActivation::Sigmoid => a * (1.0 - a),
    }
}

/// Glorot-uniform weights (|w| <= sqrt(6 / (fan_in + fan_out))), zero biases,
/// drawn from a seeded deterministic generator. The same (spec, seed) always
/// produces the identical vector.
pub fn init_params(spec: &MlpSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; spec.param_len()];
    for slot in spec.layout() {
        let bound = (6.0 / (slot.fan_in + slot.fan_out) as f64).sqrt();
        for w in 0..slot.fan_in * slot.fan_out {
            values[slot.weight_off + w] = rng.random_range(-bound..=bound);
        }
        // biases stay zero
    }
    Ok(ParamVector { values })
}

fn check_input(spec: &MlpSpec, params: &ParamVector, x: &[f64]) -> Result<()> {
    if x.len() != spec.input_dim {
        return Err(Error::InvalidArgument(format!(
            "input has {} entries, spec expects {}",
            x.len(),
            spec.input_dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite input".into()));
    }
    if params.values.len() != spec.param_len() {
        return Err(Error::InvalidArgument(format!(
            "parameter vector has {} values, spec expects {}",
            params.values.len(),
            spec.param_len()
        )));
    }
    Ok(())
}

fn layer_forward(slot: &LayerSlot, params: &[f64], input: &[f64], z: &mut Vec<f64>, a: &mut Vec<f64>) {
    z.clear();
    a.clear();
    for r in 0..slot.fan_out {
        let row = &params[slot.weight_off + r * slot.fan_in..slot.weight_off + (r + 1) * slot.fan_in];
        let mut acc = params[slot.bias_off + r];
        for (w, xin) in row.iter().zip(input.iter()) {
            acc += w * xin;
        }
        z.push(acc);
        a.push(match slot.kind {
            LayerKind::Hidden(h) => act(h, acc),
            LayerKind::Output(o) => out_act(o, acc),
        });
    }
}

/// Evaluate the network: one value per branch, after the stated activations.
pub fn forward(spec: &MlpSpec, params: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    check_input(spec, params, x)?;
    let slots = spec.layout();
    let mut outputs = Vec::with_capacity(spec.n_outputs());
    let mut cur: Vec<f64> = Vec::new();
    let mut z = Vec::new();
    let mut a = Vec::new();
    let mut prev_branch = usize::MAX;
    for (li, slot) in slots.iter().enumerate() {
        if slot.branch != prev_branch {
            cur.clear();
            cur.extend_from_slice(x);
            prev_branch = slot.branch;
        }
        layer_forward(slot, &params.values, &cur, &mut z, &mut a);
        if z.iter().any(|v| !v.is_finite()) || a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { layer: li, context: "forward" });
        }
        if matches!(slot.kind, LayerKind::Output(_)) {
            outputs.push(a[0]);
        } else {
            std::mem::swap(&mut cur, &mut a);
        }
    }
    Ok(outputs)
}

/// Weighted negative log-likelihood plus L2 penalty over a batch, and its
/// exact reverse-mode gradient:
///
/// loss = (Σ wᵢ · NLLᵢ) / (Σ wᵢ) + Σ_layers l2 · ‖W‖²
pub fn loss_and_grad(
    spec: &MlpSpec,
    params: &ParamVector,
    batch: &[&Record],
    head: &Head,
) -> Result<(f64, GradVector)> {
    validate_head(spec, head)?;
    if batch.is_empty() {
        return Err(Error::InvalidArgument("loss_and_grad requires a nonempty batch".into()));
    }
    check_input(spec, params, &batch[0].x)?;
    if params.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric { layer: 0, context: "parameters" });
    }

    let slots = spec.layout();
    let n_branches = spec.n_outputs();
    // Slot indices grouped per branch, in forward order.
    let branch_slots: Vec<Vec<usize>> = (0..n_branches)
        .map(|b| (0..slots.len()).filter(|&i| slots[i].branch == b).collect())
        .collect();

    let weight_sum: f64 = batch.iter().map(|r| r.weight).sum();
    let mut grad = vec![0.0; spec.param_len()];
    let mut nll_acc = 0.0;

    // Reused per-record buffers: pre/post activations per slot, deltas.
    let mut zs: Vec<Vec<f64>> = vec![Vec::new(); slots.len()];
    let mut gains: Vec<Vec<f64>> = vec![Vec::new(); slots.len()];
    let mut cur: Vec<f64> = Vec::new();
    let mut delta: Vec<f64> = Vec::new();
    let mut delta_prev: Vec<f64> = Vec::new();
    let mut raw = vec![0.0; n_branches];

    for rec in batch {
        if rec.x.len() != spec.input_dim {
            return Err(Error::InvalidArgument("batch input dimension mismatch".into()));
        }
        // Forward, keeping every layer's pre- and post-activation.
        for (bi, slot_ids) in branch_slots.iter().enumerate() {
            cur.clear();
            cur.extend_from_slice(&rec.x);
            for &si in slot_ids {
                layer_forward(&slots[si], &params.values, &cur, &mut zs[si], &mut gains[si]);
                if zs[si].iter().any(|v| !v.is_finite())
                    || gains[si].iter().any(|v| !v.is_finite())
                {
                    return Err(Error::Numeric { layer: si, context: "forward" });
                }
                cur.clear();
                cur.extend_from_slice(&gains[si]);
            }
            raw[bi] = gains[*slot_ids.last().expect("branch has layers")][0];
        }

        let (nll, dnll_draw) = head.nll_and_grad_raw(&raw, rec.y);
        if !nll.is_finite() {
            return Err(Error::Numeric { layer: slots.len() - 1, context: "loss" });
        }
        nll_acc += rec.weight * nll;

        // Backward per branch, seeding with w * dNLL/draw.
        for (bi, slot_ids) in branch_slots.iter().enumerate() {
            let last = *slot_ids.last().expect("branch has layers");
            let out_kind = match slots[last].kind {
                LayerKind::Output(o) => o,
                LayerKind::Hidden(_) => unreachable!("last slot of a branch is the output"),
            };
            delta.clear();
            delta.push(rec.weight * dnll_draw[bi] * out_act_deriv(out_kind, gains[last][0]));

            for pos in (0..slot_ids.len()).rev() {
                let si = slot_ids[pos];
                let slot = &slots[si];
                let layer_input: &[f64] =
                    if pos == 0 { &rec.x } else { &gains[slot_ids[pos - 1]] };
                for r in 0..slot.fan_out {
                    let d = delta[r];
                    let wrow = slot.weight_off + r * slot.fan_in;
                    for (c, xin) in layer_input.iter().enumerate() {
                        grad[wrow + c] += d * xin;
                    }
                    grad[slot.bias_off + r] += d;
                }
                if pos > 0 {
                    // delta_prev = W^T delta, elementwise times the previous
                    // layer's activation derivative.
                    let prev = slot_ids[pos - 1];
                    let prev_kind = match slots[prev].kind {
                        LayerKind::Hidden(h) => h,
                        LayerKind::Output(_) => unreachable!("outputs are last"),
                    };
                    delta_prev.clear();
                    delta_prev.resize(slot.fan_in, 0.0);
                    for (r, d) in delta.iter().enumerate() {
                        let wrow = slot.weight_off + r * slot.fan_in;
                        for (dp, w) in delta_prev
                            .iter_mut()
                            .zip(&params.values[wrow..wrow + slot.fan_in])
                        {
                            *dp += w * d;
                        }
                    }
                    for (c, dp) in delta_prev.iter_mut().enumerate() {
                        *dp *= act_deriv(prev_kind, zs[prev][c], gains[prev][c]);
                    }
                    std::mem::swap(&mut delta, &mut delta_prev);
                }
            }
        }
    }

    let inv = 1.0 / weight_sum;
    for g in grad.iter_mut() {
        *g *= inv;
    }

    // L2 applies to weight matrices only, never biases.
    let mut loss = nll_acc * inv;
    for slot in &slots {
        if slot.l2 == 0.0 {
            continue;
        }
        let ws = &params.values[slot.weight_off..slot.weight_off + slot.fan_in * slot.fan_out];
        loss += slot.l2 * ws.iter().map(|w| w * w).sum::<f64>();
        for (i, w) in ws.iter().enumerate() {
            grad[slot.weight_off + i] += 2.0 * slot.l2 * w;
        }
    }

    Ok((loss, GradVector { values: grad }))
}

fn format_param(x: f64) -> String {
    // 17 significant digits: enough to reproduce any f64 bit pattern.
    format!("{x:.16e}")
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    spec: MlpSpec,
    params: Vec<String>,
}

/// Render a checkpoint: a self-describing JSON document holding the spec and
/// the flat parameters as 17-significant-digit decimal literals. Loading it
/// back reproduces the exact parameter bits.
pub fn checkpoint_to_string(spec: &MlpSpec, params: &ParamVector) -> Result<String> {
    spec.validate()?;
    if params.values.len() != spec.param_len() {
        return Err(Error::InvalidArgument("checkpoint params do not match spec".into()));
    }
    let doc = CheckpointDoc {
        spec: spec.clone(),
        params: params.values.iter().map(|&v| format_param(v)).collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn checkpoint_from_str(text: &str) -> Result<(MlpSpec, ParamVector)> {
    let doc: CheckpointDoc = serde_json::from_str(text)?;
    doc.spec.validate()?;
    let mut values = Vec::with_capacity(doc.params.len());
    for (i, lit) in doc.params.iter().enumerate() {
        let v: f64 = lit.parse().map_err(|e| Error::Parse {
            what: "checkpoint",
            line: i,
            message: format!("bad parameter literal {lit:?}: {e}"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                what: "checkpoint",
                line: i,
                message: "non-finite parameter".into(),
            });
        }
        values.push(v);
    }
    if values.len() != doc.spec.param_len() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint has {} params, spec expects {}",
            values.len(),
            doc.spec.param_len()
        )));
    }
    Ok((doc.spec, ParamVector { values }))
}

pub fn save_checkpoint(path: &std::path::Path, spec: &MlpSpec, params: &ParamVector) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(spec, params)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<(MlpSpec, ParamVector)> {
    checkpoint_from_str(&std::fs::read_to_string(path)?)
}
