//! Minimal feed-forward network engine: dense ReLU layers, per-output heads,
//! analytic backpropagation, Adam, and a training loop with early stopping,
//! stepwise learning-rate decay, and restart-on-divergence.
//!
//! Everything is plain `f64` and single-threaded; identical seed, data, and
//! schedule give bitwise-identical trained parameters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SparError};
use crate::matrix::Matrix;

/// Initial bias of a shape head initialised under `shape_head_nonneg`; the
/// head output is then `atan(0.1)/π ≈ 0.0317` for every input.
pub const SHAPE_HEAD_INIT_BIAS: f64 = 0.1;

/// Hidden-layer activation. Only ReLU is used; the tag exists so serialized
/// models state it explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HiddenActivation {
    Relu,
}

/// Output-head nonlinearity applied to one final-layer unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// `exp(z)`: strictly positive outputs (thresholds, scales).
    Exponential,
    /// `atan(z)/π`: outputs in `(−0.5, 0.5)` (GPD shape).
    ScaledTangent,
    /// `z` unchanged.
    Identity,
}

impl Head {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Head::Exponential => z.exp(),
            Head::ScaledTangent => z.atan() / std::f64::consts::PI,
            Head::Identity => z,
        }
    }

    /// d output / d pre-activation, given both.
    #[inline]
    fn derivative(self, z: f64, out: f64) -> f64 {
        match self {
            Head::Exponential => out,
            Head::ScaledTangent => 1.0 / (std::f64::consts::PI * (1.0 + z * z)),
            Head::Identity => 1.0,
        }
    }
}

/// Hidden-layer sizes; the input and output widths come from the data and
/// the head list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
}

impl Architecture {
    pub fn new(hidden: Vec<usize>) -> Self {
        Self { hidden }
    }
}

/// Weights, biases, and head configuration of one network. Layer `l` maps
/// width `dims[l]` to `dims[l+1]`; weights are row-major `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    input_dim: usize,
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    hidden_activation: HiddenActivation,
    heads: Vec<Head>,
}

/// He-initialised network. With `shape_head_nonneg`, every `ScaledTangent`
/// head row starts at zero weights and bias [`SHAPE_HEAD_INIT_BIAS`], so the
/// initial shape output is the same small positive constant at every input.
pub fn mlp_init(
    input_dim: usize,
    arch: &Architecture,
    heads: &[Head],
    seed: u64,
    shape_head_nonneg: bool,
) -> MlpParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let output_dim = heads.len();
    let mut layer_sizes = arch.hidden.clone();
    layer_sizes.push(output_dim);

    let mut weights = Vec::with_capacity(layer_sizes.len());
    let mut biases = Vec::with_capacity(layer_sizes.len());
    let mut fan_in = input_dim;
    for (l, &size) in layer_sizes.iter().enumerate() {
        let std = (2.0 / fan_in as f64).sqrt();
        let mut w = vec![0.0; size * fan_in];
        for v in w.iter_mut() {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            *v = z * std;
        }
        let mut b = vec![0.0; size];
        if l == layer_sizes.len() - 1 && shape_head_nonneg {
            for (j, head) in heads.iter().enumerate() {
                if *head == Head::ScaledTangent {
                    for v in w[j * fan_in..(j + 1) * fan_in].iter_mut() {
                        *v = 0.0;
                    }
                    b[j] = SHAPE_HEAD_INIT_BIAS;
                }
            }
        }
        weights.push(w);
        biases.push(b);
        fan_in = size;
    }
    MlpParams {
        input_dim,
        layer_sizes,
        weights,
        biases,
        hidden_activation: HiddenActivation::Relu,
        heads: heads.to_vec(),
    }
}

impl MlpParams {
    /// Assemble a network from explicit layers (validated); mainly for
    /// hand-built reference models with known outputs.
    pub fn from_parts(
        input_dim: usize,
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        heads: Vec<Head>,
    ) -> Result<Self> {
        let p = Self {
            input_dim,
            layer_sizes,
            weights,
            biases,
            hidden_activation: HiddenActivation::Relu,
            heads,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Zero the final-layer weights of output unit `j` and set its bias, so
    /// the unit starts as the constant `head(bias)`; used to warm-start
    /// scale heads at a data-derived value.
    pub fn reset_output_unit(&mut self, j: usize, bias: f64) {
        let last = self.layer_sizes.len() - 1;
        let fan_in = if last == 0 { self.input_dim } else { self.layer_sizes[last - 1] };
        for v in self.weights[last][j * fan_in..(j + 1) * fan_in].iter_mut() {
            *v = 0.0;
        }
        self.biases[last][j] = bias;
    }

    pub fn output_dim(&self) -> usize {
        self.heads.len()
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.layer_sizes[..self.layer_sizes.len() - 1]
    }

    /// Check that stored dimensions chain consistently (used after
    /// deserialization).
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.is_empty()
            || self.weights.len() != self.layer_sizes.len()
            || self.biases.len() != self.layer_sizes.len()
        {
            return Err(SparError::InvalidModel("layer count mismatch".into()));
        }
        if *self.layer_sizes.last().unwrap() != self.heads.len() {
            return Err(SparError::InvalidModel("head count does not match output width".into()));
        }
        let mut fan_in = self.input_dim;
        for (l, &size) in self.layer_sizes.iter().enumerate() {
            if self.weights[l].len() != size * fan_in || self.biases[l].len() != size {
                return Err(SparError::InvalidModel(format!("layer {l} has inconsistent shape")));
            }
            if self.weights[l].iter().chain(&self.biases[l]).any(|v| !v.is_finite()) {
                return Err(SparError::InvalidModel(format!("layer {l} has non-finite parameters")));
            }
            fan_in = size;
        }
        Ok(())
    }

    /// Forward pass for a single input row.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim {
            return Err(SparError::ShapeMismatch { expected: self.input_dim, got: input.len() });
        }
        let mut ws = MlpWorkspace::new(self);
        self.forward_ws(input, &mut ws);
        Ok(ws.output().to_vec())
    }

    /// Forward pass for every row of `inputs`.
    pub fn forward_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.ncols() != self.input_dim {
            return Err(SparError::ShapeMismatch { expected: self.input_dim, got: inputs.ncols() });
        }
        let mut ws = MlpWorkspace::new(self);
        let mut out = Matrix::zeros(inputs.nrows(), self.output_dim());
        for i in 0..inputs.nrows() {
            self.forward_ws(inputs.row(i), &mut ws);
            out.row_mut(i).copy_from_slice(ws.output());
        }
        Ok(out)
    }

    fn forward_ws(&self, input: &[f64], ws: &mut MlpWorkspace) {
        let n_layers = self.layer_sizes.len();
        for l in 0..n_layers {
            let size = self.layer_sizes[l];
            let fan_in = if l == 0 { self.input_dim } else { self.layer_sizes[l - 1] };
            let w = &self.weights[l];
            let (done, rest) = ws.acts.split_at_mut(l);
            let prev: &[f64] = if l == 0 { input } else { &done[l - 1] };
            let pre = &mut ws.pre[l];
            for j in 0..size {
                let row = &w[j * fan_in..(j + 1) * fan_in];
                let mut acc = self.biases[l][j];
                for (wv, av) in row.iter().zip(prev) {
                    acc += wv * av;
                }
                pre[j] = acc;
            }
            let act = &mut rest[0];
            if l + 1 < n_layers {
                for j in 0..size {
                    act[j] = pre[j].max(0.0);
                }
            } else {
                for j in 0..size {
                    act[j] = self.heads[j].apply(pre[j]);
                }
            }
        }
    }

    /// Backpropagate `output_gradient` (∂loss/∂head outputs) for one input;
    /// returns parameter gradients in the shape of `self`.
    pub fn backward(&self, input: &[f64], output_gradient: &[f64]) -> Result<MlpGradients> {
        if input.len() != self.input_dim {
            return Err(SparError::ShapeMismatch { expected: self.input_dim, got: input.len() });
        }
        if output_gradient.len() != self.output_dim() {
            return Err(SparError::ShapeMismatch {
                expected: self.output_dim(),
                got: output_gradient.len(),
            });
        }
        let mut ws = MlpWorkspace::new(self);
        let mut grads = MlpGradients::zeros_like(self);
        self.forward_ws(input, &mut ws);
        self.backward_ws(input, output_gradient, &mut ws, &mut grads, 1.0);
        Ok(grads)
    }

    /// Accumulate `scale ·` gradients into `grads`; `ws` must hold the
    /// forward pass of `input`.
    fn backward_ws(
        &self,
        input: &[f64],
        output_gradient: &[f64],
        ws: &mut MlpWorkspace,
        grads: &mut MlpGradients,
        scale: f64,
    ) {
        let n_layers = self.layer_sizes.len();
        let last = n_layers - 1;
        {
            let delta = &mut ws.deltas[last];
            for j in 0..self.layer_sizes[last] {
                let z = ws.pre[last][j];
                let out = ws.acts[last][j];
                delta[j] = output_gradient[j] * self.heads[j].derivative(z, out);
            }
        }
        for l in (0..n_layers).rev() {
            let size = self.layer_sizes[l];
            let fan_in = if l == 0 { self.input_dim } else { self.layer_sizes[l - 1] };
            // parameter gradients from delta[l] and the previous activation
            for j in 0..size {
                let delta_j = ws.deltas[l][j] * scale;
                if delta_j == 0.0 {
                    continue;
                }
                let grow = &mut grads.weights[l][j * fan_in..(j + 1) * fan_in];
                if l == 0 {
                    for (g, &a) in grow.iter_mut().zip(input) {
                        *g += delta_j * a;
                    }
                } else {
                    let prev_idx = l - 1;
                    for k in 0..fan_in {
                        grow[k] += delta_j * ws.acts[prev_idx][k];
                    }
                }
                grads.biases[l][j] += delta_j;
            }
            if l > 0 {
                // delta for the previous layer through W^T and the ReLU mask
                let w = &self.weights[l];
                let (lower, upper) = ws.deltas.split_at_mut(l);
                let delta_prev = &mut lower[l - 1];
                let delta_cur = &upper[0];
                for (k, dp) in delta_prev.iter_mut().enumerate().take(fan_in) {
                    let mut acc = 0.0;
                    for (j, dc) in delta_cur.iter().enumerate().take(size) {
                        acc += w[j * fan_in + k] * dc;
                    }
                    *dp = if ws.pre[l - 1][k] > 0.0 { acc } else { 0.0 };
                }
            }
        }
    }
}

/// Scratch buffers for forward/backward passes.
struct MlpWorkspace {
    pre: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl MlpWorkspace {
    fn new(p: &MlpParams) -> Self {
        let pre: Vec<Vec<f64>> = p.layer_sizes.iter().map(|&s| vec![0.0; s]).collect();
        Self { acts: pre.clone(), deltas: pre.clone(), pre }
    }

    fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGradients {
    pub fn zeros_like(p: &MlpParams) -> Self {
        Self {
            weights: p.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: p.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    fn reset(&mut self) {
        for w in self.weights.iter_mut() {
            w.iter_mut().for_each(|v| *v = 0.0);
        }
        for b in self.biases.iter_mut() {
            b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().flatten().chain(self.biases.iter().flatten()).all(|v| v.is_finite())
    }
}

/// Adam moment estimates, matching the parameter shapes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    m_weights: Vec<Vec<f64>>,
    v_weights: Vec<Vec<f64>>,
    m_biases: Vec<Vec<f64>>,
    v_biases: Vec<Vec<f64>>,
    step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(p: &MlpParams) -> Self {
        Self {
            m_weights: p.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_weights: p.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_biases: p.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_biases: p.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// One bias-corrected Adam update in place. Non-finite gradients are a
/// divergence signal and leave parameters and state untouched.
pub fn adam_step(p: &mut MlpParams, g: &MlpGradients, s: &mut AdamState, lr: f64) -> Result<()> {
    if !g.is_finite() {
        return Err(SparError::ParamDomain("non-finite gradient".into()));
    }
    s.step_count += 1;
    let t = s.step_count as i32;
    let bc1 = 1.0 - s.beta1.powi(t);
    let bc2 = 1.0 - s.beta2.powi(t);
    let update = |param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..param.len() {
            m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * grad[i];
            v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + s.epsilon);
        }
    };
    for l in 0..p.weights.len() {
        update(&mut p.weights[l], &g.weights[l], &mut s.m_weights[l], &mut s.v_weights[l]);
        update(&mut p.biases[l], &g.biases[l], &mut s.m_biases[l], &mut s.v_biases[l]);
    }
    Ok(())
}

/// Mini-batch size; `Full` uses the whole training split per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BatchSize {
    Fixed(usize),
    Full,
}

/// Optimisation schedule: Adam with stepwise learning-rate decay driven by
/// early stopping, and restart-on-divergence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub initial_lr: f64,
    pub min_lr: f64,
    pub lr_decay_factor: f64,
    pub max_epochs: usize,
    pub batch_size: BatchSize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_lr > 0.0
            && self.min_lr > 0.0
            && self.min_lr <= self.initial_lr
            && self.lr_decay_factor > 0.0
            && self.lr_decay_factor < 1.0
            && self.max_epochs >= 1
            && self.patience >= 1
            && self.validation_fraction > 0.0
            && self.validation_fraction < 1.0;
        if !ok {
            return Err(SparError::ParamDomain("invalid training schedule".into()));
        }
        if let BatchSize::Fixed(0) = self.batch_size {
            return Err(SparError::ParamDomain("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-sample loss on the network's head outputs.
pub trait Loss {
    fn eval(&self, outputs: &[f64], target: f64) -> f64;
    /// Gradient with respect to the head outputs, written into `grad`.
    fn grad(&self, outputs: &[f64], target: f64, grad: &mut [f64]);
}

/// Loss trace of one completed epoch; always finite.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: MlpParams,
    pub history: Vec<EpochRecord>,
    pub best_val_loss: f64,
    /// Learning rate in force when training stopped.
    pub final_lr: f64,
}

struct Checkpoint {
    params: MlpParams,
    adam: AdamState,
}

/// Train `params` on `(inputs, targets)` under `sched`.
///
/// The data is split into training and validation parts by a seeded shuffle.
/// Epochs run shuffled mini-batches of mean loss; when the validation loss
/// stops improving for `patience` epochs the learning rate is multiplied by
/// the decay factor and optimisation resumes from the best parameters so
/// far, until the rate falls below `min_lr` or the epoch budget is spent.
/// A non-finite batch loss or gradient restores the last finite checkpoint
/// and also decays the rate, so the recorded history is finite throughout.
/// Returns the parameters with the best validation loss.
pub fn train(
    params: MlpParams,
    inputs: &Matrix,
    targets: &[f64],
    loss: &dyn Loss,
    sched: &TrainSchedule,
) -> Result<TrainOutcome> {
    sched.validate()?;
    let n = inputs.nrows();
    if n == 0 || targets.len() != n {
        return Err(SparError::ShapeMismatch { expected: n, got: targets.len() });
    }
    if inputs.ncols() != params.input_dim {
        return Err(SparError::ShapeMismatch { expected: params.input_dim, got: inputs.ncols() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * sched.validation_fraction).round() as usize).clamp(1, n - 1);
    let val_idx = order.split_off(n - n_val);
    let mut train_idx = order;

    let mut ws = MlpWorkspace::new(&params);
    let mut grads = MlpGradients::zeros_like(&params);
    let mut out_grad = vec![0.0; params.output_dim()];

    let eval_split = |p: &MlpParams, ws: &mut MlpWorkspace, idx: &[usize]| -> f64 {
        let mut acc = 0.0;
        for &i in idx {
            p.forward_ws(inputs.row(i), ws);
            acc += loss.eval(ws.output(), targets[i]);
        }
        acc / idx.len() as f64
    };

    let mut params = params;
    let mut adam = AdamState::new(&params);
    let init_val = eval_split(&params, &mut ws, &val_idx);
    let init_train = eval_split(&params, &mut ws, &train_idx);
    if !init_val.is_finite() || !init_train.is_finite() {
        return Err(SparError::InitLossNotFinite);
    }

    let mut best = Checkpoint { params: params.clone(), adam: adam.clone() };
    let mut best_val = init_val;
    let mut last_finite = Checkpoint { params: params.clone(), adam: adam.clone() };
    let mut lr = sched.initial_lr;
    let mut stale = 0usize;
    let mut history = Vec::new();

    let batch = match sched.batch_size {
        BatchSize::Fixed(b) => b.min(train_idx.len()),
        BatchSize::Full => train_idx.len(),
    };

    'epochs: for epoch in 1..=sched.max_epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in train_idx.chunks(batch) {
            grads.reset();
            let mut batch_loss = 0.0;
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let row = inputs.row(i);
                params.forward_ws(row, &mut ws);
                let l = loss.eval(ws.output(), targets[i]);
                batch_loss += l;
                if !l.is_finite() {
                    break;
                }
                loss.grad(ws.output(), targets[i], &mut out_grad);
                params.backward_ws(row, &out_grad, &mut ws, &mut grads, scale);
            }
            batch_loss *= scale;
            let stepped = if batch_loss.is_finite() {
                adam_step(&mut params, &grads, &mut adam, lr).is_ok()
            } else {
                false
            };
            if !stepped {
                // divergence: restore the last finite checkpoint and decay
                params = last_finite.params.clone();
                adam = last_finite.adam.clone();
                lr *= sched.lr_decay_factor;
                if lr < sched.min_lr {
                    break 'epochs;
                }
                continue 'epochs;
            }
            epoch_loss += batch_loss;
            n_batches += 1;
        }
        let train_loss = epoch_loss / n_batches.max(1) as f64;
        let val_loss = eval_split(&params, &mut ws, &val_idx);
        if !val_loss.is_finite() {
            params = last_finite.params.clone();
            adam = last_finite.adam.clone();
            lr *= sched.lr_decay_factor;
            if lr < sched.min_lr {
                break;
            }
            continue;
        }
        history.push(EpochRecord { epoch, lr, train_loss, val_loss });
        last_finite = Checkpoint { params: params.clone(), adam: adam.clone() };
        if val_loss < best_val {
            best_val = val_loss;
            best = Checkpoint { params: params.clone(), adam: adam.clone() };
            stale = 0;
        } else {
            stale += 1;
            if stale >= sched.patience {
                lr *= sched.lr_decay_factor;
                if lr < sched.min_lr {
                    break;
                }
                // resume from the best parameters with fresh optimizer
                // moments; re-seeding Adam stops the segment from replaying
                // the trajectory that stalled
                params = best.params.clone();
                adam = AdamState::new(&params);
                last_finite = Checkpoint { params: params.clone(), adam: adam.clone() };
                stale = 0;
            }
        }
    }

    Ok(TrainOutcome { params: best.params, history, best_val_loss: best_val, final_lr: lr })
}
