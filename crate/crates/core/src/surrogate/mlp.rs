//! Small fully connected regressor with analytic gradients.
//!
//! Inputs pass through a per-feature affine normalizer, softplus hidden
//! layers, and a linear (or logistic) output layer. The output is then
//! de-normalized and, for log-target models, exponentiated.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature affine map `normalized = (raw − offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Affine {
    pub fn identity(n: usize) -> Self {
        Self {
            offset: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Mean/standard-deviation normalizer over `rows`. Constant features get
    /// scale 1.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        for row in rows.clone() {
            n += 1;
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { offset: mean, scale }
    }

    pub fn len(&self) -> usize {
        self.offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offset.is_empty()
    }
}

/// Activation applied on the output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Logistic,
}

/// Transform applied to labels before normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetTransform {
    Identity,
    /// Fit `ln(label)`; predictions are `exp` of the network output.
    Log,
}

/// One dense layer, weights row-major `[outputs][inputs]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Weights, biases and normalizers of a feed-forward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRegressor {
    pub layer_sizes: Vec<usize>,
    pub layers: Vec<DenseLayer>,
    pub input_normalizer: Affine,
    pub output_normalizer: Affine,
    pub output_activation: OutputActivation,
    pub target_transform: TargetTransform,
    /// Free-form metric/device tag, e.g. `latency@proxy`.
    pub tag: String,
    pub trained: bool,
}

/// Gradients with the same shape as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpRegressor) -> Self {
        Self {
            weights: model.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: model.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.weights.iter_mut().flatten().for_each(|g| *g = 0.0);
        self.biases.iter_mut().flatten().for_each(|g| *g = 0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().flatten().for_each(|g| *g *= factor);
        self.biases.iter_mut().flatten().for_each(|g| *g *= factor);
    }

    /// Flattened in the same order as [`MlpRegressor::params_flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// Activations recorded by a forward pass, reused across calls.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    /// `acts[0]` is the normalized input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    /// Pre-activation values of every layer.
    pre: Vec<Vec<f64>>,
    /// Activation derivative at each hidden layer's pre-activation.
    deriv: Vec<Vec<f64>>,
    /// Final outputs after de-normalization and target transform.
    out: Vec<f64>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        &self.out
    }

    /// Output of the last layer before de-normalization.
    pub fn activation_output(&self) -> &[f64] {
        self.acts.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Softplus and its derivative (the logistic function) from one `exp`.
fn softplus_with_derivative(z: f64) -> (f64, f64) {
    if z > 30.0 {
        (z, logistic(z))
    } else {
        let e = z.exp();
        (e.ln_1p(), e / (1.0 + e))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Momentum gradient descent settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSettings {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Coefficient of the squared-L2 penalty on all parameters.
    pub weight_decay: f64,
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            momentum: 0.9,
            epochs: 2000,
            batch_size: 32,
            weight_decay: 0.0,
        }
    }
}

impl TrainingSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.batch_size == 0 {
            return Err(Error::invalid(
                "training settings need learning_rate > 0, momentum in [0, 1), batch_size ≥ 1",
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be non-negative"));
        }
        Ok(())
    }
}

/// Heavy-ball momentum state for one model.
#[derive(Debug, Clone)]
pub struct Momentum {
    velocity: Gradients,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Momentum {
    pub fn new(model: &MlpRegressor, learning_rate: f64, momentum: f64) -> Self {
        Self {
            velocity: Gradients::zeros_like(model),
            learning_rate,
            momentum,
        }
    }

    /// `v ← μ·v − η·g; θ ← θ + v`.
    pub fn step(&mut self, model: &mut MlpRegressor, grads: &Gradients) {
        let (lr, mu) = (self.learning_rate, self.momentum);
        for (l, layer) in model.layers.iter_mut().enumerate() {
            for ((w, v), g) in layer
                .weights
                .iter_mut()
                .zip(&mut self.velocity.weights[l])
                .zip(&grads.weights[l])
            {
                *v = mu * *v - lr * g;
                *w += *v;
            }
            for ((b, v), g) in layer
                .biases
                .iter_mut()
                .zip(&mut self.velocity.biases[l])
                .zip(&grads.biases[l])
            {
                *v = mu * *v - lr * g;
                *b += *v;
            }
        }
    }
}

impl MlpRegressor {
    /// Freshly initialized network (Glorot-uniform weights, zero biases,
    /// identity normalizers).
    pub fn new<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        output_activation: OutputActivation,
        rng: &mut R,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::invalid("layer_sizes needs ≥ 2 non-zero entries"));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (inputs, outputs) = (w[0], w[1]);
                let bound = (6.0 / (inputs + outputs) as f64).sqrt();
                DenseLayer {
                    inputs,
                    outputs,
                    weights: (0..inputs * outputs).map(|_| rng.gen_range(-bound..bound)).collect(),
                    biases: vec![0.0; outputs],
                }
            })
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            layers,
            input_normalizer: Affine::identity(layer_sizes[0]),
            output_normalizer: Affine::identity(*layer_sizes.last().unwrap()),
            output_activation,
            target_transform: TargetTransform::Identity,
            tag: String::new(),
            trained: false,
        })
    }

    /// Single-layer linear model `w·x + b` with identity normalizers.
    pub fn linear(weights: Vec<f64>, bias: f64) -> Self {
        let n = weights.len();
        Self {
            layer_sizes: vec![n, 1],
            layers: vec![DenseLayer {
                inputs: n,
                outputs: 1,
                weights,
                biases: vec![bias],
            }],
            input_normalizer: Affine::identity(n),
            output_normalizer: Affine::identity(1),
            output_activation: OutputActivation::Identity,
            target_transform: TargetTransform::Identity,
            tag: "linear".into(),
            trained: true,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[at..at + nw]);
            at += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    /// Sum of squares of every weight and bias.
    pub fn squared_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .map(|p| p * p)
            .sum()
    }

    /// Adds `2·coef·θ` to `grads`.
    pub fn add_l2_gradient(&self, coef: f64, grads: &mut Gradients) {
        if coef == 0.0 {
            return;
        }
        for (l, layer) in self.layers.iter().enumerate() {
            for (g, w) in grads.weights[l].iter_mut().zip(&layer.weights) {
                *g += 2.0 * coef * w;
            }
            for (g, b) in grads.biases[l].iter_mut().zip(&layer.biases) {
                *g += 2.0 * coef * b;
            }
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Forward pass recording activations into `trace`.
    pub fn forward_trace(&self, input: &[f64], trace: &mut Trace) -> Result<()> {
        self.check_input(input)?;
        let nl = self.layers.len();
        trace.acts.resize_with(nl + 1, Vec::new);
        trace.pre.resize_with(nl, Vec::new);
        trace.deriv.resize_with(nl, Vec::new);
        let a0 = &mut trace.acts[0];
        a0.clear();
        a0.extend(
            input
                .iter()
                .zip(&self.input_normalizer.offset)
                .zip(&self.input_normalizer.scale)
                .map(|((x, o), s)| (x - o) / s),
        );
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = trace.acts.split_at_mut(l + 1);
            let prev = &before[l];
            let pre = &mut trace.pre[l];
            pre.clear();
            for r in 0..layer.outputs {
                let row = &layer.weights[r * layer.inputs..(r + 1) * layer.inputs];
                pre.push(dot(row, prev) + layer.biases[r]);
            }
            let next = &mut after[0];
            next.clear();
            if l + 1 < nl {
                let deriv = &mut trace.deriv[l];
                deriv.clear();
                for &z in pre.iter() {
                    let (a, g) = softplus_with_derivative(z);
                    next.push(a);
                    deriv.push(g);
                }
            } else {
                match self.output_activation {
                    OutputActivation::Identity => next.extend_from_slice(pre),
                    OutputActivation::Logistic => next.extend(pre.iter().map(|&z| logistic(z))),
                }
            }
        }
        let last = &trace.acts[nl];
        trace.out.clear();
        for (k, &a) in last.iter().enumerate() {
            let z = a * self.output_normalizer.scale[k] + self.output_normalizer.offset[k];
            trace.out.push(match self.target_transform {
                TargetTransform::Identity => z,
                TargetTransform::Log => z.exp(),
            });
        }
        Ok(())
    }

    /// Full output vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut trace = Trace::default();
        self.forward_trace(input, &mut trace)?;
        Ok(trace.out)
    }

    /// First (for regressors, only) output.
    pub fn predict(&self, input: &[f64]) -> Result<f64> {
        Ok(self.forward(input)?[0])
    }

    /// Back-propagates `d_act`, the loss gradient with respect to the last
    /// layer's activated output (before de-normalization). Parameter
    /// gradients are accumulated into `grads`; the gradient with respect to
    /// the raw input is written to `d_input` when given.
    pub fn backward_activation(
        &self,
        trace: &Trace,
        d_act: &[f64],
        mut grads: Option<&mut Gradients>,
        d_input: Option<&mut [f64]>,
    ) {
        let nl = self.layers.len();
        let mut delta: Vec<f64> = match self.output_activation {
            OutputActivation::Identity => d_act.to_vec(),
            OutputActivation::Logistic => d_act
                .iter()
                .zip(&trace.acts[nl])
                .map(|(g, y)| g * y * (1.0 - y))
                .collect(),
        };
        let want_input = d_input.is_some();
        let mut prev_delta = Vec::new();
        for l in (0..nl).rev() {
            let layer = &self.layers[l];
            let a_in = &trace.acts[l];
            if let Some(g) = grads.as_deref_mut() {
                let gw = &mut g.weights[l];
                for r in 0..layer.outputs {
                    let d = delta[r];
                    if d != 0.0 {
                        let row = &mut gw[r * layer.inputs..(r + 1) * layer.inputs];
                        for (gw, a) in row.iter_mut().zip(a_in) {
                            *gw += d * a;
                        }
                    }
                }
                for (gb, d) in g.biases[l].iter_mut().zip(&delta) {
                    *gb += d;
                }
            }
            if l == 0 && !want_input {
                break;
            }
            prev_delta.clear();
            prev_delta.resize(layer.inputs, 0.0);
            for r in 0..layer.outputs {
                let d = delta[r];
                if d != 0.0 {
                    let row = &layer.weights[r * layer.inputs..(r + 1) * layer.inputs];
                    for (p, w) in prev_delta.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
            }
            if l > 0 {
                for (p, g) in prev_delta.iter_mut().zip(&trace.deriv[l - 1]) {
                    *p *= g;
                }
            }
            std::mem::swap(&mut delta, &mut prev_delta);
        }
        if let Some(out) = d_input {
            for ((o, d), s) in out.iter_mut().zip(&delta).zip(&self.input_normalizer.scale) {
                *o = d / s;
            }
        }
    }

    /// Converts a gradient with respect to the final outputs into one with
    /// respect to the activated last layer.
    pub fn output_to_activation_gradient(&self, trace: &Trace, d_out: &[f64]) -> Vec<f64> {
        d_out
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let dz = match self.target_transform {
                    TargetTransform::Identity => *g,
                    TargetTransform::Log => g * trace.out[k],
                };
                dz * self.output_normalizer.scale[k]
            })
            .collect()
    }

    /// Back-propagates a gradient given with respect to the final outputs.
    pub fn backward_output(
        &self,
        trace: &Trace,
        d_out: &[f64],
        grads: Option<&mut Gradients>,
        d_input: Option<&mut [f64]>,
    ) {
        let d_act = self.output_to_activation_gradient(trace, d_out);
        self.backward_activation(trace, &d_act, grads, d_input);
    }

    /// Gradient of [`predict`](Self::predict) with respect to the raw input.
    pub fn gradient_wrt_input(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_and_input_gradient(input)?.1)
    }

    /// [`predict`](Self::predict) and its input gradient from one forward pass.
    pub fn value_and_input_gradient(&self, input: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut trace = Trace::default();
        self.forward_trace(input, &mut trace)?;
        let mut d_out = vec![0.0; self.output_dim()];
        d_out[0] = 1.0;
        let mut g = vec![0.0; self.input_dim()];
        self.backward_output(&trace, &d_out, None, Some(&mut g));
        Ok((trace.out[0], g))
    }

    /// Value of [`predict`](Self::predict) and its gradient with respect to
    /// the parameters, in [`params_flat`](Self::params_flat) order.
    pub fn gradient_wrt_params(&self, input: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut trace = Trace::default();
        self.forward_trace(input, &mut trace)?;
        let mut d_out = vec![0.0; self.output_dim()];
        d_out[0] = 1.0;
        let mut grads = Gradients::zeros_like(self);
        self.backward_output(&trace, &d_out, Some(&mut grads), None);
        Ok((trace.out[0], grads.flat()))
    }

    fn label_to_normalized(&self, label: f64) -> f64 {
        let t = match self.target_transform {
            TargetTransform::Identity => label,
            TargetTransform::Log => label.ln(),
        };
        (t - self.output_normalizer.offset[0]) / self.output_normalizer.scale[0]
    }

    /// Mean squared error in normalized label units.
    pub fn normalized_mse(&self, samples: &[TrainingSample]) -> Result<f64> {
        let mut trace = Trace::default();
        let mut total = 0.0;
        for s in samples {
            self.forward_trace(&s.input, &mut trace)?;
            let e = trace.acts.last().unwrap()[0] - self.label_to_normalized(s.label);
            total += e * e;
        }
        Ok(total / samples.len().max(1) as f64)
    }
}

/// One supervised example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub input: Vec<f64>,
    pub label: f64,
}

/// Outcome of [`fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean squared error over the training set, normalized label units.
    pub final_loss: f64,
    /// Labels had zero variance; the model is a constant predictor.
    pub degenerate: bool,
    /// Mean mini-batch loss per epoch.
    pub curve: Vec<f64>,
}

impl FitReport {
    /// Training curve as CSV `epoch,loss`.
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (i, l) in self.curve.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, l));
        }
        s
    }
}

/// Fits a single-output regressor by mini-batch momentum gradient descent
/// on mean squared error. `layer_sizes` includes input and output sizes.
pub fn fit<R: Rng + ?Sized>(
    samples: &[TrainingSample],
    layer_sizes: &[usize],
    transform: TargetTransform,
    settings: &TrainingSettings,
    rng: &mut R,
) -> Result<(MlpRegressor, FitReport)> {
    settings.validate()?;
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    if layer_sizes.last() != Some(&1) {
        return Err(Error::invalid("regressor output layer must have size 1"));
    }
    let dim = layer_sizes[0];
    for s in samples {
        if s.input.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: s.input.len(),
            });
        }
        let ok = s.label.is_finite() && (transform == TargetTransform::Identity || s.label > 0.0);
        if !ok {
            return Err(Error::invalid(format!("label {} not usable", s.label)));
        }
    }

    let mut model = MlpRegressor::new(layer_sizes, OutputActivation::Identity, rng)?;
    model.target_transform = transform;
    model.input_normalizer = Affine::fit(samples.iter().map(|s| s.input.as_slice()), dim);

    let targets: Vec<f64> = samples
        .iter()
        .map(|s| match transform {
            TargetTransform::Identity => s.label,
            TargetTransform::Log => s.label.ln(),
        })
        .collect();
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let var = targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / targets.len() as f64;
    if var.sqrt() <= 1e-12 * mean.abs().max(1.0) {
        log::warn!("labels have zero variance; returning a constant predictor");
        for layer in &mut model.layers {
            layer.weights.iter_mut().for_each(|w| *w = 0.0);
        }
        model.output_normalizer = Affine {
            offset: vec![mean],
            scale: vec![1.0],
        };
        model.trained = true;
        return Ok((
            model,
            FitReport {
                final_loss: 0.0,
                degenerate: true,
                curve: Vec::new(),
            },
        ));
    }
    model.output_normalizer = Affine {
        offset: vec![mean],
        scale: vec![var.sqrt()],
    };
    let normalized: Vec<f64> = targets.iter().map(|t| (t - mean) / var.sqrt()).collect();

    let mut opt = Momentum::new(&model, settings.learning_rate, settings.momentum);
    let mut grads = Gradients::zeros_like(&model);
    let mut trace = Trace::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut curve = Vec::with_capacity(settings.epochs);
    for _ in 0..settings.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(settings.batch_size) {
            grads.clear();
            let mut batch_loss = 0.0;
            for &i in batch {
                model.forward_trace(&samples[i].input, &mut trace)?;
                let err = trace.acts.last().unwrap()[0] - normalized[i];
                batch_loss += err * err;
                model.backward_activation(&trace, &[2.0 * err], Some(&mut grads), None);
            }
            grads.scale(1.0 / batch.len() as f64);
            model.add_l2_gradient(settings.weight_decay, &mut grads);
            opt.step(&mut model, &grads);
            epoch_loss += batch_loss / batch.len() as f64;
            batches += 1;
        }
        curve.push(epoch_loss / batches.max(1) as f64);
    }
    model.trained = true;
    let final_loss = model.normalized_mse(samples)?;
    Ok((
        model,
        FitReport {
            final_loss,
            degenerate: false,
            curve,
        },
    ))
}
