//! Amortized design optimization.
//!
//! An optimizer network maps `(device features, λ)` straight to a design
//! encoding. Its logistic output layer keeps every component in `[0, 1]`, so
//! any output decodes to a valid design. Two ways to train it:
//!
//! * supervised on designs found by search over the predicted objective
//!   (mean squared error plus `μ‖Θ‖²`);
//! * unsupervised, minimizing the predicted objective of its own continuous
//!   output through frozen predictors (again plus `μ‖Θ‖²`). Decoding only
//!   happens at inference.
//!
//! Trade-off weights enter the network as `ln(λ + 0.001)` so that the
//! decades of a geometric weight grid are evenly spread.

use std::cmp::Ordering;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::{ContinuousEncoding, DesignPoint, DesignSpace};
use crate::device_world::{DeviceFeatures, Metric, Oracle};
use crate::error::{Error, Result};
use crate::par;
use crate::search::{compare_candidates, ConstraintSpec, InnerSolver};
use crate::surrogate::{
    Affine, Gradients, MlpRegressor, Momentum, OutputActivation, PredictorSet, Trace, TradeoffWeights, TrainingSettings,
};

/// Offset inside the logarithmic weight embedding.
pub const LAMBDA_EMBED_OFFSET: f64 = 1e-3;

/// Names of the network inputs, in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputLayout {
    pub features: Vec<String>,
    pub lambda_embedding: String,
}

impl InputLayout {
    fn for_space(space: &DesignSpace) -> Self {
        let mut features: Vec<String> = [
            "throughput",
            "bandwidth",
            "overhead",
            "power_dynamic",
            "power_static",
            "gamma",
        ]
        .iter()
        .map(|n| format!("ln {n}"))
        .collect();
        features.extend(space.bits_choices.iter().map(|b| format!("ln quant_speedup[{b}]")));
        features.push("ln(lambda1 + 0.001)".into());
        features.push("ln(lambda2 + 0.001)".into());
        Self {
            features,
            lambda_embedding: format!("ln(lambda + {LAMBDA_EMBED_OFFSET})"),
        }
    }
}

/// `x̂_Θ(d, λ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerNetwork {
    pub space: DesignSpace,
    pub layout: InputLayout,
    pub net: MlpRegressor,
}

impl OptimizerNetwork {
    pub fn new<R: Rng + ?Sized>(space: &DesignSpace, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut sizes = vec![Self::input_len(space)];
        sizes.extend_from_slice(hidden);
        sizes.push(space.dims());
        let mut net = MlpRegressor::new(&sizes, OutputActivation::Logistic, rng)?;
        net.tag = "optimizer".into();
        Ok(Self {
            space: space.clone(),
            layout: InputLayout::for_space(space),
            net,
        })
    }

    pub fn input_len(space: &DesignSpace) -> usize {
        DeviceFeatures::feature_len(space) + 2
    }

    /// Raw (un-normalized) network input.
    pub fn raw_input(space: &DesignSpace, d: &DeviceFeatures, lambda: TradeoffWeights) -> Vec<f64> {
        let mut v = d.feature_vector(space);
        v.push((lambda.lambda1 + LAMBDA_EMBED_OFFSET).ln());
        v.push((lambda.lambda2 + LAMBDA_EMBED_OFFSET).ln());
        v
    }

    fn fit_normalizer(&mut self, inputs: &[Vec<f64>]) {
        self.net.input_normalizer = Affine::fit(inputs.iter().map(|v| v.as_slice()), self.net.input_dim());
    }

    /// Continuous design encoding; every component lies in `[0, 1]`.
    pub fn encoding(&self, d: &DeviceFeatures, lambda: TradeoffWeights) -> Result<ContinuousEncoding> {
        if !self.net.trained {
            return Err(Error::UntrainedModel(self.net.tag.clone()));
        }
        Ok(ContinuousEncoding(self.net.forward(&Self::raw_input(
            &self.space,
            d,
            lambda,
        ))?))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One forward pass and a decode. Never measures anything.
pub fn infer_design(net: &OptimizerNetwork, d: &DeviceFeatures, lambda: TradeoffWeights) -> Result<DesignPoint> {
    net.space.decode(&net.encoding(d, lambda)?.0)
}

/// `{0}` plus `count − 1` decade-spaced values ending at `max_lambda`, on
/// each axis; the result is the cross product, `lambda1` outer.
pub fn build_lambda_grid(count_per_axis: usize, max_lambda: f64) -> Result<Vec<TradeoffWeights>> {
    if count_per_axis < 1 {
        return Err(Error::invalid("count_per_axis must be ≥ 1"));
    }
    if !(max_lambda > 0.0 && max_lambda.is_finite()) {
        return Err(Error::invalid("max_lambda must be positive"));
    }
    let mut axis = vec![0.0];
    for k in 0..count_per_axis - 1 {
        let decades = (count_per_axis - 2 - k) as i32;
        axis.push(max_lambda * 10f64.powi(-decades));
    }
    Ok(axis
        .iter()
        .flat_map(|&a| axis.iter().map(move |&b| TradeoffWeights { lambda1: a, lambda2: b }))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrainingSet {
    pub inputs: Vec<(DeviceFeatures, TradeoffWeights)>,
    pub labels: Option<Vec<ContinuousEncoding>>,
}

impl OptimizerTrainingSet {
    /// Every device paired with every weight, devices outer.
    pub fn product(devices: &[DeviceFeatures], lambdas: &[TradeoffWeights]) -> Self {
        Self {
            inputs: devices
                .iter()
                .flat_map(|d| lambdas.iter().map(move |l| (d.clone(), *l)))
                .collect(),
            labels: None,
        }
    }
}

/// Labels each `(d, λ)` with the minimizer of the predicted objective found
/// by `solver`. Evolutionary searches are seeded with `seed + pair index`.
/// Uses predictors only.
pub fn generate_labels_method1(
    devices: &[DeviceFeatures],
    lambdas: &[TradeoffWeights],
    predictors: &PredictorSet,
    solver: &InnerSolver,
) -> Result<OptimizerTrainingSet> {
    predictors.ensure_trained()?;
    let mut set = OptimizerTrainingSet::product(devices, lambdas);
    let space = &predictors.space;
    let results = par::map_range(set.inputs.len(), |i| {
        let (d, lambda) = &set.inputs[i];
        let solver = match solver {
            InnerSolver::Evolutionary { params } => InnerSolver::Evolutionary {
                params: params.with_seed(params.seed.wrapping_add(i as u64)),
            },
            other => other.clone(),
        };
        let (x, _, _) = solver.minimize(
            |x| {
                predictors
                    .objective_of(x, d, *lambda)
                    .expect("trained predictors over their own space")
            },
            space,
        )?;
        space.encode(&x)
    });
    set.labels = Some(results.into_iter().collect::<Result<Vec<_>>>()?);
    Ok(set)
}

/// Network architecture, optimizer settings and regularization weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerHyper {
    pub hidden: Vec<usize>,
    pub training: TrainingSettings,
    /// Weight of `‖Θ‖²`.
    pub mu: f64,
}

impl Default for OptimizerHyper {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            training: TrainingSettings::default(),
            mu: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_loss: f64,
    pub curve: Vec<f64>,
}

/// Mean over `idx` of `|x̂ − x*|²`, plus `μ‖Θ‖²`, and its parameter
/// gradient accumulated into `grads` (which is cleared first).
pub fn method1_loss_and_gradient(
    net: &OptimizerNetwork,
    inputs: &[Vec<f64>],
    labels: &[ContinuousEncoding],
    idx: &[usize],
    mu: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    grads.clear();
    let mut trace = Trace::default();
    let mut loss = 0.0;
    let scale = 1.0 / idx.len() as f64;
    let mut d_out = vec![0.0; net.space.dims()];
    for &i in idx {
        net.net.forward_trace(&inputs[i], &mut trace)?;
        for ((g, y), t) in d_out.iter_mut().zip(trace.output()).zip(&labels[i].0) {
            let e = y - t;
            loss += scale * e * e;
            *g = 2.0 * e * scale;
        }
        net.net.backward_output(&trace, &d_out, Some(grads), None);
    }
    net.net.add_l2_gradient(mu, grads);
    Ok(loss + mu * net.net.squared_norm())
}

/// Mean over `idx` of `f̂(x̂_Θ(d, λ); d, λ)`, plus `μ‖Θ‖²`, and its
/// parameter gradient, back-propagated through the frozen predictors.
pub fn method2_loss_and_gradient(
    net: &OptimizerNetwork,
    inputs: &[Vec<f64>],
    pairs: &[(DeviceFeatures, TradeoffWeights)],
    predictors: &PredictorSet,
    idx: &[usize],
    mu: f64,
    grads: &mut Gradients,
) -> Result<f64> {
    grads.clear();
    let mut trace = Trace::default();
    let mut loss = 0.0;
    let scale = 1.0 / idx.len() as f64;
    for &i in idx {
        net.net.forward_trace(&inputs[i], &mut trace)?;
        let (d, lambda) = &pairs[i];
        let (f, g) = predictors.objective_gradient(trace.output(), d, *lambda)?;
        loss += scale * f;
        let d_out: Vec<f64> = g.iter().map(|v| v * scale).collect();
        net.net.backward_output(&trace, &d_out, Some(grads), None);
    }
    net.net.add_l2_gradient(mu, grads);
    Ok(loss + mu * net.net.squared_norm())
}

fn run_training<R, F>(
    net: &mut OptimizerNetwork,
    n: usize,
    settings: &TrainingSettings,
    rng: &mut R,
    mut batch_loss: F,
) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    F: FnMut(&OptimizerNetwork, &[usize], &mut Gradients) -> Result<f64>,
{
    settings.validate()?;
    let mut opt = Momentum::new(&net.net, settings.learning_rate, settings.momentum);
    let mut grads = Gradients::zeros_like(&net.net);
    let mut order: Vec<usize> = (0..n).collect();
    let mut curve = Vec::with_capacity(settings.epochs);
    for _ in 0..settings.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(settings.batch_size) {
            total += batch_loss(net, batch, &mut grads)?;
            opt.step(&mut net.net, &grads);
            batches += 1;
        }
        curve.push(total / batches as f64);
    }
    Ok(curve)
}

/// Supervised training on search-generated labels.
pub fn train_method1<R: Rng + ?Sized>(
    set: &OptimizerTrainingSet,
    space: &DesignSpace,
    hyper: &OptimizerHyper,
    rng: &mut R,
) -> Result<(OptimizerNetwork, TrainReport)> {
    let labels = set.labels.as_ref().ok_or(Error::MissingLabels)?;
    if labels.len() != set.inputs.len() {
        return Err(Error::LengthMismatch {
            left: set.inputs.len(),
            right: labels.len(),
        });
    }
    if set.inputs.is_empty() {
        return Err(Error::InsufficientData("empty optimizer training set".into()));
    }
    let mut net = OptimizerNetwork::new(space, &hyper.hidden, rng)?;
    let inputs: Vec<Vec<f64>> = set
        .inputs
        .iter()
        .map(|(d, l)| OptimizerNetwork::raw_input(space, d, *l))
        .collect();
    net.fit_normalizer(&inputs);
    let curve = run_training(&mut net, inputs.len(), &hyper.training, rng, |net, batch, grads| {
        method1_loss_and_gradient(net, &inputs, labels, batch, hyper.mu, grads)
    })?;
    net.net.trained = true;
    let all: Vec<usize> = (0..inputs.len()).collect();
    let final_loss = method1_loss_and_gradient(
        &net,
        &inputs,
        labels,
        &all,
        hyper.mu,
        &mut Gradients::zeros_like(&net.net),
    )?;
    Ok((net, TrainReport { final_loss, curve }))
}

/// Unsupervised training through frozen predictors. `predictors` is only
/// borrowed immutably; its weights cannot change.
pub fn train_method2<R: Rng + ?Sized>(
    pairs: &[(DeviceFeatures, TradeoffWeights)],
    predictors: &PredictorSet,
    hyper: &OptimizerHyper,
    rng: &mut R,
) -> Result<(OptimizerNetwork, TrainReport)> {
    predictors.ensure_trained()?;
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no (device, weight) pairs".into()));
    }
    let space = &predictors.space;
    let mut net = OptimizerNetwork::new(space, &hyper.hidden, rng)?;
    let inputs: Vec<Vec<f64>> = pairs
        .iter()
        .map(|(d, l)| OptimizerNetwork::raw_input(space, d, *l))
        .collect();
    net.fit_normalizer(&inputs);
    let curve = run_training(&mut net, inputs.len(), &hyper.training, rng, |net, batch, grads| {
        method2_loss_and_gradient(net, &inputs, pairs, predictors, batch, hyper.mu, grads)
    })?;
    net.net.trained = true;
    let all: Vec<usize> = (0..inputs.len()).collect();
    let final_loss = method2_loss_and_gradient(
        &net,
        &inputs,
        pairs,
        predictors,
        &all,
        hyper.mu,
        &mut Gradients::zeros_like(&net.net),
    )?;
    Ok((net, TrainReport { final_loss, curve }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda1: f64,
    pub lambda2: f64,
    pub predicted_feasible: bool,
    pub predicted_accuracy: f64,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub design: DesignPoint,
    pub lambda: TradeoffWeights,
    pub predicted_feasible: bool,
    /// Single validation measurements on the device.
    pub measured_latency: f64,
    pub measured_energy: f64,
    pub oracle_feasible: bool,
    pub rows: Vec<SweepRow>,
}

impl SweepOutcome {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "lambda1",
            "lambda2",
            "predicted_feasible",
            "predicted_accuracy",
            "chosen",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.lambda1.to_string(),
                r.lambda2.to_string(),
                r.predicted_feasible.to_string(),
                r.predicted_accuracy.to_string(),
                r.chosen.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<sweep>", e))?;
        Ok(())
    }
}

/// Runs the network at every weight in `lambdas` (weights of unconstrained
/// metrics restricted to 0), keeps outputs the device-aware predictors deem
/// feasible, and returns the one with the highest predicted accuracy. The
/// chosen design is then measured once per metric on `d`. Without any
/// bound the result is the `λ = (0, 0)` inference.
pub fn constraint_sweep(
    net: &OptimizerNetwork,
    predictors: &PredictorSet,
    d: &DeviceFeatures,
    constraints: &ConstraintSpec,
    lambdas: &[TradeoffWeights],
    oracle: &Oracle<'_>,
) -> Result<SweepOutcome> {
    constraints.validate()?;
    let space = &net.space;
    let candidates: Vec<TradeoffWeights> = if constraints.is_empty() {
        vec![TradeoffWeights::zero()]
    } else {
        lambdas
            .iter()
            .copied()
            .filter(|l| {
                (constraints.energy_bound.is_some() || l.lambda1 == 0.0)
                    && (constraints.latency_bound.is_some() || l.lambda2 == 0.0)
            })
            .collect()
    };
    if candidates.is_empty() {
        return Err(Error::invalid(
            "no weight in the sweep grid fits the active constraints",
        ));
    }

    let mut rows = Vec::with_capacity(candidates.len());
    let mut evaluated = Vec::with_capacity(candidates.len());
    for &lambda in &candidates {
        let x = infer_design(net, d, lambda)?;
        let enc = space.encode(&x)?.0;
        let acc = predictors.predict_accuracy(&enc)?;
        let lat = predictors.predict_metric(Metric::Latency, &enc, d)?;
        let en = predictors.predict_metric(Metric::Energy, &enc, d)?;
        let violation = constraints.violation(lat, en);
        rows.push(SweepRow {
            lambda1: lambda.lambda1,
            lambda2: lambda.lambda2,
            predicted_feasible: violation == 0.0,
            predicted_accuracy: acc,
            chosen: false,
        });
        evaluated.push((lambda, x, acc, violation));
    }
    let pick = (0..evaluated.len())
        .min_by(|&a, &b| {
            let (ea, eb) = (&evaluated[a], &evaluated[b]);
            let fa = ea.3 == 0.0;
            let fb = eb.3 == 0.0;
            match (fa, fb) {
                (true, false) => Ordering::Less,
                (false, true) => Ordering::Greater,
                (true, true) => eb.2.total_cmp(&ea.2),
                (false, false) => ea.3.total_cmp(&eb.3),
            }
            .then(a.cmp(&b))
        })
        .expect("non-empty candidates");
    rows[pick].chosen = true;
    let (lambda, design, _, violation) = evaluated.swap_remove(pick);
    let measured_latency = oracle.latency(&design, d);
    let measured_energy = oracle.energy(&design, d);
    Ok(SweepOutcome {
        oracle_feasible: constraints.satisfied(measured_latency, measured_energy),
        design,
        lambda,
        predicted_feasible: violation == 0.0,
        measured_latency,
        measured_energy,
        rows,
    })
}

/// Local search on the predicted objective over the Hamming ball of
/// `radius` around `seed`, nearest designs first and at most `budget` of
/// them. The seed is always a candidate, so the result is never worse.
pub fn fine_tune(
    seed: &DesignPoint,
    d: &DeviceFeatures,
    lambda: TradeoffWeights,
    predictors: &PredictorSet,
    radius: usize,
    budget: usize,
) -> Result<DesignPoint> {
    let space = &predictors.space;
    space.check(seed)?;
    predictors.ensure_trained()?;
    let mut ball = space.hamming_ball(seed, radius);
    ball.sort_by(|a, b| a.hamming(seed).cmp(&b.hamming(seed)).then_with(|| a.cmp(b)));
    ball.truncate(budget.max(1));
    let values = par::map(&ball, |x| {
        predictors.objective_of(x, d, lambda).expect("checked predictors")
    });
    let best = (0..ball.len())
        .min_by(|&a, &b| compare_candidates((values[a], &ball[a]), (values[b], &ball[b])))
        .expect("ball contains the seed");
    Ok(ball.swap_remove(best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device_world::{sample_heterogeneous, MeasurementLedger};
    use crate::search::brute_force_argmin;
    use crate::surrogate::{PredictorHyper, StageOneData};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    struct World {
        space: DesignSpace,
        devices: Vec<DeviceFeatures>,
        predictors: PredictorSet,
    }

    fn world() -> &'static World {
        static W: OnceLock<World> = OnceLock::new();
        W.get_or_init(|| {
            let space = DesignSpace::reduced();
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let devices: Vec<DeviceFeatures> = (0..4)
                .map(|i| sample_heterogeneous(&mut rng, format!("t{i}"), &space.bits_choices))
                .collect();
            let ledger = MeasurementLedger::new();
            let oracle = Oracle::new(&space, &ledger);
            let designs = space.enumerate_all(128).unwrap();
            let data = StageOneData::collect(&space, &devices, &designs, &oracle).unwrap();
            let hyper = PredictorHyper {
                hidden: vec![16, 16],
                training: TrainingSettings {
                    epochs: 150,
                    ..TrainingSettings::default()
                },
            };
            let (predictors, _) = data.fit(&space, &hyper, &mut rng).unwrap();
            World {
                space,
                devices,
                predictors,
            }
        })
    }

    fn small_hyper(epochs: usize, mu: f64) -> OptimizerHyper {
        OptimizerHyper {
            hidden: vec![16],
            training: TrainingSettings {
                epochs,
                ..TrainingSettings::default()
            },
            mu,
        }
    }

    fn brute() -> InnerSolver {
        InnerSolver::BruteForce { limit: 4096 }
    }

    #[test]
    fn lambda_grid_construction() {
        assert_eq!(build_lambda_grid(1, 1.0).unwrap(), vec![TradeoffWeights::zero()]);
        let g = build_lambda_grid(4, 1.0).unwrap();
        assert_eq!(g.len(), 16);
        let mut axis: Vec<f64> = g.iter().map(|l| l.lambda1).collect();
        axis.dedup();
        assert_eq!(axis.len(), 4);
        for (a, b) in axis.iter().zip([0.0, 0.01, 0.1, 1.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        for l in &g {
            assert!(g.contains(&TradeoffWeights {
                lambda1: l.lambda2,
                lambda2: l.lambda1,
            }));
        }
        assert!(build_lambda_grid(0, 1.0).is_err());
    }

    #[test]
    fn labels_are_predictor_argmins_and_free() {
        let w = world();
        let ledger = MeasurementLedger::new();
        let before = ledger.snapshot();
        let d = &w.devices[0];
        let lambdas = [
            TradeoffWeights::zero(),
            TradeoffWeights {
                lambda1: 0.0,
                lambda2: 2.0,
            },
        ];
        let set = generate_labels_method1(std::slice::from_ref(d), &lambdas, &w.predictors, &brute()).unwrap();
        assert_eq!(ledger.snapshot(), before);
        let labels = set.labels.unwrap();
        let (argmax, _) = brute_force_argmin(
            |x| -w.predictors.predict_accuracy(&w.space.encode(x).unwrap().0).unwrap(),
            &w.space,
            128,
        )
        .unwrap();
        assert_eq!(labels[0], w.space.encode(&argmax).unwrap());
        let lat = |e: &ContinuousEncoding| w.predictors.predict_metric(Metric::Latency, &e.0, d).unwrap();
        assert!(lat(&labels[1]) < lat(&labels[0]));
    }

    #[test]
    fn method1_memorizes_a_single_pair() {
        let w = world();
        let set = OptimizerTrainingSet {
            inputs: vec![(
                w.devices[0].clone(),
                TradeoffWeights {
                    lambda1: 0.1,
                    lambda2: 0.3,
                },
            )],
            labels: Some(vec![ContinuousEncoding(vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.0])]),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (net, report) = train_method1(
            &set,
            &w.space,
            &OptimizerHyper {
                training: TrainingSettings {
                    learning_rate: 0.1,
                    epochs: 3000,
                    ..TrainingSettings::default()
                },
                ..small_hyper(0, 0.0)
            },
            &mut rng,
        )
        .unwrap();
        assert!(report.final_loss < 1e-4, "{}", report.final_loss);
        let x = infer_design(
            &net,
            &w.devices[0],
            TradeoffWeights {
                lambda1: 0.1,
                lambda2: 0.3,
            },
        )
        .unwrap();
        assert_eq!(x, DesignPoint::from_indices(vec![0, 1, 1, 0, 1, 0, 1]));
        let missing = OptimizerTrainingSet { labels: None, ..set };
        assert!(matches!(
            train_method1(&missing, &w.space, &small_hyper(1, 0.0), &mut rng),
            Err(Error::MissingLabels)
        ));
    }

    #[test]
    fn regularization_shrinks_weights() {
        let w = world();
        let lambdas = build_lambda_grid(3, 1.0).unwrap();
        let set = generate_labels_method1(&w.devices, &lambdas, &w.predictors, &brute()).unwrap();
        let norm = |mu| {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            train_method1(&set, &w.space, &small_hyper(100, mu), &mut rng)
                .unwrap()
                .0
                .net
                .squared_norm()
        };
        assert!(norm(1e-2) < norm(0.0));
    }

    #[test]
    fn method1_fits_held_in_labels() {
        let w = world();
        let lambdas = build_lambda_grid(4, 1.0).unwrap();
        let set = generate_labels_method1(&w.devices, &lambdas, &w.predictors, &brute()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hyper = OptimizerHyper {
            hidden: vec![32, 32],
            ..small_hyper(1500, 1e-4)
        };
        let (net, _) = train_method1(&set, &w.space, &hyper, &mut rng).unwrap();
        let labels = set.labels.as_ref().unwrap();
        let hits = set
            .inputs
            .iter()
            .zip(labels)
            .filter(|((d, l), y)| infer_design(&net, d, *l).unwrap() == w.space.decode(&y.0).unwrap())
            .count();
        assert!(hits * 5 >= set.inputs.len() * 4, "{hits}/{}", set.inputs.len());
    }

    #[test]
    fn method2_keeps_predictors_frozen_and_is_deterministic() {
        let w = world();
        let before = w.predictors.fingerprint();
        let pairs = OptimizerTrainingSet::product(&w.devices, &build_lambda_grid(3, 1.0).unwrap()).inputs;
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            train_method2(&pairs, &w.predictors, &small_hyper(50, 1e-4), &mut rng)
                .unwrap()
                .0
        };
        let a = run();
        assert_eq!(w.predictors.fingerprint(), before);
        assert_eq!(a, run());
        let mut untrained = w.predictors.clone();
        untrained.energy.trained = false;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(
            train_method2(&pairs, &untrained, &small_hyper(1, 0.0), &mut rng),
            Err(Error::UntrainedModel(_))
        ));
    }

    #[test]
    fn method2_at_zero_weight_finds_accuracy_argmax() {
        let w = world();
        let (argmax, _) = brute_force_argmin(
            |x| -w.predictors.predict_accuracy(&w.space.encode(x).unwrap().0).unwrap(),
            &w.space,
            128,
        )
        .unwrap();
        let pairs: Vec<(DeviceFeatures, TradeoffWeights)> =
            w.devices.iter().map(|d| (d.clone(), TradeoffWeights::zero())).collect();
        let hits = (0..10)
            .filter(|&s| {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + s);
                let (net, _) = train_method2(&pairs, &w.predictors, &small_hyper(2000, 1e-4), &mut rng).unwrap();
                w.devices
                    .iter()
                    .all(|d| infer_design(&net, d, TradeoffWeights::zero()).unwrap() == argmax)
            })
            .count();
        assert!(hits >= 8, "{hits}/10");
    }

    #[test]
    fn composed_gradient_matches_finite_differences() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pairs: Vec<(DeviceFeatures, TradeoffWeights)> = w
            .devices
            .iter()
            .map(|d| {
                (
                    d.clone(),
                    TradeoffWeights {
                        lambda1: rng.gen_range(0.0..1.0),
                        lambda2: rng.gen_range(0.0..1.0),
                    },
                )
            })
            .collect();
        for trial in 0..10 {
            let mut net = OptimizerNetwork::new(&w.space, &[5], &mut rng).unwrap();
            let inputs: Vec<Vec<f64>> = pairs
                .iter()
                .map(|(d, l)| OptimizerNetwork::raw_input(&w.space, d, *l))
                .collect();
            net.fit_normalizer(&inputs);
            let idx: Vec<usize> = (0..pairs.len()).collect();
            let mu = 1e-3;
            let mut grads = Gradients::zeros_like(&net.net);
            method2_loss_and_gradient(&net, &inputs, &pairs, &w.predictors, &idx, mu, &mut grads).unwrap();
            let analytic = grads.flat();
            let theta = net.net.params_flat();
            let h = 1e-6;
            let mut fd = Vec::with_capacity(theta.len());
            for k in 0..theta.len() {
                let mut loss_at = |v: f64| {
                    let mut p = theta.clone();
                    p[k] = v;
                    net.net.set_params_flat(&p).unwrap();
                    method2_loss_and_gradient(&net, &inputs, &pairs, &w.predictors, &idx, mu, &mut grads).unwrap()
                };
                fd.push((loss_at(theta[k] + h) - loss_at(theta[k] - h)) / (2.0 * h));
            }
            net.net.set_params_flat(&theta).unwrap();
            let diff: f64 = analytic
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(diff <= 1e-4 * norm, "trial {trial}: {diff} vs {norm}");
        }
    }

    #[test]
    fn inference_is_free_and_repeatable() {
        let w = world();
        let pairs = OptimizerTrainingSet::product(&w.devices, &build_lambda_grid(2, 1.0).unwrap()).inputs;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (net, _) = train_method2(&pairs, &w.predictors, &small_hyper(20, 1e-4), &mut rng).unwrap();
        let ledger = MeasurementLedger::new();
        let l = TradeoffWeights {
            lambda1: 0.3,
            lambda2: 0.7,
        };
        let a = infer_design(&net, &w.devices[1], l).unwrap();
        assert_eq!(a, infer_design(&net, &w.devices[1], l).unwrap());
        assert_eq!(ledger.total(), 0);
        let enc = net.encoding(&w.devices[1], l).unwrap();
        assert!(enc.0.iter().all(|c| (0.0..=1.0).contains(c)));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("optimizer.json");
        net.save_json(&path).unwrap();
        assert_eq!(OptimizerNetwork::load_json(&path).unwrap(), net);
    }

    #[test]
    fn sweep_accounting_and_unbounded_case() {
        let w = world();
        let pairs = OptimizerTrainingSet::product(&w.devices, &build_lambda_grid(4, 1.0).unwrap()).inputs;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (net, _) = train_method2(&pairs, &w.predictors, &small_hyper(100, 1e-4), &mut rng).unwrap();
        let ledger = MeasurementLedger::new();
        let oracle = Oracle::new(&w.space, &ledger);
        let d = &w.devices[2];
        let grid = build_lambda_grid(8, 10.0).unwrap();
        let free = constraint_sweep(&net, &w.predictors, d, &ConstraintSpec::default(), &grid, &oracle).unwrap();
        assert_eq!(free.lambda, TradeoffWeights::zero());
        assert_eq!(free.design, infer_design(&net, d, TradeoffWeights::zero()).unwrap());
        assert_eq!(ledger.snapshot().device_total(&d.id), 2);

        let lat0 = free.measured_latency;
        let tight = constraint_sweep(
            &net,
            &w.predictors,
            d,
            &ConstraintSpec::latency(0.5 * lat0),
            &grid,
            &oracle,
        )
        .unwrap();
        assert_eq!(ledger.snapshot().device_total(&d.id), 4);
        assert_eq!(tight.rows.iter().filter(|r| r.chosen).count(), 1);
        assert!(tight.rows.iter().all(|r| r.lambda1 == 0.0));
        let mut buf = Vec::new();
        tight.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("lambda1,lambda2,predicted_feasible,predicted_accuracy,chosen\n"));
    }

    #[test]
    fn fine_tune_never_worsens() {
        let w = world();
        let d = &w.devices[0];
        let l = TradeoffWeights {
            lambda1: 0.2,
            lambda2: 0.4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = |x: &DesignPoint| w.predictors.objective_of(x, d, l).unwrap();
        let (global, _) = brute_force_argmin(f, &w.space, 128).unwrap();
        for _ in 0..20 {
            let seed = w.space.sample_uniform(&mut rng);
            assert_eq!(fine_tune(&seed, d, l, &w.predictors, 0, 100).unwrap(), seed);
            let r = fine_tune(&seed, d, l, &w.predictors, 2, 1000).unwrap();
            assert!(f(&r) <= f(&seed));
            assert!(r.hamming(&seed) <= 2);
            if seed.hamming(&global) <= 2 {
                assert_eq!(r, global);
            }
            let capped = fine_tune(&seed, d, l, &w.predictors, 7, 1).unwrap();
            assert_eq!(capped, seed);
        }
    }
}
