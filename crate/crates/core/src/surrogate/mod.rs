//! Performance predictors and the predicted objective.
//!
//! Accuracy predictors take the encoded design only. Latency and energy
//! predictors are either device-specific (trained on one device, design
//! input only) or device-aware (design encoding concatenated with the
//! device's log-scaled feature vector). Latency and energy networks fit the
//! logarithm of the measured value.
//!
//! In the predicted objective
//! `f̂ = −Acc + λ1·Energy/energy_scale + λ2·Latency/latency_scale`
//! the cost terms are divided by the median of the Stage-1 training labels so
//! the weights are dimensionless.

pub mod mlp;

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::{DesignPoint, DesignSpace};
use crate::device_world::{DeviceFeatures, Metric, Oracle};
use crate::error::{Error, Result};

pub use mlp::{
    fit, Affine, FitReport, Gradients, MlpRegressor, Momentum, OutputActivation, TargetTransform, Trace,
    TrainingSample, TrainingSettings,
};

/// Non-negative trade-off weights: `lambda1` on energy, `lambda2` on latency.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TradeoffWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl TradeoffWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda1.is_finite() && lambda2.is_finite()) {
            return Err(Error::invalid(format!(
                "trade-off weights must be ≥ 0, got ({lambda1}, {lambda2})"
            )));
        }
        Ok(Self { lambda1, lambda2 })
    }

    pub fn zero() -> Self {
        Self::default()
    }
}

/// Divisors that make latency and energy dimensionless in the objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveScale {
    pub latency: f64,
    pub energy: f64,
}

impl ObjectiveScale {
    pub fn unit() -> Self {
        Self {
            latency: 1.0,
            energy: 1.0,
        }
    }

    /// Medians of the given label sets.
    pub fn from_labels(latency: &[f64], energy: &[f64]) -> Result<Self> {
        let scale = Self {
            latency: median(latency)?,
            energy: median(energy)?,
        };
        if !(scale.latency > 0.0 && scale.energy > 0.0) {
            return Err(Error::invalid("objective scale must be positive"));
        }
        Ok(scale)
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Latency => self.latency,
            Metric::Energy => self.energy,
        }
    }
}

/// Median with the two middle values averaged for even lengths.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("median of empty set".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Median of `|pred − truth| / |truth|`.
pub fn median_relative_error(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: truth.len(),
        });
    }
    let errs: Vec<f64> = predicted
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs() / t.abs().max(f64::MIN_POSITIVE))
        .collect();
    median(&errs)
}

/// Network sizes and optimizer settings shared by the predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorHyper {
    pub hidden: Vec<usize>,
    pub training: TrainingSettings,
}

impl Default for PredictorHyper {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            training: TrainingSettings::default(),
        }
    }
}

impl PredictorHyper {
    pub fn layer_sizes(&self, input: usize) -> Vec<usize> {
        let mut sizes = vec![input];
        sizes.extend(&self.hidden);
        sizes.push(1);
        sizes
    }
}

/// Whether latency/energy predictors see device features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum PredictorKind {
    /// Trained on one device; absolute values only valid there.
    DeviceSpecific { device_id: String },
    /// Input is design encoding ⊕ device features.
    DeviceAware,
}

/// Accuracy, latency and energy predictors plus objective scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSet {
    pub space: DesignSpace,
    pub kind: PredictorKind,
    pub accuracy: MlpRegressor,
    pub latency: MlpRegressor,
    pub energy: MlpRegressor,
    pub scale: ObjectiveScale,
}

#[derive(Serialize, Deserialize)]
struct PredictorManifest {
    space: DesignSpace,
    kind: PredictorKind,
    scale: ObjectiveScale,
    accuracy: String,
    latency: String,
    energy: String,
}

fn sample_designs<R: Rng + ?Sized>(space: &DesignSpace, n: usize, rng: &mut R) -> Vec<DesignPoint> {
    (0..n).map(|_| space.sample_uniform(rng)).collect()
}

fn encode_all(space: &DesignSpace, designs: &[DesignPoint]) -> Result<Vec<Vec<f64>>> {
    designs.iter().map(|x| Ok(space.encode(x)?.0)).collect()
}

fn transform_for(metric: Option<Metric>) -> TargetTransform {
    match metric {
        None => TargetTransform::Identity,
        Some(_) => TargetTransform::Log,
    }
}

/// Fits the accuracy predictor on the given designs, measuring each once.
pub fn train_accuracy_predictor_on<R: Rng + ?Sized>(
    space: &DesignSpace,
    designs: &[DesignPoint],
    oracle: &Oracle<'_>,
    hyper: &PredictorHyper,
    rng: &mut R,
) -> Result<(MlpRegressor, FitReport)> {
    if designs.len() < 2 {
        return Err(Error::InsufficientData(format!("{} designs", designs.len())));
    }
    let inputs = encode_all(space, designs)?;
    let samples: Vec<TrainingSample> = inputs
        .into_iter()
        .zip(designs)
        .map(|(input, x)| TrainingSample {
            input,
            label: oracle.accuracy(x),
        })
        .collect();
    let (mut model, report) = fit(
        &samples,
        &hyper.layer_sizes(space.dims()),
        transform_for(None),
        &hyper.training,
        rng,
    )?;
    model.tag = "accuracy".into();
    Ok((model, report))
}

/// Samples `n_samples` designs uniformly and fits the accuracy predictor.
pub fn train_accuracy_predictor<R: Rng + ?Sized>(
    space: &DesignSpace,
    n_samples: usize,
    oracle: &Oracle<'_>,
    hyper: &PredictorHyper,
    rng: &mut R,
) -> Result<(MlpRegressor, FitReport)> {
    if n_samples < 2 {
        return Err(Error::InsufficientData(format!("{n_samples} samples")));
    }
    let designs = sample_designs(space, n_samples, rng);
    train_accuracy_predictor_on(space, &designs, oracle, hyper, rng)
}

/// Fits a latency or energy predictor for the single device `d0`.
pub fn train_device_specific_predictor_on<R: Rng + ?Sized>(
    metric: Metric,
    space: &DesignSpace,
    d0: &DeviceFeatures,
    designs: &[DesignPoint],
    oracle: &Oracle<'_>,
    hyper: &PredictorHyper,
    rng: &mut R,
) -> Result<(MlpRegressor, FitReport)> {
    if designs.len() < 2 {
        return Err(Error::InsufficientData(format!("{} designs", designs.len())));
    }
    let inputs = encode_all(space, designs)?;
    let samples: Vec<TrainingSample> = inputs
        .into_iter()
        .zip(designs)
        .map(|(input, x)| TrainingSample {
            input,
            label: oracle.measure(metric, x, d0),
        })
        .collect();
    let (mut model, report) = fit(
        &samples,
        &hyper.layer_sizes(space.dims()),
        transform_for(Some(metric)),
        &hyper.training,
        rng,
    )?;
    model.tag = format!("{metric}@{}", d0.id);
    Ok((model, report))
}

/// Fits a device-specific latency or energy predictor on labels that were
/// already measured.
pub fn fit_labeled<R: Rng + ?Sized>(
    metric: Metric,
    space: &DesignSpace,
    d0: &DeviceFeatures,
    designs: &[DesignPoint],
    labels: &[f64],
    hyper: &PredictorHyper,
    rng: &mut R,
) -> Result<(MlpRegressor, FitReport)> {
    if designs.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: designs.len(),
            right: labels.len(),
        });
    }
    if designs.len() < 2 {
        return Err(Error::InsufficientData(format!("{} designs", designs.len())));
    }
    let samples: Vec<TrainingSample> = encode_all(space, designs)?
        .into_iter()
        .zip(labels)
        .map(|(input, &label)| TrainingSample { input, label })
        .collect();
    let (mut model, report) = fit(
        &samples,
        &hyper.layer_sizes(space.dims()),
        transform_for(Some(metric)),
        &hyper.training,
        rng,
    )?;
    model.tag = format!("{metric}@{}", d0.id);
    Ok((model, report))
}

pub fn train_device_specific_predictor<R: Rng + ?Sized>(
    metric: Metric,
    space: &DesignSpace,
    d0: &DeviceFeatures,
    n_samples: usize,
    oracle: &Oracle<'_>,
    hyper: &PredictorHyper,
    rng: &mut R,
) -> Result<(MlpRegressor, FitReport)> {
    if n_samples < 2 {
        return Err(Error::InsufficientData(format!("{n_samples} samples")));
    }
    let designs = sample_designs(space, n_samples, rng);
    train_device_specific_predictor_on(metric, space, d0, &designs, oracle, hyper, rng)
}

/// Fits a device-aware predictor on independently sampled designs for each
/// device. Needs at least two devices.
pub fn train_device_aware_predictor<R: Rng + ?Sized>(
    metric: Metric,
    space: &DesignSpace,
    devices: &[DeviceFeatures],
    designs_per_device: usize,
    oracle: &Oracle<'_>,
    hyper: &PredictorHyper,
    rng: &mut R,
) -> Result<(MlpRegressor, FitReport)> {
    if devices.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "device-aware predictors need ≥ 2 devices, got {}",
            devices.len()
        )));
    }
    let mut samples = Vec::with_capacity(devices.len() * designs_per_device);
    for d in devices {
        let features = d.feature_vector(space);
        for x in sample_designs(space, designs_per_device, rng) {
            let mut input = space.encode(&x)?.0;
            input.extend_from_slice(&features);
            samples.push(TrainingSample {
                input,
                label: oracle.measure(metric, &x, d),
            });
        }
    }
    let input_dim = space.dims() + DeviceFeatures::feature_len(space);
    let (mut model, report) = fit(
        &samples,
        &hyper.layer_sizes(input_dim),
        transform_for(Some(metric)),
        &hyper.training,
        rng,
    )?;
    model.tag = format!("{metric}@device-aware");
    Ok((model, report))
}

/// Trains accuracy, latency and energy predictors on one proxy device over a
/// shared design sample. Charges `n_samples` accuracy, latency and energy
/// measurements.
pub fn train_proxy_predictors<R: Rng + ?Sized>(
    space: &DesignSpace,
    d0: &DeviceFeatures,
    n_samples: usize,
    oracle: &Oracle<'_>,
    hyper: &PredictorHyper,
    rng: &mut R,
) -> Result<(PredictorSet, [FitReport; 3])> {
    if n_samples < 2 {
        return Err(Error::InsufficientData(format!("{n_samples} samples")));
    }
    let designs = sample_designs(space, n_samples, rng);
    train_proxy_predictors_on(space, d0, &designs, oracle, hyper, rng)
}

pub fn train_proxy_predictors_on<R: Rng + ?Sized>(
    space: &DesignSpace,
    d0: &DeviceFeatures,
    designs: &[DesignPoint],
    oracle: &Oracle<'_>,
    hyper: &PredictorHyper,
    rng: &mut R,
) -> Result<(PredictorSet, [FitReport; 3])> {
    let data = StageOneData::collect(space, std::slice::from_ref(d0), designs, oracle)?;
    let (mut set, reports) = data.fit_with_kind(
        space,
        PredictorKind::DeviceSpecific {
            device_id: d0.id.clone(),
        },
        hyper,
        rng,
    )?;
    for m in [&mut set.latency, &mut set.energy] {
        m.tag = m.tag.replace("device-aware", &d0.id);
    }
    Ok((set, reports))
}

/// Measured Stage-1 data: a design set shared by every training device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOneData {
    pub designs: Vec<DesignPoint>,
    pub accuracy: Vec<f64>,
    pub devices: Vec<DeviceFeatures>,
    /// `latency[device][design]`
    pub latency: Vec<Vec<f64>>,
    pub energy: Vec<Vec<f64>>,
}

impl StageOneData {
    /// Measures accuracy once per design and latency/energy on every device.
    pub fn collect(
        space: &DesignSpace,
        devices: &[DeviceFeatures],
        designs: &[DesignPoint],
        oracle: &Oracle<'_>,
    ) -> Result<Self> {
        let mut data = Self {
            designs: Vec::new(),
            accuracy: Vec::new(),
            devices: devices.to_vec(),
            latency: vec![Vec::new(); devices.len()],
            energy: vec![Vec::new(); devices.len()],
        };
        data.extend(space, designs, oracle)?;
        Ok(data)
    }

    pub fn extend(&mut self, space: &DesignSpace, designs: &[DesignPoint], oracle: &Oracle<'_>) -> Result<()> {
        for x in designs {
            space.check(x)?;
            self.accuracy.push(oracle.accuracy(x));
            for (k, d) in self.devices.iter().enumerate() {
                self.latency[k].push(oracle.latency(x, d));
                self.energy[k].push(oracle.energy(x, d));
            }
            self.designs.push(x.clone());
        }
        Ok(())
    }

    fn cost_samples(&self, space: &DesignSpace, metric: Metric, with_device: bool) -> Result<Vec<TrainingSample>> {
        let encoded = encode_all(space, &self.designs)?;
        let labels = match metric {
            Metric::Latency => &self.latency,
            Metric::Energy => &self.energy,
        };
        let mut out = Vec::with_capacity(self.devices.len() * self.designs.len());
        for (k, d) in self.devices.iter().enumerate() {
            let features = d.feature_vector(space);
            for (i, enc) in encoded.iter().enumerate() {
                let mut input = enc.clone();
                if with_device {
                    input.extend_from_slice(&features);
                }
                out.push(TrainingSample {
                    input,
                    label: labels[k][i],
                });
            }
        }
        Ok(out)
    }

    /// Fits device-aware accuracy, latency and energy predictors.
    pub fn fit<R: Rng + ?Sized>(
        &self,
        space: &DesignSpace,
        hyper: &PredictorHyper,
        rng: &mut R,
    ) -> Result<(PredictorSet, [FitReport; 3])> {
        if self.devices.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "device-aware predictors need ≥ 2 devices, got {}",
                self.devices.len()
            )));
        }
        self.fit_with_kind(space, PredictorKind::DeviceAware, hyper, rng)
    }

    /// Fits with an explicit predictor kind; device-specific kinds expect
    /// a single device.
    pub fn fit_with_kind<R: Rng + ?Sized>(
        &self,
        space: &DesignSpace,
        kind: PredictorKind,
        hyper: &PredictorHyper,
        rng: &mut R,
    ) -> Result<(PredictorSet, [FitReport; 3])> {
        let with_device = kind == PredictorKind::DeviceAware;
        let acc_samples: Vec<TrainingSample> = encode_all(space, &self.designs)?
            .into_iter()
            .zip(&self.accuracy)
            .map(|(input, &label)| TrainingSample { input, label })
            .collect();
        let cost_dim = space.dims()
            + if with_device {
                DeviceFeatures::feature_len(space)
            } else {
                0
            };

        let (mut accuracy, acc_report) = fit(
            &acc_samples,
            &hyper.layer_sizes(space.dims()),
            TargetTransform::Identity,
            &hyper.training,
            rng,
        )?;
        accuracy.tag = "accuracy".into();
        let lat_samples = self.cost_samples(space, Metric::Latency, with_device)?;
        let (mut latency, lat_report) = fit(
            &lat_samples,
            &hyper.layer_sizes(cost_dim),
            TargetTransform::Log,
            &hyper.training,
            rng,
        )?;
        latency.tag = "latency@device-aware".into();
        let en_samples = self.cost_samples(space, Metric::Energy, with_device)?;
        let (mut energy, en_report) = fit(
            &en_samples,
            &hyper.layer_sizes(cost_dim),
            TargetTransform::Log,
            &hyper.training,
            rng,
        )?;
        energy.tag = "energy@device-aware".into();

        let all_lat: Vec<f64> = self.latency.iter().flatten().copied().collect();
        let all_en: Vec<f64> = self.energy.iter().flatten().copied().collect();
        let set = PredictorSet {
            space: space.clone(),
            kind,
            accuracy,
            latency,
            energy,
            scale: ObjectiveScale::from_labels(&all_lat, &all_en)?,
        };
        Ok((set, [acc_report, lat_report, en_report]))
    }
}

/// Per-round record of [`iterative_fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub designs: usize,
    pub latency_loss: f64,
    pub energy_loss: f64,
    pub accuracy_loss: f64,
}

/// Exploration loop: each round draws `explore_size` designs uniformly,
/// measures them on every training device, appends them to the data set
/// and refits all three predictors.
pub fn iterative_fit<R: Rng + ?Sized>(
    predictors: &mut PredictorSet,
    data: &mut StageOneData,
    rounds: usize,
    explore_size: usize,
    oracle: &Oracle<'_>,
    hyper: &PredictorHyper,
    rng: &mut R,
) -> Result<Vec<RoundReport>> {
    let space = predictors.space.clone();
    let mut reports = Vec::with_capacity(rounds);
    for round in 1..=rounds {
        let explore = sample_designs(&space, explore_size, rng);
        data.extend(&space, &explore, oracle)?;
        let (set, [acc, lat, en]) = match &predictors.kind {
            PredictorKind::DeviceAware => data.fit(&space, hyper, rng)?,
            kind => data.fit_with_kind(&space, kind.clone(), hyper, rng)?,
        };
        let (lat_tag, en_tag) = (predictors.latency.tag.clone(), predictors.energy.tag.clone());
        *predictors = set;
        predictors.latency.tag = lat_tag;
        predictors.energy.tag = en_tag;
        reports.push(RoundReport {
            round,
            designs: data.designs.len(),
            latency_loss: lat.final_loss,
            energy_loss: en.final_loss,
            accuracy_loss: acc.final_loss,
        });
    }
    Ok(reports)
}

impl PredictorSet {
    pub fn is_device_aware(&self) -> bool {
        self.kind == PredictorKind::DeviceAware
    }

    pub fn ensure_trained(&self) -> Result<()> {
        for m in [&self.accuracy, &self.latency, &self.energy] {
            if !m.trained {
                return Err(Error::UntrainedModel(m.tag.clone()));
            }
        }
        Ok(())
    }

    fn cost_input(&self, x_enc: &[f64], d: &DeviceFeatures) -> Vec<f64> {
        let mut input = x_enc.to_vec();
        if self.is_device_aware() {
            input.extend(d.feature_vector(&self.space));
        }
        input
    }

    fn cost_model(&self, metric: Metric) -> &MlpRegressor {
        match metric {
            Metric::Latency => &self.latency,
            Metric::Energy => &self.energy,
        }
    }

    pub fn predict_accuracy(&self, x_enc: &[f64]) -> Result<f64> {
        self.accuracy.predict(x_enc)
    }

    /// Predicted absolute latency (ms) or energy (mJ).
    pub fn predict_metric(&self, metric: Metric, x_enc: &[f64], d: &DeviceFeatures) -> Result<f64> {
        self.cost_model(metric).predict(&self.cost_input(x_enc, d))
    }

    /// Predicted metric divided by its objective scale.
    pub fn predict_normalized(&self, metric: Metric, x_enc: &[f64], d: &DeviceFeatures) -> Result<f64> {
        Ok(self.predict_metric(metric, x_enc, d)? / self.scale.get(metric))
    }

    /// `−Acc + λ1·Energy/scale_E + λ2·Latency/scale_L`.
    pub fn predicted_objective(&self, x_enc: &[f64], d: &DeviceFeatures, lambda: TradeoffWeights) -> Result<f64> {
        self.ensure_trained()?;
        let mut f = -self.predict_accuracy(x_enc)?;
        if lambda.lambda1 != 0.0 {
            f += lambda.lambda1 * self.predict_normalized(Metric::Energy, x_enc, d)?;
        }
        if lambda.lambda2 != 0.0 {
            f += lambda.lambda2 * self.predict_normalized(Metric::Latency, x_enc, d)?;
        }
        Ok(f)
    }

    /// Predicted objective of a discrete design.
    pub fn objective_of(&self, x: &DesignPoint, d: &DeviceFeatures, lambda: TradeoffWeights) -> Result<f64> {
        self.predicted_objective(&self.space.encode(x)?.0, d, lambda)
    }

    /// Value of the predicted objective and its gradient with respect to the
    /// design encoding.
    pub fn objective_gradient(
        &self,
        x_enc: &[f64],
        d: &DeviceFeatures,
        lambda: TradeoffWeights,
    ) -> Result<(f64, Vec<f64>)> {
        self.ensure_trained()?;
        let n = self.space.dims();
        if x_enc.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x_enc.len(),
            });
        }
        let (acc, acc_grad) = self.accuracy.value_and_input_gradient(x_enc)?;
        let mut value = -acc;
        let mut grad: Vec<f64> = acc_grad.iter().map(|g| -g).collect();
        for (metric, weight) in [(Metric::Energy, lambda.lambda1), (Metric::Latency, lambda.lambda2)] {
            if weight == 0.0 {
                continue;
            }
            let model = self.cost_model(metric);
            let input = self.cost_input(x_enc, d);
            let coef = weight / self.scale.get(metric);
            let (v, g) = model.value_and_input_gradient(&input)?;
            value += weight * (v / self.scale.get(metric));
            for (acc, gi) in grad.iter_mut().zip(&g[..n]) {
                *acc += coef * gi;
            }
        }
        Ok((value, grad))
    }

    /// Hash of every parameter bit pattern; changes if any weight changes.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for m in [&self.accuracy, &self.latency, &self.energy] {
            for p in m.params_flat() {
                p.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Writes `accuracy.json`, `latency.json`, `energy.json` and a
    /// `predictor_set.json` manifest into `dir`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let names = ["accuracy.json", "latency.json", "energy.json"];
        for (name, model) in names.iter().zip([&self.accuracy, &self.latency, &self.energy]) {
            let path = dir.join(name);
            std::fs::write(&path, serde_json::to_string(model)?).map_err(|e| Error::io(&path, e))?;
        }
        let manifest = PredictorManifest {
            space: self.space.clone(),
            kind: self.kind.clone(),
            scale: self.scale,
            accuracy: names[0].into(),
            latency: names[1].into(),
            energy: names[2].into(),
        };
        let path = dir.join("predictor_set.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
        };
        let manifest: PredictorManifest = serde_json::from_str(&read("predictor_set.json")?)?;
        Ok(Self {
            accuracy: serde_json::from_str(&read(&manifest.accuracy)?)?,
            latency: serde_json::from_str(&read(&manifest.latency)?)?,
            energy: serde_json::from_str(&read(&manifest.energy)?)?,
            space: manifest.space,
            kind: manifest.kind,
            scale: manifest.scale,
        })
    }
}

/// Free-function form of [`PredictorSet::predicted_objective`].
pub fn predicted_objective(
    x_enc: &[f64],
    d: &DeviceFeatures,
    lambda: TradeoffWeights,
    predictors: &PredictorSet,
) -> Result<f64> {
    predictors.predicted_objective(x_enc, d, lambda)
}
