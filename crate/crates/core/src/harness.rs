//! Scenario configuration and the end-to-end pipelines behind the CLI.
//!
//! A scenario is one JSON file. Keys starting with `_` are comments and are
//! dropped before parsing; every other key must be known. Only `seed`,
//! `space` and `approach` are mandatory.
//!
//! Random streams are split by purpose (fleet, Stage 1, optimizer training,
//! one per target device), so decisions for target devices do not depend on
//! whether Stage 1 was run or reloaded from disk.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::{DesignPoint, DesignSpace};
use crate::device_world::{
    generate_fleet, model_accuracy, model_energy, model_latency, sample_adversarial, sample_monotone, DeviceFeatures,
    DeviceKind, Fleet, FleetConfig, LedgerSnapshot, MeasurementLedger, Oracle,
};
use crate::error::{Error, Result};
use crate::learn_to_optimize::{
    build_lambda_grid, constraint_sweep, generate_labels_method1, train_method1, train_method2, OptimizerHyper,
    OptimizerNetwork, OptimizerTrainingSet, SweepOutcome,
};
use crate::proxy_reuse::{
    add_target_as_proxy, bisection_optimize, check_monotonicity, grid_optimize_2d, match_proxy, BisectionOutcome,
    BisectionSettings, ExactProxy, GridSettings, MatchSettings, PredictorProxy, ProxyEntry, ProxyPool, TCache,
    TCache2d,
};
use crate::search::{
    brute_force_argmin, evolutionary_search, relaxed_objective_true, ConstraintSpec, InnerSolver, SearchParams,
};
use crate::surrogate::{
    iterative_fit, ObjectiveScale, PredictorHyper, PredictorKind, PredictorSet, StageOneData, TradeoffWeights,
};

const STREAM_FLEET: u64 = 1;
const STREAM_STAGE_ONE: u64 = 2;
const STREAM_OPTIMIZER: u64 = 3;
const STREAM_BOUNDS: u64 = 4;
const STREAM_TARGET_BASE: u64 = 1000;

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    ProxyReuse,
    LearnToOptimize,
}

impl Approach {
    pub fn as_str(self) -> &'static str {
        match self {
            Approach::ProxyReuse => "proxy_reuse",
            Approach::LearnToOptimize => "learn_to_optimize",
        }
    }

    /// Accepts the full names and the short CLI aliases `proxy` / `amortized`.
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "proxy" | "proxy_reuse" => Some(Approach::ProxyReuse),
            "amortized" | "learn_to_optimize" => Some(Approach::LearnToOptimize),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageOneSettings {
    pub samples_per_device: usize,
    /// Extra exploration rounds after the initial fit.
    pub rounds: usize,
    pub explore_size: usize,
}

impl Default for StageOneSettings {
    fn default() -> Self {
        Self {
            samples_per_device: 500,
            rounds: 0,
            explore_size: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProxySettings {
    /// Check rank agreement with pooled proxies first and train a new proxy
    /// for devices that match none.
    pub verify_monotonicity: bool,
    pub matching: MatchSettings,
    pub bisection: BisectionSettings,
    pub grid: GridSettings,
    pub inner: InnerSolver,
}


#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaGrid {
    pub count_per_axis: usize,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMethod {
    /// Supervised on search labels.
    Supervised,
    /// Through frozen predictors.
    Unsupervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmortizedSettings {
    pub method: TrainingMethod,
    /// Weights paired with every training device.
    pub lambda_grid: LambdaGrid,
    /// Weights tried per new device.
    pub sweep_grid: LambdaGrid,
    pub optimizer: OptimizerHyper,
    /// Label generator for the supervised method.
    pub label_solver: InnerSolver,
}

impl Default for AmortizedSettings {
    fn default() -> Self {
        Self {
            method: TrainingMethod::Unsupervised,
            lambda_grid: LambdaGrid {
                count_per_axis: 4,
                max: 1.0,
            },
            sweep_grid: LambdaGrid {
                count_per_axis: 8,
                max: 10.0,
            },
            optimizer: OptimizerHyper::default(),
            label_solver: InnerSolver::default(),
        }
    }
}

/// Bounds are set per target device at quantiles of its own latency and
/// energy over a design sample, unless an absolute bound is given. Computing
/// them is scenario setup and is not charged to the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundSettings {
    pub latency_quantile: Option<f64>,
    pub energy_quantile: Option<f64>,
    /// Same bound (ms) for every device; overrides the quantile.
    pub latency_absolute: Option<f64>,
    /// Same bound (mJ) for every device; overrides the quantile.
    pub energy_absolute: Option<f64>,
    /// Designs sampled for the quantiles; the whole space if it is smaller.
    pub sample: usize,
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self {
            latency_quantile: Some(0.4),
            energy_quantile: None,
            latency_absolute: None,
            energy_absolute: None,
            sample: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSettings {
    pub samples_per_device: u64,
    pub seconds_per_measurement: f64,
}

impl Default for CostSettings {
    fn default() -> Self {
        Self {
            samples_per_device: 5000,
            seconds_per_measurement: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    pub space: DesignSpace,
    pub approach: Approach,
    #[serde(default)]
    pub fleet: FleetConfig,
    #[serde(default)]
    pub predictor: PredictorHyper,
    #[serde(default)]
    pub stage_one: StageOneSettings,
    #[serde(default)]
    pub proxy: ProxySettings,
    #[serde(default)]
    pub amortized: AmortizedSettings,
    #[serde(default)]
    pub constraints: BoundSettings,
    /// Device lists optimized for; defaults depend on the approach.
    #[serde(default)]
    pub targets: Option<Vec<DeviceKind>>,
    #[serde(default)]
    pub cost: CostSettings,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn config_err(path: &str, message: impl std::fmt::Display) -> Error {
    Error::Config {
        path: path.into(),
        message: message.to_string(),
    }
}

fn strip_comments(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.retain(|k, _| !k.starts_with('_'));
            map.values_mut().for_each(strip_comments);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_comments),
        _ => {}
    }
}

impl Scenario {
    /// Minimal scenario with every optional section at its default.
    pub fn new(seed: u64, space: DesignSpace, approach: Approach) -> Self {
        Self {
            name: String::new(),
            seed,
            space,
            approach,
            fleet: FleetConfig::default(),
            predictor: PredictorHyper::default(),
            stage_one: StageOneSettings::default(),
            proxy: ProxySettings::default(),
            amortized: AmortizedSettings::default(),
            constraints: BoundSettings::default(),
            targets: None,
            cost: CostSettings::default(),
            output_dir: None,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::from_value(Self::parse_json(text)?)
    }

    /// Raw JSON with a config error on malformed input, for callers that
    /// patch keys before [`Scenario::from_value`].
    pub fn parse_json(text: &str) -> Result<serde_json::Value> {
        serde_json::from_str(text).map_err(|e| config_err(&format!("line {}", e.line()), e))
    }

    pub fn from_value(mut value: serde_json::Value) -> Result<Self> {
        strip_comments(&mut value);
        let scenario: Scenario =
            serde_path_to_error::deserialize(value).map_err(|e| config_err(&e.path().to_string(), e.inner()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate().map_err(|e| config_err("space", e))?;
        self.fleet
            .proxy
            .validate(&self.space)
            .map_err(|e| config_err("fleet.proxy", e))?;
        if self.stage_one.samples_per_device < 2 {
            return Err(config_err("stage_one.samples_per_device", "must be ≥ 2"));
        }
        for (key, q) in [
            ("constraints.latency_quantile", self.constraints.latency_quantile),
            ("constraints.energy_quantile", self.constraints.energy_quantile),
        ] {
            if let Some(q) = q {
                if !(q > 0.0 && q <= 1.0) {
                    return Err(config_err(key, format!("quantile must lie in (0, 1], got {q}")));
                }
            }
        }
        for (key, b) in [
            ("constraints.latency_absolute", self.constraints.latency_absolute),
            ("constraints.energy_absolute", self.constraints.energy_absolute),
        ] {
            if let Some(b) = b {
                if !(b > 0.0 && b.is_finite()) {
                    return Err(config_err(key, format!("bound must be positive, got {b}")));
                }
            }
        }
        if self.constraints.sample < 1 {
            return Err(config_err("constraints.sample", "must be ≥ 1"));
        }
        let targets = self.target_kinds();
        if targets.is_empty() {
            return Err(config_err("targets", "no target device lists"));
        }
        if let Some(k) = targets.iter().find(|k| {
            !matches!(
                k,
                DeviceKind::HoldoutMonotone | DeviceKind::HoldoutAdversarial | DeviceKind::HoldoutSynthetic
            )
        }) {
            return Err(config_err("targets", format!("{k:?} is not a holdout list")));
        }
        if self.cost.seconds_per_measurement <= 0.0 || self.cost.samples_per_device == 0 {
            return Err(config_err("cost", "inputs must be positive"));
        }
        match self.approach {
            Approach::ProxyReuse => {
                self.proxy
                    .bisection
                    .validate()
                    .map_err(|e| config_err("proxy.bisection", e))?;
                if self.proxy.verify_monotonicity && self.proxy.matching.probe_count < 10 {
                    return Err(config_err("proxy.matching.probe_count", "must be ≥ 10"));
                }
                if let InnerSolver::Evolutionary { params } = &self.proxy.inner {
                    params.validate().map_err(|e| config_err("proxy.inner.params", e))?;
                }
            }
            Approach::LearnToOptimize => {
                if self.fleet.training_real + self.fleet.synthetic < 2 {
                    return Err(config_err("fleet", "device-aware predictors need ≥ 2 training devices"));
                }
                for (key, g) in [
                    ("amortized.lambda_grid", self.amortized.lambda_grid),
                    ("amortized.sweep_grid", self.amortized.sweep_grid),
                ] {
                    build_lambda_grid(g.count_per_axis, g.max).map_err(|e| config_err(key, e))?;
                }
                self.amortized
                    .optimizer
                    .training
                    .validate()
                    .map_err(|e| config_err("amortized.optimizer.training", e))?;
            }
        }
        self.predictor
            .training
            .validate()
            .map_err(|e| config_err("predictor.training", e))?;
        Ok(())
    }

    pub fn target_kinds(&self) -> Vec<DeviceKind> {
        match (&self.targets, self.approach) {
            (Some(t), _) => t.clone(),
            (None, Approach::ProxyReuse) => vec![DeviceKind::HoldoutMonotone],
            (None, Approach::LearnToOptimize) => vec![DeviceKind::HoldoutSynthetic],
        }
    }

    fn seeded(&self, solver: &InnerSolver) -> InnerSolver {
        match solver {
            InnerSolver::Evolutionary { params } => InnerSolver::Evolutionary {
                params: params.with_seed(params.seed.wrapping_add(self.seed)),
            },
            other => other.clone(),
        }
    }
}

/// Nearest-rank quantile: the `⌈q·n⌉`-th smallest value.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("quantile of nothing".into()));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("quantile must lie in (0, 1], got {q}")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Ok(v[rank - 1])
}

/// Uncharged bounds for `d` according to `settings`.
pub fn target_bounds(
    space: &DesignSpace,
    d: &DeviceFeatures,
    settings: &BoundSettings,
    seed: u64,
) -> Result<ConstraintSpec> {
    let designs = match space.cardinality() {
        Ok(n) if n <= settings.sample as u128 => space.enumerate_all(n)?,
        _ => {
            let mut rng = stream(seed, STREAM_BOUNDS);
            (0..settings.sample).map(|_| space.sample_uniform(&mut rng)).collect()
        }
    };
    let pick = |q: Option<f64>, f: &dyn Fn(&DesignPoint) -> f64| -> Result<Option<f64>> {
        q.map(|q| quantile(&designs.iter().map(f).collect::<Vec<_>>(), q))
            .transpose()
    };
    Ok(ConstraintSpec {
        latency_bound: match settings.latency_absolute {
            Some(b) => Some(b),
            None => pick(settings.latency_quantile, &|x| model_latency(space, x, d))?,
        },
        energy_bound: match settings.energy_absolute {
            Some(b) => Some(b),
            None => pick(settings.energy_quantile, &|x| model_energy(space, x, d))?,
        },
    })
}

/// Decision and evaluation for one target device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceResult {
    pub device_id: String,
    pub kind: DeviceKind,
    pub design: DesignPoint,
    pub latency_bound: Option<f64>,
    pub energy_bound: Option<f64>,
    /// `t` (or `(t1, t2)`) for proxy reuse, `λ` for the learned optimizer.
    pub tradeoff: (f64, f64),
    /// The approach's own feasibility verdict from its measurements.
    pub feasible: bool,
    /// Oracle measurements charged to this device.
    pub measurements: u64,
    pub proxy_id: Option<String>,
    pub new_proxy: bool,
    /// Ground truth for evaluation only; never charged.
    pub true_accuracy: f64,
    pub true_latency: f64,
    pub true_energy: f64,
    pub true_feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: String,
    pub measurements: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub label: String,
    pub devices: u64,
    pub measurements_per_device: f64,
    pub total_measurements: f64,
    pub hours: f64,
    pub ratio_vs_baseline: Option<f64>,
}

/// Per-device model building at `samples` measurements of `seconds` each,
/// for `device_count` devices.
pub fn cost_accounting(samples_per_device: u64, seconds_per_measurement: f64, device_count: u64) -> Vec<CostRow> {
    if device_count == 0 {
        return Vec::new();
    }
    let per_device = samples_per_device as f64;
    let total = per_device * device_count as f64;
    vec![CostRow {
        label: "per_device_baseline".into(),
        devices: device_count,
        measurements_per_device: per_device,
        total_measurements: total,
        hours: total * seconds_per_measurement / 3600.0,
        ratio_vs_baseline: Some(1.0),
    }]
}

/// Baseline row, then the one-time Stage-1 cost of `report`, then its
/// worst per-device cost scaled to `device_count` new devices.
pub fn compare_costs(
    samples_per_device: u64,
    seconds_per_measurement: f64,
    device_count: u64,
    report: &RunReport,
) -> Vec<CostRow> {
    let mut rows = cost_accounting(samples_per_device, seconds_per_measurement, device_count);
    let Some(baseline) = rows.first().map(|r| r.total_measurements) else {
        return rows;
    };
    let stage_one = report.stage_count("stage1") as f64;
    rows.push(CostRow {
        label: format!("{}_stage1_once", report.approach.as_str()),
        devices: 0,
        measurements_per_device: 0.0,
        total_measurements: stage_one,
        hours: stage_one * seconds_per_measurement / 3600.0,
        ratio_vs_baseline: None,
    });
    let worst = report.devices.iter().map(|d| d.measurements).max().unwrap_or(0) as f64;
    let total = worst * device_count as f64;
    rows.push(CostRow {
        label: format!("{}_per_device", report.approach.as_str()),
        devices: device_count,
        measurements_per_device: worst,
        total_measurements: total,
        hours: total * seconds_per_measurement / 3600.0,
        ratio_vs_baseline: (total > 0.0).then(|| baseline / total),
    });
    rows
}

pub fn write_cost_csv<W: Write>(rows: &[CostRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "label",
        "devices",
        "measurements_per_device",
        "total_measurements",
        "hours",
        "ratio_vs_baseline",
    ])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.devices.to_string(),
            r.measurements_per_device.to_string(),
            r.total_measurements.to_string(),
            format!("{:.2}", r.hours),
            r.ratio_vs_baseline.map_or(String::new(), |v| v.to_string()),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<cost csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub approach: Approach,
    pub devices: Vec<DeviceResult>,
    pub stages: Vec<StageCount>,
    pub ledger: LedgerSnapshot,
    pub cost: Vec<CostRow>,
    pub infeasible: bool,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn stage_count(&self, stage: &str) -> u64 {
        self.stages
            .iter()
            .filter(|s| s.stage == stage)
            .map(|s| s.measurements)
            .sum()
    }

    /// The report with wall-time cleared, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

/// Trained models of a run.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModels {
    Proxy {
        pool: ProxyPool,
    },
    Amortized {
        predictors: PredictorSet,
        optimizer: OptimizerNetwork,
    },
}

impl TrainedModels {
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        match self {
            TrainedModels::Proxy { pool } => pool.save_dir(&dir.join("proxy_pool")),
            TrainedModels::Amortized { predictors, optimizer } => {
                predictors.save_dir(&dir.join("predictors"))?;
                optimizer.save_json(&dir.join("optimizer.json"))
            }
        }
    }

    pub fn load_dir(dir: &Path, scenario: &Scenario) -> Result<Self> {
        Ok(match scenario.approach {
            Approach::ProxyReuse => TrainedModels::Proxy {
                pool: ProxyPool::load_dir(&dir.join("proxy_pool"), scenario.proxy.bisection.granularity)?,
            },
            Approach::LearnToOptimize => TrainedModels::Amortized {
                predictors: PredictorSet::load_dir(&dir.join("predictors"))?,
                optimizer: OptimizerNetwork::load_json(&dir.join("optimizer.json"))?,
            },
        })
    }
}

/// Per-device search record exported next to the report.
#[derive(Debug, Clone, PartialEq)]
pub enum DeviceTrace {
    Bisection(BisectionOutcome),
    Sweep(SweepOutcome),
    Grid,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub fleet: Fleet,
    /// Models as they were after Stage 1, before any new-device work.
    pub models: TrainedModels,
    pub traces: Vec<(String, DeviceTrace)>,
}

/// Where Stage 1 comes from.
#[derive(Debug, Clone)]
pub enum StageOneSource {
    Train,
    /// A previous run's output directory (`fleet.json` and `models/`).
    Reload(PathBuf),
}

struct StageTally<'a> {
    ledger: &'a MeasurementLedger,
    counts: Vec<StageCount>,
}

impl<'a> StageTally<'a> {
    fn charge<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let before = self.ledger.total();
        let out = f()?;
        let spent = self.ledger.total() - before;
        match self.counts.iter_mut().find(|s| s.stage == stage) {
            Some(s) => s.measurements += spent,
            None => self.counts.push(StageCount {
                stage: stage.into(),
                measurements: spent,
            }),
        }
        Ok(out)
    }
}

fn train_models(
    scenario: &Scenario,
    fleet: &Fleet,
    oracle: &Oracle<'_>,
    tally: &mut StageTally<'_>,
) -> Result<TrainedModels> {
    let space = &scenario.space;
    let mut rng = stream(scenario.seed, STREAM_STAGE_ONE);
    let so = &scenario.stage_one;
    match scenario.approach {
        Approach::ProxyReuse => {
            let predictors = tally.charge("stage1", || {
                let designs: Vec<DesignPoint> = (0..so.samples_per_device)
                    .map(|_| space.sample_uniform(&mut rng))
                    .collect();
                let mut data = StageOneData::collect(space, std::slice::from_ref(&fleet.proxy), &designs, oracle)?;
                let kind = PredictorKind::DeviceSpecific {
                    device_id: fleet.proxy.id.clone(),
                };
                let (mut set, _) = data.fit_with_kind(space, kind, &scenario.predictor, &mut rng)?;
                for m in [&mut set.latency, &mut set.energy] {
                    m.tag = m.tag.replace("device-aware", &fleet.proxy.id);
                }
                iterative_fit(
                    &mut set,
                    &mut data,
                    so.rounds,
                    so.explore_size,
                    oracle,
                    &scenario.predictor,
                    &mut rng,
                )?;
                Ok(set)
            })?;
            log::info!("stage 1: proxy predictors trained on {}", fleet.proxy.id);
            Ok(TrainedModels::Proxy {
                pool: ProxyPool::new(vec![ProxyEntry::new(
                    fleet.proxy.clone(),
                    predictors,
                    scenario.proxy.bisection.granularity,
                )]),
            })
        }
        Approach::LearnToOptimize => {
            let devices = fleet.training_devices();
            let predictors = tally.charge("stage1", || {
                let designs: Vec<DesignPoint> = (0..so.samples_per_device)
                    .map(|_| space.sample_uniform(&mut rng))
                    .collect();
                let mut data = StageOneData::collect(space, &devices, &designs, oracle)?;
                let (mut set, _) = data.fit(space, &scenario.predictor, &mut rng)?;
                iterative_fit(
                    &mut set,
                    &mut data,
                    so.rounds,
                    so.explore_size,
                    oracle,
                    &scenario.predictor,
                    &mut rng,
                )?;
                Ok(set)
            })?;
            log::info!("stage 1: device-aware predictors trained on {} devices", devices.len());
            let am = &scenario.amortized;
            let lambdas = build_lambda_grid(am.lambda_grid.count_per_axis, am.lambda_grid.max)?;
            let mut rng = stream(scenario.seed, STREAM_OPTIMIZER);
            let (optimizer, report) = match am.method {
                TrainingMethod::Supervised => {
                    let set =
                        generate_labels_method1(&devices, &lambdas, &predictors, &scenario.seeded(&am.label_solver))?;
                    train_method1(&set, space, &am.optimizer, &mut rng)?
                }
                TrainingMethod::Unsupervised => {
                    let pairs = OptimizerTrainingSet::product(&devices, &lambdas).inputs;
                    train_method2(&pairs, &predictors, &am.optimizer, &mut rng)?
                }
            };
            log::info!("optimizer network trained, final loss {:.6}", report.final_loss);
            Ok(TrainedModels::Amortized { predictors, optimizer })
        }
    }
}

/// The fleet a scenario's seed generates.
pub fn scenario_fleet(scenario: &Scenario) -> Result<Fleet> {
    let fleet = generate_fleet(&scenario.fleet, &mut stream(scenario.seed, STREAM_FLEET));
    fleet.validate(&scenario.space)?;
    Ok(fleet)
}

/// Stage 1 alone, exported as `fleet.json`, `models/`, `stages.csv` and
/// `ledger.csv` under `dir`. Its output can be reused with
/// [`StageOneSource::Reload`].
pub fn train_and_export(scenario: &Scenario, dir: &Path) -> Result<Vec<StageCount>> {
    scenario.validate()?;
    let ledger = MeasurementLedger::new();
    let oracle = Oracle::new(&scenario.space, &ledger);
    let mut tally = StageTally {
        ledger: &ledger,
        counts: Vec::new(),
    };
    let fleet = scenario_fleet(scenario)?;
    let models = train_models(scenario, &fleet, &oracle, &mut tally)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fleet.save_json(&dir.join("fleet.json"))?;
    models.save_dir(&dir.join("models"))?;
    write_stages_csv(&tally.counts, create(&dir.join("stages.csv"))?)?;
    ledger.snapshot().save_csv(&dir.join("ledger.csv"))?;
    Ok(tally.counts)
}

fn write_stages_csv<W: Write>(stages: &[StageCount], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["stage", "measurements"])?;
    for s in stages {
        w.write_record([s.stage.clone(), s.measurements.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<stages csv>", e))?;
    Ok(())
}

fn targets(scenario: &Scenario, fleet: &Fleet) -> Vec<(DeviceKind, DeviceFeatures)> {
    let kinds = scenario.target_kinds();
    fleet
        .all()
        .into_iter()
        .filter(|(k, _)| kinds.contains(k))
        .map(|(k, d)| (k, d.clone()))
        .collect()
}

/// Runs Stage 1 (or reloads it) and then the selected approach on every
/// target device. Pure apart from reading `Reload` inputs.
pub fn run_scenario(scenario: &Scenario, source: &StageOneSource) -> Result<RunOutput> {
    scenario.validate()?;
    let started = Instant::now();
    let space = &scenario.space;
    let ledger = MeasurementLedger::new();
    let oracle = Oracle::new(space, &ledger);
    let mut tally = StageTally {
        ledger: &ledger,
        counts: Vec::new(),
    };

    let (fleet, models) = match source {
        StageOneSource::Train => {
            let fleet = scenario_fleet(scenario)?;
            let models = train_models(scenario, &fleet, &oracle, &mut tally)?;
            (fleet, models)
        }
        StageOneSource::Reload(dir) => {
            let fleet = Fleet::load_json(&dir.join("fleet.json"))?;
            fleet.validate(space)?;
            (fleet, TrainedModels::load_dir(&dir.join("models"), scenario)?)
        }
    };
    if tally.counts.is_empty() {
        tally.counts.push(StageCount {
            stage: "stage1".into(),
            measurements: 0,
        });
    }

    let mut devices = Vec::new();
    let mut traces = Vec::new();
    let mut working = models.clone();
    for (i, (kind, d)) in targets(scenario, &fleet).into_iter().enumerate() {
        let bounds = target_bounds(space, &d, &scenario.constraints, scenario.seed)?;
        let mut rng = stream(scenario.seed, STREAM_TARGET_BASE + i as u64);
        let before = ledger.snapshot();
        let (design, tradeoff, feasible, proxy_id, new_proxy, trace) = match &mut working {
            TrainedModels::Proxy { pool } => {
                proxy_decision(scenario, pool, &d, &bounds, &oracle, &mut tally, &mut rng)?
            }
            TrainedModels::Amortized { predictors, optimizer } => {
                let sweep = build_lambda_grid(
                    scenario.amortized.sweep_grid.count_per_axis,
                    scenario.amortized.sweep_grid.max,
                )?;
                let out = tally.charge("validation", || {
                    constraint_sweep(optimizer, predictors, &d, &bounds, &sweep, &oracle)
                })?;
                (
                    out.design.clone(),
                    (out.lambda.lambda1, out.lambda.lambda2),
                    out.oracle_feasible,
                    None,
                    false,
                    DeviceTrace::Sweep(out),
                )
            }
        };
        let measurements = ledger.snapshot().since(&before).device_total(&d.id);
        let (true_latency, true_energy) = (model_latency(space, &design, &d), model_energy(space, &design, &d));
        log::info!(
            "{}: design {} feasible={} measurements={}",
            d.id,
            design,
            feasible,
            measurements
        );
        devices.push(DeviceResult {
            device_id: d.id.clone(),
            kind,
            latency_bound: bounds.latency_bound,
            energy_bound: bounds.energy_bound,
            tradeoff,
            feasible,
            measurements,
            proxy_id,
            new_proxy,
            true_accuracy: model_accuracy(space, &design),
            true_latency,
            true_energy,
            true_feasible: bounds.satisfied(true_latency, true_energy),
            design,
        });
        traces.push((d.id.clone(), trace));
    }

    let snapshot = ledger.snapshot();
    let mut report = RunReport {
        name: scenario.name.clone(),
        seed: scenario.seed,
        approach: scenario.approach,
        infeasible: devices.iter().any(|d| !d.feasible),
        devices,
        stages: tally.counts,
        ledger: snapshot,
        cost: Vec::new(),
        wall_time_s: 0.0,
    };
    report.cost = compare_costs(
        scenario.cost.samples_per_device,
        scenario.cost.seconds_per_measurement,
        report.devices.len() as u64,
        &report,
    );
    report.wall_time_s = started.elapsed().as_secs_f64();
    Ok(RunOutput {
        report,
        fleet,
        models,
        traces,
    })
}

type Decision = (DesignPoint, (f64, f64), bool, Option<String>, bool, DeviceTrace);

fn proxy_decision(
    scenario: &Scenario,
    pool: &mut ProxyPool,
    d: &DeviceFeatures,
    bounds: &ConstraintSpec,
    oracle: &Oracle<'_>,
    tally: &mut StageTally<'_>,
    rng: &mut ChaCha8Rng,
) -> Result<Decision> {
    let space = &scenario.space;
    let ps = &scenario.proxy;
    let mut index = 0;
    let mut new_proxy = false;
    if ps.verify_monotonicity {
        let matched = tally.charge("matching", || match_proxy(pool, space, d, &ps.matching, oracle, rng))?;
        index = match matched.index {
            Some(i) => i,
            None => {
                new_proxy = true;
                let accuracy = pool.entries[0].predictors.accuracy.clone();
                tally.charge("fallback_training", || {
                    add_target_as_proxy(
                        pool,
                        space,
                        d,
                        &matched,
                        &accuracy,
                        &ps.matching,
                        &scenario.predictor,
                        ps.bisection.granularity,
                        oracle,
                        rng,
                    )
                })?
            }
        };
    }
    let solver = scenario.seeded(&ps.inner);
    let entry = &mut pool.entries[index];
    let proxy_id = Some(entry.device.id.clone());
    let model = PredictorProxy::new(&entry.predictors, &entry.device)?;
    match (bounds.latency_bound, bounds.energy_bound) {
        (Some(lb), None) => {
            let out = tally.charge("search", || {
                bisection_optimize(d, lb, &ps.bisection, &mut entry.cache, &model, &solver, oracle)
            })?;
            Ok((
                out.design.clone(),
                (out.t_star, 0.0),
                out.feasible,
                proxy_id,
                new_proxy,
                DeviceTrace::Bisection(out),
            ))
        }
        (Some(lb), Some(eb)) => {
            let mut cache = TCache2d::new(ps.bisection.granularity);
            let out = tally.charge("search", || {
                grid_optimize_2d(d, lb, eb, &ps.grid, &mut cache, &model, &solver, oracle)
            })?;
            Ok((out.design, out.t, out.feasible, proxy_id, new_proxy, DeviceTrace::Grid))
        }
        (None, Some(_)) => Err(config_err("constraints", "proxy reuse needs a latency bound")),
        (None, None) => {
            // No bound: the accuracy-optimal proxy solution, no measurement.
            let sol = crate::proxy_reuse::solve_inner(0.0, &mut entry.cache, &model, &solver)?;
            Ok((sol.design, (0.0, 0.0), true, proxy_id, new_proxy, DeviceTrace::Grid))
        }
    }
}

pub const DEVICES_CSV_HEADER: [&str; 15] = [
    "device_id",
    "kind",
    "design",
    "latency_bound",
    "energy_bound",
    "tradeoff1",
    "tradeoff2",
    "feasible",
    "measurements",
    "proxy_id",
    "new_proxy",
    "true_accuracy",
    "true_latency",
    "true_energy",
    "true_feasible",
];

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

fn kind_name(kind: DeviceKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

pub fn write_devices_csv<W: Write>(devices: &[DeviceResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DEVICES_CSV_HEADER)?;
    for r in devices {
        w.write_record([
            r.device_id.clone(),
            kind_name(r.kind),
            r.design
                .indices()
                .iter()
                .map(|i| i.to_string())
                .collect::<Vec<_>>()
                .join(" "),
            opt(r.latency_bound),
            opt(r.energy_bound),
            r.tradeoff.0.to_string(),
            r.tradeoff.1.to_string(),
            r.feasible.to_string(),
            r.measurements.to_string(),
            r.proxy_id.clone().unwrap_or_default(),
            r.new_proxy.to_string(),
            r.true_accuracy.to_string(),
            r.true_latency.to_string(),
            r.true_energy.to_string(),
            r.true_feasible.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<devices csv>", e))?;
    Ok(())
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes `summary.json`, `devices.csv`, `stages.csv`, `ledger.csv`,
/// `cost.csv`, `fleet.json`, `models/` and `traces/` under `dir`.
pub fn export_report(output: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("traces")).map_err(|e| Error::io(dir, e))?;
    let summary = dir.join("summary.json");
    std::fs::write(&summary, serde_json::to_string_pretty(&output.report)?).map_err(|e| Error::io(&summary, e))?;
    write_devices_csv(&output.report.devices, create(&dir.join("devices.csv"))?)?;
    write_stages_csv(&output.report.stages, create(&dir.join("stages.csv"))?)?;
    output.report.ledger.save_csv(&dir.join("ledger.csv"))?;
    write_cost_csv(&output.report.cost, create(&dir.join("cost.csv"))?)?;
    output.fleet.save_json(&dir.join("fleet.json"))?;
    output.models.save_dir(&dir.join("models"))?;
    for (id, trace) in &output.traces {
        let path = dir.join("traces").join(format!("{id}.csv"));
        match trace {
            DeviceTrace::Bisection(b) => b.write_trace_csv(create(&path)?)?,
            DeviceTrace::Sweep(s) => s.write_csv(create(&path)?)?,
            DeviceTrace::Grid => {}
        }
    }
    Ok(())
}

/// Runs the scenario and exports into `dir`. Output is assembled in a
/// sibling `.partial` directory and moved into place only on success.
pub fn run_and_export(scenario: &Scenario, source: &StageOneSource, dir: &Path) -> Result<RunOutput> {
    let output = run_scenario(scenario, source)?;
    let mut partial = dir.as_os_str().to_owned();
    partial.push(".partial");
    let partial = PathBuf::from(partial);
    if partial.exists() {
        std::fs::remove_dir_all(&partial).map_err(|e| Error::io(&partial, e))?;
    }
    if let Err(e) = export_report(&output, &partial) {
        let _ = std::fs::remove_dir_all(&partial);
        return Err(e);
    }
    let reused_stage_one = matches!(source, StageOneSource::Reload(src) if src == dir);
    if dir.exists() && !reused_stage_one {
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    if reused_stage_one {
        // Swap in the new files; the models are the ones just reloaded.
        for entry in std::fs::read_dir(&partial).map_err(|e| Error::io(&partial, e))? {
            let entry = entry.map_err(|e| Error::io(&partial, e))?;
            let target = dir.join(entry.file_name());
            if target.is_dir() {
                std::fs::remove_dir_all(&target).map_err(|e| Error::io(&target, e))?;
            }
            std::fs::rename(entry.path(), &target).map_err(|e| Error::io(&target, e))?;
        }
        std::fs::remove_dir_all(&partial).map_err(|e| Error::io(&partial, e))?;
    } else {
        std::fs::rename(&partial, dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(output)
}

pub fn load_report(dir: &Path) -> Result<RunReport> {
    let path = dir.join("summary.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTestCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Exhaustive checks of the analytic world and the search machinery on the
/// 128-design reduced space. Uses exact proxies, no training.
pub fn selftest(seed: u64) -> Result<Vec<SelfTestCheck>> {
    let space = DesignSpace::reduced();
    let all = space.enumerate_all(128)?;
    let proxy = DeviceFeatures::default_proxy();
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(SelfTestCheck {
            name: name.into(),
            passed,
            detail,
        })
    };

    let (argmax, _) = brute_force_argmin(|x| -model_accuracy(&space, x), &space, 128)?;
    push(
        "all_max_is_accuracy_argmax",
        argmax == space.max_design(),
        format!("argmax {argmax}"),
    );

    let lat: Vec<f64> = all.iter().map(|x| model_latency(&space, x, &proxy)).collect();
    let en: Vec<f64> = all.iter().map(|x| model_energy(&space, x, &proxy)).collect();
    let scale = ObjectiveScale::from_labels(&lat, &en)?;
    let ledger = MeasurementLedger::new();
    let oracle = Oracle::new(&space, &ledger);
    let mut violations = 0;
    let mut prev = f64::INFINITY;
    for k in 0..10 {
        let l2 = if k == 0 { 0.0 } else { 0.01 * 2f64.powi(k) };
        let lambda = TradeoffWeights {
            lambda1: 0.0,
            lambda2: l2,
        };
        let (x, _) = brute_force_argmin(
            |x| relaxed_objective_true(x, &proxy, lambda, scale, &oracle),
            &space,
            128,
        )?;
        let l = model_latency(&space, &x, &proxy);
        if l > prev {
            violations += 1;
        }
        prev = l;
    }
    push(
        "latency_weight_monotone",
        violations == 0,
        format!("{violations} violations"),
    );

    let mut rng = stream(seed, STREAM_TARGET_BASE);
    let mut rhos = Vec::new();
    let mut budget_ok = true;
    for i in 0..4 {
        let target = sample_monotone(&mut rng, &proxy, format!("mono-{i}"));
        let check = check_monotonicity(
            &ExactProxy {
                space: &space,
                device: &proxy,
                scale,
            },
            &target,
            40,
            0.95,
            &oracle,
            &mut rng,
        )?;
        rhos.push(check.rho);
        let bounds = target_bounds(&space, &target, &BoundSettings::default(), seed)?;
        let ledger = MeasurementLedger::new();
        let oracle = Oracle::new(&space, &ledger);
        let model = ExactProxy {
            space: &space,
            device: &proxy,
            scale,
        };
        let out = bisection_optimize(
            &target,
            bounds.latency_bound.expect("default bound"),
            &BisectionSettings::default(),
            &mut TCache::new(0.001),
            &model,
            &InnerSolver::BruteForce { limit: 128 },
            &oracle,
        )?;
        budget_ok &= out.measurements <= 10 && ledger.total() <= 10;
    }
    let adversarial = sample_adversarial(&mut rng, &proxy, "adv".into());
    let adv = check_monotonicity(
        &ExactProxy {
            space: &space,
            device: &proxy,
            scale,
        },
        &adversarial,
        40,
        0.95,
        &oracle,
        &mut rng,
    )?;
    push(
        "monotonicity_detector",
        rhos.iter().all(|&r| r >= 0.95) && adv.rho <= 0.8,
        format!("monotone rho {rhos:.3?}, adversarial rho {:.3}", adv.rho),
    );
    push(
        "bisection_budget",
        budget_ok,
        "≤ 10 target measurements per device".into(),
    );

    let target = sample_monotone(&mut rng, &proxy, "es".into());
    let lambda = TradeoffWeights {
        lambda1: 0.1,
        lambda2: 0.3,
    };
    let free = MeasurementLedger::new();
    let free_oracle = Oracle::new(&space, &free);
    let f = |x: &DesignPoint| relaxed_objective_true(x, &target, lambda, scale, &free_oracle);
    let (best, _) = brute_force_argmin(f, &space, 128)?;
    let hits = (0..20)
        .filter(|&s| {
            evolutionary_search(f, &space, &SearchParams::default().with_seed(seed.wrapping_add(s)))
                .map(|o| o.best == best)
                .unwrap_or(false)
        })
        .count();
    push("evolutionary_finds_argmin", hits >= 19, format!("{hits}/20 seeds"));
    Ok(checks)
}
