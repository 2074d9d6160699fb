//! Simulated device fleet: analytic latency, energy and accuracy models that
//! stand in for on-device measurement, plus the ledger that counts every
//! measurement taken.
//!
//! Stage `i` of a design does `depth·width²·kernel²·base_work(i)` units of
//! work and touches `depth·width·base_mem` units of memory, with
//! `base_work(i) = 16·2^-i` and `base_mem = 1`. On device `d`:
//!
//! ```text
//! latency = Σ (work_i / (throughput·qs(bits)))^gamma + mem_i / bandwidth
//!           + overhead·Σ depth_i
//! energy  = power_dynamic·Σ work_i / qs(bits) + power_static·latency
//! ```
//!
//! Accuracy does not depend on the device:
//! `a_max − a1·exp(−β·capacity) − qpen(bits) + noise(x)` where
//! `capacity = Σ depth·width·ln(kernel)` and `noise` is a keyed hash of the
//! design's index list mapped into `[−0.002, 0.002]`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::{DesignPoint, DesignSpace};
use crate::error::{Error, Result};

pub const BASE_WORK: f64 = 16.0;
pub const BASE_MEM: f64 = 1.0;

pub const ACC_MAX: f64 = 0.95;
pub const ACC_A1: f64 = 0.35;
pub const ACC_BETA: f64 = 0.35;
pub const ACC_NOISE: f64 = 0.002;

/// Gamma must stay inside this band for every generated device.
pub const GAMMA_RANGE: (f64, f64) = (0.8, 1.25);

/// Accuracy penalty for quantizing to `bits`. Unlisted widths interpolate on
/// `0.04·(4/bits)^2`, which matches the table closely.
pub fn quantization_penalty(bits: u32) -> f64 {
    match bits {
        4 => 0.04,
        8 => 0.01,
        16 => 0.002,
        b if b >= 32 => 0.0,
        b => 0.04 * (4.0 / b as f64).powi(2),
    }
}

/// Measured metric kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Latency,
    Energy,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Latency => "latency",
            Metric::Energy => "energy",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Cost-model coefficients of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceFeatures {
    pub id: String,
    /// work units per ms
    pub throughput: f64,
    /// memory units per ms
    pub bandwidth: f64,
    /// ms per layer
    pub overhead: f64,
    /// bit-width → speedup over 32-bit compute
    pub quant_speedup: BTreeMap<u32, f64>,
    /// mJ per work unit
    pub power_dynamic: f64,
    /// mJ per ms
    pub power_static: f64,
    pub gamma: f64,
}

impl DeviceFeatures {
    /// The documented default proxy device.
    pub fn default_proxy() -> Self {
        Self {
            id: "proxy".into(),
            throughput: 100.0,
            bandwidth: 50.0,
            overhead: 0.05,
            quant_speedup: BTreeMap::from([(4, 2.5), (8, 2.0), (16, 1.4), (32, 1.0)]),
            power_dynamic: 0.5,
            power_static: 2.0,
            gamma: 1.0,
        }
    }

    pub fn validate(&self, space: &DesignSpace) -> Result<()> {
        let positive = [
            ("throughput", self.throughput),
            ("bandwidth", self.bandwidth),
            ("overhead", self.overhead),
            ("power_dynamic", self.power_dynamic),
            ("power_static", self.power_static),
            ("gamma", self.gamma),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("device {}: {name} must be positive", self.id)));
            }
        }
        if self.gamma < GAMMA_RANGE.0 || self.gamma > GAMMA_RANGE.1 {
            return Err(Error::invalid(format!(
                "device {}: gamma {} outside [{}, {}]",
                self.id, self.gamma, GAMMA_RANGE.0, GAMMA_RANGE.1
            )));
        }
        for b in &space.bits_choices {
            match self.quant_speedup.get(b) {
                Some(q) if q.is_finite() && *q > 0.0 => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "device {}: quant_speedup missing or non-positive for {b} bits",
                        self.id
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn speedup(&self, bits: u32) -> f64 {
        self.quant_speedup[&bits]
    }

    /// Log-scaled coefficient vector used as network input: throughput,
    /// bandwidth, overhead, dynamic power, static power, gamma, then the
    /// speedup of every bit-width in the space.
    pub fn feature_vector(&self, space: &DesignSpace) -> Vec<f64> {
        let mut v = vec![
            self.throughput.ln(),
            self.bandwidth.ln(),
            self.overhead.ln(),
            self.power_dynamic.ln(),
            self.power_static.ln(),
            self.gamma.ln(),
        ];
        v.extend(space.bits_choices.iter().map(|b| self.speedup(*b).ln()));
        v
    }

    pub fn feature_len(space: &DesignSpace) -> usize {
        6 + space.bits_choices.len()
    }
}

fn stage_work(i: usize, depth: u32, width: f64, kernel: u32) -> f64 {
    let base = BASE_WORK * 0.5f64.powi(i as i32);
    depth as f64 * width * width * (kernel * kernel) as f64 * base
}

fn stage_mem(depth: u32, width: f64) -> f64 {
    depth as f64 * width * BASE_MEM
}

/// Total work of `x`, before quantization speedup.
pub fn total_work(space: &DesignSpace, x: &DesignPoint) -> f64 {
    space
        .stages(x)
        .enumerate()
        .map(|(i, s)| stage_work(i, s.depth, s.width, s.kernel))
        .sum()
}

/// Latency of `x` on `d` in ms, without touching any ledger.
pub fn model_latency(space: &DesignSpace, x: &DesignPoint, d: &DeviceFeatures) -> f64 {
    let qs = d.speedup(space.bits(x));
    let mut total = 0.0;
    let mut layers = 0u32;
    for (i, s) in space.stages(x).enumerate() {
        let work = stage_work(i, s.depth, s.width, s.kernel);
        total += (work / (d.throughput * qs)).powf(d.gamma) + stage_mem(s.depth, s.width) / d.bandwidth;
        layers += s.depth;
    }
    total + d.overhead * layers as f64
}

/// Energy of `x` on `d` in mJ, without touching any ledger.
pub fn model_energy(space: &DesignSpace, x: &DesignPoint, d: &DeviceFeatures) -> f64 {
    let qs = d.speedup(space.bits(x));
    d.power_dynamic * total_work(space, x) / qs + d.power_static * model_latency(space, x, d)
}

pub fn capacity(space: &DesignSpace, x: &DesignPoint) -> f64 {
    space
        .stages(x)
        .map(|s| s.depth as f64 * s.width * (s.kernel as f64).ln())
        .sum()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic accuracy jitter in `[−ACC_NOISE, ACC_NOISE]`.
pub fn accuracy_noise(x: &DesignPoint) -> f64 {
    let mut h = 0x5EED_0000_0000_0001u64 ^ x.len() as u64;
    for &i in x.indices() {
        h = splitmix64(h ^ (i as u64).wrapping_add(0x100));
    }
    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
    ACC_NOISE * (2.0 * u - 1.0)
}

/// Accuracy of `x`, without touching any ledger.
pub fn model_accuracy(space: &DesignSpace, x: &DesignPoint) -> f64 {
    let raw = ACC_MAX - ACC_A1 * (-ACC_BETA * capacity(space, x)).exp() - quantization_penalty(space.bits(x))
        + accuracy_noise(x);
    raw.clamp(0.0, 1.0)
}

/// Per-device measurement counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub latency: u64,
    pub energy: u64,
}

impl MetricCounts {
    pub fn get(&self, metric: Metric) -> u64 {
        match metric {
            Metric::Latency => self.latency,
            Metric::Energy => self.energy,
        }
    }
}

/// Read-only copy of a ledger.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub devices: BTreeMap<String, MetricCounts>,
    pub accuracy: u64,
}

impl LedgerSnapshot {
    pub fn count(&self, device: &str, metric: Metric) -> u64 {
        self.devices.get(device).map_or(0, |c| c.get(metric))
    }

    pub fn device_total(&self, device: &str) -> u64 {
        self.devices.get(device).map_or(0, |c| c.latency + c.energy)
    }

    pub fn total(&self) -> u64 {
        self.accuracy + self.devices.values().map(|c| c.latency + c.energy).sum::<u64>()
    }

    /// Counts accumulated since `earlier`.
    pub fn since(&self, earlier: &LedgerSnapshot) -> LedgerSnapshot {
        let mut devices = BTreeMap::new();
        for (id, now) in &self.devices {
            let before = earlier.devices.get(id).copied().unwrap_or_default();
            let diff = MetricCounts {
                latency: now.latency - before.latency,
                energy: now.energy - before.energy,
            };
            if diff.latency + diff.energy > 0 {
                devices.insert(id.clone(), diff);
            }
        }
        LedgerSnapshot {
            devices,
            accuracy: self.accuracy - earlier.accuracy,
        }
    }

    /// CSV with header `device_id,metric,count`. Accuracy measurements are
    /// device-independent and appear under the device id `*`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["device_id", "metric", "count"])?;
        for (id, c) in &self.devices {
            w.write_record([id.as_str(), "latency", &c.latency.to_string()])?;
            w.write_record([id.as_str(), "energy", &c.energy.to_string()])?;
        }
        w.write_record(["*", "accuracy", &self.accuracy.to_string()])?;
        w.flush().map_err(|e| Error::io("<ledger csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(file)
    }
}

/// Append-only count of oracle queries. Safe to share across threads.
#[derive(Debug, Default)]
pub struct MeasurementLedger {
    devices: Mutex<BTreeMap<String, MetricCounts>>,
    accuracy: AtomicU64,
}

impl MeasurementLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, device: &str, metric: Metric) {
        let mut map = self.devices.lock().expect("ledger poisoned");
        let entry = map.entry(device.to_string()).or_default();
        match metric {
            Metric::Latency => entry.latency += 1,
            Metric::Energy => entry.energy += 1,
        }
    }

    pub fn record_accuracy(&self) {
        self.accuracy.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            devices: self.devices.lock().expect("ledger poisoned").clone(),
            accuracy: self.accuracy.load(Ordering::Relaxed),
        }
    }

    pub fn count(&self, device: &str, metric: Metric) -> u64 {
        self.devices
            .lock()
            .expect("ledger poisoned")
            .get(device)
            .map_or(0, |c| c.get(metric))
    }

    pub fn total(&self) -> u64 {
        self.snapshot().total()
    }
}

/// Measurement oracle over a design space: each call is one simulated
/// on-device (or on-dataset) measurement and is charged to the ledger.
#[derive(Debug, Clone, Copy)]
pub struct Oracle<'a> {
    pub space: &'a DesignSpace,
    pub ledger: &'a MeasurementLedger,
}

impl<'a> Oracle<'a> {
    pub fn new(space: &'a DesignSpace, ledger: &'a MeasurementLedger) -> Self {
        Self { space, ledger }
    }

    pub fn latency(&self, x: &DesignPoint, d: &DeviceFeatures) -> f64 {
        self.ledger.record(&d.id, Metric::Latency);
        model_latency(self.space, x, d)
    }

    pub fn energy(&self, x: &DesignPoint, d: &DeviceFeatures) -> f64 {
        self.ledger.record(&d.id, Metric::Energy);
        model_energy(self.space, x, d)
    }

    pub fn measure(&self, metric: Metric, x: &DesignPoint, d: &DeviceFeatures) -> f64 {
        match metric {
            Metric::Latency => self.latency(x, d),
            Metric::Energy => self.energy(x, d),
        }
    }

    pub fn accuracy(&self, x: &DesignPoint) -> f64 {
        self.ledger.record_accuracy();
        model_accuracy(self.space, x)
    }
}

/// Sizes of the generated device lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetConfig {
    pub proxy: DeviceFeatures,
    pub training_real: usize,
    pub synthetic: usize,
    pub holdout_monotone: usize,
    pub holdout_adversarial: usize,
    pub holdout_synthetic: usize,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            proxy: DeviceFeatures::default_proxy(),
            training_real: 8,
            synthetic: 24,
            holdout_monotone: 8,
            holdout_adversarial: 2,
            holdout_synthetic: 16,
        }
    }
}

impl FleetConfig {
    /// Only the proxy.
    pub fn empty() -> Self {
        Self {
            training_real: 0,
            synthetic: 0,
            holdout_monotone: 0,
            holdout_adversarial: 0,
            holdout_synthetic: 0,
            ..Self::default()
        }
    }
}

/// Which generator produced a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    Proxy,
    TrainingReal,
    Synthetic,
    HoldoutMonotone,
    HoldoutAdversarial,
    HoldoutSynthetic,
}

/// The proxy plus every generated device list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    pub proxy: DeviceFeatures,
    pub training_real: Vec<DeviceFeatures>,
    pub synthetic: Vec<DeviceFeatures>,
    pub holdout_monotone: Vec<DeviceFeatures>,
    pub holdout_adversarial: Vec<DeviceFeatures>,
    pub holdout_synthetic: Vec<DeviceFeatures>,
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// Speedup table following `(32/bits)^(α·(1+ε_b))`, decreasing in bits.
fn sample_speedups<R: Rng + ?Sized>(rng: &mut R, bits: &[u32]) -> BTreeMap<u32, f64> {
    let alpha = rng.gen_range(0.35..0.6);
    let mut out = BTreeMap::new();
    for &b in bits {
        let jitter = rng.gen_range(-0.1..0.1);
        let ratio = (32.0 / b as f64).max(1.0);
        out.insert(b, ratio.powf(alpha * (1.0 + jitter)));
    }
    out
}

/// Bit-widths every generated device covers: the proxy's table plus the
/// standard 4/8/16/32.
fn fleet_bits(proxy: &DeviceFeatures) -> Vec<u32> {
    let mut bits: Vec<u32> = proxy.quant_speedup.keys().copied().collect();
    for b in [4, 8, 16, 32] {
        if !bits.contains(&b) {
            bits.push(b);
        }
    }
    bits.sort_unstable();
    bits
}

/// Device drawn log-uniformly from the heterogeneous ranges.
pub fn sample_heterogeneous<R: Rng + ?Sized>(rng: &mut R, id: String, bits: &[u32]) -> DeviceFeatures {
    DeviceFeatures {
        id,
        throughput: log_uniform(rng, 40.0, 250.0),
        bandwidth: log_uniform(rng, 20.0, 120.0),
        overhead: log_uniform(rng, 0.02, 0.12),
        quant_speedup: sample_speedups(rng, bits),
        power_dynamic: log_uniform(rng, 0.2, 1.0),
        power_static: log_uniform(rng, 1.0, 4.0),
        gamma: rng.gen_range(0.9..1.1),
    }
}

/// Proxy sped up (or slowed) uniformly by a factor in `[0.5, 2]`, gamma
/// nudged by at most ±0.05.
pub fn sample_monotone<R: Rng + ?Sized>(rng: &mut R, proxy: &DeviceFeatures, id: String) -> DeviceFeatures {
    let factor = log_uniform(rng, 0.5, 2.0);
    let gamma = (proxy.gamma + rng.gen_range(-0.05..0.05)).clamp(GAMMA_RANGE.0, GAMMA_RANGE.1);
    DeviceFeatures {
        id,
        throughput: proxy.throughput * factor,
        bandwidth: proxy.bandwidth * factor,
        overhead: proxy.overhead / factor,
        gamma,
        ..proxy.clone()
    }
}

/// Monotone-family device with the quantization table inverted (low-bit
/// slower than 32-bit) and per-layer overhead inflated tenfold.
pub fn sample_adversarial<R: Rng + ?Sized>(rng: &mut R, proxy: &DeviceFeatures, id: String) -> DeviceFeatures {
    let mut d = sample_monotone(rng, proxy, id);
    d.quant_speedup = d.quant_speedup.iter().map(|(b, q)| (*b, 1.0 / q)).collect();
    d.overhead *= 10.0;
    d
}

/// Generates a fleet. Each list draws from its own stream, so changing one
/// list's size leaves the others unchanged.
pub fn generate_fleet<R: Rng + ?Sized>(config: &FleetConfig, rng: &mut R) -> Fleet {
    let base_seed: u64 = rng.gen();
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(base_seed);
        r.set_stream(k);
        r
    };
    let bits = fleet_bits(&config.proxy);
    let proxy = config.proxy.clone();

    let mut r = stream(1);
    let training_real = (0..config.training_real)
        .map(|i| sample_heterogeneous(&mut r, format!("train-{i:02}"), &bits))
        .collect();
    let mut r = stream(2);
    let synthetic = (0..config.synthetic)
        .map(|i| sample_heterogeneous(&mut r, format!("synth-{i:02}"), &bits))
        .collect();
    let mut r = stream(3);
    let holdout_monotone = (0..config.holdout_monotone)
        .map(|i| sample_monotone(&mut r, &proxy, format!("mono-{i:02}")))
        .collect();
    let mut r = stream(4);
    let holdout_adversarial = (0..config.holdout_adversarial)
        .map(|i| sample_adversarial(&mut r, &proxy, format!("adv-{i:02}")))
        .collect();
    let mut r = stream(5);
    let holdout_synthetic = (0..config.holdout_synthetic)
        .map(|i| sample_heterogeneous(&mut r, format!("holdout-synth-{i:02}"), &bits))
        .collect();

    Fleet {
        proxy,
        training_real,
        synthetic,
        holdout_monotone,
        holdout_adversarial,
        holdout_synthetic,
    }
}

impl Fleet {
    /// Every device with its kind, proxy first.
    pub fn all(&self) -> Vec<(DeviceKind, &DeviceFeatures)> {
        let mut out = vec![(DeviceKind::Proxy, &self.proxy)];
        out.extend(self.training_real.iter().map(|d| (DeviceKind::TrainingReal, d)));
        out.extend(self.synthetic.iter().map(|d| (DeviceKind::Synthetic, d)));
        out.extend(self.holdout_monotone.iter().map(|d| (DeviceKind::HoldoutMonotone, d)));
        out.extend(
            self.holdout_adversarial
                .iter()
                .map(|d| (DeviceKind::HoldoutAdversarial, d)),
        );
        out.extend(self.holdout_synthetic.iter().map(|d| (DeviceKind::HoldoutSynthetic, d)));
        out
    }

    /// Real plus synthetic training devices.
    pub fn training_devices(&self) -> Vec<DeviceFeatures> {
        self.training_real.iter().chain(&self.synthetic).cloned().collect()
    }

    pub fn find(&self, id: &str) -> Option<&DeviceFeatures> {
        self.all().into_iter().map(|(_, d)| d).find(|d| d.id == id)
    }

    pub fn validate(&self, space: &DesignSpace) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (_, d) in self.all() {
            d.validate(space)?;
            if !seen.insert(d.id.clone()) {
                return Err(Error::invalid(format!("duplicate device id {}", d.id)));
            }
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
