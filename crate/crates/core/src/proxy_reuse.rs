//! Reusing one proxy device's predictors on new devices.
//!
//! With latency and accuracy predicted on a proxy `d0`, the problem on a new
//! device `d` is solved by scanning one weight `t ∈ [0, 1]` of
//!
//! ```text
//! −(1 − t)·Acc(x) + t·Latency_d0(x) / scale_L
//! ```
//!
//! and measuring only the latency of each candidate on `d`. When `d0` and
//! `d` rank designs the same way, the measured latency of `x*(t)` is
//! non-increasing in `t`, so bisection on `t` finds the constraint boundary in
//! about `log2(1/granularity)` measurements. The implied transformed bound on
//! `d0` latency is never computed; `t*` stands in for it.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::{DesignPoint, DesignSpace};
use crate::device_world::{model_accuracy, model_energy, model_latency, DeviceFeatures, Metric, Oracle};
use crate::error::{Error, Result};
use crate::par;
use crate::search::InnerSolver;
use crate::surrogate::{fit_labeled, MlpRegressor, ObjectiveScale, PredictorHyper, PredictorKind, PredictorSet};

/// Accuracy and normalized cost of a design as seen from a proxy device.
pub trait ProxyModel: Sync {
    fn space(&self) -> &DesignSpace;
    fn accuracy(&self, x: &DesignPoint) -> f64;
    /// Cost divided by its objective scale.
    fn normalized(&self, metric: Metric, x: &DesignPoint) -> f64;
}

/// Trained device-specific predictors of a proxy.
#[derive(Debug, Clone, Copy)]
pub struct PredictorProxy<'a> {
    predictors: &'a PredictorSet,
    device: &'a DeviceFeatures,
}

impl<'a> PredictorProxy<'a> {
    pub fn new(predictors: &'a PredictorSet, device: &'a DeviceFeatures) -> Result<Self> {
        predictors.ensure_trained()?;
        let dims = predictors.space.dims();
        let cost_dims = if predictors.is_device_aware() {
            dims + DeviceFeatures::feature_len(&predictors.space)
        } else {
            dims
        };
        for (m, want) in [
            (&predictors.accuracy, dims),
            (&predictors.latency, cost_dims),
            (&predictors.energy, cost_dims),
        ] {
            if m.input_dim() != want {
                return Err(Error::DimensionMismatch {
                    expected: want,
                    got: m.input_dim(),
                });
            }
        }
        Ok(Self { predictors, device })
    }

    fn enc(&self, x: &DesignPoint) -> Vec<f64> {
        self.predictors
            .space
            .encode(x)
            .expect("design from the predictor space")
            .0
    }
}

impl ProxyModel for PredictorProxy<'_> {
    fn space(&self) -> &DesignSpace {
        &self.predictors.space
    }

    fn accuracy(&self, x: &DesignPoint) -> f64 {
        self.predictors
            .predict_accuracy(&self.enc(x))
            .expect("validated dimensions")
    }

    fn normalized(&self, metric: Metric, x: &DesignPoint) -> f64 {
        self.predictors
            .predict_normalized(metric, &self.enc(x), self.device)
            .expect("validated dimensions")
    }
}

/// Exact cost-model values on a device, without ledger charges. Serves as a
/// perfect predictor in tests and audits.
#[derive(Debug, Clone)]
pub struct ExactProxy<'a> {
    pub space: &'a DesignSpace,
    pub device: &'a DeviceFeatures,
    pub scale: ObjectiveScale,
}

impl ProxyModel for ExactProxy<'_> {
    fn space(&self) -> &DesignSpace {
        self.space
    }

    fn accuracy(&self, x: &DesignPoint) -> f64 {
        model_accuracy(self.space, x)
    }

    fn normalized(&self, metric: Metric, x: &DesignPoint) -> f64 {
        match metric {
            Metric::Latency => model_latency(self.space, x, self.device) / self.scale.latency,
            Metric::Energy => model_energy(self.space, x, self.device) / self.scale.energy,
        }
    }
}

fn check_unit(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside [0, 1]")));
    }
    Ok(())
}

/// `−(1 − t)·Acc(x) + t·Latency_d0(x)/scale_L`.
pub fn proxy_objective(model: &dyn ProxyModel, x: &DesignPoint, t: f64) -> Result<f64> {
    check_unit(t)?;
    Ok(proxy_objective_unchecked(model, x, t))
}

fn proxy_objective_unchecked(model: &dyn ProxyModel, x: &DesignPoint, t: f64) -> f64 {
    let mut f = -(1.0 - t) * model.accuracy(x);
    if t != 0.0 {
        f += t * model.normalized(Metric::Latency, x);
    }
    f
}

/// `−(1 − t1 − t2)·Acc + t1·Latency/scale_L + t2·Energy/scale_E`.
pub fn proxy_objective_2d(model: &dyn ProxyModel, x: &DesignPoint, t1: f64, t2: f64) -> Result<f64> {
    if !(t1 >= 0.0 && t2 >= 0.0 && t1 + t2 <= 1.0 + 1e-12) {
        return Err(Error::invalid(format!("(t1, t2) = ({t1}, {t2}) outside the simplex")));
    }
    Ok(proxy_objective_2d_unchecked(model, x, t1, t2))
}

fn proxy_objective_2d_unchecked(model: &dyn ProxyModel, x: &DesignPoint, t1: f64, t2: f64) -> f64 {
    let mut f = -(1.0 - t1 - t2) * model.accuracy(x);
    if t1 != 0.0 {
        f += t1 * model.normalized(Metric::Latency, x);
    }
    if t2 != 0.0 {
        f += t2 * model.normalized(Metric::Energy, x);
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BisectionSettings {
    /// Half-width of the acceptance band in ms; `None` means 2% of the bound.
    pub delta: Option<f64>,
    pub granularity: f64,
    pub max_iterate: usize,
}

impl Default for BisectionSettings {
    fn default() -> Self {
        Self {
            delta: None,
            granularity: 0.001,
            max_iterate: 10,
        }
    }
}

impl BisectionSettings {
    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.delta {
            if !(d > 0.0) {
                return Err(Error::invalid("delta must be positive"));
            }
        }
        if !(self.granularity > 0.0 && self.granularity < 1.0) {
            return Err(Error::invalid("granularity must lie in (0, 1)"));
        }
        if self.max_iterate < 1 {
            return Err(Error::invalid("max_iterate must be ≥ 1"));
        }
        Ok(())
    }

    pub fn delta_for(&self, bound: f64) -> f64 {
        self.delta.unwrap_or(0.02 * bound)
    }

    pub fn quantize(&self, t: f64) -> f64 {
        self.key(t) as f64 * self.granularity
    }

    fn key(&self, t: f64) -> i64 {
        (t / self.granularity).round() as i64
    }
}

/// Inner solutions already computed, keyed by `t` quantized to the
/// granularity.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TCache {
    pub granularity: f64,
    pub entries: BTreeMap<i64, DesignPoint>,
}

impl TCache {
    pub fn new(granularity: f64) -> Self {
        Self {
            granularity,
            entries: BTreeMap::new(),
        }
    }

    fn key(&self, t: f64) -> i64 {
        (t / self.granularity).round() as i64
    }

    pub fn get(&self, t: f64) -> Option<&DesignPoint> {
        self.entries.get(&self.key(t))
    }

    pub fn insert(&mut self, t: f64, x: DesignPoint) {
        let k = self.key(t);
        self.entries.insert(k, x);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Cached `(t, design)` pairs in increasing `t`.
    pub fn iter(&self) -> impl Iterator<Item = (f64, &DesignPoint)> {
        self.entries.iter().map(move |(k, x)| (*k as f64 * self.granularity, x))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolution {
    pub design: DesignPoint,
    pub cache_hit: bool,
    /// Objective evaluations spent; zero on a cache hit.
    pub evaluations: usize,
}

/// `x*(t)`: the cached minimizer of the proxy objective, or a fresh solve
/// that is then cached. Uses predictors only.
pub fn solve_inner(t: f64, cache: &mut TCache, model: &dyn ProxyModel, solver: &InnerSolver) -> Result<InnerSolution> {
    check_unit(t)?;
    if let Some(x) = cache.get(t) {
        return Ok(InnerSolution {
            design: x.clone(),
            cache_hit: true,
            evaluations: 0,
        });
    }
    let tq = cache.key(t) as f64 * cache.granularity;
    let (design, _, evaluations) = solver.minimize(|x| proxy_objective_unchecked(model, x, tq), model.space())?;
    cache.insert(t, design.clone());
    Ok(InnerSolution {
        design,
        cache_hit: false,
        evaluations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Latency ≥ bound + δ: move `t` up.
    TooSlow,
    /// Latency ≤ bound − δ: move `t` down.
    Slack,
    WithinBand,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::TooSlow => "too_slow",
            Verdict::Slack => "slack",
            Verdict::WithinBand => "within_band",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub iteration: usize,
    pub t: f64,
    pub measured_latency: f64,
    pub bound: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisectionOutcome {
    pub design: DesignPoint,
    pub t_star: f64,
    pub latency: f64,
    /// Target-device latency measurements taken.
    pub measurements: usize,
    pub feasible: bool,
    pub trace: Vec<BisectionStep>,
}

impl BisectionOutcome {
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "t", "measured_latency", "bound", "verdict"])?;
        for s in &self.trace {
            w.write_record([
                s.iteration.to_string(),
                s.t.to_string(),
                s.measured_latency.to_string(),
                s.bound.to_string(),
                s.verdict.as_str().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<trace>", e))?;
        Ok(())
    }

    pub fn save_trace_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_trace_csv(file)
    }
}

/// Bisection over `t` on `[0, 1]` against a latency bound on `target`.
///
/// Each iteration solves the proxy problem at the quantized midpoint and
/// measures the latency of its solution on the target once (a design seen
/// before is not re-measured). The loop stops inside the `±δ` band, when the
/// interval shrinks below the granularity, or after `max_iterate` steps. The
/// result is the smallest-`t` iterate with latency below `bound + δ`; if no
/// iterate qualifies the fastest one is returned with `feasible = false`.
pub fn bisection_optimize(
    target: &DeviceFeatures,
    bound: f64,
    settings: &BisectionSettings,
    cache: &mut TCache,
    model: &dyn ProxyModel,
    solver: &InnerSolver,
    oracle: &Oracle<'_>,
) -> Result<BisectionOutcome> {
    settings.validate()?;
    if !(bound > 0.0) {
        return Err(Error::invalid(format!("latency bound must be positive, got {bound}")));
    }
    if cache.granularity != settings.granularity {
        return Err(Error::invalid("cache granularity differs from the bisection settings"));
    }
    let delta = settings.delta_for(bound);
    let (mut lo, mut hi) = (0i64, settings.key(1.0));
    let mut measured: BTreeMap<DesignPoint, f64> = BTreeMap::new();
    let mut trace = Vec::new();
    let mut best_feasible: Option<(i64, DesignPoint, f64)> = None;
    let mut fastest: Option<(i64, DesignPoint, f64)> = None;

    for iteration in 1..=settings.max_iterate {
        let mid = (lo + hi + 1) / 2;
        if mid == lo || mid == hi {
            break;
        }
        let t = mid as f64 * settings.granularity;
        let x = solve_inner(t, cache, model, solver)?.design;
        let latency = *measured.entry(x.clone()).or_insert_with(|| oracle.latency(&x, target));
        let verdict = if latency >= bound + delta {
            Verdict::TooSlow
        } else if latency <= bound - delta {
            Verdict::Slack
        } else {
            Verdict::WithinBand
        };
        trace.push(BisectionStep {
            iteration,
            t,
            measured_latency: latency,
            bound,
            verdict,
        });
        if verdict != Verdict::TooSlow && best_feasible.as_ref().is_none_or(|b| mid < b.0) {
            best_feasible = Some((mid, x.clone(), latency));
        }
        if fastest.as_ref().is_none_or(|f| latency < f.2) {
            fastest = Some((mid, x.clone(), latency));
        }
        match verdict {
            Verdict::TooSlow => lo = mid,
            Verdict::Slack => hi = mid,
            Verdict::WithinBand => break,
        }
    }

    let measurements = measured.len();
    let (feasible, chosen) = match (best_feasible, fastest) {
        (Some(b), _) => (true, b),
        (None, Some(f)) => (false, f),
        (None, None) => {
            // degenerate granularity: no interior midpoint exists
            let x = solve_inner(0.0, cache, model, solver)?.design;
            let latency = oracle.latency(&x, target);
            let ok = latency < bound + delta;
            return Ok(BisectionOutcome {
                design: x,
                t_star: 0.0,
                latency,
                measurements: 1,
                feasible: ok,
                trace,
            });
        }
    };
    Ok(BisectionOutcome {
        design: chosen.1,
        t_star: chosen.0 as f64 * settings.granularity,
        latency: chosen.2,
        measurements,
        feasible,
        trace,
    })
}

/// Minimizers of the two-weight proxy objective keyed by quantized `(t1, t2)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TCache2d {
    pub granularity: f64,
    pub entries: BTreeMap<(i64, i64), DesignPoint>,
}

impl TCache2d {
    pub fn new(granularity: f64) -> Self {
        Self {
            granularity,
            entries: BTreeMap::new(),
        }
    }

    fn key(&self, t1: f64, t2: f64) -> (i64, i64) {
        (
            (t1 / self.granularity).round() as i64,
            (t2 / self.granularity).round() as i64,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    pub levels: usize,
    /// Points per axis of the first-level simplex grid.
    pub coarse_points: usize,
    /// Cells searched on each side of the incumbent at finer levels.
    pub refine_radius: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            levels: 3,
            coarse_points: 8,
            refine_radius: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub design: DesignPoint,
    pub t: (f64, f64),
    pub latency: f64,
    pub energy: f64,
    pub predicted_accuracy: f64,
    /// Target-device measurements (latency plus energy).
    pub measurements: usize,
    pub feasible: bool,
}

/// Coarse-to-fine search over the simplex `t1 + t2 ≤ 1` of the two-weight
/// proxy objective. At each level the distinct inner solutions are ordered by
/// predicted accuracy and the most accurate feasible one is located by binary
/// search with latency and energy measurements on the target; the next level
/// is a grid of half the spacing around it (or around the least violating
/// candidate when none is feasible). Measurements are memoized per design.
#[allow(clippy::too_many_arguments)]
pub fn grid_optimize_2d(
    target: &DeviceFeatures,
    latency_bound: f64,
    energy_bound: f64,
    grid: &GridSettings,
    cache: &mut TCache2d,
    model: &dyn ProxyModel,
    solver: &InnerSolver,
    oracle: &Oracle<'_>,
) -> Result<GridOutcome> {
    if !(latency_bound > 0.0 && energy_bound > 0.0) {
        return Err(Error::invalid("bounds must be positive"));
    }
    if grid.levels < 1 || grid.coarse_points < 2 {
        return Err(Error::invalid("grid needs ≥ 1 level and ≥ 2 points per axis"));
    }
    let mut measured: BTreeMap<DesignPoint, (f64, f64)> = BTreeMap::new();
    let mut measure = |x: &DesignPoint| -> (f64, f64) {
        *measured
            .entry(x.clone())
            .or_insert_with(|| (oracle.latency(x, target), oracle.energy(x, target)))
    };
    let violation = |(l, e): (f64, f64)| {
        ((l - latency_bound) / latency_bound).max(0.0) + ((e - energy_bound) / energy_bound).max(0.0)
    };

    let mut spacing = 1.0 / (grid.coarse_points - 1) as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for i in 0..grid.coarse_points {
        for j in 0..grid.coarse_points - i {
            points.push((i as f64 * spacing, j as f64 * spacing));
        }
    }
    // (predicted accuracy, design, t, violation, metrics)
    let mut best: Option<(f64, DesignPoint, (f64, f64), f64, (f64, f64))> = None;

    for level in 0..grid.levels {
        let missing: Vec<(f64, f64)> = points
            .iter()
            .copied()
            .filter(|&(a, b)| !cache.entries.contains_key(&cache.key(a, b)))
            .collect();
        let solved = par::map(&missing, |&(t1, t2)| {
            solver
                .minimize(|x| proxy_objective_2d_unchecked(model, x, t1, t2), model.space())
                .map(|r| r.0)
        });
        for (&(t1, t2), x) in missing.iter().zip(solved) {
            let k = cache.key(t1, t2);
            cache.entries.insert(k, x?);
        }

        let mut candidates: BTreeMap<DesignPoint, (f64, f64)> = BTreeMap::new();
        for &(t1, t2) in &points {
            let x = cache.entries[&cache.key(t1, t2)].clone();
            candidates.entry(x).or_insert((t1, t2));
        }
        let mut ranked: Vec<(f64, DesignPoint, (f64, f64))> = candidates
            .into_iter()
            .map(|(x, t)| (model.accuracy(&x), x, t))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));

        // binary search for the first feasible entry in accuracy order
        let (mut lo, mut hi) = (0usize, ranked.len());
        let mut level_best: Option<usize> = None;
        let mut least: Option<(usize, f64)> = None;
        while lo < hi {
            let mid = (lo + hi) / 2;
            let m = measure(&ranked[mid].1);
            let v = violation(m);
            if least.is_none_or(|(_, lv)| v < lv) {
                least = Some((mid, v));
            }
            if v == 0.0 {
                level_best = Some(mid);
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        let pick = level_best.or(least.map(|l| l.0)).expect("non-empty candidate list");
        let (acc, x, t) = ranked[pick].clone();
        let m = measure(&x);
        let v = violation(m);
        let better = match &best {
            None => true,
            Some(b) => (v == 0.0 && (b.3 > 0.0 || acc > b.0)) || (v > 0.0 && b.3 > 0.0 && v < b.3),
        };
        if better {
            best = Some((acc, x, t, v, m));
        }
        log::debug!(
            "grid level {level}: {} candidates, pick t = {t:?}, violation {v}",
            ranked.len()
        );

        if level + 1 == grid.levels {
            break;
        }
        spacing /= 2.0;
        let center = best.as_ref().expect("set above").2;
        let r = grid.refine_radius as i64;
        points.clear();
        for a in -r..=r {
            for b in -r..=r {
                let t1 = center.0 + a as f64 * spacing;
                let t2 = center.1 + b as f64 * spacing;
                if t1 >= -1e-12 && t2 >= -1e-12 && t1 + t2 <= 1.0 + 1e-12 {
                    points.push((t1.max(0.0), t2.max(0.0)));
                }
            }
        }
    }

    let (predicted_accuracy, design, t, v, (latency, energy)) = best.expect("at least one level");
    Ok(GridOutcome {
        design,
        t,
        latency,
        energy,
        predicted_accuracy,
        measurements: 2 * measured.len(),
        feasible: v == 0.0,
    })
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks, which
/// equals `1 − 6·Σd²/(n(n²−1))` when there are no ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "spearman needs ≥ 3 pairs, got {}",
            a.len()
        )));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - mean) * (y - mean);
        saa += (x - mean) * (x - mean);
        sbb += (y - mean) * (y - mean);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityCheck {
    pub rho: f64,
    pub monotone: bool,
    pub probes: Vec<DesignPoint>,
    /// Measured target latencies of `probes`.
    pub target_latency: Vec<f64>,
}

/// Compares proxy-predicted latencies with measured target latencies on
/// freshly sampled probe designs. Charges `probe_count` latency measurements.
pub fn check_monotonicity<R: Rng + ?Sized>(
    model: &dyn ProxyModel,
    target: &DeviceFeatures,
    probe_count: usize,
    threshold: f64,
    oracle: &Oracle<'_>,
    rng: &mut R,
) -> Result<MonotonicityCheck> {
    if probe_count < 10 {
        return Err(Error::invalid(format!("probe_count must be ≥ 10, got {probe_count}")));
    }
    let probes: Vec<DesignPoint> = (0..probe_count).map(|_| model.space().sample_uniform(rng)).collect();
    let target_latency: Vec<f64> = probes.iter().map(|x| oracle.latency(x, target)).collect();
    check_on_probes(model, probes, target_latency, threshold)
}

fn check_on_probes(
    model: &dyn ProxyModel,
    probes: Vec<DesignPoint>,
    target_latency: Vec<f64>,
    threshold: f64,
) -> Result<MonotonicityCheck> {
    let predicted: Vec<f64> = probes.iter().map(|x| model.normalized(Metric::Latency, x)).collect();
    let rho = spearman(&predicted, &target_latency)?;
    Ok(MonotonicityCheck {
        rho,
        monotone: rho >= threshold,
        probes,
        target_latency,
    })
}

/// A proxy device with its predictors and inner-solution cache.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyEntry {
    pub device: DeviceFeatures,
    pub predictors: PredictorSet,
    pub cache: TCache,
}

impl ProxyEntry {
    pub fn new(device: DeviceFeatures, predictors: PredictorSet, granularity: f64) -> Self {
        Self {
            device,
            predictors,
            cache: TCache::new(granularity),
        }
    }

    pub fn model(&self) -> Result<PredictorProxy<'_>> {
        PredictorProxy::new(&self.predictors, &self.device)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProxyPool {
    pub entries: Vec<ProxyEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolManifestEntry {
    pub proxy_id: String,
    pub predictor_dir: PathBuf,
    pub features: Vec<f64>,
}

fn feature_distance(space: &DesignSpace, a: &DeviceFeatures, b: &DeviceFeatures) -> f64 {
    a.feature_vector(space)
        .iter()
        .zip(b.feature_vector(space))
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

impl ProxyPool {
    pub fn new(entries: Vec<ProxyEntry>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry indices ordered by distance between log feature vectors.
    pub fn ranked_candidates(&self, space: &DesignSpace, target: &DeviceFeatures) -> Vec<usize> {
        let mut idx: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (feature_distance(space, &e.device, target), i))
            .collect();
        idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        idx.into_iter().map(|(_, i)| i).collect()
    }

    /// Writes each entry's predictors to `dir/<proxy id>/` and a `pool.json`
    /// manifest.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let rel = PathBuf::from(&e.device.id);
            e.predictors.save_dir(&dir.join(&rel))?;
            let devpath = dir.join(&rel).join("device.json");
            std::fs::write(&devpath, serde_json::to_string_pretty(&e.device)?).map_err(|er| Error::io(&devpath, er))?;
            manifest.push(PoolManifestEntry {
                proxy_id: e.device.id.clone(),
                predictor_dir: rel,
                features: e.device.feature_vector(&e.predictors.space),
            });
        }
        let path = dir.join("pool.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load_dir(dir: &Path, granularity: f64) -> Result<Self> {
        let path = dir.join("pool.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Vec<PoolManifestEntry> = serde_json::from_str(&text)?;
        let mut entries = Vec::with_capacity(manifest.len());
        for m in manifest {
            let sub = dir.join(&m.predictor_dir);
            let devpath = sub.join("device.json");
            let dev_text = std::fs::read_to_string(&devpath).map_err(|e| Error::io(&devpath, e))?;
            let device: DeviceFeatures = serde_json::from_str(&dev_text)?;
            entries.push(ProxyEntry::new(device, PredictorSet::load_dir(&sub)?, granularity));
        }
        Ok(Self { entries })
    }
}

/// Settings for matching a new device to a pooled proxy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchSettings {
    pub threshold: f64,
    pub probe_count: usize,
    /// Designs measured per metric when a new proxy has to be trained.
    pub fallback_samples: usize,
}

impl Default for MatchSettings {
    fn default() -> Self {
        Self {
            threshold: 0.9,
            probe_count: 20,
            fallback_samples: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    /// Pool index of the accepted proxy.
    pub index: Option<usize>,
    /// `(proxy id, ρ)` for every candidate examined, in order.
    pub checks: Vec<(String, f64)>,
    pub probes: Vec<DesignPoint>,
    pub target_latency: Vec<f64>,
}

/// Tries pooled proxies nearest-first and returns the first whose predicted
/// latencies rank the probe designs like the target does. The probes are
/// sampled and measured on the target once and shared by all candidates.
pub fn match_proxy<R: Rng + ?Sized>(
    pool: &ProxyPool,
    space: &DesignSpace,
    target: &DeviceFeatures,
    settings: &MatchSettings,
    oracle: &Oracle<'_>,
    rng: &mut R,
) -> Result<MatchOutcome> {
    let mut outcome = MatchOutcome {
        index: None,
        checks: Vec::new(),
        probes: Vec::new(),
        target_latency: Vec::new(),
    };
    if pool.is_empty() {
        return Ok(outcome);
    }
    if settings.probe_count < 10 {
        return Err(Error::invalid("probe_count must be ≥ 10"));
    }
    outcome.probes = (0..settings.probe_count).map(|_| space.sample_uniform(rng)).collect();
    outcome.target_latency = outcome.probes.iter().map(|x| oracle.latency(x, target)).collect();
    for i in pool.ranked_candidates(space, target) {
        let entry = &pool.entries[i];
        let model = entry.model()?;
        let check = check_on_probes(
            &model,
            outcome.probes.clone(),
            outcome.target_latency.clone(),
            settings.threshold,
        )?;
        outcome.checks.push((entry.device.id.clone(), check.rho));
        if check.monotone {
            outcome.index = Some(i);
            break;
        }
    }
    Ok(outcome)
}

/// Trains latency and energy predictors for `target` and adds it to the pool
/// as a new proxy. The probe measurements from matching are reused as
/// latency training data, so the target is charged `fallback_samples`
/// latency and energy measurements in total. The accuracy predictor is
/// taken from `accuracy` (it does not depend on the device).
#[allow(clippy::too_many_arguments)]
pub fn add_target_as_proxy<R: Rng + ?Sized>(
    pool: &mut ProxyPool,
    space: &DesignSpace,
    target: &DeviceFeatures,
    matched: &MatchOutcome,
    accuracy: &MlpRegressor,
    settings: &MatchSettings,
    hyper: &PredictorHyper,
    granularity: f64,
    oracle: &Oracle<'_>,
    rng: &mut R,
) -> Result<usize> {
    let n = settings.fallback_samples.max(matched.probes.len());
    let mut designs = matched.probes.clone();
    designs.extend((designs.len()..n).map(|_| space.sample_uniform(rng)));
    let mut latencies = matched.target_latency.clone();
    latencies.extend(
        designs[matched.probes.len()..]
            .iter()
            .map(|x| oracle.latency(x, target)),
    );
    let energies: Vec<f64> = designs.iter().map(|x| oracle.energy(x, target)).collect();

    let (latency, _) = fit_labeled(Metric::Latency, space, target, &designs, &latencies, hyper, rng)?;
    let (energy, _) = fit_labeled(Metric::Energy, space, target, &designs, &energies, hyper, rng)?;
    let scale = ObjectiveScale::from_labels(&latencies, &energies)?;
    let predictors = PredictorSet {
        space: space.clone(),
        kind: PredictorKind::DeviceSpecific {
            device_id: target.id.clone(),
        },
        accuracy: accuracy.clone(),
        latency,
        energy,
        scale,
    };
    pool.entries
        .push(ProxyEntry::new(target.clone(), predictors, granularity));
    Ok(pool.entries.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device_world::{sample_adversarial, sample_monotone, MeasurementLedger};
    use crate::search::{brute_force_argmin, SearchParams};
    use crate::surrogate::{train_proxy_predictors_on, TrainingSettings};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reduced_scale(space: &DesignSpace, d: &DeviceFeatures) -> ObjectiveScale {
        let all = space.enumerate_all(128).unwrap();
        let lat: Vec<f64> = all.iter().map(|x| model_latency(space, x, d)).collect();
        let en: Vec<f64> = all.iter().map(|x| model_energy(space, x, d)).collect();
        ObjectiveScale::from_labels(&lat, &en).unwrap()
    }

    fn brute() -> InnerSolver {
        InnerSolver::BruteForce { limit: 1 << 12 }
    }

    #[test]
    fn spearman_reference_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation)
        ));
        assert!(matches!(
            spearman(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn spearman_matches_closed_form_without_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.gen_range(3..40);
            let a: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
            let (ra, rb) = (average_ranks(&a), average_ranks(&b));
            let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
            let nf = n as f64;
            let closed = 1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0));
            assert!((spearman(&a, &b).unwrap() - closed).abs() < 1e-12);
        }
    }

    #[test]
    fn proxy_objective_endpoints_and_linearity() {
        let space = DesignSpace::reduced();
        let d = DeviceFeatures::default_proxy();
        let model = ExactProxy {
            space: &space,
            device: &d,
            scale: reduced_scale(&space, &d),
        };
        let x = space.max_design();
        let acc = model.accuracy(&x);
        let lat = model.normalized(Metric::Latency, &x);
        assert_eq!(proxy_objective(&model, &x, 0.0).unwrap(), -acc);
        assert_eq!(proxy_objective(&model, &x, 1.0).unwrap(), lat);
        let mid = proxy_objective(&model, &x, 0.5).unwrap();
        assert!((mid - 0.5 * (-acc + lat)).abs() < 1e-15);
        assert!(proxy_objective(&model, &x, 1.5).is_err());
        assert!(proxy_objective(&model, &x, -0.1).is_err());
    }

    #[test]
    fn inner_solve_caches_and_hits_endpoints() {
        let space = DesignSpace::reduced();
        let d = DeviceFeatures::default_proxy();
        let model = ExactProxy {
            space: &space,
            device: &d,
            scale: reduced_scale(&space, &d),
        };
        let mut cache = TCache::new(0.001);
        let first = solve_inner(0.0, &mut cache, &model, &brute()).unwrap();
        assert!(!first.cache_hit);
        assert_eq!(first.design, space.max_design());
        let again = solve_inner(0.0004, &mut cache, &model, &brute()).unwrap();
        assert!(again.cache_hit);
        assert_eq!(again.evaluations, 0);
        assert_eq!(
            solve_inner(1.0, &mut cache, &model, &brute()).unwrap().design,
            space.min_design()
        );
    }

    #[test]
    fn exact_proxy_latency_is_non_increasing_in_t() {
        let space = DesignSpace::reduced();
        let d = DeviceFeatures::default_proxy();
        let model = ExactProxy {
            space: &space,
            device: &d,
            scale: reduced_scale(&space, &d),
        };
        let mut cache = TCache::new(0.001);
        let mut prev = f64::INFINITY;
        for k in 0..=1000 {
            let x = solve_inner(k as f64 / 1000.0, &mut cache, &model, &brute())
                .unwrap()
                .design;
            let l = model_latency(&space, &x, &d);
            assert!(l <= prev, "t = {}", k as f64 / 1000.0);
            prev = l;
        }
        for (t, x) in cache.iter() {
            let again = brute_force_argmin(|y| proxy_objective(&model, y, t).unwrap(), &space, 128)
                .unwrap()
                .0;
            assert_eq!(
                proxy_objective(&model, &again, t).unwrap(),
                proxy_objective(&model, x, t).unwrap()
            );
        }
    }

    #[test]
    fn bisection_budget_and_loose_bound() {
        let space = DesignSpace::reduced();
        let d = DeviceFeatures::default_proxy();
        let model = ExactProxy {
            space: &space,
            device: &d,
            scale: reduced_scale(&space, &d),
        };
        let ledger = MeasurementLedger::new();
        let oracle = Oracle::new(&space, &ledger);
        let settings = BisectionSettings::default();
        let mut cache = TCache::new(settings.granularity);
        let out = bisection_optimize(&d, 1e6, &settings, &mut cache, &model, &brute(), &oracle).unwrap();
        assert!(out.feasible);
        assert!(out.t_star < 0.002);
        assert_eq!(out.design, space.max_design());
        assert!(ledger.count(&d.id, Metric::Latency) <= 10);
        assert_eq!(ledger.count(&d.id, Metric::Latency) as usize, out.measurements);
    }

    #[test]
    fn impossible_bound_is_flagged() {
        let space = DesignSpace::reduced();
        let d = DeviceFeatures::default_proxy();
        let model = ExactProxy {
            space: &space,
            device: &d,
            scale: reduced_scale(&space, &d),
        };
        let ledger = MeasurementLedger::new();
        let oracle = Oracle::new(&space, &ledger);
        let settings = BisectionSettings::default();
        let mut cache = TCache::new(settings.granularity);
        let out = bisection_optimize(&d, 1e-3, &settings, &mut cache, &model, &brute(), &oracle).unwrap();
        assert!(!out.feasible);
        assert_eq!(out.design, space.min_design());
        assert!(out.measurements <= 10);
        assert!(bisection_optimize(&d, 0.0, &settings, &mut cache, &model, &brute(), &oracle).is_err());
    }

    /// Designs that minimize the exact proxy objective for some `t` on a
    /// fine grid; scalarization can return nothing else.
    fn reachable_1d(model: &ExactProxy<'_>) -> Vec<DesignPoint> {
        let mut out: Vec<DesignPoint> = (0..=2000)
            .map(|k| {
                let t = k as f64 / 2000.0;
                brute_force_argmin(|x| proxy_objective(model, x, t).unwrap(), model.space, 128)
                    .unwrap()
                    .0
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }

    #[test]
    fn bisection_on_monotone_family_finds_best_reachable_design() {
        let space = DesignSpace::reduced();
        let proxy = DeviceFeatures::default_proxy();
        let model = ExactProxy {
            space: &space,
            device: &proxy,
            scale: reduced_scale(&space, &proxy),
        };
        let reachable = reachable_1d(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let all = space.enumerate_all(128).unwrap();
        let settings = BisectionSettings::default();
        let mut cache = TCache::new(settings.granularity);
        for i in 0..8 {
            let target = sample_monotone(&mut rng, &proxy, format!("m{i}"));
            let mut lats: Vec<f64> = all.iter().map(|x| model_latency(&space, x, &target)).collect();
            lats.sort_by(f64::total_cmp);
            let bound = lats[(0.4 * 127.0_f64).round() as usize];
            let best_reachable = reachable
                .iter()
                .filter(|x| model_latency(&space, x, &target) <= bound)
                .map(|x| model_accuracy(&space, x))
                .fold(f64::NEG_INFINITY, f64::max);
            let ledger = MeasurementLedger::new();
            let oracle = Oracle::new(&space, &ledger);
            let out = bisection_optimize(&target, bound, &settings, &mut cache, &model, &brute(), &oracle).unwrap();
            assert!(ledger.count(&target.id, Metric::Latency) <= 10);
            assert!(out.feasible && out.latency <= bound * 1.02);
            assert!(reachable.contains(&out.design));
            assert!(model_accuracy(&space, &out.design) >= best_reachable, "device {i}");
        }
    }

    #[test]
    fn trace_csv_schema() {
        let out = BisectionOutcome {
            design: DesignPoint::from_indices(vec![0]),
            t_star: 0.5,
            latency: 1.0,
            measurements: 1,
            feasible: true,
            trace: vec![BisectionStep {
                iteration: 1,
                t: 0.5,
                measured_latency: 1.0,
                bound: 2.0,
                verdict: Verdict::Slack,
            }],
        };
        let mut buf = Vec::new();
        out.write_trace_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "iteration,t,measured_latency,bound,verdict\n1,0.5,1,2,slack\n"
        );
    }

    #[test]
    fn grid_corner_and_loose_energy() {
        let space = DesignSpace::reduced();
        let d = DeviceFeatures::default_proxy();
        let model = ExactProxy {
            space: &space,
            device: &d,
            scale: reduced_scale(&space, &d),
        };
        let ledger = MeasurementLedger::new();
        let oracle = Oracle::new(&space, &ledger);
        let mut cache = TCache2d::new(1e-6);
        let loose = grid_optimize_2d(
            &d,
            1e9,
            1e9,
            &GridSettings::default(),
            &mut cache,
            &model,
            &brute(),
            &oracle,
        )
        .unwrap();
        assert!(loose.feasible);
        assert_eq!(loose.t, (0.0, 0.0));
        assert_eq!(loose.design, space.max_design());

        // with the energy bound inactive the result matches 1-D bisection accuracy
        let all = space.enumerate_all(128).unwrap();
        let mut lats: Vec<f64> = all.iter().map(|x| model_latency(&space, x, &d)).collect();
        lats.sort_by(f64::total_cmp);
        let bound = lats[50];
        let g = grid_optimize_2d(
            &d,
            bound,
            1e9,
            &GridSettings::default(),
            &mut cache,
            &model,
            &brute(),
            &oracle,
        )
        .unwrap();
        let settings = BisectionSettings::default();
        let mut c1 = TCache::new(settings.granularity);
        let b = bisection_optimize(&d, bound, &settings, &mut c1, &model, &brute(), &oracle).unwrap();
        assert!(g.feasible && b.feasible);
        assert!((model_accuracy(&space, &g.design) - model_accuracy(&space, &b.design)).abs() <= 0.01);
    }

    #[test]
    fn grid_two_constraints_near_optimum() {
        let space = DesignSpace::reduced();
        let d = DeviceFeatures::default_proxy();
        let model = ExactProxy {
            space: &space,
            device: &d,
            scale: reduced_scale(&space, &d),
        };
        let all = space.enumerate_all(128).unwrap();
        let median = |f: &dyn Fn(&DesignPoint) -> f64| {
            let mut v: Vec<f64> = all.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v[64]
        };
        let lb = median(&|x| model_latency(&space, x, &d));
        let eb = median(&|x| model_energy(&space, x, &d));
        let optimum = all
            .iter()
            .filter(|x| model_latency(&space, x, &d) <= lb && model_energy(&space, x, &d) <= eb)
            .map(|x| model_accuracy(&space, x))
            .fold(f64::NEG_INFINITY, f64::max);
        let ledger = MeasurementLedger::new();
        let oracle = Oracle::new(&space, &ledger);
        let mut cache = TCache2d::new(1e-6);
        let g = grid_optimize_2d(
            &d,
            lb,
            eb,
            &GridSettings::default(),
            &mut cache,
            &model,
            &brute(),
            &oracle,
        )
        .unwrap();
        assert!(g.feasible);
        // best design any simplex weight can produce
        let n = 100;
        let mut best_reachable = f64::NEG_INFINITY;
        for i in 0..=n {
            for j in 0..=n - i {
                let (t1, t2) = (i as f64 / n as f64, j as f64 / n as f64);
                let x = brute_force_argmin(|x| proxy_objective_2d(&model, x, t1, t2).unwrap(), &space, 128)
                    .unwrap()
                    .0;
                if model_latency(&space, &x, &d) <= lb && model_energy(&space, &x, &d) <= eb {
                    best_reachable = best_reachable.max(model_accuracy(&space, &x));
                }
            }
        }
        assert!(best_reachable <= optimum);
        assert!(model_accuracy(&space, &g.design) >= best_reachable - 0.01);
        assert_eq!(g.measurements as u64, ledger.total());
    }

    #[test]
    fn monotonicity_detector_separates_families() {
        let space = DesignSpace::default();
        let proxy = DeviceFeatures::default_proxy();
        let model = ExactProxy {
            space: &space,
            device: &proxy,
            scale: ObjectiveScale::unit(),
        };
        let ledger = MeasurementLedger::new();
        let oracle = Oracle::new(&space, &ledger);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let same = check_monotonicity(&model, &proxy, 40, 0.9, &oracle, &mut rng).unwrap();
        assert!(same.monotone && same.rho > 0.999);
        let mono = sample_monotone(&mut rng, &proxy, "m".into());
        assert!(
            check_monotonicity(&model, &mono, 40, 0.9, &oracle, &mut rng)
                .unwrap()
                .monotone
        );
        let adv = sample_adversarial(&mut rng, &proxy, "a".into());
        assert!(
            !check_monotonicity(&model, &adv, 40, 0.9, &oracle, &mut rng)
                .unwrap()
                .monotone
        );
        assert_eq!(ledger.count("m", Metric::Latency), 40);
        assert!(check_monotonicity(&model, &mono, 9, 0.9, &oracle, &mut rng).is_err());
    }

    fn quick_hyper() -> PredictorHyper {
        PredictorHyper {
            hidden: vec![16, 16],
            training: TrainingSettings {
                epochs: 200,
                ..TrainingSettings::default()
            },
        }
    }

    #[test]
    fn pool_matching_and_fallback() {
        let space = DesignSpace::reduced();
        let proxy = DeviceFeatures::default_proxy();
        let ledger = MeasurementLedger::new();
        let oracle = Oracle::new(&space, &ledger);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let designs = space.enumerate_all(128).unwrap();
        let (set, _) = train_proxy_predictors_on(&space, &proxy, &designs, &oracle, &quick_hyper(), &mut rng).unwrap();
        let settings = MatchSettings {
            fallback_samples: 60,
            ..MatchSettings::default()
        };

        let mut pool = ProxyPool::default();
        let empty = match_proxy(&pool, &space, &proxy, &settings, &oracle, &mut rng).unwrap();
        assert_eq!(empty.index, None);
        assert!(empty.probes.is_empty());

        pool.entries.push(ProxyEntry::new(proxy.clone(), set.clone(), 0.001));
        let mono = sample_monotone(&mut rng, &proxy, "mono".into());
        let m = match_proxy(&pool, &space, &mono, &settings, &oracle, &mut rng).unwrap();
        assert_eq!(m.index, Some(0));
        assert_eq!(ledger.snapshot().device_total("mono"), 20);

        let adv = sample_adversarial(&mut rng, &proxy, "adv".into());
        let a = match_proxy(&pool, &space, &adv, &settings, &oracle, &mut rng).unwrap();
        assert_eq!(a.index, None);
        let idx = add_target_as_proxy(
            &mut pool,
            &space,
            &adv,
            &a,
            &set.accuracy,
            &settings,
            &quick_hyper(),
            0.001,
            &oracle,
            &mut rng,
        )
        .unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(pool.entries[idx].device.id, "adv");
        assert_eq!(ledger.count("adv", Metric::Latency), 60);
        assert_eq!(ledger.count("adv", Metric::Energy), 60);

        // the new proxy now matches its own device
        let again = match_proxy(&pool, &space, &adv, &settings, &oracle, &mut rng).unwrap();
        assert_eq!(again.index, Some(1));

        let dir = tempfile::tempdir().unwrap();
        pool.save_dir(dir.path()).unwrap();
        let back = ProxyPool::load_dir(dir.path(), 0.001).unwrap();
        assert_eq!(back, pool);
    }

    #[test]
    fn predictor_proxy_rejects_untrained() {
        let space = DesignSpace::reduced();
        let proxy = DeviceFeatures::default_proxy();
        let ledger = MeasurementLedger::new();
        let oracle = Oracle::new(&space, &ledger);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let designs = space.enumerate_all(128).unwrap();
        let (mut set, _) =
            train_proxy_predictors_on(&space, &proxy, &designs, &oracle, &quick_hyper(), &mut rng).unwrap();
        assert!(PredictorProxy::new(&set, &proxy).is_ok());
        set.accuracy.trained = false;
        assert!(PredictorProxy::new(&set, &proxy).is_err());
    }

    #[test]
    fn evolutionary_inner_solver_is_supported() {
        let space = DesignSpace::reduced();
        let d = DeviceFeatures::default_proxy();
        let model = ExactProxy {
            space: &space,
            device: &d,
            scale: reduced_scale(&space, &d),
        };
        let solver = InnerSolver::Evolutionary {
            params: SearchParams::default(),
        };
        let mut cache = TCache::new(0.001);
        let r = solve_inner(0.0, &mut cache, &model, &solver).unwrap();
        assert_eq!(r.design, space.max_design());
        assert!(r.evaluations <= 32 * 30);
    }
}
