//! Minimizers over the discrete design space.
//!
//! Every search breaks ties on the design's index list, so results depend only
//! on the seed, never on thread scheduling.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design_space::{DesignPoint, DesignSpace};
use crate::device_world::{model_accuracy, model_energy, model_latency, DeviceFeatures, Oracle};
use crate::error::{Error, Result};
use crate::par;
use crate::surrogate::{ObjectiveScale, TradeoffWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchParams {
    pub population: usize,
    pub generations: usize,
    pub mutation_rate: f64,
    pub elite_fraction: f64,
    pub seed: u64,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            population: 32,
            generations: 30,
            mutation_rate: 0.1,
            elite_fraction: 0.25,
            seed: 0,
        }
    }
}

impl SearchParams {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.population < 2 {
            return Err(Error::invalid("population must be ≥ 2"));
        }
        if self.generations < 1 {
            return Err(Error::invalid("generations must be ≥ 1"));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::invalid("mutation_rate must lie in [0, 1]"));
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction < 1.0) {
            return Err(Error::invalid("elite_fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Upper bound on distinct objective evaluations of one search.
    pub fn budget(&self) -> usize {
        self.population * self.generations
    }

    fn elite_count(&self) -> usize {
        ((self.elite_fraction * self.population as f64).ceil() as usize).clamp(1, self.population - 1)
    }
}

/// Latency (ms) and energy (mJ) bounds; absent means unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    #[serde(default)]
    pub latency_bound: Option<f64>,
    #[serde(default)]
    pub energy_bound: Option<f64>,
}

impl ConstraintSpec {
    pub fn latency(bound: f64) -> Self {
        Self {
            latency_bound: Some(bound),
            energy_bound: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for b in [self.latency_bound, self.energy_bound].into_iter().flatten() {
            if !(b > 0.0) {
                return Err(Error::invalid(format!("constraint bounds must be positive, got {b}")));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.latency_bound.is_none() && self.energy_bound.is_none()
    }

    /// Sum of relative excesses over the active bounds; zero when feasible.
    pub fn violation(&self, latency: f64, energy: f64) -> f64 {
        let excess = |v: f64, b: Option<f64>| b.map_or(0.0, |b| ((v - b) / b).max(0.0));
        excess(latency, self.latency_bound) + excess(energy, self.energy_bound)
    }

    pub fn satisfied(&self, latency: f64, energy: f64) -> bool {
        self.violation(latency, energy) == 0.0
    }
}

/// Orders objective values with NaN treated as +∞, then by design.
pub fn compare_candidates(a: (f64, &DesignPoint), b: (f64, &DesignPoint)) -> Ordering {
    let key = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    key(a.0).total_cmp(&key(b.0)).then_with(|| a.1.cmp(b.1))
}

/// `−Acc + λ1·Energy/scale_E + λ2·Latency/scale_L` with measured values.
/// Charges one accuracy query plus one query per metric with non-zero weight.
pub fn relaxed_objective_true(
    x: &DesignPoint,
    d: &DeviceFeatures,
    lambda: TradeoffWeights,
    scale: ObjectiveScale,
    oracle: &Oracle<'_>,
) -> f64 {
    let mut f = -oracle.accuracy(x);
    if lambda.lambda1 != 0.0 {
        f += lambda.lambda1 * oracle.energy(x, d) / scale.energy;
    }
    if lambda.lambda2 != 0.0 {
        f += lambda.lambda2 * oracle.latency(x, d) / scale.latency;
    }
    f
}

/// Same value as [`relaxed_objective_true`] without touching a ledger; used
/// by test oracles and report audits.
pub fn relaxed_objective_model(
    space: &DesignSpace,
    x: &DesignPoint,
    d: &DeviceFeatures,
    lambda: TradeoffWeights,
    scale: ObjectiveScale,
) -> f64 {
    let mut f = -model_accuracy(space, x);
    if lambda.lambda1 != 0.0 {
        f += lambda.lambda1 * model_energy(space, x, d) / scale.energy;
    }
    if lambda.lambda2 != 0.0 {
        f += lambda.lambda2 * model_latency(space, x, d) / scale.latency;
    }
    f
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: DesignPoint,
    pub value: f64,
    /// Distinct designs evaluated.
    pub evaluations: usize,
    /// Best-so-far value after each generation.
    pub trace: Vec<f64>,
}

impl SearchOutcome {
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["generation", "best_value"])?;
        for (g, v) in self.trace.iter().enumerate() {
            w.write_record([g.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<trace>", e))?;
        Ok(())
    }

    pub fn save_trace_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_trace_csv(file)
    }
}

/// Elitist genetic search. Each generation keeps the best `elite_fraction`
/// of the population and refills it with mutated crossovers of two elites.
/// Values are memoized, so a design is evaluated at most once.
pub fn evolutionary_search<F>(objective: F, space: &DesignSpace, params: &SearchParams) -> Result<SearchOutcome>
where
    F: Fn(&DesignPoint) -> f64 + Sync + Send,
{
    params.validate()?;
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut memo: BTreeMap<DesignPoint, f64> = BTreeMap::new();
    let mut population: Vec<DesignPoint> = (0..params.population).map(|_| space.sample_uniform(&mut rng)).collect();
    let elites = params.elite_count();
    let mut best: Option<(f64, DesignPoint)> = None;
    let mut trace = Vec::with_capacity(params.generations);

    for generation in 0..params.generations {
        let mut fresh: Vec<DesignPoint> = population.iter().filter(|x| !memo.contains_key(x)).cloned().collect();
        fresh.sort();
        fresh.dedup();
        let values = par::map(&fresh, |x| objective(x));
        memo.extend(fresh.into_iter().zip(values));

        let mut scored: Vec<(f64, DesignPoint)> = population.into_iter().map(|x| (memo[&x], x)).collect();
        scored.sort_by(|a, b| compare_candidates((a.0, &a.1), (b.0, &b.1)));
        scored.dedup_by(|a, b| a.1 == b.1);
        let leader = &scored[0];
        if best.as_ref().is_none_or(|b| {
            compare_candidates((leader.0, &leader.1), (b.0, &b.1)) == Ordering::Less
        }) {
            best = Some(leader.clone());
        }
        trace.push(best.as_ref().map(|b| b.0).unwrap_or(f64::INFINITY));
        if generation + 1 == params.generations {
            break;
        }

        let parents: Vec<DesignPoint> = scored.into_iter().take(elites).map(|(_, x)| x).collect();
        let mut next = parents.clone();
        while next.len() < params.population {
            let a = parents.choose(&mut rng).expect("non-empty elites");
            let b = parents.choose(&mut rng).expect("non-empty elites");
            let child = space.crossover(a, b, &mut rng)?;
            next.push(space.mutate(&child, params.mutation_rate, &mut rng));
        }
        population = next;
    }

    let (value, best) = best.expect("at least one generation");
    Ok(SearchOutcome {
        best,
        value,
        evaluations: memo.len(),
        trace,
    })
}

/// Exhaustive scan in enumeration order; the first minimum wins.
pub fn brute_force_argmin<F>(objective: F, space: &DesignSpace, limit: u128) -> Result<(DesignPoint, f64)>
where
    F: Fn(&DesignPoint) -> f64 + Sync + Send,
{
    let all = space.enumerate_all(limit)?;
    let values = par::map(&all, |x| objective(x));
    let mut best = 0;
    for i in 1..all.len() {
        if compare_candidates((values[i], &all[i]), (values[best], &all[best])) == Ordering::Less {
            best = i;
        }
    }
    Ok((all[best].clone(), values[best]))
}

/// Minimizer used inside the outer weight searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InnerSolver {
    Evolutionary { params: SearchParams },
    BruteForce { limit: u64 },
}

impl Default for InnerSolver {
    fn default() -> Self {
        InnerSolver::Evolutionary {
            params: SearchParams::default(),
        }
    }
}

impl InnerSolver {
    /// Returns the minimizer and the number of objective evaluations spent.
    pub fn minimize<F>(&self, objective: F, space: &DesignSpace) -> Result<(DesignPoint, f64, usize)>
    where
        F: Fn(&DesignPoint) -> f64 + Sync + Send,
    {
        match self {
            InnerSolver::Evolutionary { params } => {
                let out = evolutionary_search(objective, space, params)?;
                Ok((out.best, out.value, out.evaluations))
            }
            InnerSolver::BruteForce { limit } => {
                let n = space.cardinality()?;
                let (x, v) = brute_force_argmin(objective, space, u128::from(*limit))?;
                Ok((x, v, n as usize))
            }
        }
    }
}

/// Weight values swept per active constraint: `0` and `10⁻³·2ᵏ` for `k = 0..=20`.
pub fn lambda_sweep_values() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((0..=20).map(|k| 1e-3 * f64::powi(2.0, k)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub lambda: TradeoffWeights,
    pub design: DesignPoint,
    pub accuracy: f64,
    pub latency: f64,
    pub energy: f64,
    pub feasible: bool,
}

/// Sweeps trade-off weights over the geometric grid of each active
/// constraint, solves the relaxed problem with `inner` for each, measures the
/// distinct resulting designs once on `d`, and returns the most accurate
/// feasible one. With no feasible design the least-violating result is
/// returned with `feasible = false`.
pub fn calibrate_lambda<F>(
    d: &DeviceFeatures,
    constraints: &ConstraintSpec,
    inner: F,
    oracle: &Oracle<'_>,
) -> Result<Calibration>
where
    F: Fn(TradeoffWeights) -> Result<DesignPoint> + Sync + Send,
{
    if constraints.is_empty() {
        return Err(Error::invalid("calibrate_lambda needs at least one bound"));
    }
    constraints.validate()?;
    let sweep = lambda_sweep_values();
    let energy_axis: Vec<f64> = if constraints.energy_bound.is_some() {
        sweep.clone()
    } else {
        vec![0.0]
    };
    let latency_axis: Vec<f64> = if constraints.latency_bound.is_some() {
        sweep
    } else {
        vec![0.0]
    };
    let grid: Vec<TradeoffWeights> = energy_axis
        .iter()
        .flat_map(|&l1| {
            latency_axis.iter().map(move |&l2| TradeoffWeights {
                lambda1: l1,
                lambda2: l2,
            })
        })
        .collect();
    let designs = par::map(&grid, |&lambda| inner(lambda))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut measured: BTreeMap<DesignPoint, (f64, f64, f64)> = BTreeMap::new();
    let mut best: Option<(Calibration, f64)> = None;
    for (lambda, x) in grid.into_iter().zip(designs) {
        let (accuracy, latency, energy) = *measured.entry(x.clone()).or_insert_with(|| {
            let lat = if constraints.latency_bound.is_some() {
                oracle.latency(&x, d)
            } else {
                f64::NAN
            };
            let en = if constraints.energy_bound.is_some() {
                oracle.energy(&x, d)
            } else {
                f64::NAN
            };
            (oracle.accuracy(&x), lat, en)
        });
        let violation = constraints.violation(latency, energy);
        let candidate = Calibration {
            lambda,
            design: x,
            accuracy,
            latency,
            energy,
            feasible: violation == 0.0,
        };
        let better = match &best {
            None => true,
            Some((b, bv)) => match (candidate.feasible, b.feasible) {
                (true, false) => true,
                (false, true) => false,
                (true, true) => candidate.accuracy > b.accuracy,
                (false, false) => violation < *bv,
            },
        };
        if better {
            best = Some((candidate, violation));
        }
    }
    Ok(best.expect("non-empty grid").0)
}
