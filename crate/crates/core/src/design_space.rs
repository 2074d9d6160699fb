//! The discrete DNN design space and its operators.
//!
//! A design is stored as a flat list of choice indices, stage-major
//! (depth, width, kernel for each stage) with the global bit-width last.
//! Ordering designs by that list is the lexicographic tie-break used by every
//! search in the crate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fields per stage in the index list: depth, width, kernel.
pub const FIELDS_PER_STAGE: usize = 3;

/// The set of allowed choices for every design dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpace {
    pub num_stages: usize,
    pub depth_choices: Vec<u32>,
    pub width_choices: Vec<f64>,
    pub kernel_choices: Vec<u32>,
    pub bits_choices: Vec<u32>,
}

/// One resolved stage of a design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub depth: u32,
    pub width: f64,
    pub kernel: u32,
}

/// One design in a [`DesignSpace`], as choice indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignPoint {
    indices: Vec<usize>,
}

/// Per-dimension normalized encoding of a design, every component in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContinuousEncoding(pub Vec<f64>);

impl ContinuousEncoding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl DesignPoint {
    /// Builds a design from raw indices. Use [`DesignSpace::check`] to validate.
    pub fn from_indices(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Number of fields that differ from `other` (Hamming distance).
    pub fn hamming(&self, other: &DesignPoint) -> usize {
        self.indices.iter().zip(&other.indices).filter(|(a, b)| a != b).count()
    }
}

impl std::fmt::Display for DesignPoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.indices.iter().map(|i| i.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

impl Default for DesignSpace {
    /// Four stages, depth 1..4, width 0.5..1.25, kernel 3/5/7, 4..32 bits.
    fn default() -> Self {
        Self {
            num_stages: 4,
            depth_choices: vec![1, 2, 3, 4],
            width_choices: vec![0.5, 0.75, 1.0, 1.25],
            kernel_choices: vec![3, 5, 7],
            bits_choices: vec![4, 8, 16, 32],
        }
    }
}

fn strictly_increasing<T: PartialOrd>(xs: &[T]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

impl DesignSpace {
    /// The 128-design space small enough for exhaustive oracles.
    pub fn reduced() -> Self {
        Self {
            num_stages: 2,
            depth_choices: vec![1, 2],
            width_choices: vec![0.5, 1.0],
            kernel_choices: vec![3, 5],
            bits_choices: vec![8, 32],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_stages == 0 {
            return Err(Error::invalid("design space needs at least one stage"));
        }
        let lists: [(&str, usize, bool); 4] = [
            (
                "depth_choices",
                self.depth_choices.len(),
                strictly_increasing(&self.depth_choices) && self.depth_choices[..].iter().all(|&d| d > 0),
            ),
            (
                "width_choices",
                self.width_choices.len(),
                strictly_increasing(&self.width_choices)
                    && self.width_choices.iter().all(|w| w.is_finite() && *w > 0.0),
            ),
            (
                "kernel_choices",
                self.kernel_choices.len(),
                strictly_increasing(&self.kernel_choices) && self.kernel_choices.iter().all(|k| k % 2 == 1),
            ),
            (
                "bits_choices",
                self.bits_choices.len(),
                strictly_increasing(&self.bits_choices) && self.bits_choices.iter().all(|&b| b > 0),
            ),
        ];
        for (name, len, ok) in lists {
            if len == 0 {
                return Err(Error::invalid(format!("{name} is empty")));
            }
            if !ok {
                return Err(Error::invalid(format!(
                    "{name} must be positive and strictly increasing (kernels odd)"
                )));
            }
        }
        self.cardinality()?;
        Ok(())
    }

    /// Length of a design's index list and of its encoding.
    pub fn dims(&self) -> usize {
        FIELDS_PER_STAGE * self.num_stages + 1
    }

    /// Number of choices available in dimension `dim`.
    pub fn choice_count(&self, dim: usize) -> usize {
        if dim + 1 == self.dims() {
            return self.bits_choices.len();
        }
        match dim % FIELDS_PER_STAGE {
            0 => self.depth_choices.len(),
            1 => self.width_choices.len(),
            _ => self.kernel_choices.len(),
        }
    }

    /// `(|depth|·|width|·|kernel|)^num_stages · |bits|`, or an error on overflow.
    pub fn cardinality(&self) -> Result<u128> {
        let per_stage = (self.depth_choices.len() * self.width_choices.len() * self.kernel_choices.len()) as u128;
        let mut total = self.bits_choices.len() as u128;
        for _ in 0..self.num_stages {
            total = total
                .checked_mul(per_stage)
                .ok_or_else(|| Error::invalid("design space cardinality overflows u128"))?;
        }
        Ok(total)
    }

    /// Verifies that `x` belongs to this space.
    pub fn check(&self, x: &DesignPoint) -> Result<()> {
        if x.len() != self.dims() {
            return Err(Error::InvalidDesign(format!(
                "design has {} fields, space expects {}",
                x.len(),
                self.dims()
            )));
        }
        for (dim, &idx) in x.indices.iter().enumerate() {
            if idx >= self.choice_count(dim) {
                return Err(Error::InvalidDesign(format!(
                    "field {dim} index {idx} out of range (0..{})",
                    self.choice_count(dim)
                )));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &DesignPoint) -> bool {
        self.check(x).is_ok()
    }

    /// Resolved values of stage `i`. Panics if `x` is not in this space.
    pub fn stage(&self, x: &DesignPoint, i: usize) -> Stage {
        let base = FIELDS_PER_STAGE * i;
        Stage {
            depth: self.depth_choices[x.indices[base]],
            width: self.width_choices[x.indices[base + 1]],
            kernel: self.kernel_choices[x.indices[base + 2]],
        }
    }

    pub fn stages<'a>(&'a self, x: &'a DesignPoint) -> impl Iterator<Item = Stage> + 'a {
        (0..self.num_stages).map(move |i| self.stage(x, i))
    }

    pub fn bits(&self, x: &DesignPoint) -> u32 {
        self.bits_choices[x.indices[self.dims() - 1]]
    }

    /// The design with every field at its first choice.
    pub fn min_design(&self) -> DesignPoint {
        DesignPoint::from_indices(vec![0; self.dims()])
    }

    /// The design with every field at its last choice.
    pub fn max_design(&self) -> DesignPoint {
        DesignPoint::from_indices((0..self.dims()).map(|d| self.choice_count(d) - 1).collect())
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> DesignPoint {
        let indices = (0..self.dims())
            .map(|d| rng.gen_range(0..self.choice_count(d)))
            .collect();
        DesignPoint { indices }
    }

    pub fn encode(&self, x: &DesignPoint) -> Result<ContinuousEncoding> {
        self.check(x)?;
        let values = x
            .indices
            .iter()
            .enumerate()
            .map(|(dim, &idx)| {
                let n = self.choice_count(dim);
                if n == 1 {
                    0.5
                } else {
                    idx as f64 / (n - 1) as f64
                }
            })
            .collect();
        Ok(ContinuousEncoding(values))
    }

    /// Snaps each component to the nearest grid index, clamping to `[0, 1]`
    /// first. Ties round up. Non-finite components map to the first choice.
    pub fn decode(&self, values: &[f64]) -> Result<DesignPoint> {
        if values.len() != self.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                got: values.len(),
            });
        }
        let indices = values
            .iter()
            .enumerate()
            .map(|(dim, &c)| {
                let top = self.choice_count(dim) - 1;
                let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) };
                ((c * top as f64 + 0.5).floor() as usize).min(top)
            })
            .collect();
        Ok(DesignPoint { indices })
    }

    /// Resamples each field with probability `rate`; a resampled field moves
    /// to a different choice drawn uniformly from the others.
    pub fn mutate<R: Rng + ?Sized>(&self, x: &DesignPoint, rate: f64, rng: &mut R) -> DesignPoint {
        let mut indices = x.indices.clone();
        for (dim, idx) in indices.iter_mut().enumerate() {
            let n = self.choice_count(dim);
            if rng.gen::<f64>() < rate && n > 1 {
                let other = rng.gen_range(0..n - 1);
                *idx = if other >= *idx { other + 1 } else { other };
            }
        }
        DesignPoint { indices }
    }

    /// Uniform crossover: each field from `a` or `b` with probability ½.
    pub fn crossover<R: Rng + ?Sized>(&self, a: &DesignPoint, b: &DesignPoint, rng: &mut R) -> Result<DesignPoint> {
        self.check(a)?;
        self.check(b)?;
        let indices = a
            .indices
            .iter()
            .zip(&b.indices)
            .map(|(&ia, &ib)| if rng.gen::<bool>() { ia } else { ib })
            .collect();
        Ok(DesignPoint { indices })
    }

    /// Every design in lexicographic index order.
    pub fn enumerate_all(&self, limit: u128) -> Result<Vec<DesignPoint>> {
        let cardinality = self.cardinality()?;
        if cardinality > limit {
            return Err(Error::SpaceTooLarge { cardinality, limit });
        }
        let dims = self.dims();
        let mut out = Vec::with_capacity(cardinality as usize);
        let mut current = vec![0usize; dims];
        loop {
            out.push(DesignPoint {
                indices: current.clone(),
            });
            // odometer, last field fastest
            let mut dim = dims;
            loop {
                if dim == 0 {
                    return Ok(out);
                }
                dim -= 1;
                current[dim] += 1;
                if current[dim] < self.choice_count(dim) {
                    break;
                }
                current[dim] = 0;
            }
        }
    }

    /// All designs within Hamming distance `radius` of `center`, in
    /// lexicographic order, `center` included.
    pub fn hamming_ball(&self, center: &DesignPoint, radius: usize) -> Vec<DesignPoint> {
        let mut out = vec![center.clone()];
        self.ball_rec(center.indices.clone(), 0, radius, false, &mut out);
        out.sort();
        out
    }

    fn ball_rec(&self, current: Vec<usize>, start: usize, budget: usize, changed: bool, out: &mut Vec<DesignPoint>) {
        if changed {
            out.push(DesignPoint {
                indices: current.clone(),
            });
        }
        if budget == 0 {
            return;
        }
        for dim in start..self.dims() {
            for choice in 0..self.choice_count(dim) {
                if choice == current[dim] {
                    continue;
                }
                let mut next = current.clone();
                next[dim] = choice;
                self.ball_rec(next, dim + 1, budget - 1, true, out);
            }
        }
    }
}
