//! Pristine/corrupt decomposition of the gradient and its null-world
//! baselines.
//!
//! With `g = g_p + g_c` (sums of pristine and corrupt per-example gradients)
//! the first-order loss reduction `<g, g>` splits exactly into `<g, g_p>`
//! and `<g, g_c>`. The fractions `f_p`, `f_c` and the size-normalized
//! running sums `i_p`, `i_c` are computed on a fixed sample of coordinates,
//! both for the real designation and for replicas in which the designations
//! are randomly permuted.

use std::fmt;

use thiserror::Error;

use crate::net::{GradientBuffer, MlpParams, ParamIndex, Real};
use crate::rng::{Rng, Stream};

/// Below this `<g, g>` the fractions are recorded as undefined.
pub const MIN_SQUARED_NORM: f64 = 1e-30;

#[derive(Debug, Error, PartialEq)]
pub enum CoherenceError {
    #[error("no examples to split")]
    EmptySample,
    #[error("{examples} gradients but {designations} designations")]
    Designations { examples: usize, designations: usize },
    #[error("group size is zero")]
    EmptyGroup,
    #[error("directions are not mutually orthogonal (inner product {0:e})")]
    NotOrthogonal(f64),
    #[error("vector lengths differ")]
    Length,
}

/// Fixed subset of weight coordinates and of examples, drawn once per
/// experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateSample {
    pub coordinates: Vec<ParamIndex>,
    pub examples: Vec<usize>,
    pub seed: u64,
}

impl CoordinateSample {
    /// Up to `per_layer` weights from each layer (without replacement) and
    /// up to `num_examples` of `population` example indices.
    pub fn draw<T: Real>(params: &MlpParams<T>, per_layer: usize, population: usize, num_examples: usize, seed: u64) -> Self {
        let base = Rng::for_stream(seed, Stream::CoordinateSample);
        let mut coordinates = Vec::new();
        for (l, layer) in params.layers().iter().enumerate() {
            let n = layer.weights.len();
            let mut rng = base.derive(l as u64);
            coordinates.extend(
                rng.sample_indices(n, per_layer.min(n))
                    .into_iter()
                    .map(|index| ParamIndex { layer: l, index }),
            );
        }
        let mut rng = Rng::for_stream(seed, Stream::ExampleSample);
        let examples = rng.sample_indices(population, num_examples.min(population));
        CoordinateSample {
            coordinates,
            examples,
            seed,
        }
    }

    /// Every weight coordinate (no biases), in parameter order.
    pub fn all_weights<T: Real>(params: &MlpParams<T>) -> Vec<ParamIndex> {
        params
            .layers()
            .iter()
            .enumerate()
            .flat_map(|(layer, l)| (0..l.weights.len()).map(move |index| ParamIndex { layer, index }))
            .collect()
    }

    pub fn per_layer_counts(&self, num_layers: usize) -> Vec<usize> {
        let mut counts = vec![0; num_layers];
        for c in &self.coordinates {
            counts[c.layer] += 1;
        }
        counts
    }
}

/// Per-example gradients restricted to `coords`, one row per batch row.
pub fn restrict<T: Real>(grads: &GradientBuffer<T>, coords: &[ParamIndex]) -> Vec<Vec<f64>> {
    (0..grads.m())
        .map(|e| coords.iter().map(|&c| grads.per_example(c, e).f64()).collect())
        .collect()
}

/// `(g_p, g_c)`: sums of the pristine and corrupt rows, in row order.
pub fn split_gradient(per_example: &[Vec<f64>], pristine: &[bool]) -> Result<(Vec<f64>, Vec<f64>), CoherenceError> {
    if per_example.is_empty() {
        return Err(CoherenceError::EmptySample);
    }
    if per_example.len() != pristine.len() {
        return Err(CoherenceError::Designations {
            examples: per_example.len(),
            designations: pristine.len(),
        });
    }
    let dim = per_example[0].len();
    let mut gp = vec![0.0; dim];
    let mut gc = vec![0.0; dim];
    for (row, &is_pristine) in per_example.iter().zip(pristine) {
        if row.len() != dim {
            return Err(CoherenceError::Length);
        }
        let target = if is_pristine { &mut gp } else { &mut gc };
        for (t, v) in target.iter_mut().zip(row) {
            *t += v;
        }
    }
    Ok((gp, gc))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `<g, g_p>`, `<g, g_c>` and `<g, g>` for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerProducts {
    pub pristine: f64,
    pub corrupt: f64,
    pub total: f64,
}

impl InnerProducts {
    pub fn of(g: &[f64], gp: &[f64], gc: &[f64]) -> Self {
        InnerProducts {
            pristine: dot(g, gp),
            corrupt: dot(g, gc),
            total: dot(g, g),
        }
    }
}

/// `(f_p, f_c) = (<g, g_p>, <g, g_c>) / <g, g>`, or `None` when `<g, g>` is
/// below [`MIN_SQUARED_NORM`].
pub fn fraction_stats(g: &[f64], gp: &[f64], gc: &[f64]) -> Result<Option<(f64, f64)>, CoherenceError> {
    if g.len() != gp.len() || g.len() != gc.len() {
        return Err(CoherenceError::Length);
    }
    let ip = InnerProducts::of(g, gp, gc);
    Ok(fractions(&ip))
}

fn fractions(ip: &InnerProducts) -> Option<(f64, f64)> {
    (ip.total >= MIN_SQUARED_NORM).then(|| (ip.pristine / ip.total, ip.corrupt / ip.total))
}

/// Prefix sums of the per-step inner products scaled by `1/|p|`, `1/|c|`.
pub fn cumulative_means(history: &[(f64, f64)], pristine: usize, corrupt: usize) -> Result<(Vec<f64>, Vec<f64>), CoherenceError> {
    if pristine == 0 || corrupt == 0 {
        return Err(CoherenceError::EmptyGroup);
    }
    let (mut sp, mut sc) = (0.0, 0.0);
    let mut ip = Vec::with_capacity(history.len());
    let mut ic = Vec::with_capacity(history.len());
    for &(p, c) in history {
        sp += p;
        sc += c;
        ip.push(sp / pristine as f64);
        ic.push(sc / corrupt as f64);
    }
    Ok((ip, ic))
}

/// `replicas` random permutations of the designation vector.
pub fn null_worlds(pristine: &[bool], replicas: usize, seed: u64) -> Vec<Vec<bool>> {
    let base = Rng::for_stream(seed, Stream::NullWorlds);
    (0..replicas)
        .map(|r| {
            let mut mask = pristine.to_vec();
            base.derive(r as u64).shuffle(&mut mask);
            mask
        })
        .collect()
}

/// Result of combining two examples that share one gradient direction.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoExampleGradient {
    /// `g_a1 + 2 g_ab + g_b1`.
    pub combined: Vec<f64>,
    /// Projection coefficient of `combined` on each input direction;
    /// `None` for a zero direction.
    pub coefficient_a: Option<f64>,
    pub coefficient_shared: Option<f64>,
    pub coefficient_b: Option<f64>,
}

impl TwoExampleGradient {
    /// The shared direction enters with twice the weight of either
    /// example-specific direction.
    pub fn shared_is_doubled(&self) -> bool {
        match (self.coefficient_a, self.coefficient_shared, self.coefficient_b) {
            (Some(a), Some(s), Some(b)) => (s - 2.0 * a).abs() < 1e-12 && (s - 2.0 * b).abs() < 1e-12,
            _ => false,
        }
    }
}

/// Two examples with gradients `g_a = g_a1 + g_ab` and `g_b = g_ab + g_b1`
/// built from mutually orthogonal directions.
pub fn two_example_oracle(a_only: &[f64], shared: &[f64], b_only: &[f64]) -> Result<TwoExampleGradient, CoherenceError> {
    if a_only.len() != shared.len() || b_only.len() != shared.len() {
        return Err(CoherenceError::Length);
    }
    for (x, y) in [(a_only, shared), (a_only, b_only), (shared, b_only)] {
        let ip = dot(x, y);
        let scale = (dot(x, x) * dot(y, y)).sqrt();
        if ip.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(CoherenceError::NotOrthogonal(ip));
        }
    }
    let combined: Vec<f64> = (0..shared.len()).map(|i| a_only[i] + 2.0 * shared[i] + b_only[i]).collect();
    let coefficient = |d: &[f64]| {
        let n = dot(d, d);
        (n > 0.0).then(|| dot(&combined, d) / n)
    };
    Ok(TwoExampleGradient {
        coefficient_a: coefficient(a_only),
        coefficient_shared: coefficient(shared),
        coefficient_b: coefficient(b_only),
        combined,
    })
}

/// Which designation a statistic was computed under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum World {
    Real,
    Null(usize),
}

impl fmt::Display for World {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            World::Real => f.write_str("real"),
            World::Null(r) => write!(f, "null_{r}"),
        }
    }
}

/// Where per-example gradients for the statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StatMode {
    /// The training minibatch of the step.
    #[default]
    Minibatch,
    /// A fixed example sample, recomputed at every logged step.
    Exact,
}

impl StatMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StatMode::Minibatch => "minibatch",
            StatMode::Exact => "exact",
        }
    }
}

impl std::str::FromStr for StatMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "minibatch" => Ok(StatMode::Minibatch),
            "exact" => Ok(StatMode::Exact),
            other => Err(format!("unknown statistic mode `{other}` (minibatch|exact)")),
        }
    }
}

/// One logged statistic row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherenceRow {
    pub step: usize,
    pub world: World,
    pub f_p: Option<f64>,
    pub f_c: Option<f64>,
    pub i_p: Option<f64>,
    pub i_c: Option<f64>,
}

/// Time series of the four statistics for one world.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSeries {
    pub world: World,
    pub designation: Vec<bool>,
    pub pristine: usize,
    pub corrupt: usize,
    pub rows: Vec<CoherenceRow>,
}

/// Statistics for the real designation and every null replica.
#[derive(Debug, Clone, PartialEq)]
pub struct CoherenceStats {
    pub mode: StatMode,
    pub worlds: Vec<WorldSeries>,
}

impl CoherenceStats {
    pub fn real(&self) -> &WorldSeries {
        &self.worlds[0]
    }

    pub fn nulls(&self) -> &[WorldSeries] {
        &self.worlds[1..]
    }

    /// All rows ordered by step, then world.
    pub fn rows(&self) -> Vec<CoherenceRow> {
        let mut rows: Vec<CoherenceRow> = self.worlds.iter().flat_map(|w| w.rows.iter().copied()).collect();
        rows.sort_by_key(|r| (r.step, r.world));
        rows
    }
}

/// Accumulates [`CoherenceStats`] step by step during training.
#[derive(Debug, Clone)]
pub struct CoherenceTracker {
    coords: Vec<ParamIndex>,
    cumulative_steps: usize,
    next_cumulative: usize,
    sums: Vec<(f64, f64)>,
    stats: CoherenceStats,
}

impl CoherenceTracker {
    /// `designation` is indexed by the example ids later passed to
    /// [`CoherenceTracker::observe`]. `i_p`/`i_c` are reported for steps
    /// `0..cumulative_steps`, which must all be observed in order.
    pub fn new(coords: Vec<ParamIndex>, designation: Vec<bool>, replicas: usize, seed: u64, cumulative_steps: usize, mode: StatMode) -> Self {
        let mut masks = vec![designation.clone()];
        masks.extend(null_worlds(&designation, replicas, seed));
        let worlds: Vec<WorldSeries> = masks
            .into_iter()
            .enumerate()
            .map(|(w, mask)| {
                let pristine = mask.iter().filter(|&&p| p).count();
                WorldSeries {
                    world: if w == 0 { World::Real } else { World::Null(w - 1) },
                    corrupt: mask.len() - pristine,
                    pristine,
                    designation: mask,
                    rows: Vec::new(),
                }
            })
            .collect();
        CoherenceTracker {
            coords,
            cumulative_steps,
            next_cumulative: 0,
            sums: vec![(0.0, 0.0); worlds.len()],
            stats: CoherenceStats { mode, worlds },
        }
    }

    pub fn coordinates(&self) -> &[ParamIndex] {
        &self.coords
    }

    /// Records one row per world for the gradients taken at `step`;
    /// `ids[e]` is the example id of batch row `e`.
    pub fn observe<T: Real>(&mut self, step: usize, grads: &GradientBuffer<T>, ids: &[usize]) -> Result<(), CoherenceError> {
        let restricted = restrict(grads, &self.coords);
        let cumulative = step < self.cumulative_steps && step == self.next_cumulative;
        if cumulative {
            self.next_cumulative += 1;
        }
        for (w, series) in self.stats.worlds.iter_mut().enumerate() {
            let designation: Vec<bool> = ids.iter().map(|&id| series.designation[id]).collect();
            let (gp, gc) = split_gradient(&restricted, &designation)?;
            let g: Vec<f64> = gp.iter().zip(&gc).map(|(p, c)| p + c).collect();
            let ip = InnerProducts::of(&g, &gp, &gc);
            let f = fractions(&ip);
            let (mut i_p, mut i_c) = (None, None);
            if cumulative {
                let sums = &mut self.sums[w];
                sums.0 += ip.pristine;
                sums.1 += ip.corrupt;
                i_p = (series.pristine > 0).then(|| sums.0 / series.pristine as f64);
                i_c = (series.corrupt > 0).then(|| sums.1 / series.corrupt as f64);
            }
            series.rows.push(CoherenceRow {
                step,
                world: series.world,
                f_p: f.map(|f| f.0),
                f_c: f.map(|f| f.1),
                i_p,
                i_c,
            });
        }
        Ok(())
    }

    pub fn stats(&self) -> &CoherenceStats {
        &self.stats
    }

    pub fn into_stats(self) -> CoherenceStats {
        self.stats
    }
}
