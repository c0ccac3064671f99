//! Gradient attributions of a class probability with respect to the raw
//! encoded input.
//!
//! Scores are `[l, D_in]`; [`AttributionMap::time_avg`] averages them over
//! the time axis and [`top_k`] ranks dimensions by the magnitude of that
//! average.

mod report;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Tensor};
use crate::encoding::SequenceWindow;
use crate::models::{argmax, stack_time_major, unstack_sample, Mode, ModelError, ModelHandle};

pub use report::{render_report, render_text, AttributionReport, ReportRow};

#[derive(Debug, Error)]
pub enum AttributionError {
    #[error("target class {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("baseline shape {baseline:?} does not match input shape {input:?}")]
    BaselineShape { baseline: Vec<usize>, input: Vec<usize> },
    #[error("steps must be at least 1")]
    ZeroSteps,
    #[error("sigma ratio must be non-negative and finite, got {0}")]
    InvalidSigma(f64),
    #[error("statistics cover {stats} dimensions, input has {input}")]
    StatsWidth { stats: usize, input: usize },
    #[error("k = {k} outside 1..={width}")]
    InvalidK { k: usize, width: usize },
    #[error("attribution produced non-finite scores")]
    NonFinite,
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = AttributionError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ig,
    Sg,
    /// Uniform noise scores; a no-information control.
    Random,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ig => "ig",
            Method::Sg => "sg",
            Method::Random => "random",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ig" | "integrated_gradients" => Ok(Method::Ig),
            "sg" | "smoothgrad" => Ok(Method::Sg),
            "random" => Ok(Method::Random),
            other => Err(format!("unknown attribution method `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IgConfig {
    pub steps: usize,
    /// Path start; `None` is the all-zero input.
    pub baseline: Option<Tensor>,
}

impl Default for IgConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            baseline: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgConfig {
    pub steps: usize,
    pub sigma_ratio: f64,
    pub seed: u64,
}

impl Default for SgConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            sigma_ratio: 0.15,
            seed: 0,
        }
    }
}

/// Which class to attribute.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    /// The model's argmax prediction on the input.
    Predicted,
    Class(usize),
}

/// Per-dimension extremes of encoded training inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl DimensionStats {
    /// Extremes over every row of every window.
    pub fn from_windows(windows: &[SequenceWindow]) -> Option<Self> {
        let width = windows.first()?.input_width();
        let mut min = vec![f64::INFINITY; width];
        let mut max = vec![f64::NEG_INFINITY; width];
        for w in windows {
            for row in w.x.data().chunks(width) {
                for (j, &v) in row.iter().enumerate() {
                    min[j] = min[j].min(v);
                    max[j] = max[j].max(v);
                }
            }
        }
        Some(Self { min, max })
    }

    pub fn width(&self) -> usize {
        self.min.len()
    }

    /// `ratio * (max_j - min_j)` per dimension.
    pub fn sigma(&self, ratio: f64) -> Vec<f64> {
        self.min.iter().zip(&self.max).map(|(lo, hi)| ratio * (hi - lo)).collect()
    }
}

/// Scores for one input and one target class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub method: Method,
    pub target: usize,
    /// `P(target | X)` under the model.
    pub probability: f64,
    /// `[l, D_in]`.
    pub scores: Tensor,
    /// Mean of `scores` over the time axis, length `D_in`.
    pub time_avg: Vec<f64>,
}

impl AttributionMap {
    pub fn new(method: Method, target: usize, probability: f64, scores: Tensor) -> Self {
        let time_avg = time_average(&scores);
        Self {
            method,
            target,
            probability,
            scores,
            time_avg,
        }
    }

    pub fn total(&self) -> f64 {
        self.scores.sum()
    }

    /// The `k` dimensions with the largest `|time_avg|`.
    pub fn top_k(&self, k: usize) -> Result<Vec<usize>> {
        top_k(&self.time_avg, k)
    }
}

/// Column means of an `[l, D]` matrix.
pub fn time_average(scores: &Tensor) -> Vec<f64> {
    let (l, d) = (scores.shape()[0], scores.shape()[1]);
    let mut avg = vec![0.0; d];
    for row in scores.data().chunks(d) {
        for (a, v) in avg.iter_mut().zip(row) {
            *a += v;
        }
    }
    avg.iter_mut().for_each(|a| *a /= l as f64);
    avg
}

/// Indices of the `k` entries with the largest magnitude, in descending
/// order of magnitude; ties go to the lower index.
pub fn top_k(values: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > values.len() {
        return Err(AttributionError::InvalidK { k, width: values.len() });
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    let key = |i: usize| {
        let m = values[i].abs();
        if m.is_nan() {
            f64::NEG_INFINITY
        } else {
            m
        }
    };
    let cmp = |a: &usize, b: &usize| key(*b).total_cmp(&key(*a)).then(a.cmp(b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    Ok(idx)
}

/// Anything that maps an `[l, D]` input to a class distribution and can
/// differentiate a class probability with respect to that input.
pub trait Classifier {
    fn classes(&self) -> usize;

    /// `P(. | x)`.
    fn distribution(&self, x: &Tensor) -> Result<Vec<f64>>;

    /// `sum_k dP(target | X_k) / dX_k` over `points`.
    fn summed_gradients(&self, points: &[Tensor], target: usize) -> Result<Tensor>;
}

/// Largest batch of path or noise points evaluated in one graph.
const CHUNK: usize = 100;

impl Classifier for ModelHandle {
    fn classes(&self) -> usize {
        self.classes
    }

    fn distribution(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(x, Mode::Eval)?)
    }

    fn summed_gradients(&self, points: &[Tensor], target: usize) -> Result<Tensor> {
        let mut total = Tensor::zeros(points[0].shape());
        for chunk in points.chunks(CHUNK) {
            let refs: Vec<&Tensor> = chunk.iter().collect();
            let b = chunk.len();
            let mut tape = Tape::new();
            let vars = self.params.register(&mut tape);
            let input = tape.leaf(stack_time_major(&refs)?);
            let graph = self.graph(&mut tape, &vars, input, b, Mode::Eval)?;
            let p = tape.softmax(graph.logits);
            let index = (0..b).map(|j| j * self.classes + target).collect();
            let picked = tape.gather(p, index, vec![b]).map_err(ModelError::from)?;
            let sum = tape.sum(picked);
            let grads = tape.backward(sum, &[input]).map_err(ModelError::from)?;
            let g = grads.get(input).expect("input is a target");
            for j in 0..b {
                total.add_assign(&unstack_sample(g, b, j));
            }
        }
        Ok(total)
    }
}

fn resolve_target<M: Classifier + ?Sized>(model: &M, x: &Tensor, target: Target) -> Result<(usize, f64)> {
    let p = model.distribution(x)?;
    let y = match target {
        Target::Predicted => argmax(&p),
        Target::Class(y) if y < model.classes() => y,
        Target::Class(y) => {
            return Err(AttributionError::TargetOutOfRange {
                target: y,
                classes: model.classes(),
            })
        }
    };
    Ok((y, p[y]))
}

/// Gradient of `P(target | X)` with respect to `X`.
pub fn input_gradient<M: Classifier + ?Sized>(model: &M, x: &Tensor, target: Target) -> Result<(usize, Tensor)> {
    let (y, _) = resolve_target(model, x, target)?;
    Ok((y, model.summed_gradients(std::slice::from_ref(x), y)?))
}

/// Integrated gradients with a right Riemann sum over `cfg.steps` points on
/// the straight line from the baseline to `x`.
pub fn integrated_gradients<M: Classifier + ?Sized>(
    model: &M, x: &Tensor, target: Target, cfg: &IgConfig) -> Result<AttributionMap> {
    if cfg.steps == 0 {
        return Err(AttributionError::ZeroSteps);
    }
    let baseline = match &cfg.baseline {
        Some(b) if b.shape() != x.shape() => {
            return Err(AttributionError::BaselineShape {
                baseline: b.shape().to_vec(),
                input: x.shape().to_vec(),
            })
        }
        Some(b) => b.clone(),
        None => Tensor::zeros(x.shape()),
    };
    let (y, p) = resolve_target(model, x, target)?;
    let diff: Vec<f64> = x.data().iter().zip(baseline.data()).map(|(a, b)| a - b).collect();
    let steps = cfg.steps as f64;
    let points: Vec<Tensor> = (1..=cfg.steps)
        .map(|k| {
            let alpha = k as f64 / steps;
            let data = baseline.data().iter().zip(&diff).map(|(b, d)| b + alpha * d).collect();
            Tensor::new(x.shape().to_vec(), data).expect("same shape as x")
        })
        .collect();
    let g = model.summed_gradients(&points, y)?;
    let data = g.data().iter().zip(&diff).map(|(g, d)| d * g / steps).collect();
    let scores = Tensor::new(x.shape().to_vec(), data).expect("same shape as x");
    finish(Method::Ig, y, p, scores)
}

/// SmoothGrad: mean input gradient over `cfg.steps` Gaussian perturbations
/// with per-dimension standard deviation `sigma_ratio * (max_j - min_j)`.
pub fn smoothgrad<M: Classifier + ?Sized>(
    model: &M,
    x: &Tensor,
    target: Target,
    cfg: &SgConfig,
    stats: &DimensionStats,
) -> Result<AttributionMap> {
    if cfg.steps == 0 {
        return Err(AttributionError::ZeroSteps);
    }
    if !(cfg.sigma_ratio >= 0.0 && cfg.sigma_ratio.is_finite()) {
        return Err(AttributionError::InvalidSigma(cfg.sigma_ratio));
    }
    let d = x.shape()[1];
    if stats.width() != d {
        return Err(AttributionError::StatsWidth {
            stats: stats.width(),
            input: d,
        });
    }
    let (y, p) = resolve_target(model, x, target)?;
    let sigma = stats.sigma(cfg.sigma_ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let points: Vec<Tensor> = (0..cfg.steps)
        .map(|_| {
            let data = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + sigma[i % d] * std_normal.sample(&mut rng))
                .collect();
            Tensor::new(x.shape().to_vec(), data).expect("same shape as x")
        })
        .collect();
    let g = model.summed_gradients(&points, y)?;
    let scores = g.map(|v| v / cfg.steps as f64);
    finish(Method::Sg, y, p, scores)
}

/// Uniform `[0, 1)` scores; the ranking carries no information about the model.
pub fn random_attribution<M: Classifier + ?Sized>(
    model: &M, x: &Tensor, target: Target, seed: u64) -> Result<AttributionMap> {
    let (y, p) = resolve_target(model, x, target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..x.len()).map(|_| rng.gen::<f64>()).collect();
    let scores = Tensor::new(x.shape().to_vec(), data).expect("same shape as x");
    Ok(AttributionMap::new(Method::Random, y, p, scores))
}

fn finish(method: Method, y: usize, p: f64, scores: Tensor) -> Result<AttributionMap> {
    if !scores.is_finite() {
        return Err(AttributionError::NonFinite);
    }
    Ok(AttributionMap::new(method, y, p, scores))
}

/// Method plus its configuration, for attributing many inputs uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Attributor {
    Ig(IgConfig),
    Sg { config: SgConfig, stats: DimensionStats },
    Random { seed: u64 },
}

impl Attributor {
    pub fn method(&self) -> Method {
        match self {
            Attributor::Ig(_) => Method::Ig,
            Attributor::Sg { .. } => Method::Sg,
            Attributor::Random { .. } => Method::Random,
        }
    }

    /// Attributes instance number `index`; noise streams are derived from the
    /// configured seed and the index so that results do not depend on order.
    pub fn attribute<M: Classifier + ?Sized>(
        &self,
        model: &M, x: &Tensor, target: Target, index: u64) -> Result<AttributionMap> {
        match self {
            Attributor::Ig(cfg) => integrated_gradients(model, x, target, cfg),
            Attributor::Sg { config, stats } => {
                let cfg = SgConfig {
                    seed: mix_seed(config.seed, index),
                    ..config.clone()
                };
                smoothgrad(model, x, target, &cfg, stats)
            }
            Attributor::Random { seed } => random_attribution(model, x, target, mix_seed(*seed, index)),
        }
    }
}

/// Deterministic per-instance seed.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests;
