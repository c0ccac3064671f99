//! Fidelity of an attribution method: keep only each instance's top-k
//! attributed dimensions, label the masked instances with the original
//! model's predictions, train a fresh proxy of the same architecture on them
//! and measure how often the proxy agrees with the original model on held-out
//! masked instances.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{top_k, AttributionError, Attributor, Method, Target};
use crate::autodiff::Tensor;
use crate::datagen::Task;
use crate::encoding::SequenceWindow;
use crate::models::{argmax, train, EpochMetrics, ModelError, ModelHandle, TrainConfig};

#[derive(Debug, Error)]
pub enum FidelityError {
    #[error("k = {k} outside 1..={width}")]
    InvalidK { k: usize, width: usize },
    #[error("{0} set is empty after dropping failed instances")]
    Empty(&'static str),
    #[error("training and testing sets share game {0}")]
    Overlap(u64),
    #[error("proxy training failed (seed {seed}): {source}")]
    Proxy { seed: u64, source: ModelError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = FidelityError> = std::result::Result<T, E>;

/// Keeps columns `keep` of `x` in every row and zeroes the rest.
pub fn mask_columns(x: &Tensor, keep: &[usize]) -> Tensor {
    let d = x.shape()[1];
    let mut mask = vec![false; d];
    keep.iter().for_each(|&j| mask[j] = true);
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if mask[i % d] { v } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape as x")
}

/// Masks `x` to the `k` dimensions with the largest `|time_avg|`.
pub fn mask_top_k(x: &Tensor, time_avg: &[f64], k: usize) -> Result<Tensor> {
    let dims = top_k(time_avg, k).map_err(|_| FidelityError::InvalidK { k, width: time_avg.len() })?;
    Ok(mask_columns(x, &dims))
}

/// One instance after attribution: the model's label and the dimensions in
/// descending order of attributed magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedInstance {
    pub window: SequenceWindow,
    /// `argmax_y P(y | X)` under the original model.
    pub predicted: usize,
    pub ranking: Vec<usize>,
}

/// Attributes every window (in parallel) and keeps the full dimension
/// ranking so that masks for several `k` can share one attribution pass.
/// Windows whose attribution fails are dropped and counted.
pub fn rank_instances(
    model: &ModelHandle,
    attributor: &Attributor,
    windows: &[SequenceWindow],
    index_offset: u64,
) -> (Vec<RankedInstance>, usize) {
    let results: Vec<Option<RankedInstance>> = windows
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let map = attributor
                .attribute(model, &w.x, Target::Predicted, index_offset + i as u64)
                .map_err(|e: AttributionError| log::warn!("dropping instance {i}: {e}"))
                .ok()?;
            let ranking = top_k(&map.time_avg, map.time_avg.len()).ok()?;
            Some(RankedInstance {
                window: w.clone(),
                predicted: map.target,
                ranking,
            })
        })
        .collect();
    let dropped = results.iter().filter(|r| r.is_none()).count();
    (results.into_iter().flatten().collect(), dropped)
}

/// Masked windows relabelled with the original model's predictions.
pub fn masked_windows(instances: &[RankedInstance], k: usize) -> Result<Vec<SequenceWindow>> {
    instances
        .iter()
        .map(|inst| {
            let width = inst.ranking.len();
            if k == 0 || k > width {
                return Err(FidelityError::InvalidK { k, width });
            }
            Ok(SequenceWindow {
                x: mask_columns(&inst.window.x, &inst.ranking[..k]),
                label: inst.predicted,
                ..inst.window.clone()
            })
        })
        .collect()
}

/// Training (`V`) and testing (`W`) masked sets for one `k`.
#[derive(Clone, Debug)]
pub struct MaskedSet {
    pub train: Vec<SequenceWindow>,
    pub test: Vec<SequenceWindow>,
    pub dropped: usize,
}

/// Attribution plus masking for a single `k`.
pub fn build_masked_sets(
    model: &ModelHandle,
    attributor: &Attributor,
    k: usize,
    train_set: &[SequenceWindow],
    test_set: &[SequenceWindow],
) -> Result<MaskedSet> {
    let (tr, d1) = rank_instances(model, attributor, train_set, 0);
    let (te, d2) = rank_instances(model, attributor, test_set, train_set.len() as u64);
    Ok(MaskedSet {
        train: masked_windows(&tr, k)?,
        test: masked_windows(&te, k)?,
        dropped: d1 + d2,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConfig {
    pub train: TrainConfig,
    /// Fraction of `V` held out for the proxy's early stopping.
    pub validation_fraction: f64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            validation_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub task: Task,
    pub model: String,
    pub method: Method,
    pub k: usize,
    pub seed: u64,
    pub fidelity: f64,
    pub train_instances: usize,
    pub test_instances: usize,
    pub dropped: usize,
    /// Share of `W` carrying the original model's most frequent label.
    pub modal_rate: f64,
    pub proxy_history: Vec<EpochMetrics>,
}

/// Share of `labels` equal to their most frequent value.
pub fn modal_rate(labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::BTreeMap::new();
    labels.iter().for_each(|&l| *counts.entry(l).or_insert(0usize) += 1);
    *counts.values().max().expect("non-empty") as f64 / labels.len() as f64
}

/// Trains a proxy on `masked.train` (seeded by `seed`) and scores its
/// agreement with the stored labels of `masked.test`.
pub fn score_masked(
    model: &ModelHandle,
    method: Method,
    k: usize,
    masked: &MaskedSet,
    proxy: &ProxyConfig,
    seed: u64,
) -> Result<FidelityReport> {
    if masked.train.len() < 2 {
        return Err(FidelityError::Empty("training"));
    }
    if masked.test.is_empty() {
        return Err(FidelityError::Empty("testing"));
    }
    let mut order: Vec<usize> = (0..masked.train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((masked.train.len() as f64 * proxy.validation_fraction).round() as usize).clamp(1, masked.train.len() - 1);
    let (val_idx, fit_idx) = order.split_at(n_val);
    let fit: Vec<SequenceWindow> = fit_idx.iter().map(|&i| masked.train[i].clone()).collect();
    let val: Vec<SequenceWindow> = val_idx.iter().map(|&i| masked.train[i].clone()).collect();
    let cfg = TrainConfig {
        seed,
        ..proxy.train.clone()
    };
    let q = train(model.architecture.clone(), model.schema.clone(), &fit, &val, &cfg)
        .map_err(|source| FidelityError::Proxy { seed, source })?;
    let xs: Vec<&Tensor> = masked.test.iter().map(|w| &w.x).collect();
    let predictions = q.predict_all(&xs, 256)?;
    let hits = predictions
        .iter()
        .zip(&masked.test)
        .filter(|(p, w)| argmax(p) == w.label)
        .count();
    let labels: Vec<usize> = masked.test.iter().map(|w| w.label).collect();
    Ok(FidelityReport {
        task: model.task,
        model: model.architecture.tag().to_string(),
        method,
        k,
        seed,
        fidelity: hits as f64 / masked.test.len() as f64,
        train_instances: masked.train.len(),
        test_instances: masked.test.len(),
        dropped: masked.dropped,
        modal_rate: modal_rate(&labels),
        proxy_history: q.history,
    })
}

/// Inputs of one fidelity evaluation.
pub struct FidelityJob<'a> {
    pub model: &'a ModelHandle,
    pub attributor: Attributor,
    pub k: usize,
    pub train: &'a [SequenceWindow],
    pub test: &'a [SequenceWindow],
    pub proxy: ProxyConfig,
    pub seed: u64,
}

pub fn run_fidelity(job: &FidelityJob<'_>) -> Result<FidelityReport> {
    check_disjoint(job.train, job.test)?;
    let masked = build_masked_sets(job.model, &job.attributor, job.k, job.train, job.test)?;
    score_masked(job.model, job.attributor.method(), job.k, &masked, &job.proxy, job.seed)
}

/// Rejects sets that share a game.
pub fn check_disjoint(train: &[SequenceWindow], test: &[SequenceWindow]) -> Result<()> {
    let games: std::collections::HashSet<u64> = train.iter().map(|w| w.game_id).collect();
    match test.iter().find(|w| games.contains(&w.game_id)) {
        Some(w) => Err(FidelityError::Overlap(w.game_id)),
        None => Ok(()),
    }
}

pub const CSV_HEADER: &str = "task,model,method,k,seed,fidelity,train_instances,test_instances,dropped,modal_rate";

impl FidelityReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{},{},{},{:.6}",
            self.task,
            self.model,
            self.method,
            self.k,
            self.seed,
            self.fidelity,
            self.train_instances,
            self.test_instances,
            self.dropped,
            self.modal_rate
        )
    }
}

/// Writes a header and one row per report.
pub fn write_csv<W: Write>(reports: &[FidelityReport], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
