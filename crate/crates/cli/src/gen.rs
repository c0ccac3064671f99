//! `gen`: synthetic matches split into train, validation and test files.

use std::path::{Path, PathBuf};

use eventlens::datagen::{generate_game, load_dataset, save_dataset_with_digest, GameRecord};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SplitConfig};
use crate::output::{ensure_writable, text_table, write_bytes, write_json};
use crate::{CliError, Result};

pub const SPLITS: [&str; 3] = ["train", "validation", "test"];

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Vec<GameRecord>,
    pub validation: Vec<GameRecord>,
    pub test: Vec<GameRecord>,
}

impl Splits {
    pub fn parts(&self) -> [&[GameRecord]; 3] {
        [&self.train, &self.validation, &self.test]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub name: String,
    pub games: usize,
    /// Matches won by each camp, indexed like `Camp::index`.
    pub wins: [usize; 2],
    pub game_ids: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub config_digest: String,
    pub seed: u64,
    pub splits: Vec<SplitSummary>,
}

pub fn game_seed(run_seed: u64, index: usize) -> u64 {
    run_seed.wrapping_mul(1 << 20).wrapping_add(index as u64)
}

/// Shuffles within each winner group and deals games so that every split
/// keeps close to the overall win ratio. Each split is sorted by game id.
pub fn split_games(records: Vec<GameRecord>, split: &SplitConfig, seed: u64) -> Splits {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5b11_7000);
    let mut order = Vec::with_capacity(records.len());
    for camp in 0..2 {
        let mut group: Vec<usize> = (0..records.len()).filter(|&i| records[i].winner.index() == camp).collect();
        group.shuffle(&mut rng);
        order.extend(group);
    }
    let targets = [split.train, split.validation, 1.0 - split.train - split.validation];
    let mut counts = [0usize; 3];
    let mut bucket = vec![0usize; records.len()];
    for (pos, &i) in order.iter().enumerate() {
        let deficit = |s: usize| targets[s] * (pos + 1) as f64 - counts[s] as f64;
        let s = (0..3).fold(0, |best, s| if deficit(s) > deficit(best) { s } else { best });
        counts[s] += 1;
        bucket[i] = s;
    }
    let mut parts: [Vec<GameRecord>; 3] = Default::default();
    for (rec, s) in records.into_iter().zip(bucket) {
        parts[s].push(rec);
    }
    for p in &mut parts {
        p.sort_by_key(|r| r.game_id);
    }
    let [train, validation, test] = parts;
    Splits { train, validation, test }
}

pub fn split_path(data: &Path, name: &str) -> PathBuf {
    data.join(format!("{name}.jsonl"))
}

pub fn cmd_gen(cfg: &RunConfig, force: bool) -> Result<GenSummary> {
    let data = &cfg.paths.data;
    let mut outputs: Vec<PathBuf> = SPLITS.iter().map(|s| split_path(data, s)).collect();
    outputs.push(data.join("summary.json"));
    outputs.push(data.join("summary.txt"));
    ensure_writable(&outputs, force)?;

    let records = (0..cfg.games)
        .into_par_iter()
        .map(|i| generate_game(game_seed(cfg.seed, i), &cfg.generator))
        .collect::<Result<Vec<_>, _>>()?;
    let splits = split_games(records, &cfg.split, cfg.seed);
    let digest = cfg.digest();
    std::fs::create_dir_all(data).map_err(|e| CliError::Io(data.clone(), e))?;
    let mut summaries = Vec::new();
    for (name, part) in SPLITS.iter().zip(splits.parts()) {
        save_dataset_with_digest(part, split_path(data, name), Some(&digest))?;
        let mut wins = [0; 2];
        part.iter().for_each(|r| wins[r.winner.index()] += 1);
        summaries.push(SplitSummary {
            name: name.to_string(),
            games: part.len(),
            wins,
            game_ids: part.iter().map(|r| r.game_id).collect(),
        });
    }
    let summary = GenSummary {
        config_digest: digest,
        seed: cfg.seed,
        splits: summaries,
    };
    write_json(&data.join("summary.json"), &summary)?;
    let rows: Vec<Vec<String>> = summary
        .splits
        .iter()
        .map(|s| vec![s.name.clone(), s.games.to_string(), s.wins[0].to_string(), s.wins[1].to_string()])
        .collect();
    let text = format!(
        "config {}\n{}",
        summary.config_digest,
        text_table(&["split".into(), "games".into(), "red_wins".into(), "blue_wins".into()], &rows)
    );
    write_bytes(&data.join("summary.txt"), text.as_bytes())?;
    Ok(summary)
}

pub fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let load = |name: &str| -> Result<Vec<GameRecord>> {
        let path = split_path(&cfg.paths.data, name);
        if !path.exists() {
            return Err(CliError::Missing(path, "gen"));
        }
        Ok(load_dataset(&path)?)
    };
    Ok(Splits {
        train: load("train")?,
        validation: load("validation")?,
        test: load("test")?,
    })
}
