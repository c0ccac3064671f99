//! `fidelity`: the (model × method × k) grid, a random-attribution control
//! and the IG steps sweep.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use eventlens::attribution::{DimensionStats, Method};
use eventlens::datagen::Task;
use eventlens::encoding::SequenceWindow;
use eventlens::fidelity::{check_disjoint, masked_windows, rank_instances, score_masked, FidelityReport, MaskedSet, RankedInstance};
use eventlens::models::ModelHandle;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribute::{attributor, load_model};
use crate::config::{ArchKind, RunConfig};
use crate::gen::load_splits;
use crate::output::{csv_bytes, ensure_writable, fmt4, text_table, write_bytes, write_json};
use crate::train::windows_for;
use crate::{CliError, Result};

#[derive(Clone, Debug, Default)]
pub struct FidelityOptions {
    pub horizon: Option<u32>,
}

/// Mean over proxy seeds for one cell of the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: ArchKind,
    pub method: Method,
    pub k: usize,
    pub steps: usize,
    pub fidelity: f64,
    pub min: f64,
    pub max: f64,
    pub seeds: usize,
    pub modal_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepsRow {
    pub model: ArchKind,
    pub k: usize,
    /// `(steps, mean fidelity)` in grid order.
    pub cells: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropRow {
    pub model: ArchKind,
    pub method: Method,
    pub steps: usize,
    pub dropped: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub steps: usize,
    pub report: FidelityReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelitySummary {
    pub config_digest: String,
    pub task: Task,
    pub horizon: u32,
    pub k_grid: Vec<usize>,
    pub table: Vec<TableRow>,
    pub control: Vec<TableRow>,
    pub steps: Vec<StepsRow>,
    pub drops: Vec<DropRow>,
    pub runs: Vec<RunRecord>,
}

impl FidelitySummary {
    pub fn worst_drop(&self) -> Option<&DropRow> {
        self.drops
            .iter()
            .max_by(|a, b| (a.dropped * b.total).cmp(&(b.dropped * a.total)))
    }
}

/// `k` values clipped to the input width, duplicates removed, order kept.
pub fn clip_k_grid(grid: &[usize], width: usize) -> Vec<usize> {
    let mut seen = BTreeSet::new();
    grid.iter()
        .map(|&k| k.min(width))
        .filter(|k| seen.insert(*k))
        .collect()
}

/// At most `cap` windows, evenly strided.
pub fn subsample(windows: Vec<SequenceWindow>, cap: usize) -> Vec<SequenceWindow> {
    let n = windows.len();
    if n <= cap {
        return windows;
    }
    (0..cap).map(|i| windows[i * n / cap].clone()).collect()
}

pub fn report_path(reports: &Path, task: Task, suffix: &str) -> PathBuf {
    reports.join(format!("fidelity-{task}{suffix}"))
}

const SUFFIXES: [&str; 5] = [".csv", "-runs.csv", "-steps.csv", ".json", ".txt"];

type Key = (Method, usize);

struct Ranked {
    train: Vec<RankedInstance>,
    test: Vec<RankedInstance>,
    dropped: usize,
}

pub fn cmd_fidelity(cfg: &RunConfig, opts: &FidelityOptions, force: bool) -> Result<FidelitySummary> {
    let reports = &cfg.paths.reports;
    let paths: Vec<PathBuf> = SUFFIXES.iter().map(|s| report_path(reports, cfg.task, s)).collect();
    ensure_writable(&paths, force)?;
    let horizon = opts.horizon.unwrap_or(cfg.task_horizons()[0]);
    let splits = load_splits(cfg)?;
    let f = &cfg.fidelity;
    let mut summary = FidelitySummary {
        config_digest: cfg.digest(),
        task: cfg.task,
        horizon,
        k_grid: Vec::new(),
        table: Vec::new(),
        control: Vec::new(),
        steps: Vec::new(),
        drops: Vec::new(),
        runs: Vec::new(),
    };
    for &arch in &cfg.architectures {
        let model = load_model(cfg, arch, horizon)?;
        let all_train = windows_for(cfg, &splits.train, &model.schema, horizon, "train")?;
        let stats = DimensionStats::from_windows(&all_train).expect("non-empty");
        let train = subsample(all_train, f.max_train_instances);
        let test = subsample(windows_for(cfg, &splits.test, &model.schema, horizon, "test")?, f.max_test_instances);
        check_disjoint(&train, &test)?;
        let width = model.input_width();
        let k_grid = clip_k_grid(&f.k_grid, width);
        let steps_k = f.steps_k.min(width);
        let main_steps = cfg.attribution.steps;

        let mut keys: Vec<Key> = cfg.attribution.methods.iter().map(|&m| (m, main_steps)).collect();
        if f.random_control {
            keys.push((Method::Random, 0));
        }
        keys.extend(f.steps_grid.iter().map(|&s| (Method::Ig, s)));
        let keys: Vec<Key> = keys.into_iter().collect::<BTreeSet<_>>().into_iter().collect();

        let mut ranked: BTreeMap<Key, Ranked> = BTreeMap::new();
        for &(method, steps) in &keys {
            log::info!("{}: ranking {} + {} instances with {method} ({steps} steps)", arch.as_str(), train.len(), test.len());
            let attr = attributor(cfg, method, steps, &stats);
            let (tr, d1) = rank_instances(&model, &attr, &train, 0);
            let (te, d2) = rank_instances(&model, &attr, &test, train.len() as u64);
            summary.drops.push(DropRow {
                model: arch,
                method,
                steps,
                dropped: d1 + d2,
                total: train.len() + test.len(),
            });
            ranked.insert(
                (method, steps),
                Ranked {
                    train: tr,
                    test: te,
                    dropped: d1 + d2,
                },
            );
        }

        let mut jobs: BTreeSet<(Key, usize, u64)> = BTreeSet::new();
        for &m in &cfg.attribution.methods {
            for &k in &k_grid {
                jobs.extend(f.seeds.iter().map(|&s| ((m, main_steps), k, s)));
            }
        }
        if f.random_control {
            jobs.extend(f.seeds.iter().map(|&s| ((Method::Random, 0), 1, s)));
        }
        for &st in &f.steps_grid {
            jobs.extend(f.seeds.iter().map(|&s| ((Method::Ig, st), steps_k, s)));
        }
        let jobs: Vec<_> = jobs.into_iter().collect();
        let results = jobs
            .par_iter()
            .map(|&(key, k, seed)| score_job(&model, &ranked[&key], key.0, k, cfg, seed))
            .collect::<Result<Vec<_>>>()?;
        let by_job: BTreeMap<_, _> = jobs.iter().copied().zip(results).collect();

        let cell = |key: Key, k: usize| -> TableRow {
            let reps: Vec<&FidelityReport> = f.seeds.iter().map(|&s| &by_job[&(key, k, s)]).collect();
            let vals: Vec<f64> = reps.iter().map(|r| r.fidelity).collect();
            TableRow {
                model: arch,
                method: key.0,
                k,
                steps: key.1,
                fidelity: vals.iter().sum::<f64>() / vals.len() as f64,
                min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                seeds: vals.len(),
                modal_rate: reps[0].modal_rate,
            }
        };
        for &m in &cfg.attribution.methods {
            for &k in &k_grid {
                summary.table.push(cell((m, main_steps), k));
            }
        }
        if f.random_control {
            summary.control.push(cell((Method::Random, 0), 1));
        }
        summary.steps.push(StepsRow {
            model: arch,
            k: steps_k,
            cells: f.steps_grid.iter().map(|&st| (st, cell((Method::Ig, st), steps_k).fidelity)).collect(),
        });
        summary.runs.extend(by_job.into_iter().map(|((key, _, _), report)| RunRecord { steps: key.1, report }));
        summary.k_grid = k_grid;
    }
    write_outputs(&summary, reports)?;

    check_drop_rate(&summary, f.max_drop_rate)?;
    Ok(summary)
}

/// Fails when any ranking pass dropped more than `threshold` of its instances.
pub fn check_drop_rate(summary: &FidelitySummary, threshold: f64) -> Result<()> {
    match summary.worst_drop() {
        Some(w) if w.dropped as f64 > threshold * w.total as f64 => Err(CliError::DropRate {
            method: w.method.to_string(),
            dropped: w.dropped,
            total: w.total,
            threshold,
        }),
        _ => Ok(()),
    }
}

fn score_job(model: &ModelHandle, ranked: &Ranked, method: Method, k: usize, cfg: &RunConfig, seed: u64) -> Result<FidelityReport> {
    let masked = MaskedSet {
        train: masked_windows(&ranked.train, k)?,
        test: masked_windows(&ranked.test, k)?,
        dropped: ranked.dropped,
    };
    Ok(score_masked(model, method, k, &masked, &cfg.fidelity.proxy, seed)?)
}

pub const TABLE_HEADER: [&str; 11] = [
    "task",
    "model",
    "method",
    "k",
    "steps",
    "fidelity",
    "min",
    "max",
    "seeds",
    "modal_rate",
    "config_digest",
];

pub const RUNS_HEADER: [&str; 12] = [
    "task",
    "model",
    "method",
    "k",
    "steps",
    "seed",
    "fidelity",
    "train_instances",
    "test_instances",
    "dropped",
    "modal_rate",
    "config_digest",
];

fn write_outputs(s: &FidelitySummary, reports: &Path) -> Result<()> {
    let d = &s.config_digest;
    let table_row = |r: &TableRow| {
        vec![
            s.task.to_string(),
            r.model.as_str().into(),
            r.method.to_string(),
            r.k.to_string(),
            r.steps.to_string(),
            format!("{:.6}", r.fidelity),
            format!("{:.6}", r.min),
            format!("{:.6}", r.max),
            r.seeds.to_string(),
            format!("{:.6}", r.modal_rate),
            d.clone(),
        ]
    };
    let rows: Vec<_> = s.table.iter().chain(&s.control).map(table_row).collect();
    write_bytes(&report_path(reports, s.task, ".csv"), &csv_bytes(&TABLE_HEADER, &rows)?)?;

    let runs: Vec<Vec<String>> = s
        .runs
        .iter()
        .map(|run| {
            let r = &run.report;
            vec![
                s.task.to_string(),
                r.model.clone(),
                r.method.to_string(),
                r.k.to_string(),
                run.steps.to_string(),
                r.seed.to_string(),
                format!("{:.6}", r.fidelity),
                r.train_instances.to_string(),
                r.test_instances.to_string(),
                r.dropped.to_string(),
                format!("{:.6}", r.modal_rate),
                d.clone(),
            ]
        })
        .collect();
    write_bytes(&report_path(reports, s.task, "-runs.csv"), &csv_bytes(&RUNS_HEADER, &runs)?)?;

    let steps_grid: Vec<usize> = s.steps.first().map(|r| r.cells.iter().map(|c| c.0).collect()).unwrap_or_default();
    let mut header: Vec<String> = vec!["task".into(), "model".into(), "method".into(), "k".into()];
    header.extend(steps_grid.iter().map(|st| format!("steps_{st}")));
    header.push("config_digest".into());
    let rows: Vec<Vec<String>> = s
        .steps
        .iter()
        .map(|r| {
            let mut row = vec![s.task.to_string(), r.model.as_str().into(), "ig".into(), r.k.to_string()];
            row.extend(r.cells.iter().map(|c| format!("{:.6}", c.1)));
            row.push(d.clone());
            row
        })
        .collect();
    let hdr: Vec<&str> = header.iter().map(String::as_str).collect();
    write_bytes(&report_path(reports, s.task, "-steps.csv"), &csv_bytes(&hdr, &rows)?)?;

    write_json(&report_path(reports, s.task, ".json"), s)?;
    write_bytes(&report_path(reports, s.task, ".txt"), render_text(s).as_bytes())?;
    Ok(())
}

pub fn render_text(s: &FidelitySummary) -> String {
    let mut out = format!(
        "config {}\nfidelity, task {} (S = {}), mean over proxy seeds\n",
        s.config_digest, s.task, s.horizon
    );
    let mut header: Vec<String> = vec!["model / method".into()];
    header.extend(s.k_grid.iter().map(|k| format!("k={k}")));
    let mut groups: BTreeMap<(ArchKind, Method), BTreeMap<usize, f64>> = BTreeMap::new();
    for r in &s.table {
        groups.entry((r.model, r.method)).or_default().insert(r.k, r.fidelity);
    }
    let rows: Vec<Vec<String>> = groups
        .iter()
        .map(|((m, meth), cells)| {
            let mut row = vec![format!("{} / {}", m.as_str(), meth.as_str().to_uppercase())];
            row.extend(s.k_grid.iter().map(|k| cells.get(k).map_or("-".into(), |&v| fmt4(v))));
            row
        })
        .collect();
    out.push_str(&text_table(&header, &rows));
    for c in &s.control {
        out.push_str(&format!(
            "control {} / random k=1: {} (modal rate {})\n",
            c.model.as_str(),
            fmt4(c.fidelity),
            fmt4(c.modal_rate)
        ));
    }
    if let Some(first) = s.steps.first() {
        out.push_str(&format!("\nIG fidelity by steps at k = {}\n", first.k));
        let mut header: Vec<String> = vec!["model".into()];
        header.extend(first.cells.iter().map(|c| format!("steps={}", c.0)));
        let rows: Vec<Vec<String>> = s
            .steps
            .iter()
            .map(|r| {
                let mut row = vec![r.model.as_str().to_string()];
                row.extend(r.cells.iter().map(|c| fmt4(c.1)));
                row
            })
            .collect();
        out.push_str(&text_table(&header, &rows));
    }
    out
}
