//! `train`: one checkpoint per (architecture, horizon) plus accuracy tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use eventlens::datagen::{GameRecord, Task};
use eventlens::encoding::{build_windows, FeatureSchema, SequenceWindow};
use eventlens::models::{argmax, save_checkpoint, train, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::{ArchKind, RunConfig};
use crate::gen::load_splits;
use crate::output::{csv_bytes, ensure_writable, fmt4, text_table, write_bytes, write_json};
use crate::{CliError, Result};

/// Width of the game-time buckets of the win curve, in seconds.
pub const CURVE_BUCKET: u32 = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub task: Task,
    pub model: ArchKind,
    pub horizon: u32,
    pub accuracy: f64,
    pub test_instances: usize,
    pub epochs: usize,
    pub best_validation_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub model: ArchKind,
    /// Bucket start in game seconds.
    pub time: u32,
    pub instances: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_digest: String,
    pub task: Task,
    pub rows: Vec<AccuracyRow>,
    /// Win task only.
    pub curve: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_digest: String,
    pub task: Task,
    pub model: ArchKind,
    pub horizon: u32,
    pub window: u32,
}

pub fn checkpoint_dir(cfg: &RunConfig, arch: ArchKind, horizon: u32) -> PathBuf {
    cfg.paths
        .checkpoints
        .join(format!("{}-{}-s{horizon}", cfg.task, arch.as_str()))
}

pub fn predictions_path(cfg: &RunConfig, arch: ArchKind, horizon: u32) -> PathBuf {
    cfg.paths
        .reports
        .join(format!("predictions-{}-{}-s{horizon}.csv", cfg.task, arch.as_str()))
}

pub fn train_report_path(reports: &Path, task: Task, ext: &str) -> PathBuf {
    reports.join(format!("train-{task}.{ext}"))
}

pub fn curve_path(reports: &Path, task: Task) -> PathBuf {
    reports.join(format!("curve-{task}.csv"))
}

pub fn windows_for(
    cfg: &RunConfig,
    records: &[GameRecord],
    schema: &FeatureSchema,
    horizon: u32,
    what: &'static str,
) -> Result<Vec<SequenceWindow>> {
    let w = build_windows(records, schema, cfg.task, horizon, cfg.window)?;
    if w.is_empty() {
        return Err(CliError::NoInstances { what, horizon });
    }
    Ok(w)
}

pub const PREDICTION_HEADER: [&str; 6] = ["game_id", "t", "label", "predicted", "probability", "config_digest"];

pub fn cmd_train(cfg: &RunConfig, force: bool) -> Result<TrainSummary> {
    let horizons = cfg.task_horizons();
    let reports = &cfg.paths.reports;
    let mut outputs = Vec::new();
    for &arch in &cfg.architectures {
        for &s in &horizons {
            outputs.push(checkpoint_dir(cfg, arch, s));
            outputs.push(predictions_path(cfg, arch, s));
        }
    }
    for ext in ["csv", "json", "txt"] {
        outputs.push(train_report_path(reports, cfg.task, ext));
    }
    if cfg.task == Task::Win {
        outputs.push(curve_path(reports, cfg.task));
    }
    ensure_writable(&outputs, force)?;

    let splits = load_splits(cfg)?;
    let schema = FeatureSchema::mini_skeleton().fit_normalization(&splits.train)?;
    let digest = cfg.digest();
    let train_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    let mut rows = Vec::new();
    let mut curve = Vec::new();
    for &s in &horizons {
        let tr = windows_for(cfg, &splits.train, &schema, s, "train")?;
        let va = windows_for(cfg, &splits.validation, &schema, s, "validation")?;
        let te = windows_for(cfg, &splits.test, &schema, s, "test")?;
        for &arch in &cfg.architectures {
            log::info!("training {} for {} at S={s}: {} windows", arch.as_str(), cfg.task, tr.len());
            let model = train(cfg.architecture(arch), schema.clone(), &tr, &va, &train_cfg)?;
            let dir = checkpoint_dir(cfg, arch, s);
            if dir.exists() {
                std::fs::remove_dir_all(&dir).map_err(|e| CliError::Io(dir.clone(), e))?;
            }
            save_checkpoint(&model, &dir)?;
            write_json(
                &dir.join("run.json"),
                &RunMetadata {
                    config_digest: digest.clone(),
                    task: cfg.task,
                    model: arch,
                    horizon: s,
                    window: cfg.window,
                },
            )?;

            let xs: Vec<_> = te.iter().map(|w| &w.x).collect();
            let probs = model.predict_all(&xs, 256)?;
            let predicted: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
            let pred_rows: Vec<Vec<String>> = te
                .iter()
                .zip(&probs)
                .zip(&predicted)
                .map(|((w, p), &y)| {
                    vec![
                        w.game_id.to_string(),
                        w.t.to_string(),
                        w.label.to_string(),
                        y.to_string(),
                        format!("{:.6}", p[y]),
                        digest.clone(),
                    ]
                })
                .collect();
            write_bytes(&predictions_path(cfg, arch, s), &csv_bytes(&PREDICTION_HEADER, &pred_rows)?)?;

            let hits = te.iter().zip(&predicted).filter(|(w, &y)| w.label == y).count();
            let best = model
                .history
                .iter()
                .map(|m| m.validation_loss)
                .fold(f64::INFINITY, f64::min);
            rows.push(AccuracyRow {
                task: cfg.task,
                model: arch,
                horizon: s,
                accuracy: hits as f64 / te.len() as f64,
                test_instances: te.len(),
                epochs: model.history.len() - 1,
                best_validation_loss: best,
            });
            if cfg.task == Task::Win {
                curve.extend(win_curve(arch, &te, &predicted));
            }
        }
    }
    rows.sort_by_key(|r| (r.model, r.horizon));
    let summary = TrainSummary {
        config_digest: digest,
        task: cfg.task,
        rows,
        curve,
    };
    write_reports(&summary, reports)?;
    Ok(summary)
}

fn win_curve(arch: ArchKind, windows: &[SequenceWindow], predicted: &[usize]) -> Vec<CurvePoint> {
    let mut buckets: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (w, &y) in windows.iter().zip(predicted) {
        let e = buckets.entry(w.t / CURVE_BUCKET * CURVE_BUCKET).or_default();
        e.0 += 1;
        e.1 += usize::from(w.label == y);
    }
    buckets
        .into_iter()
        .map(|(time, (n, hits))| CurvePoint {
            model: arch,
            time,
            instances: n,
            accuracy: hits as f64 / n as f64,
        })
        .collect()
}

pub const ACCURACY_HEADER: [&str; 8] = [
    "task",
    "model",
    "horizon",
    "accuracy",
    "test_instances",
    "epochs",
    "best_validation_loss",
    "config_digest",
];

pub const CURVE_HEADER: [&str; 6] = ["task", "model", "time", "instances", "accuracy", "config_digest"];

fn write_reports(summary: &TrainSummary, reports: &Path) -> Result<()> {
    let d = &summary.config_digest;
    let rows: Vec<Vec<String>> = summary
        .rows
        .iter()
        .map(|r| {
            vec![
                r.task.to_string(),
                r.model.as_str().into(),
                r.horizon.to_string(),
                format!("{:.6}", r.accuracy),
                r.test_instances.to_string(),
                r.epochs.to_string(),
                format!("{:.6}", r.best_validation_loss),
                d.clone(),
            ]
        })
        .collect();
    write_bytes(&train_report_path(reports, summary.task, "csv"), &csv_bytes(&ACCURACY_HEADER, &rows)?)?;
    write_json(&train_report_path(reports, summary.task, "json"), summary)?;
    if summary.task == Task::Win {
        let rows: Vec<Vec<String>> = summary
            .curve
            .iter()
            .map(|c| {
                vec![
                    summary.task.to_string(),
                    c.model.as_str().into(),
                    c.time.to_string(),
                    c.instances.to_string(),
                    format!("{:.6}", c.accuracy),
                    d.clone(),
                ]
            })
            .collect();
        write_bytes(&curve_path(reports, summary.task), &csv_bytes(&CURVE_HEADER, &rows)?)?;
    }
    write_bytes(&train_report_path(reports, summary.task, "txt"), render_text(summary).as_bytes())?;
    Ok(())
}

pub fn render_text(summary: &TrainSummary) -> String {
    let mut out = format!("config {}\naccuracy on the test split, task {}\n", summary.config_digest, summary.task);
    let rows: Vec<Vec<String>> = summary
        .rows
        .iter()
        .map(|r| {
            vec![
                r.model.as_str().into(),
                r.horizon.to_string(),
                fmt4(r.accuracy),
                r.test_instances.to_string(),
                r.epochs.to_string(),
            ]
        })
        .collect();
    out.push_str(&text_table(
        &["model".into(), "S".into(), "accuracy".into(), "instances".into(), "epochs".into()],
        &rows,
    ));
    if !summary.curve.is_empty() {
        out.push_str("\naccuracy by game time\n");
        let rows: Vec<Vec<String>> = summary
            .curve
            .iter()
            .map(|c| vec![c.model.as_str().into(), c.time.to_string(), fmt4(c.accuracy), c.instances.to_string()])
            .collect();
        out.push_str(&text_table(
            &["model".into(), "time".into(), "accuracy".into(), "instances".into()],
            &rows,
        ));
    }
    out
}
