//! `report`: aggregates the per-task train and fidelity outputs found in the
//! reports directory into one summary.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use eventlens::datagen::Task;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::fidelity::{self, report_path, FidelitySummary};
use crate::output::{ensure_writable, fmt4, read_json, text_table, write_bytes, write_json};
use crate::train::{self, train_report_path, TrainSummary};
use crate::Result;

pub const TASKS: [Task; 4] = [Task::Win, Task::Tyrant, Task::Kill, Task::Bekill];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_digest: String,
    pub train: Vec<TrainSummary>,
    /// Per-seed runs are left in the per-task files.
    pub fidelity: Vec<FidelitySummary>,
}

pub fn summary_paths(cfg: &RunConfig) -> [PathBuf; 2] {
    [cfg.paths.reports.join("summary.json"), cfg.paths.reports.join("summary.txt")]
}

pub fn cmd_report(cfg: &RunConfig, force: bool) -> Result<Summary> {
    let paths = summary_paths(cfg);
    ensure_writable(&paths, force)?;
    let reports = &cfg.paths.reports;
    let mut summary = Summary {
        config_digest: cfg.digest(),
        train: Vec::new(),
        fidelity: Vec::new(),
    };
    for task in TASKS {
        let path = train_report_path(reports, task, "json");
        if path.exists() {
            summary.train.push(read_json(&path, "train")?);
        }
        let path = report_path(reports, task, ".json");
        if path.exists() {
            let mut f: FidelitySummary = read_json(&path, "fidelity")?;
            f.runs.clear();
            summary.fidelity.push(f);
        }
    }
    write_json(&paths[0], &summary)?;
    write_bytes(&paths[1], render_text(&summary).as_bytes())?;
    Ok(summary)
}

pub fn render_text(s: &Summary) -> String {
    let mut out = format!("config {}\n", s.config_digest);
    if s.train.is_empty() && s.fidelity.is_empty() {
        out.push_str("no train or fidelity outputs found\n");
        return out;
    }
    if !s.train.is_empty() {
        out.push_str("\naccuracy by task, model and horizon S\n");
        let horizons: BTreeSet<u32> = s.train.iter().flat_map(|t| t.rows.iter().map(|r| r.horizon)).collect();
        let mut header = vec!["task / model".to_string()];
        header.extend(horizons.iter().map(|h| if *h == 0 { "-".into() } else { format!("S={h}") }));
        let mut rows = Vec::new();
        for t in &s.train {
            let mut by_model: BTreeMap<_, BTreeMap<u32, f64>> = BTreeMap::new();
            for r in &t.rows {
                by_model.entry(r.model).or_default().insert(r.horizon, r.accuracy);
            }
            for (model, cells) in by_model {
                let mut row = vec![format!("{} / {}", t.task, model.as_str())];
                row.extend(horizons.iter().map(|h| cells.get(h).map_or(String::new(), |&v| fmt4(v))));
                rows.push(row);
            }
        }
        out.push_str(&text_table(&header, &rows));
        for t in s.train.iter().filter(|t| !t.curve.is_empty()) {
            out.push('\n');
            let body = train::render_text(t);
            out.push_str(body.split_once("\naccuracy by game time\n").map_or("", |(_, c)| c));
        }
    }
    for f in &s.fidelity {
        out.push('\n');
        let body = fidelity::render_text(f);
        out.push_str(body.split_once('\n').map_or("", |(_, rest)| rest));
    }
    out
}
