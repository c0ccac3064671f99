use serde::{Deserialize, Serialize};

use super::{AttributionMap, Method, Result};
use crate::datagen::Task;
use crate::encoding::FeatureSchema;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub rank: usize,
    pub dimension: usize,
    pub feature: String,
    pub score: f64,
}

/// Top-k attribution summary for one prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub task: Task,
    pub method: Method,
    pub predicted_class: usize,
    pub class_name: String,
    pub probability: f64,
    pub k: usize,
    pub rows: Vec<ReportRow>,
}

pub fn render_report(map: &AttributionMap, k: usize, schema: &FeatureSchema, task: Task) -> Result<AttributionReport> {
    let rows = map
        .top_k(k)?
        .into_iter()
        .enumerate()
        .map(|(rank, dim)| ReportRow {
            rank: rank + 1,
            dimension: dim,
            feature: schema.dimension_name(dim).unwrap_or_else(|| format!("dim_{dim}")),
            score: map.time_avg[dim],
        })
        .collect();
    Ok(AttributionReport {
        task,
        method: map.method,
        predicted_class: map.target,
        class_name: task.class_name(map.target),
        probability: map.probability,
        k,
        rows,
    })
}

/// Aligned plain-text rendering.
pub fn render_text(report: &AttributionReport) -> String {
    let mut out = format!(
        "task {}: predicted {} (class {}) with probability {:.4}\ntop {} features by {}:\n",
        report.task,
        report.class_name,
        report.predicted_class,
        report.probability,
        report.k,
        report.method.as_str().to_uppercase()
    );
    let width = report.rows.iter().map(|r| r.feature.len()).max().unwrap_or(7).max(7);
    out.push_str(&format!("{:>4}  {:<width$}  {:>6}  {:>12}\n", "rank", "feature", "dim", "score"));
    for r in &report.rows {
        out.push_str(&format!(
            "{:>4}  {:<width$}  {:>6}  {:>+12.6e}\n",
            r.rank, r.feature, r.dimension, r.score
        ));
    }
    out
}
