//! `attribute`: top-k reports for selected test windows.

use std::path::PathBuf;

use eventlens::attribution::{
    render_report, render_text, AttributionReport, Attributor, DimensionStats, IgConfig, Method, SgConfig, Target,
};
use eventlens::models::{load_checkpoint, ModelHandle};
use serde::{Deserialize, Serialize};

use crate::config::{ArchKind, RunConfig};
use crate::gen::load_splits;
use crate::output::{ensure_writable, write_bytes, write_json};
use crate::train::{checkpoint_dir, windows_for};
use crate::{CliError, Result};

#[derive(Clone, Debug, Default)]
pub struct AttributeOptions {
    /// Overrides `attribution.instances`.
    pub instances: Option<Vec<usize>>,
    /// Defaults to the first horizon of the task.
    pub horizon: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionOutput {
    pub config_digest: String,
    pub model: ArchKind,
    pub horizon: u32,
    pub instance: usize,
    pub game_id: u64,
    pub t: u32,
    pub label: usize,
    pub report: AttributionReport,
}

impl AttributionOutput {
    pub fn text(&self) -> String {
        format!(
            "config {}\n{} instance {} (game {}, t = {} s, S = {}, label {})\n{}",
            self.config_digest,
            self.model.as_str(),
            self.instance,
            self.game_id,
            self.t,
            self.horizon,
            self.label,
            render_text(&self.report)
        )
    }
}

pub fn load_model(cfg: &RunConfig, arch: ArchKind, horizon: u32) -> Result<ModelHandle> {
    let dir = checkpoint_dir(cfg, arch, horizon);
    if !dir.exists() {
        return Err(CliError::Missing(dir, "train"));
    }
    Ok(load_checkpoint(&dir)?)
}

pub fn attributor(cfg: &RunConfig, method: Method, steps: usize, stats: &DimensionStats) -> Attributor {
    match method {
        Method::Ig => Attributor::Ig(IgConfig { steps, baseline: None }),
        Method::Sg => Attributor::Sg {
            config: SgConfig {
                steps,
                sigma_ratio: cfg.attribution.sigma_ratio,
                seed: cfg.seed,
            },
            stats: stats.clone(),
        },
        Method::Random => Attributor::Random { seed: cfg.seed },
    }
}

fn output_path(cfg: &RunConfig, arch: ArchKind, horizon: u32, method: Method, index: usize, ext: &str) -> PathBuf {
    cfg.paths.reports.join(format!(
        "attribution-{}-{}-s{horizon}-{method}-{index}.{ext}",
        cfg.task,
        arch.as_str()
    ))
}

pub fn cmd_attribute(cfg: &RunConfig, opts: &AttributeOptions, force: bool) -> Result<Vec<AttributionOutput>> {
    let horizon = opts.horizon.unwrap_or(cfg.task_horizons()[0]);
    let instances = opts.instances.clone().unwrap_or_else(|| cfg.attribution.instances.clone());
    let methods = &cfg.attribution.methods;
    let mut paths = Vec::new();
    for &arch in &cfg.architectures {
        for &m in methods {
            for &i in &instances {
                paths.push(output_path(cfg, arch, horizon, m, i, "json"));
                paths.push(output_path(cfg, arch, horizon, m, i, "txt"));
            }
        }
    }
    ensure_writable(&paths, force)?;

    let splits = load_splits(cfg)?;
    let digest = cfg.digest();
    let mut out = Vec::new();
    for &arch in &cfg.architectures {
        let model = load_model(cfg, arch, horizon)?;
        let test = windows_for(cfg, &splits.test, &model.schema, horizon, "test")?;
        let stats = if methods.contains(&Method::Sg) {
            let train = windows_for(cfg, &splits.train, &model.schema, horizon, "train")?;
            DimensionStats::from_windows(&train).expect("non-empty")
        } else {
            DimensionStats {
                min: Vec::new(),
                max: Vec::new(),
            }
        };
        for &m in methods {
            let attr = attributor(cfg, m, cfg.attribution.steps, &stats);
            for &i in &instances {
                let w = test.get(i).ok_or(CliError::Instance {
                    index: i,
                    available: test.len(),
                })?;
                let map = attr.attribute(&model, &w.x, Target::Predicted, i as u64)?;
                let k = cfg.attribution.top_k.min(model.input_width());
                let result = AttributionOutput {
                    config_digest: digest.clone(),
                    model: arch,
                    horizon,
                    instance: i,
                    game_id: w.game_id,
                    t: w.t,
                    label: w.label,
                    report: render_report(&map, k, &model.schema, cfg.task)?,
                };
                write_json(&output_path(cfg, arch, horizon, m, i, "json"), &result)?;
                write_bytes(&output_path(cfg, arch, horizon, m, i, "txt"), result.text().as_bytes())?;
                out.push(result);
            }
        }
    }
    Ok(out)
}
