//! Run configuration: defaults, JSON file, `EVENTLENS_*` environment
//! overrides, then command-line flags, in that order of precedence.

use std::path::{Path, PathBuf};

use eventlens::attribution::Method;
use eventlens::datagen::{GeneratorConfig, Task};
use eventlens::fidelity::ProxyConfig;
use eventlens::models::{Architecture, LstmConfig, TrainConfig, TransformerConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const ENV_PREFIX: &str = "EVENTLENS_";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Lstm,
    Transformer,
}

impl ArchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::Lstm => "lstm",
            ArchKind::Transformer => "transformer",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: "out/data".into(),
            checkpoints: "out/checkpoints".into(),
            reports: "out/reports".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub validation: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train: 0.8,
            validation: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionSettings {
    pub methods: Vec<Method>,
    pub steps: usize,
    pub sigma_ratio: f64,
    /// Rows per attribution report.
    pub top_k: usize,
    /// Test-window indices attributed by `attribute`.
    pub instances: Vec<usize>,
}

impl Default for AttributionSettings {
    fn default() -> Self {
        Self {
            methods: vec![Method::Ig, Method::Sg],
            steps: 100,
            sigma_ratio: 0.15,
            top_k: 5,
            instances: vec![0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelitySettings {
    pub k_grid: Vec<usize>,
    pub seeds: Vec<u64>,
    /// IG step counts compared at `steps_k`.
    pub steps_grid: Vec<usize>,
    pub steps_k: usize,
    pub max_train_instances: usize,
    pub max_test_instances: usize,
    pub proxy: ProxyConfig,
    /// Adds a random-attribution row at k = 1.
    pub random_control: bool,
    /// Fraction of dropped instances above which the command fails.
    pub max_drop_rate: f64,
}

impl Default for FidelitySettings {
    fn default() -> Self {
        Self {
            k_grid: vec![100, 10, 5, 1],
            seeds: vec![0],
            steps_grid: vec![10, 100, 500],
            steps_k: 10,
            max_train_instances: 2000,
            max_test_instances: 500,
            proxy: ProxyConfig::default(),
            random_control: true,
            max_drop_rate: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub task: Task,
    pub architectures: Vec<ArchKind>,
    /// Window length `l` in seconds.
    pub window: u32,
    /// Horizons `S`; the win task ignores them.
    pub horizons: Vec<u32>,
    pub games: usize,
    pub split: SplitConfig,
    pub generator: GeneratorConfig,
    pub lstm: LstmConfig,
    pub transformer: TransformerConfig,
    pub train: TrainConfig,
    pub attribution: AttributionSettings,
    pub fidelity: FidelitySettings,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task: Task::Win,
            architectures: vec![ArchKind::Lstm, ArchKind::Transformer],
            window: 5,
            horizons: vec![5, 10, 15, 20],
            games: 500,
            split: SplitConfig::default(),
            generator: GeneratorConfig::default(),
            lstm: LstmConfig::default(),
            transformer: TransformerConfig::default(),
            train: TrainConfig::default(),
            attribution: AttributionSettings::default(),
            fidelity: FidelitySettings::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    /// Defaults, overlaid with `file` (if any) and then the environment.
    pub fn load(file: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, CliError> {
        let mut value = serde_json::to_value(RunConfig::default()).expect("config serializes");
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
            let overlay: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            merge(&mut value, overlay);
        }
        for (key, raw) in env {
            let Some(rest) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let path: Vec<String> = rest.split("__").map(str::to_ascii_lowercase).collect();
            let parsed = serde_json::from_str(&raw).unwrap_or(Value::String(raw.clone()));
            set_path(&mut value, &path, parsed).map_err(|msg| CliError::Config(format!("{key}: {msg}")))?;
        }
        let de = serde_json::from_value::<RunConfig>(value).map_err(|e| CliError::Config(e.to_string()))?;
        de.validate()?;
        Ok(de)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        if self.architectures.is_empty() {
            return bad("architectures must not be empty");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.task != Task::Win && (self.horizons.is_empty() || self.horizons.contains(&0)) {
            return bad("horizons must be a non-empty list of positive values");
        }
        if self.games < 3 {
            return bad("need at least 3 games to split");
        }
        let s = &self.split;
        if !(s.train > 0.0 && s.validation > 0.0 && s.train + s.validation < 1.0) {
            return bad("split fractions must be positive and leave room for a test split");
        }
        let f = &self.fidelity;
        if f.k_grid.is_empty() || f.k_grid.contains(&0) || f.seeds.is_empty() || f.steps_grid.is_empty() {
            return bad("fidelity grids must be non-empty with positive k");
        }
        if !(0.0..=1.0).contains(&f.max_drop_rate) {
            return bad("max_drop_rate must lie in [0, 1]");
        }
        if self.attribution.methods.is_empty() || self.attribution.steps == 0 {
            return bad("attribution needs at least one method and positive steps");
        }
        let p = &self.paths;
        if p.data == p.checkpoints || p.data == p.reports || p.checkpoints == p.reports {
            return bad("data, checkpoint and report paths must be distinct");
        }
        self.generator
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.architecture(ArchKind::Lstm)
            .validate()
            .and(self.architecture(ArchKind::Transformer).validate())
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn architecture(&self, kind: ArchKind) -> Architecture {
        match kind {
            ArchKind::Lstm => Architecture::Lstm(self.lstm.clone()),
            ArchKind::Transformer => Architecture::Transformer(self.transformer.clone()),
        }
    }

    /// Horizons actually used for the configured task.
    pub fn task_horizons(&self) -> Vec<u32> {
        if self.task == Task::Win {
            vec![0]
        } else {
            self.horizons.clone()
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn digest(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(value: &mut Value, path: &[String], new: Value) -> Result<(), String> {
    let (last, parents) = path.split_last().ok_or("empty key")?;
    let mut cur = value;
    for p in parents {
        cur = cur.get_mut(p.as_str()).ok_or_else(|| format!("unknown key `{p}`"))?;
    }
    let obj = cur.as_object_mut().ok_or("not a table")?;
    if !obj.contains_key(last.as_str()) {
        return Err(format!("unknown key `{last}`"));
    }
    obj.insert(last.clone(), new);
    Ok(())
}
