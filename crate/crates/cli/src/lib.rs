//! Command-line pipeline over the `eventlens` library: synthetic data
//! generation, model training, attribution reports, fidelity sweeps and
//! aggregate tables. Each command is a plain function of a [`RunConfig`], so
//! tests can drive the pipeline without spawning processes.

use std::path::PathBuf;

use eventlens::attribution::AttributionError;
use eventlens::datagen::DataError;
use eventlens::encoding::{EncodingError, WindowsError};
use eventlens::fidelity::FidelityError;
use eventlens::models::ModelError;
use thiserror::Error;

pub mod attribute;
pub mod config;
pub mod fidelity;
pub mod gen;
pub mod output;
pub mod report;
pub mod train;

pub use attribute::{cmd_attribute, AttributeOptions, AttributionOutput};
pub use config::{ArchKind, RunConfig};
pub use fidelity::{cmd_fidelity, FidelityOptions, FidelitySummary};
pub use gen::{cmd_gen, load_splits, split_games, GenSummary, Splits};
pub use report::{cmd_report, Summary};
pub use train::{checkpoint_dir, cmd_train, TrainSummary};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {1}", .0.display())]
    Io(PathBuf, #[source] std::io::Error),
    #[error("{} already exists (pass --force to overwrite)", .0.display())]
    Exists(PathBuf),
    #[error("{} not found; run `{1}` first", .0.display())]
    Missing(PathBuf, &'static str),
    #[error("{what} split has no instances for horizon {horizon}")]
    NoInstances { what: &'static str, horizon: u32 },
    #[error("instance {index} out of range ({available} test windows)")]
    Instance { index: usize, available: usize },
    #[error("dropped {dropped} of {total} instances for {method}, above the {threshold} limit")]
    DropRate {
        method: String,
        dropped: usize,
        total: usize,
        threshold: f64,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Fidelity(#[from] FidelityError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<WindowsError> for CliError {
    fn from(e: WindowsError) -> Self {
        match e {
            WindowsError::Data(d) => CliError::Data(d),
            WindowsError::Encoding(e) => CliError::Encoding(e),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
