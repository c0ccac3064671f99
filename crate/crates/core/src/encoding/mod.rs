//! Frame encoding, input windows and the categorical embedding layer.
//!
//! A [`FeatureSchema`] lays out every feature group as a span of the encoded
//! vector: categoricals as one-hot blocks, numerics as single min-max
//! normalized columns. Windows stack `l` consecutive encoded frames.

mod embedding;
mod schema;
mod window;

use thiserror::Error;

use crate::autodiff::AutodiffError;

pub use embedding::{embedding_width, EmbeddingLayer, OutputBlock};
pub use schema::{
    encode_frame, normalize, EntityField, FeatureGroup, FeatureKind, FeatureSchema, FeatureSource, GlobalField,
    GroupSpec, HeroField,
};
pub use window::{build_window, build_windows, encode_window, SequenceWindow, WindowsError};

#[derive(Debug, Error, PartialEq)]
pub enum EncodingError {
    #[error("group `{group}`: category {value} outside cardinality {cardinality}")]
    CategoryOutOfRange {
        group: String,
        value: f64,
        cardinality: usize,
    },
    #[error("frame has no value for group `{0}`")]
    MissingSource(String),
    #[error("categorical group `{0}` has zero cardinality")]
    EmptyCategorical(String),
    #[error("schema has no feature groups")]
    EmptySchema,
    #[error("normalization needs at least one training frame")]
    EmptyTrainingSet,
    #[error("expected width {expected}, found {found}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("window of length {length} ending at {t} starts before the first frame")]
    WindowUnderrun { t: u32, length: u32 },
    #[error("window end {t} is past the last frame {last}")]
    WindowOverrun { t: u32, last: u32 },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}
