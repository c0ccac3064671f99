//! Sequence classifiers over embedded windows: a bidirectional LSTM and a
//! Transformer encoder, each mean-pooled over time and followed by a
//! `FC -> tanh -> linear -> softmax` head.
//!
//! Batches are laid out time-major: row `t * B + b` of the `[l * B, D_in]`
//! input holds timestep `t` of sample `b` (see [`stack_time_major`]).

mod checkpoint;
mod gradcheck;
mod lstm;
mod train;
mod transformer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::datagen::Task;
use crate::encoding::{EmbeddingLayer, EncodingError, FeatureSchema};
use crate::params::{glorot, ParamId, ParamStore};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{check_gradients, relative_error, GradCheck};
pub use lstm::LstmConfig;
pub use train::{accuracy, batch_loss, evaluate, loss_gradients, train, EpochMetrics, LossGradients, TrainConfig};
pub use transformer::TransformerConfig;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("input width {found} does not match schema width {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("windows in one batch must share a shape")]
    RaggedBatch,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch} (seed {seed})")]
    Diverged { epoch: usize, seed: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "snake_case")]
pub enum Architecture {
    Lstm(LstmConfig),
    Transformer(TransformerConfig),
}

impl Architecture {
    pub fn tag(&self) -> &'static str {
        match self {
            Architecture::Lstm(_) => "lstm",
            Architecture::Transformer(_) => "transformer",
        }
    }

    pub fn lstm_mini() -> Self {
        Architecture::Lstm(LstmConfig::default())
    }

    pub fn transformer_mini() -> Self {
        Architecture::Transformer(TransformerConfig::default())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Architecture::Lstm(c) => c.validate(),
            Architecture::Transformer(c) => c.validate(),
        }
    }

    /// Parameters of the sequence body and head, excluding the embedding.
    pub fn body_parameter_count(&self, embed_width: usize, classes: usize) -> usize {
        let (body, pooled, head) = match self {
            Architecture::Lstm(c) => (c.parameter_count(embed_width), c.output_width(), c.head_width),
            Architecture::Transformer(c) => (c.parameter_count(embed_width), c.width, c.head_width),
        };
        body + pooled * head + head + head * classes + classes
    }
}

/// Forward-pass mode. Training mode samples dropout masks from `mask_seed`;
/// evaluation mode is deterministic and applies no dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train { mask_seed: u64 },
    Eval,
}

/// Inverted dropout driven by an explicit mask stream.
pub(crate) struct Dropout {
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub(crate) fn new(mode: Mode) -> Self {
        Self {
            rng: match mode {
                Mode::Train { mask_seed } => Some(ChaCha8Rng::seed_from_u64(mask_seed)),
                Mode::Eval => None,
            },
        }
    }

    pub(crate) fn apply(&mut self, tape: &mut Tape, x: Var, rate: f64) -> Result<Var> {
        let Some(rng) = self.rng.as_mut() else {
            return Ok(x);
        };
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let shape = tape.value(x).shape().to_vec();
        let n = tape.value(x).len();
        let mask = (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
        Ok(tape.dropout_with_mask(x, Tensor::new(shape, mask)?)?)
    }
}

/// Dense layer parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub(crate) fn new(params: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: params.add(format!("{name}.weight"), glorot(fan_in, fan_out, rng)),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    pub(crate) fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let h = tape.matmul(x, vars[self.weight.0])?;
        Ok(tape.add_row(h, vars[self.bias.0])?)
    }
}

/// A trained (or freshly initialized) classifier with its input schema.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelHandle {
    pub architecture: Architecture,
    pub task: Task,
    pub classes: usize,
    pub seed: u64,
    pub schema: FeatureSchema,
    pub embedding: EmbeddingLayer,
    pub params: ParamStore,
    pub(crate) body: Body,
    pub(crate) head: Head,
    /// Validation metrics per epoch; entry 0 is before any update.
    pub history: Vec<EpochMetrics>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) enum Body {
    Lstm(lstm::LstmParams),
    Transformer(transformer::TransformerParams),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct Head {
    pub hidden: Linear,
    pub out: Linear,
}

/// Values produced by one forward pass.
pub struct Graph {
    /// `[B, classes]` unnormalized scores.
    pub logits: Var,
    /// Per layer, `[B * heads, l, l]` attention weights (Transformer only).
    pub attention: Vec<Var>,
}

impl ModelHandle {
    /// Fresh parameters for `architecture` on `schema`, seeded by `seed`.
    pub fn init(architecture: Architecture, schema: FeatureSchema, task: Task, seed: u64) -> Result<Self> {
        architecture.validate()?;
        schema.validate()?;
        let classes = task.num_classes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let embedding = EmbeddingLayer::new(&schema, &mut params, &mut rng);
        let d_emb = embedding.output_width();
        let (body, pooled, head_width) = match &architecture {
            Architecture::Lstm(c) => (
                Body::Lstm(lstm::LstmParams::new(c, d_emb, &mut params, &mut rng)),
                c.output_width(),
                c.head_width,
            ),
            Architecture::Transformer(c) => (
                Body::Transformer(transformer::TransformerParams::new(c, d_emb, &mut params, &mut rng)),
                c.width,
                c.head_width,
            ),
        };
        let head = Head {
            hidden: Linear::new(&mut params, "head.hidden", pooled, head_width, &mut rng),
            out: Linear::new(&mut params, "head.out", head_width, classes, &mut rng),
        };
        Ok(Self {
            architecture,
            task,
            classes,
            seed,
            schema,
            embedding,
            params,
            body,
            head,
            history: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn input_width(&self) -> usize {
        self.schema.input_width()
    }

    /// Builds the forward graph for a time-major input `[l * batch, D_in]`.
    pub fn graph(&self, tape: &mut Tape, vars: &[Var], input: Var, batch: usize, mode: Mode) -> Result<Graph> {
        let shape = tape.value(input).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.input_width() {
            return Err(ModelError::WidthMismatch {
                expected: self.input_width(),
                found: shape.last().copied().unwrap_or(0),
            });
        }
        if batch == 0 || !shape[0].is_multiple_of(batch) || shape[0] == 0 {
            return Err(ModelError::RaggedBatch);
        }
        let steps = shape[0] / batch;
        let mut dropout = Dropout::new(mode);
        let emb = self.embedding.embed(tape, input, vars)?;
        let (seq, width, attention) = match (&self.body, &self.architecture) {
            (Body::Lstm(p), Architecture::Lstm(c)) => {
                (p.forward(c, tape, vars, emb, steps, batch, &mut dropout)?, c.output_width(), Vec::new())
            }
            (Body::Transformer(p), Architecture::Transformer(c)) => {
                let (seq, att) = p.forward(c, tape, vars, emb, steps, batch, &mut dropout)?;
                (seq, c.width, att)
            }
            _ => return Err(ModelError::Config("architecture and parameters disagree".into())),
        };
        let seq = tape.reshape(seq, vec![steps, batch, width])?;
        let pooled = tape.mean(seq, 0)?;
        let h = self.head.hidden.forward(tape, vars, pooled)?;
        let h = tape.tanh(h);
        let logits = self.head.out.forward(tape, vars, h)?;
        Ok(Graph { logits, attention })
    }

    /// Class distributions `[B, classes]` for a batch of `[l, D_in]` windows.
    pub fn predict_batch(&self, windows: &[&Tensor], mode: Mode) -> Result<Tensor> {
        let input = stack_time_major(windows)?;
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let x = tape.leaf(input);
        let g = self.graph(&mut tape, &vars, x, windows.len(), mode)?;
        let p = tape.softmax(g.logits);
        Ok(tape.value(p).clone())
    }

    /// `P(y | X)` for one `[l, D_in]` window.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Vec<f64>> {
        Ok(self.predict_batch(&[x], mode)?.into_data())
    }

    /// Eval-mode distributions for many windows, in chunks of `chunk`.
    pub fn predict_all(&self, windows: &[&Tensor], chunk: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(windows.len());
        for part in windows.chunks(chunk.max(1)) {
            let p = self.predict_batch(part, Mode::Eval)?;
            out.extend(p.data().chunks(self.classes).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Eval-mode argmax class for each window.
    pub fn predict_labels(&self, windows: &[&Tensor]) -> Result<Vec<usize>> {
        Ok(self.predict_all(windows, 256)?.iter().map(|p| argmax(p)).collect())
    }

    /// Per-layer attention weights `[heads, l, l]` for one window.
    pub fn attention_weights(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let input = tape.leaf(stack_time_major(&[x])?);
        let g = self.graph(&mut tape, &vars, input, 1, Mode::Eval)?;
        Ok(g.attention.iter().map(|&a| tape.value(a).clone()).collect())
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Closed-form parameter count implied by the configs and schema.
    pub fn expected_parameter_count(&self) -> usize {
        let embed: usize = self
            .schema
            .groups()
            .iter()
            .filter_map(|g| match g.kind {
                crate::encoding::FeatureKind::Categorical { cardinality } => {
                    let w = crate::encoding::embedding_width(cardinality);
                    Some(cardinality * w + w)
                }
                crate::encoding::FeatureKind::Numeric { .. } => None,
            })
            .sum();
        embed + self
            .architecture
            .body_parameter_count(self.embedding.output_width(), self.classes)
    }
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Stacks `B` windows of shape `[l, D]` into a time-major `[l * B, D]` tensor.
pub fn stack_time_major(windows: &[&Tensor]) -> Result<Tensor> {
    let first = windows.first().ok_or(ModelError::EmptyDataset)?;
    let (l, d) = match first.shape() {
        [l, d] => (*l, *d),
        _ => return Err(ModelError::RaggedBatch),
    };
    if windows.iter().any(|w| w.shape() != [l, d]) {
        return Err(ModelError::RaggedBatch);
    }
    let b = windows.len();
    let mut data = vec![0.0; l * b * d];
    for (j, w) in windows.iter().enumerate() {
        for t in 0..l {
            data[(t * b + j) * d..(t * b + j + 1) * d].copy_from_slice(w.row(t));
        }
    }
    Ok(Tensor::new(vec![l * b, d], data)?)
}

/// Inverse of [`stack_time_major`] for one sample: rows of sample `j` as `[l, D]`.
pub fn unstack_sample(stacked: &Tensor, batch: usize, j: usize) -> Tensor {
    let d = stack_d(stacked);
    let l = stacked.shape()[0] / batch;
    let mut data = Vec::with_capacity(l * d);
    for t in 0..l {
        data.extend_from_slice(stacked.row(t * batch + j));
    }
    Tensor::new(vec![l, d], data).expect("consistent shape")
}

fn stack_d(t: &Tensor) -> usize {
    t.shape()[1]
}

#[cfg(test)]
mod tests;
