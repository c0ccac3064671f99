use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dropout, Linear, ModelError, Result};
use crate::autodiff::{Tape, Tensor, Var};
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub width: usize,
    pub ffn_width: usize,
    pub head_width: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            dropout: 0.1,
            width: 64,
            ffn_width: 128,
            head_width: 64,
        }
    }
}

impl TransformerConfig {
    pub fn full() -> Self {
        Self {
            heads: 8,
            width: 256,
            ffn_width: 512,
            head_width: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.width == 0 || self.ffn_width == 0 || self.head_width == 0 {
            return Err(ModelError::Config("transformer widths and counts must be positive".into()));
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn parameter_count(&self, input_width: usize) -> usize {
        let (d, f) = (self.width, self.ffn_width);
        let per_layer = (d * 3 * d + 3 * d) + (d * d + d) + 2 * d + (d * f + f) + (f * d + d) + 2 * d;
        input_width * d + d + self.layers * per_layer
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct EncoderLayer {
    qkv: Linear,
    out: Linear,
    norm1: (ParamId, ParamId),
    ffn1: Linear,
    ffn2: Linear,
    norm2: (ParamId, ParamId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct TransformerParams {
    input: Linear,
    layers: Vec<EncoderLayer>,
}

fn norm(params: &mut ParamStore, name: &str, d: usize) -> (ParamId, ParamId) {
    (
        params.add(format!("{name}.gamma"), Tensor::ones(&[d])),
        params.add(format!("{name}.beta"), Tensor::zeros(&[d])),
    )
}

/// Sinusoidal position code `[steps, width]`.
pub fn positional_encoding(steps: usize, width: usize) -> Tensor {
    let mut data = vec![0.0; steps * width];
    for t in 0..steps {
        for i in 0..width {
            let rate = 10_000f64.powf((2 * (i / 2)) as f64 / width as f64);
            let angle = t as f64 / rate;
            data[t * width + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![steps, width], data).expect("positive extents")
}

impl TransformerParams {
    pub(crate) fn new(c: &TransformerConfig, input_width: usize, params: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let d = c.width;
        let input = Linear::new(params, "transformer.input", input_width, d, rng);
        let layers = (0..c.layers)
            .map(|i| {
                let name = format!("transformer.{i}");
                EncoderLayer {
                    qkv: Linear::new(params, &format!("{name}.qkv"), d, 3 * d, rng),
                    out: Linear::new(params, &format!("{name}.attn_out"), d, d, rng),
                    norm1: norm(params, &format!("{name}.norm1"), d),
                    ffn1: Linear::new(params, &format!("{name}.ffn1"), d, c.ffn_width, rng),
                    ffn2: Linear::new(params, &format!("{name}.ffn2"), c.ffn_width, d, rng),
                    norm2: norm(params, &format!("{name}.norm2"), d),
                }
            })
            .collect();
        Self { input, layers }
    }

    /// Encodes `x` (`[steps * batch, in]`, time-major) into
    /// `[steps * batch, width]`, also returning each layer's attention weights.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn forward(
        &self,
        c: &TransformerConfig,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        steps: usize,
        batch: usize,
        dropout: &mut Dropout,
    ) -> Result<(Var, Vec<Var>)> {
        let d = c.width;
        let h = self.input.forward(tape, vars, x)?;
        let pe = positional_encoding(steps, d);
        let mut pe_rows = Vec::with_capacity(steps * batch * d);
        for t in 0..steps {
            for _ in 0..batch {
                pe_rows.extend_from_slice(pe.row(t));
            }
        }
        let pe = tape.leaf(Tensor::new(vec![steps * batch, d], pe_rows)?);
        let mut h = tape.add(h, pe)?;
        let idx = HeadIndex::new(steps, batch, c.heads, d);
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let qkv = layer.qkv.forward(tape, vars, h)?;
            let q = tape.gather(qkv, idx.split(0, false), idx.split_shape(false))?;
            let kt = tape.gather(qkv, idx.split(d, true), idx.split_shape(true))?;
            let v = tape.gather(qkv, idx.split(2 * d, false), idx.split_shape(false))?;
            let scores = tape.matmul(q, kt)?;
            let scores = tape.scale(scores, 1.0 / ((d / c.heads) as f64).sqrt());
            let weights = tape.softmax(scores);
            attention.push(weights);
            let ctx = tape.matmul(weights, v)?;
            let ctx = tape.gather(ctx, idx.merge(), vec![steps * batch, d])?;
            let att = layer.out.forward(tape, vars, ctx)?;
            let att = dropout.apply(tape, att, c.dropout)?;
            let res = tape.add(h, att)?;
            h = tape.layer_norm(res, vars[layer.norm1.0 .0], vars[layer.norm1.1 .0])?;
            let f = layer.ffn1.forward(tape, vars, h)?;
            let f = tape.relu(f);
            let f = layer.ffn2.forward(tape, vars, f)?;
            let f = dropout.apply(tape, f, c.dropout)?;
            let res = tape.add(h, f)?;
            h = tape.layer_norm(res, vars[layer.norm2.0 .0], vars[layer.norm2.1 .0])?;
        }
        Ok((h, attention))
    }
}

/// Index maps between the packed `[steps * batch, 3 * width]` projection and
/// per-head `[batch * heads, steps, dh]` blocks.
struct HeadIndex {
    steps: usize,
    batch: usize,
    heads: usize,
    dh: usize,
}

impl HeadIndex {
    fn new(steps: usize, batch: usize, heads: usize, width: usize) -> Self {
        Self {
            steps,
            batch,
            heads,
            dh: width / heads,
        }
    }

    fn split_shape(&self, transposed: bool) -> Vec<usize> {
        let (bh, l, dh) = (self.batch * self.heads, self.steps, self.dh);
        if transposed {
            vec![bh, dh, l]
        } else {
            vec![bh, l, dh]
        }
    }

    /// Gathers columns `offset..offset + width` into per-head blocks,
    /// optionally transposing each block to `[dh, steps]`.
    fn split(&self, offset: usize, transposed: bool) -> Vec<usize> {
        let stride = 3 * self.heads * self.dh;
        let mut index = Vec::with_capacity(self.steps * self.batch * self.heads * self.dh);
        for b in 0..self.batch {
            for hd in 0..self.heads {
                let src = |t: usize, e: usize| (t * self.batch + b) * stride + offset + hd * self.dh + e;
                if transposed {
                    for e in 0..self.dh {
                        for t in 0..self.steps {
                            index.push(src(t, e));
                        }
                    }
                } else {
                    for t in 0..self.steps {
                        for e in 0..self.dh {
                            index.push(src(t, e));
                        }
                    }
                }
            }
        }
        index
    }

    /// Inverse layout: per-head context back to `[steps * batch, width]`.
    fn merge(&self) -> Vec<usize> {
        let mut index = Vec::with_capacity(self.steps * self.batch * self.heads * self.dh);
        for t in 0..self.steps {
            for b in 0..self.batch {
                for hd in 0..self.heads {
                    for e in 0..self.dh {
                        index.push(((b * self.heads + hd) * self.steps + t) * self.dh + e);
                    }
                }
            }
        }
        index
    }
}
