use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EncodingError, FeatureSchema};
use crate::autodiff::{Tape, Tensor, Var};
use crate::params::{glorot, ParamId, ParamStore};

/// Embedding width of a categorical group: `ceil(sqrt(cardinality))`, at least 2.
pub fn embedding_width(cardinality: usize) -> usize {
    let mut w = (cardinality as f64).sqrt().ceil() as usize;
    while w * w < cardinality {
        w += 1;
    }
    w.max(2)
}

/// A contiguous input span and the output columns it produces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputBlock {
    /// One categorical group through its own dense layer.
    Dense {
        group: usize,
        input: Range<usize>,
        output: Range<usize>,
        weight: ParamId,
        bias: ParamId,
    },
    /// A run of adjacent numeric groups, copied unchanged.
    Copy { input: Range<usize>, output: Range<usize> },
}

impl OutputBlock {
    pub fn input(&self) -> &Range<usize> {
        match self {
            OutputBlock::Dense { input, .. } | OutputBlock::Copy { input, .. } => input,
        }
    }

    pub fn output(&self) -> &Range<usize> {
        match self {
            OutputBlock::Dense { output, .. } | OutputBlock::Copy { output, .. } => output,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingLayer {
    blocks: Vec<OutputBlock>,
    input_width: usize,
    output_width: usize,
}

impl EmbeddingLayer {
    /// Allocates one weight matrix and bias per categorical group in `params`.
    pub fn new(schema: &FeatureSchema, params: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let mut blocks: Vec<OutputBlock> = Vec::new();
        let mut out = 0;
        for (gi, g) in schema.groups().iter().enumerate() {
            match g.kind {
                super::FeatureKind::Categorical { cardinality } => {
                    let w = embedding_width(cardinality);
                    let weight = params.add(format!("embed.{}.weight", g.name), glorot(cardinality, w, rng));
                    let bias = params.add(format!("embed.{}.bias", g.name), Tensor::zeros(&[w]));
                    blocks.push(OutputBlock::Dense {
                        group: gi,
                        input: g.span(),
                        output: out..out + w,
                        weight,
                        bias,
                    });
                    out += w;
                }
                super::FeatureKind::Numeric { .. } => {
                    if let Some(OutputBlock::Copy { input, output }) = blocks.last_mut() {
                        input.end += 1;
                        output.end += 1;
                    } else {
                        blocks.push(OutputBlock::Copy {
                            input: g.span(),
                            output: out..out + 1,
                        });
                    }
                    out += 1;
                }
            }
        }
        Self {
            blocks,
            input_width: schema.input_width(),
            output_width: out,
        }
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.output_width
    }

    pub fn blocks(&self) -> &[OutputBlock] {
        &self.blocks
    }

    /// Embeds the rows of `x` (`[n, D_in]`) into `[n, D_emb]`. `vars` are the
    /// registered leaves of the parameter store, indexed by [`ParamId`].
    pub fn embed(&self, tape: &mut Tape, x: Var, vars: &[Var]) -> Result<Var, EncodingError> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.input_width {
            return Err(EncodingError::WidthMismatch {
                expected: self.input_width,
                found: shape.last().copied().unwrap_or(0),
            });
        }
        let mut parts = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let input = block.input();
            let span = tape.slice(x, 1, input.start, input.len())?;
            let part = match *block {
                OutputBlock::Dense { weight, bias, .. } => {
                    let h = tape.matmul(span, vars[weight.0])?;
                    tape.add_row(h, vars[bias.0])?
                }
                OutputBlock::Copy { .. } => span,
            };
            parts.push(part);
        }
        Ok(tape.concat(&parts, 1)?)
    }

    /// Evaluates the embedding of `x` outside of any training graph.
    pub fn apply(&self, params: &ParamStore, x: &Tensor) -> Result<Tensor, EncodingError> {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let xv = tape.leaf(x.clone());
        let out = self.embed(&mut tape, xv, &vars)?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{FeatureKind, FeatureSource, GlobalField, GroupSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_schema() -> FeatureSchema {
        let src = FeatureSource::Global {
            field: GlobalField::GameTime,
        };
        FeatureSchema::from_groups(vec![
            GroupSpec::numeric("a", src),
            GroupSpec::categorical("c3", 3, src),
            GroupSpec::numeric("b", src),
            GroupSpec::numeric("c", src),
            GroupSpec::categorical("c20", 20, src),
        ])
        .unwrap()
    }

    fn layer() -> (EmbeddingLayer, ParamStore) {
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = EmbeddingLayer::new(&toy_schema(), &mut params, &mut rng);
        for t in params.tensors_mut() {
            let n = t.len();
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v += 0.01 * (i as f64 + 1.0) / n as f64;
            }
        }
        (layer, params)
    }

    #[test]
    fn widths() {
        assert_eq!(embedding_width(1), 2);
        assert_eq!(embedding_width(2), 2);
        assert_eq!(embedding_width(3), 2);
        assert_eq!(embedding_width(5), 3);
        assert_eq!(embedding_width(16), 4);
        assert_eq!(embedding_width(20), 5);
    }

    #[test]
    fn output_width_oracle() {
        let schema = FeatureSchema::mini_skeleton();
        let expected: usize = schema
            .groups()
            .iter()
            .map(|g| match g.kind {
                FeatureKind::Categorical { cardinality } => embedding_width(cardinality),
                FeatureKind::Numeric { .. } => 1,
            })
            .sum();
        let mut params = ParamStore::new();
        let layer = EmbeddingLayer::new(&schema, &mut params, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(layer.output_width(), expected);
        let mut cover = vec![0; layer.output_width()];
        for b in layer.blocks() {
            for c in b.output().clone() {
                cover[c] += 1;
            }
        }
        assert!(cover.iter().all(|&c| c == 1));
    }

    #[test]
    fn zero_row_gives_biases() {
        let (layer, params) = layer();
        let out = layer.apply(&params, &Tensor::zeros(&[1, 26])).unwrap();
        for b in layer.blocks() {
            let cols = &out.data()[b.output().clone()];
            match b {
                OutputBlock::Dense { bias, .. } => assert_eq!(cols, params.get(*bias).data()),
                OutputBlock::Copy { .. } => assert!(cols.iter().all(|&v| v == 0.0)),
            }
        }
    }

    #[test]
    fn numerics_pass_through_and_one_hot_selects_row() {
        let (layer, params) = layer();
        let mut x = vec![0.0; 26];
        x[0] = 0.25;
        x[1 + 2] = 1.0;
        x[4] = 0.5;
        x[5] = 0.75;
        x[6 + 7] = 1.0;
        let out = layer.apply(&params, &Tensor::new(vec![1, 26], x).unwrap()).unwrap();
        let d = out.data();
        assert_eq!(d[0], 0.25);
        assert_eq!(&d[3..5], &[0.5, 0.75]);
        let (w3, b3) = (params.get(ParamId(0)), params.get(ParamId(1)));
        for j in 0..2 {
            assert!((d[1 + j] - (w3.at(2, j) + b3.data()[j])).abs() < 1e-15);
        }
        let (w20, b20) = (params.get(ParamId(2)), params.get(ParamId(3)));
        for j in 0..5 {
            assert!((d[5 + j] - (w20.at(7, j) + b20.data()[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn width_mismatch_rejected() {
        let (layer, params) = layer();
        assert!(matches!(
            layer.apply(&params, &Tensor::zeros(&[2, 25])),
            Err(EncodingError::WidthMismatch { expected: 26, found: 25 })
        ));
    }

    #[test]
    fn linear_in_one_hot_scale() {
        let (layer, params) = layer();
        let mut x = vec![0.0; 26];
        x[2] = 1.0;
        let base = layer.apply(&params, &Tensor::new(vec![1, 26], x.clone()).unwrap()).unwrap();
        x[2] = 0.3;
        let scaled = layer.apply(&params, &Tensor::new(vec![1, 26], x).unwrap()).unwrap();
        let b3 = params.get(ParamId(1)).data();
        for (j, &b) in b3.iter().take(2).enumerate() {
            let expect = 0.3 * (base.data()[1 + j] - b) + b;
            assert!((scaled.data()[1 + j] - expect).abs() < 1e-14);
        }
    }
}
