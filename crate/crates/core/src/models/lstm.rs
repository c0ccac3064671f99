use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Dropout, ModelError, Result};
use crate::autodiff::{Tape, Tensor, Var};
use crate::params::{glorot, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstmConfig {
    pub layers: usize,
    pub bidirectional: bool,
    pub hidden: usize,
    pub dropout: f64,
    pub head_width: usize,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            bidirectional: true,
            hidden: 32,
            dropout: 0.2,
            head_width: 64,
        }
    }
}

impl LstmConfig {
    pub fn full() -> Self {
        Self {
            hidden: 128,
            head_width: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.head_width == 0 {
            return Err(ModelError::Config("lstm widths and layer count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Width of each output timestep (all directions concatenated).
    pub fn output_width(&self) -> usize {
        self.directions() * self.hidden
    }

    pub fn parameter_count(&self, input_width: usize) -> usize {
        let h = self.hidden;
        (0..self.layers)
            .map(|layer| {
                let fan_in = if layer == 0 { input_width } else { self.output_width() };
                self.directions() * 4 * h * (fan_in + h + 1)
            })
            .sum()
    }
}

/// Gate order inside the packed `4H` columns: input, forget, cell, output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct Cell {
    input: ParamId,
    recurrent: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct LstmParams {
    /// `cells[layer][direction]`.
    cells: Vec<Vec<Cell>>,
}

impl LstmParams {
    pub(crate) fn new(c: &LstmConfig, input_width: usize, params: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let h = c.hidden;
        let cells = (0..c.layers)
            .map(|layer| {
                let fan_in = if layer == 0 { input_width } else { c.output_width() };
                (0..c.directions())
                    .map(|dir| {
                        let name = format!("lstm.{layer}.{}", if dir == 0 { "fwd" } else { "bwd" });
                        // Forget-gate bias starts at 1.
                        let mut bias = vec![0.0; 4 * h];
                        bias[h..2 * h].fill(1.0);
                        Cell {
                            input: params.add(format!("{name}.input"), glorot(fan_in, 4 * h, rng)),
                            recurrent: params.add(format!("{name}.recurrent"), glorot(h, 4 * h, rng)),
                            bias: params.add(format!("{name}.bias"), Tensor::vector(bias)),
                        }
                    })
                    .collect()
            })
            .collect();
        Self { cells }
    }

    /// Runs every layer over `x` (`[steps * batch, in]`, time-major) and
    /// returns `[steps * batch, directions * hidden]`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn forward(
        &self,
        c: &LstmConfig,
        tape: &mut Tape,
        vars: &[Var],
        x: Var,
        steps: usize,
        batch: usize,
        dropout: &mut Dropout,
    ) -> Result<Var> {
        let mut seq = x;
        for (layer, cells) in self.cells.iter().enumerate() {
            if layer > 0 {
                seq = dropout.apply(tape, seq, c.dropout)?;
            }
            let mut per_dir = Vec::with_capacity(cells.len());
            for (dir, cell) in cells.iter().enumerate() {
                per_dir.push(run_direction(tape, vars, cell, seq, c.hidden, steps, batch, dir == 1)?);
            }
            let rows: Vec<Var> = (0..steps)
                .map(|t| {
                    let parts: Vec<Var> = per_dir.iter().map(|hs| hs[t]).collect();
                    if parts.len() == 1 {
                        Ok(parts[0])
                    } else {
                        tape.concat(&parts, 1)
                    }
                })
                .collect::<std::result::Result<_, _>>()?;
            seq = tape.concat(&rows, 0)?;
        }
        Ok(seq)
    }
}

/// Hidden states `h_t` for `t = 0..steps`, indexed by time regardless of
/// direction.
#[allow(clippy::too_many_arguments)]
fn run_direction(
    tape: &mut Tape,
    vars: &[Var],
    cell: &Cell,
    seq: Var,
    h: usize,
    steps: usize,
    batch: usize,
    reverse: bool,
) -> Result<Vec<Var>> {
    let projected = tape.matmul(seq, vars[cell.input.0])?;
    let projected = tape.add_row(projected, vars[cell.bias.0])?;
    let mut states: Vec<Option<Var>> = vec![None; steps];
    let mut prev: Option<(Var, Var)> = None;
    let order: Vec<usize> = if reverse {
        (0..steps).rev().collect()
    } else {
        (0..steps).collect()
    };
    for t in order {
        let mut gates = tape.slice(projected, 0, t * batch, batch)?;
        if let Some((h_prev, _)) = prev {
            let rec = tape.matmul(h_prev, vars[cell.recurrent.0])?;
            gates = tape.add(gates, rec)?;
        }
        let i = tape.slice(gates, 1, 0, h)?;
        let i = tape.sigmoid(i);
        let g = tape.slice(gates, 1, 2 * h, h)?;
        let g = tape.tanh(g);
        let o = tape.slice(gates, 1, 3 * h, h)?;
        let o = tape.sigmoid(o);
        let ig = tape.mul(i, g)?;
        let c = match prev {
            Some((_, c_prev)) => {
                let f = tape.slice(gates, 1, h, h)?;
                let f = tape.sigmoid(f);
                let fc = tape.mul(f, c_prev)?;
                tape.add(fc, ig)?
            }
            None => ig,
        };
        let tc = tape.tanh(c);
        let h_t = tape.mul(o, tc)?;
        states[t] = Some(h_t);
        prev = Some((h_t, c));
    }
    Ok(states.into_iter().map(|s| s.expect("every step visited")).collect())
}
