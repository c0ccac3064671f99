use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EncodingError, FeatureSchema};
use crate::autodiff::Tensor;
use crate::datagen::{extract_event_instances, DataError, EventInstance, GameRecord, Task};

/// `l` consecutive encoded frames ending at game time `t`, with its label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceWindow {
    /// `[l, D_in]`; row `r` is the frame at `t - l + 1 + r`.
    pub x: Tensor,
    pub t: u32,
    pub game_id: u64,
    pub task: Task,
    pub label: usize,
}

impl SequenceWindow {
    pub fn length(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn input_width(&self) -> usize {
        self.x.shape()[1]
    }
}

/// Encodes frames `t - l + 1 ..= t` into an `[l, D_in]` tensor.
pub fn encode_window(record: &GameRecord, schema: &FeatureSchema, t: u32, l: u32) -> Result<Tensor, EncodingError> {
    if l == 0 || t < l {
        return Err(EncodingError::WindowUnderrun { t, length: l });
    }
    if t > record.length() {
        return Err(EncodingError::WindowOverrun {
            t,
            last: record.length(),
        });
    }
    let width = schema.input_width();
    let mut data = vec![0.0; l as usize * width];
    for (r, row) in data.chunks_mut(width).enumerate() {
        let frame = record.frame(t - l + 1 + r as u32).expect("time checked above");
        schema.encode_into(frame, row)?;
    }
    Ok(Tensor::new(vec![l as usize, width], data)?)
}

/// The labelled window for one event instance.
pub fn build_window(
    record: &GameRecord,
    schema: &FeatureSchema,
    instance: &EventInstance,
    l: u32,
) -> Result<SequenceWindow, EncodingError> {
    Ok(SequenceWindow {
        x: encode_window(record, schema, instance.t, l)?,
        t: instance.t,
        game_id: record.game_id,
        task: instance.task,
        label: instance.label,
    })
}

/// Extracts every instance of `task` from each record and encodes its window,
/// in record order. Records are processed in parallel.
pub fn build_windows(
    records: &[GameRecord],
    schema: &FeatureSchema,
    task: Task,
    horizon: u32,
    l: u32,
) -> Result<Vec<SequenceWindow>, WindowsError> {
    let per_record: Vec<Result<Vec<SequenceWindow>, WindowsError>> = records
        .par_iter()
        .map(|rec| {
            let instances = extract_event_instances(rec, task, horizon, l)?;
            instances
                .iter()
                .map(|inst| build_window(rec, schema, inst, l).map_err(WindowsError::from))
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for windows in per_record {
        out.extend(windows?);
    }
    Ok(out)
}

#[derive(Debug, thiserror::Error)]
pub enum WindowsError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}
