//! Checkpoint directory: `manifest.json`, `params.bin` (little-endian f64
//! tensors addressed by an offset table) and `schema.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Architecture, Body, EpochMetrics, Head, ModelError, ModelHandle, Result};
use crate::autodiff::Tensor;
use crate::datagen::Task;
use crate::encoding::{EmbeddingLayer, FeatureSchema};
use crate::params::ParamStore;

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "params.bin";
const SCHEMA: &str = "schema.json";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the blob.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    model: Architecture,
    task: Task,
    classes: usize,
    seed: u64,
    schema_file: String,
    schema_sha256: String,
    blob_file: String,
    blob_bytes: usize,
    blob_sha256: String,
    tensors: Vec<TensorEntry>,
    embedding: EmbeddingLayer,
    body: Body,
    head: Head,
    history: Vec<EpochMetrics>,
    warnings: Vec<String>,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

/// Writes `model` into the directory `dir`, creating it if needed.
pub fn save_checkpoint(model: &ModelHandle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut blob = Vec::with_capacity(model.params.scalar_count() * 8);
    let mut tensors = Vec::with_capacity(model.params.len());
    for (name, t) in model.params.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let schema = model.schema.to_json();
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        model: model.architecture.clone(),
        task: model.task,
        classes: model.classes,
        seed: model.seed,
        schema_file: SCHEMA.into(),
        schema_sha256: hex_digest(schema.as_bytes()),
        blob_file: BLOB.into(),
        blob_bytes: blob.len(),
        blob_sha256: hex_digest(&blob),
        tensors,
        embedding: model.embedding.clone(),
        body: model.body.clone(),
        head: model.head,
        history: model.history.clone(),
        warnings: model.warnings.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| corrupt(e.to_string()))?;
    fs::write(dir.join(BLOB), &blob)?;
    fs::write(dir.join(SCHEMA), schema)?;
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<ModelHandle> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)
        .map_err(|e| corrupt(format!("manifest: {e}")))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(corrupt(format!("unsupported version {}", manifest.version)));
    }
    let schema_text = fs::read_to_string(dir.join(&manifest.schema_file))?;
    if hex_digest(schema_text.as_bytes()) != manifest.schema_sha256 {
        return Err(corrupt("schema digest mismatch"));
    }
    let schema = FeatureSchema::from_json(&schema_text)?;
    let blob = fs::read(dir.join(&manifest.blob_file))?;
    if blob.len() != manifest.blob_bytes {
        return Err(corrupt(format!(
            "blob has {} bytes, manifest expects {}",
            blob.len(),
            manifest.blob_bytes
        )));
    }
    if hex_digest(&blob) != manifest.blob_sha256 {
        return Err(corrupt("blob digest mismatch"));
    }

    // A fresh model fixes the expected names and shapes.
    let reference = ModelHandle::init(manifest.model.clone(), schema.clone(), manifest.task, manifest.seed)?;
    if reference.params.len() != manifest.tensors.len() {
        return Err(corrupt("tensor table does not match the model config"));
    }
    let mut names = Vec::with_capacity(manifest.tensors.len());
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    let mut expected_offset = 0;
    for (entry, (ref_name, ref_tensor)) in manifest.tensors.iter().zip(reference.params.iter()) {
        if entry.name != ref_name || entry.shape != ref_tensor.shape() || entry.offset != expected_offset {
            return Err(corrupt(format!("tensor `{}` does not match the model config", entry.name)));
        }
        let len: usize = entry.shape.iter().product();
        let end = entry.offset + len * 8;
        let bytes = blob
            .get(entry.offset..end)
            .ok_or_else(|| corrupt(format!("tensor `{}` runs past the blob", entry.name)))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        names.push(entry.name.clone());
        tensors.push(Tensor::new(entry.shape.clone(), data)?);
        expected_offset = end;
    }
    if expected_offset != blob.len() {
        return Err(corrupt("blob has trailing bytes"));
    }
    if manifest.embedding != reference.embedding || manifest.body != reference.body || manifest.head != reference.head {
        return Err(corrupt("layer layout does not match the model config"));
    }
    Ok(ModelHandle {
        architecture: manifest.model,
        task: manifest.task,
        classes: manifest.classes,
        seed: manifest.seed,
        schema,
        embedding: manifest.embedding,
        params: ParamStore::from_parts(names, tensors),
        body: manifest.body,
        head: manifest.head,
        history: manifest.history,
        warnings: manifest.warnings,
    })
}
