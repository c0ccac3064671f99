//! JSON Lines persistence: one [`GameRecord`] per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Camp, DataError, DeathEvent, Frame, GameRecord};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct LineRef<'a> {
    schema_version: u32,
    config_digest: Option<&'a str>,
    game_id: u64,
    seed: u64,
    winner: Camp,
    death_info: &'a [DeathEvent],
    frames: &'a [Frame],
}

#[derive(Deserialize)]
struct Line {
    schema_version: u32,
    #[serde(default)]
    #[allow(dead_code)]
    config_digest: Option<String>,
    game_id: u64,
    seed: u64,
    winner: Camp,
    death_info: Vec<DeathEvent>,
    frames: Vec<Frame>,
}

pub fn write_dataset<W: Write>(records: &[GameRecord], mut writer: W, digest: Option<&str>) -> Result<(), DataError> {
    for rec in records {
        let line = LineRef {
            schema_version: DATASET_SCHEMA_VERSION,
            config_digest: digest,
            game_id: rec.game_id,
            seed: rec.seed,
            winner: rec.winner,
            death_info: &rec.deaths,
            frames: &rec.frames,
        };
        serde_json::to_writer(&mut writer, &line).map_err(std::io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_dataset(records: &[GameRecord], path: impl AsRef<Path>) -> Result<(), DataError> {
    save_dataset_with_digest(records, path, None)
}

/// Like [`save_dataset`], stamping each line with the digest of the producing config.
pub fn save_dataset_with_digest(
    records: &[GameRecord],
    path: impl AsRef<Path>,
    digest: Option<&str>,
) -> Result<(), DataError> {
    let file = File::create(path)?;
    write_dataset(records, BufWriter::new(file), digest)
}

pub fn read_dataset<R: Read>(reader: R) -> Result<Vec<GameRecord>, DataError> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(&line);
        let parsed: Line = serde_path_to_error::deserialize(de).map_err(|err| {
            let path = err.path().to_string();
            DataError::Parse {
                line: line_no,
                field: if path.is_empty() { ".".into() } else { path },
                message: err.into_inner().to_string(),
            }
        })?;
        if parsed.schema_version != DATASET_SCHEMA_VERSION {
            return Err(DataError::SchemaVersion {
                line: line_no,
                found: parsed.schema_version,
            });
        }
        records.push(GameRecord {
            game_id: parsed.game_id,
            seed: parsed.seed,
            frames: parsed.frames,
            deaths: parsed.death_info,
            winner: parsed.winner,
        });
    }
    Ok(records)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<GameRecord>, DataError> {
    read_dataset(File::open(path)?)
}
