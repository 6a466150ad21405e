//! Versioned binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "COPSDCK1"
//! n        4 bytes  little-endian u32, header length
//! header   n bytes  UTF-8 JSON {config, manifest: [{name, shape, offset}], step_tag}
//! data     f32 little-endian values, manifest order
//! ```
//!
//! Offsets are byte offsets into the data section. Values are held as `f64`
//! in memory and narrowed to `f32` on disk.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::Array;

use super::{Model, ModelConfig, ParamLayout};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"COPSDCK1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes: expected COPSDCK1")]
    MagicMismatch,
    #[error("checkpoint truncated: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("checkpoint has {extra} trailing bytes after the parameter data")]
    TrailingBytes { extra: usize },
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("manifest disagrees with the model config: {0}")]
    Manifest(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    manifest: Vec<ManifestEntry>,
    step_tag: u64,
}

#[derive(Clone, Debug)]
pub struct ModelCheckpoint {
    pub model: Model,
    pub manifest: Vec<ManifestEntry>,
    pub step_tag: u64,
}

fn manifest_for(layout: &ParamLayout) -> Vec<ManifestEntry> {
    let mut offset = 0;
    layout
        .entries
        .iter()
        .map(|(name, shape, _)| {
            let entry = ManifestEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset,
            };
            offset += 4 * shape.iter().product::<usize>();
            entry
        })
        .collect()
}

/// Serializes a model into checkpoint bytes.
pub fn encode_checkpoint(model: &Model, step_tag: u64) -> Vec<u8> {
    let header = Header {
        config: model.config().clone(),
        manifest: manifest_for(model.layout()),
        step_tag,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + 4 * model.param_count());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in model.params() {
        for &v in p.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Parses checkpoint bytes. Never panics on malformed input.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelCheckpoint, CheckpointError> {
    if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(CheckpointError::MagicMismatch);
    }
    if bytes.len() < 12 {
        return Err(CheckpointError::Truncated {
            expected: 12,
            actual: bytes.len(),
        });
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12usize.saturating_add(n);
    if bytes.len() < header_end {
        return Err(CheckpointError::Truncated {
            expected: header_end,
            actual: bytes.len(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[12..header_end])
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    header
        .config
        .validate()
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let layout = ParamLayout::new(&header.config);
    let expected_manifest = manifest_for(&layout);
    if header.manifest != expected_manifest {
        let detail = header
            .manifest
            .iter()
            .zip(&expected_manifest)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("entry `{}` {:?}@{} where `{}` {:?}@{} was expected", a.name, a.shape, a.offset, b.name, b.shape, b.offset))
            .unwrap_or_else(|| {
                format!(
                    "{} entries where {} were expected",
                    header.manifest.len(),
                    expected_manifest.len()
                )
            });
        return Err(CheckpointError::Manifest(detail));
    }
    let data_len = 4 * layout.count();
    let expected = header_end + data_len;
    if bytes.len() < expected {
        return Err(CheckpointError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(CheckpointError::TrailingBytes {
            extra: bytes.len() - expected,
        });
    }
    let data = &bytes[header_end..];
    let mut params = Vec::with_capacity(layout.len());
    for entry in &header.manifest {
        let count: usize = entry.shape.iter().product();
        let raw = &data[entry.offset..entry.offset + 4 * count];
        let values: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::Manifest(format!(
                "non-finite value in `{}`",
                entry.name
            )));
        }
        params.push(Array::new(entry.shape.clone(), values).map_err(|e| CheckpointError::Manifest(e.to_string()))?);
    }
    let model = Model::from_params(header.config, params)
        .map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    Ok(ModelCheckpoint {
        model,
        manifest: header.manifest,
        step_tag: header.step_tag,
    })
}

pub fn save_checkpoint(model: &Model, step_tag: u64, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, encode_checkpoint(model, step_tag)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
