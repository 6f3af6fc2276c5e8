//! Binary checkpoints: `PROGIPCK` magic, little-endian `u32` version and
//! header length, a JSON header, then the parameters as little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Backbone, BackboneConfig};
use crate::error::{ProgipError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PROGIPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset_bytes: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: BackboneConfig,
    dtype: String,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(net: &Backbone<f32>, path: &Path) -> Result<()> {
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        config: *net.config(),
        dtype: "f32-le".into(),
        tensors: net
            .layout()
            .tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset_bytes: t.offset * 4,
                len: t.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + net.params.len() * 4);
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in &net.params {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Backbone<f32>> {
    let bytes = fs::read(path)?;
    let err = |msg: String| ProgipError::format(path, msg);
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(err("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(err(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let body = 16 + header_len;
    if bytes.len() < body {
        return Err(err("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..body]).map_err(|e| err(e.to_string()))?;
    if header.dtype != "f32-le" {
        return Err(err(format!("unsupported dtype {}", header.dtype)));
    }
    header.config.validate()?;
    let expected = super::ParamLayout::new(&header.config);
    let blob = &bytes[body..];
    if blob.len() != expected.len * 4 {
        return Err(err(format!("expected {} parameter bytes, found {}", expected.len * 4, blob.len())));
    }
    for (spec, entry) in expected.tensors.iter().zip(&header.tensors) {
        if spec.name != entry.name || spec.shape != entry.shape || spec.offset * 4 != entry.offset_bytes {
            return Err(err(format!("tensor table does not match the configuration at {}", entry.name)));
        }
    }
    if expected.tensors.len() != header.tensors.len() {
        return Err(err("tensor table length does not match the configuration".into()));
    }
    let params: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if params.iter().any(|v| !v.is_finite()) {
        return Err(ProgipError::NaN {
            path: path.to_path_buf(),
            what: "checkpoint parameters".into(),
        });
    }
    Backbone::from_params(header.config, params)
}
