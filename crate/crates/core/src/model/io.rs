//! Weights file: `"SMDW"`, version byte, 3 reserved bytes, little-endian u64
//! manifest length, JSON manifest, then the raw little-endian f32 payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, Parameters, Tensor};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"SMDW";
pub const WEIGHTS_VERSION: u8 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the payload.
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_config: Option<serde_json::Value>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_params(params: &Parameters<f32>, meta: Option<&serde_json::Value>) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(params.count() * 4);
    let mut tensors = Vec::with_capacity(params.tensors.len());
    let mut offset = 0;
    for t in &params.tensors {
        for v in &t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset,
            len: t.data.len(),
        });
        offset += t.data.len();
    }
    let manifest = Manifest {
        config: params.config.clone(),
        tensors,
        sha256: hex(&Sha256::digest(&payload)),
        train_config: meta.cloned(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload.len());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.push(WEIGHTS_VERSION);
    out.extend_from_slice(&[0; 3]);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_params(bytes: &[u8]) -> Result<(Parameters<f32>, Option<serde_json::Value>)> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != WEIGHTS_MAGIC {
        return Err(Error::Format("not a weights file".into()));
    }
    if bytes[4] != WEIGHTS_VERSION {
        return Err(Error::Version {
            expected: WEIGHTS_VERSION,
            found: bytes[4],
        });
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() < mlen {
        return Err(Error::Checksum);
    }
    let manifest: Manifest = serde_json::from_slice(&body[..mlen])?;
    manifest.config.validate()?;
    let specs = manifest.config.tensor_specs();
    if specs.len() != manifest.tensors.len() {
        return Err(Error::Format(format!(
            "manifest lists {} tensors, config implies {}",
            manifest.tensors.len(),
            specs.len()
        )));
    }
    for ((name, shape), entry) in specs.iter().zip(&manifest.tensors) {
        if *name != entry.name {
            return Err(Error::Format(format!("expected tensor {name}, found {}", entry.name)));
        }
        if *shape != entry.shape || entry.len != shape.iter().product::<usize>() {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                expected: shape.clone(),
                found: entry.shape.clone(),
            });
        }
    }
    let payload = &body[mlen..];
    if hex(&Sha256::digest(payload)) != manifest.sha256 {
        return Err(Error::Checksum);
    }
    let mut tensors = Vec::with_capacity(specs.len());
    for entry in manifest.tensors {
        let start = entry.offset * 4;
        let end = start + entry.len * 4;
        let raw = payload
            .get(start..end)
            .ok_or_else(|| Error::Format(format!("tensor {} outside payload", entry.name)))?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(Tensor {
            name: entry.name,
            shape: entry.shape,
            data,
        });
    }
    let params = Parameters {
        config: manifest.config,
        tensors,
    };
    if !params.is_finite() {
        let name = params
            .tensors
            .iter()
            .find(|t| t.data.iter().any(|v| !v.is_finite()))
            .map(|t| t.name.clone())
            .unwrap_or_default();
        return Err(Error::NonFinite { tensor: name });
    }
    Ok((params, manifest.train_config))
}

pub fn save_params_with_meta(
    params: &Parameters<f32>,
    meta: Option<&serde_json::Value>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = encode_params(params, meta)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn save_params(params: &Parameters<f32>, path: impl AsRef<Path>) -> Result<()> {
    save_params_with_meta(params, None, path)
}

/// Loads weights plus the training configuration stored alongside them, if any.
pub fn load_params_with_meta(
    path: impl AsRef<Path>,
) -> Result<(Parameters<f32>, Option<serde_json::Value>)> {
    decode_params(&fs::read(path)?)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<Parameters<f32>> {
    Ok(load_params_with_meta(path)?.0)
}
