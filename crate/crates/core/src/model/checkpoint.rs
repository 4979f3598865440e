//! Versioned checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset 0   8 bytes   magic "ICADCKPT"
//! offset 8   u64       header length H
//! offset 16  H bytes   UTF-8 JSON header
//! offset 16+H          f32 payload, tensors concatenated in manifest order
//! ```
//!
//! The header carries the format version, the model config, a manifest of
//! `{name, shape, offset, bytes}` entries (offsets relative to the payload
//! start), the payload length, and the SHA-256 of the payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams};
use crate::error::{CheckpointError, Error, Result};
use crate::ndnum::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ICADCKPT";
const PREFIX: usize = 16;

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    bytes: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    param_count: usize,
    payload_bytes: usize,
    payload_sha256: String,
    tensors: Vec<ManifestEntry>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

/// Serializes parameters to checkpoint bytes.
pub fn write_checkpoint(params: &ModelParams<f32>) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(params.param_count() * 4);
    let mut tensors = Vec::new();
    for (name, t) in params.names().iter().zip(params.tensors()) {
        let offset = payload.len();
        for &x in t.data() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        tensors.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            bytes: payload.len() - offset,
        });
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        config: params.config().clone(),
        param_count: params.param_count(),
        payload_bytes: payload.len(),
        payload_sha256: crate::sha256_hex(&payload),
        tensors,
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(PREFIX + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Parses and validates checkpoint bytes.
pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelParams<f32>> {
    if bytes.len() < PREFIX {
        return Err(CheckpointError::Truncated {
            expected: PREFIX,
            found: bytes.len(),
        }
        .into());
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let header_end = PREFIX
        .checked_add(header_len)
        .ok_or_else(|| CheckpointError::Header("header length overflow".into()))?;
    if bytes.len() < header_end {
        return Err(CheckpointError::Truncated {
            expected: header_end,
            found: bytes.len(),
        }
        .into());
    }
    let raw_header = &bytes[PREFIX..header_end];
    let probe: VersionProbe = serde_json::from_slice(raw_header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: probe.format_version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let header: Header = serde_json::from_slice(raw_header).map_err(|e| CheckpointError::Header(e.to_string()))?;

    let payload = &bytes[header_end..];
    if payload.len() < header.payload_bytes {
        return Err(CheckpointError::Truncated {
            expected: header_end + header.payload_bytes,
            found: bytes.len(),
        }
        .into());
    }
    if payload.len() > header.payload_bytes {
        return Err(CheckpointError::Manifest(format!(
            "{} trailing bytes after payload",
            payload.len() - header.payload_bytes
        ))
        .into());
    }

    let mut expected_offset = 0;
    let mut named = Vec::with_capacity(header.tensors.len());
    for entry in &header.tensors {
        let count: usize = entry.shape.iter().product();
        if entry.offset != expected_offset || entry.bytes != count * 4 {
            return Err(CheckpointError::Manifest(format!(
                "tensor {} has offset {} / {} bytes, expected offset {} / {} bytes",
                entry.name,
                entry.offset,
                entry.bytes,
                expected_offset,
                count * 4
            ))
            .into());
        }
        expected_offset += entry.bytes;
        if expected_offset > payload.len() {
            return Err(CheckpointError::Manifest(format!("tensor {} extends past the payload", entry.name)).into());
        }
        let data: Vec<f32> = payload[entry.offset..entry.offset + entry.bytes]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        named.push((entry.name.clone(), Tensor::new(entry.shape.clone(), data)?));
    }
    if expected_offset != header.payload_bytes {
        return Err(CheckpointError::Manifest(format!(
            "manifest covers {expected_offset} bytes but payload is {}",
            header.payload_bytes
        ))
        .into());
    }
    if crate::sha256_hex(payload) != header.payload_sha256 {
        return Err(CheckpointError::Checksum.into());
    }
    let params = ModelParams::from_named(header.config, named).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    if params.param_count() != header.param_count {
        return Err(CheckpointError::Manifest(format!(
            "param_count {} but tensors hold {}",
            header.param_count,
            params.param_count()
        ))
        .into());
    }
    Ok(params)
}

pub fn save_checkpoint(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_checkpoint(params)?;
    // Write-then-rename so an interrupted save never clobbers a good file.
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
