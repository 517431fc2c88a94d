//! Checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes   "DCFD0001"
//! hdr_len    u64       length of the JSON header in bytes
//! header     hdr_len   {"fingerprint", "spec", "tensors": [{"name", "shape", "offset"}]}
//! payload    f64 LE    tensor values back to back; `offset` counts f64 values
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetworkParams, VariantSpec};
use crate::error::{Error, Result};
use crate::netcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DCFD0001";

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    fingerprint: String,
    spec: VariantSpec,
    tensors: Vec<Entry>,
}

/// Writes to a sibling temp file, syncs, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_checkpoint(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    let mut entries = Vec::with_capacity(params.tensors.len());
    let mut payload = Vec::new();
    let mut offset = 0;
    for (name, t) in &params.tensors {
        entries.push(Entry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        fingerprint: params.fingerprint.clone(),
        spec: params.spec.clone(),
        tensors: entries,
    })?;
    let mut bytes = Vec::with_capacity(16 + header.len() + payload.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    bytes.extend_from_slice(&payload);
    write_atomic(path.as_ref(), &bytes)
}

fn parse(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::format("checkpoint", "bad magic or truncated preamble"));
    }
    let hdr_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < hdr_len {
        return Err(Error::format("checkpoint", "truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hdr_len])
        .map_err(|e| Error::format("checkpoint", e.to_string()))?;
    Ok((header, &body[hdr_len..]))
}

/// Reads a checkpoint and checks its fingerprint against its own stored spec.
pub fn load_checkpoint_unchecked(path: impl AsRef<Path>) -> Result<NetworkParams> {
    let bytes = fs::read(path)?;
    let (header, payload) = parse(&bytes)?;
    let computed = header.spec.fingerprint();
    if computed != header.fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: computed,
            found: header.fingerprint,
        });
    }
    let total: usize = header
        .tensors
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    if payload.len() != total * 8 {
        return Err(Error::format(
            "checkpoint",
            format!("payload has {} bytes, expected {}", payload.len(), total * 8),
        ));
    }
    let mut tensors = BTreeMap::new();
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        if (e.offset + n) * 8 > payload.len() {
            return Err(Error::format("checkpoint", format!("tensor {} out of bounds", e.name)));
        }
        let data = payload[e.offset * 8..(e.offset + n) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.insert(e.name, Tensor::new(e.shape, data)?);
    }
    NetworkParams::from_parts(header.spec, tensors)
}

/// Reads a checkpoint that must have been built from `expected`.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: &VariantSpec) -> Result<NetworkParams> {
    let params = load_checkpoint_unchecked(path)?;
    let want = expected.fingerprint();
    if params.fingerprint != want {
        return Err(Error::FingerprintMismatch {
            expected: want,
            found: params.fingerprint,
        });
    }
    Ok(params)
}
