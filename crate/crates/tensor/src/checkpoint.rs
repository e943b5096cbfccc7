//! Named-tensor checkpoint files.
//!
//! Layout:
//!
//! ```text
//! b"BPCKPT01"                 8-byte magic
//! u64 little-endian           manifest length in bytes
//! manifest                    UTF-8 JSON, see `Manifest`
//! payload                     all tensors as little-endian f32, in manifest order
//! ```
//!
//! The manifest carries the SHA-256 of the payload; reading verifies it.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, TensorError};
use crate::host::HostTensor;

const MAGIC: &[u8; 8] = b"BPCKPT01";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
    payload_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Free-form metadata (model config, trainer state, ...).
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, HostTensor)>,
}

impl Checkpoint {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: HostTensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&HostTensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            for v in &t.data {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            entries.push(Entry {
                name: name.clone(),
                shape: t.shape.clone(),
                offset,
                len: t.data.len(),
            });
            offset += t.data.len();
        }
        let manifest = Manifest {
            meta: self.meta.clone(),
            tensors: entries,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let mjson = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(16 + mjson.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(mjson.len() as u64).to_le_bytes());
        out.extend_from_slice(&mjson);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| TensorError::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic header"));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = &bytes[16..];
        if body.len() < mlen {
            return Err(bad("truncated manifest"));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..mlen])?;
        let payload = &body[mlen..];
        if hex::encode(Sha256::digest(payload)) != manifest.payload_sha256 {
            return Err(bad("payload checksum mismatch"));
        }
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in manifest.tensors {
            let start = e.offset * 4;
            let end = start + e.len * 4;
            if end > payload.len() {
                return Err(bad("tensor extends past payload"));
            }
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((e.name, HostTensor::new(e.shape, data)?));
        }
        Ok(Self {
            meta: manifest.meta,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corrupt_payload_is_rejected() {
        let mut c = Checkpoint::new(serde_json::json!({"k": 1}));
        c.push("w", HostTensor::new(vec![2], vec![1.0, -2.5]).unwrap());
        let mut bytes = c.to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0x40;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(TensorError::Checkpoint(_))
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        assert!(Checkpoint::from_bytes(b"not a checkpoint at all").is_err());
    }
}
