//! Checkpoint container.
//!
//! ```text
//! magic   8 bytes   "TTASEGCK"
//! version u32 LE
//! hlen    u64 LE    length of the JSON header
//! header  hlen      {"arch": ArchConfig, "tensors": [{name, shape}], "meta": CheckpointMeta}
//! payload           every tensor as f32 LE, in header order
//! digest  32 bytes  SHA-256 of header ‖ payload
//! ```

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ArchConfig, Model, Param};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TTASEGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Free-form provenance stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Short identifier, e.g. `source` or `adapted-epoch-3`.
    pub label: String,
    pub epoch: Option<usize>,
    /// Label of the checkpoint this one was derived from.
    pub parent: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: ArchConfig,
    tensors: Vec<TensorInfo>,
    meta: CheckpointMeta,
}

pub(super) fn encode(model: &Model, meta: &CheckpointMeta) -> Vec<u8> {
    let header = Header {
        arch: model.arch.clone(),
        tensors: model
            .params
            .iter()
            .map(|p| TensorInfo {
                name: p.name.clone(),
                shape: p.shape.clone(),
            })
            .collect(),
        meta: meta.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serialises");
    let mut body = Vec::with_capacity(header.len() + 4 * model.num_parameters());
    body.extend_from_slice(&header);
    for p in &model.params {
        for v in &p.data {
            body.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&body);
    let mut out = Vec::with_capacity(body.len() + 52);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&digest);
    out
}

pub(super) fn decode(bytes: &[u8]) -> Result<(Model, CheckpointMeta)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    if bytes.len() < 20 + 32 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = &bytes[20..bytes.len() - 32];
    let digest = &bytes[bytes.len() - 32..];
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch (file is corrupt or truncated)"));
    }
    if hlen > body.len() {
        return Err(bad("header length exceeds file size"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let mut payload = &body[hlen..];
    let mut params = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let n: usize = t.shape.iter().product();
        if payload.len() < 4 * n {
            return Err(bad("payload shorter than declared tensors"));
        }
        let data = payload[..4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        payload = &payload[4 * n..];
        params.push(Param {
            name: t.name,
            shape: t.shape,
            data,
        });
    }
    if !payload.is_empty() {
        return Err(bad("trailing bytes after tensors"));
    }
    let model = Model::from_parts(header.arch, params)?;
    Ok((model, header.meta))
}
