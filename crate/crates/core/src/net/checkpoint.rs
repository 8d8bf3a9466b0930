//! Checkpoint files: a length-prefixed JSON header followed by the raw
//! parameter vector as little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bridge::Parametrization;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SBFLOW01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Mlp {
        dim: usize,
        flow_widths: Vec<usize>,
        score_widths: Option<Vec<usize>>,
    },
    Ngm {
        genes: usize,
        hidden: usize,
        score_head: bool,
        l1_weight: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub architecture: Architecture,
    pub seed: u64,
    pub step: u64,
    pub sigma: f64,
    pub parametrization: Parametrization,
    /// Time offset between consecutive snapshots (1 for a single pair).
    pub time_span: f64,
    pub n_params: usize,
}

pub fn write_checkpoint(path: impl AsRef<Path>, header: &CheckpointHeader, params: &[f64]) -> Result<()> {
    if header.n_params != params.len() {
        return Err(Error::DimMismatch {
            expected: header.n_params,
            got: params.len(),
        });
    }
    let json = serde_json::to_vec(header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * params.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointHeader, Vec<f64>)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let bad = |msg: &str| Error::InvalidInput(format!("malformed checkpoint: {msg}"));
    if buf.len() < 16 || &buf[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let len = u64::from_le_bytes(buf[8..16].try_into().expect("8 bytes")) as usize;
    let body = buf.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    let raw = &buf[16 + len..];
    if raw.len() != 8 * header.n_params {
        return Err(bad("parameter payload size"));
    }
    let params = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((header, params))
}
