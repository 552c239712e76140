//! Binary model files.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `BPSFNET\0` |
//! | 4     | format version (`u32`, currently 1) |
//! | 4 + n | network config: `u32` length, then JSON |
//! | 4 + m | preprocessing metadata: `u32` length, then JSON |
//! | 8     | number of `f64` values that follow (`u64`) |
//! | 8 * k | parameters in [`Params::slices`] order, then each layer's running mean and variance |
//! | 32    | SHA-256 of every preceding byte |

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{DatasetSchema, EncoderState};
use crate::error::{Error, Result};
use crate::nn::{NetworkConfig, NetworkState};

pub const MAGIC: &[u8; 8] = b"BPSFNET\0";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// What is needed to turn a raw CSV into model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ModelMetadata {
    pub schema: Option<DatasetSchema>,
    pub encoder: Option<EncoderState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub state: NetworkState,
    pub metadata: ModelMetadata,
}

fn flat_values(state: &NetworkState) -> Vec<f64> {
    let mut out: Vec<f64> = state.params.slices().concat();
    for r in &state.running {
        out.extend(r.mean.iter());
        out.extend(r.var.iter());
    }
    out
}

fn push_block(buf: &mut Vec<u8>, json: &[u8]) -> Result<()> {
    let len = u32::try_from(json.len()).map_err(|_| Error::Format("metadata block too large".into()))?;
    buf.extend_from_slice(&len.to_le_bytes());
    buf.extend_from_slice(json);
    Ok(())
}

impl ModelArtifact {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = serde_json::to_vec(&self.state.config).map_err(|e| Error::Format(e.to_string()))?;
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| Error::Format(e.to_string()))?;
        let values = flat_values(&self.state);
        let mut buf = Vec::with_capacity(64 + config.len() + meta.len() + values.len() * 8);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        push_block(&mut buf, &config)?;
        push_block(&mut buf, &meta)?;
        buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
            return Err(Error::Format("file is truncated".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Format("not a model file (bad magic)".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        let mut r = Cursor { buf: body, pos: 8 };
        let version = u32::from_le_bytes(r.take::<4>()?);
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Format("checksum mismatch".into()));
        }
        let config: NetworkConfig = serde_json::from_slice(r.block()?)
            .map_err(|e| Error::Format(format!("network config: {e}")))?;
        let metadata: ModelMetadata = serde_json::from_slice(r.block()?)
            .map_err(|e| Error::Format(format!("metadata: {e}")))?;
        let count = u64::from_le_bytes(r.take::<8>()?) as usize;
        let mut state = NetworkState::init(&config).map_err(|e| Error::Format(format!("network config: {e}")))?;
        let expected = flat_values(&state).len();
        if count != expected {
            return Err(Error::Format(format!("expected {expected} parameters, file has {count}")));
        }
        if r.remaining() != count * 8 {
            return Err(Error::Format("parameter payload length mismatch".into()));
        }
        let mut values = (0..count).map(|_| r.take::<8>().map(f64::from_le_bytes));
        for slice in state.params.slices_mut() {
            for v in slice.iter_mut() {
                *v = values.next().expect("counted")?;
            }
        }
        for stats in &mut state.running {
            for v in stats.mean.iter_mut().chain(stats.var.iter_mut()) {
                *v = values.next().expect("counted")?;
            }
        }
        Ok(ModelArtifact { state, metadata })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos.checked_add(N).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("file is truncated".into()))?;
        let out = self.buf[self.pos..end].try_into().expect("length checked");
        self.pos = end;
        Ok(out)
    }

    fn block(&mut self) -> Result<&'a [u8]> {
        let len = u32::from_le_bytes(self.take::<4>()?) as usize;
        if len > self.remaining() {
            return Err(Error::Format("file is truncated".into()));
        }
        let out = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}
