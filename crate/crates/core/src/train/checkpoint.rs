//! Binary checkpoint format.
//!
//! Layout: the magic `MELTCKPT`, a little-endian `u32` format version, a
//! `u64` header length and a JSON header, then every tensor of the current
//! parameters, Adam `m`, Adam `v` and (when present) the best parameters as
//! little-endian `f64` in [`ModelParams::tensors`] order, then a SHA-256
//! digest of all preceding bytes.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::AdamState;
use crate::model::{EncoderConfig, ModelParams};

const MAGIC: &[u8; 8] = b"MELTCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pretrain,
    Melt,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Pretrain => "pretrain",
            Stage::Melt => "melt",
        })
    }
}

/// Parameters with the best validation score seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct BestModel {
    pub epoch: usize,
    pub valid_hr: f64,
    pub valid_ndcg: f64,
    pub params: ModelParams,
}

/// Complete training state after `epochs_done` epochs of `stage`.
///
/// Every random stream is keyed on `(seed, stage, epoch, ...)`, so the seed
/// and epoch counter are the whole random state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: Stage,
    pub epochs_done: usize,
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub best: Option<BestModel>,
}

impl Checkpoint {
    /// The best parameters, falling back to the current ones.
    pub fn best_params(&self) -> &ModelParams {
        self.best.as_ref().map_or(&self.params, |b| &b.params)
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint digest mismatch")]
    Digest,
    #[error("malformed checkpoint header: {0}")]
    Header(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    stage: Stage,
    epochs_done: usize,
    seed: u64,
    encoder: EncoderConfig,
    n_items: usize,
    adam_step: u64,
    best: Option<BestHeader>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BestHeader {
    epoch: usize,
    valid_hr: f64,
    valid_ndcg: f64,
}

fn push_params(out: &mut Vec<u8>, params: &ModelParams) {
    for (_, t) in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Serialises `ckpt` to bytes.
pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let header = Header {
        stage: ckpt.stage,
        epochs_done: ckpt.epochs_done,
        seed: ckpt.seed,
        encoder: ckpt.encoder.clone(),
        n_items: ckpt.params.n_items(),
        adam_step: ckpt.optimizer.step,
        best: ckpt.best.as_ref().map(|b| BestHeader {
            epoch: b.epoch,
            valid_hr: b.valid_hr,
            valid_ndcg: b.valid_ndcg,
        }),
    };
    let json = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    push_params(&mut out, &ckpt.params);
    push_params(&mut out, &ckpt.optimizer.m);
    push_params(&mut out, &ckpt.optimizer.v);
    if let Some(best) = &ckpt.best {
        push_params(&mut out, &best.params);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() < n {
            return Err(CheckpointError::Truncated);
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn params(&mut self, template: &ModelParams) -> Result<ModelParams, CheckpointError> {
        let mut params = template.clone();
        for (_, t) in params.tensors_mut() {
            let raw = self.take(t.len() * 8)?;
            for (v, chunk) in t.iter_mut().zip(raw.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }
        Ok(params)
    }
}

/// Parses bytes produced by [`encode_checkpoint`].
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < MAGIC.len() + 4 {
        return Err(if bytes.starts_with(&MAGIC[..bytes.len().min(8)]) {
            CheckpointError::Truncated
        } else {
            CheckpointError::BadMagic
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if found != FORMAT_VERSION {
        return Err(CheckpointError::Version { found });
    }
    if bytes.len() < 12 + 8 + 32 {
        return Err(CheckpointError::Truncated);
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    let mut r = Reader { bytes: &body[12..] };
    let header_len = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
    let header_bytes = r.take(header_len)?;
    let header: Header =
        serde_json::from_slice(header_bytes).map_err(|e| CheckpointError::Header(e.to_string()))?;
    header
        .encoder
        .validate()
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    let template = ModelParams::init(
        &header.encoder,
        header.n_items,
        &mut rand_chacha::ChaCha8Rng::seed_from_u64(0),
    );
    let expected =
        8 + header_len + template.num_values() * 8 * (3 + header.best.is_some() as usize);
    if body.len() - 12 != expected {
        return Err(if body.len() - 12 < expected {
            CheckpointError::Truncated
        } else {
            CheckpointError::Header("trailing bytes".into())
        });
    }
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Digest);
    }
    let params = r.params(&template)?;
    let m = r.params(&template)?;
    let v = r.params(&template)?;
    let best = match header.best {
        Some(b) => Some(BestModel {
            epoch: b.epoch,
            valid_hr: b.valid_hr,
            valid_ndcg: b.valid_ndcg,
            params: r.params(&template)?,
        }),
        None => None,
    };
    Ok(Checkpoint {
        stage: header.stage,
        epochs_done: header.epochs_done,
        seed: header.seed,
        encoder: header.encoder,
        params,
        optimizer: AdamState {
            step: header.adam_step,
            m,
            v,
        },
        best,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let tmp = path.with_extension("tmp");
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    fs::write(&tmp, encode_checkpoint(ckpt)).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_checkpoint(&bytes)
}
