//! Versioned binary checkpoint container.
//!
//! ```text
//! magic    8 bytes   "CHTRCKPT"
//! version  u32 LE
//! hlen     u64 LE    length of the JSON header
//! header   hlen bytes UTF-8 JSON (configs, step, history, vocabularies,
//!                    tensor table: name, dtype, shape)
//! payload  every tensor in table order, row-major f64 LE
//! digest   32 bytes  SHA-256 of everything before it
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::numerics::{AdamConfig, AdamState, ParamStore, Tensor};
use crate::transformer::{Model, TransformerConfig};

use super::{EvalRecord, TrainConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CHTRCKPT";

/// Everything needed to run a model or continue its training.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model_config: TransformerConfig,
    pub train_config: TrainConfig,
    pub step: usize,
    pub params: ParamStore,
    pub adam: Option<AdamState>,
    /// Seed of the dropout stream; the stream position is the step count.
    pub rng_seed: u64,
    pub history: Vec<EvalRecord>,
    pub best_step: Option<usize>,
    /// Training loss summed over the updates since the last evaluation, and
    /// their number.
    pub pending_loss: (f64, usize),
    pub src_vocab: Vocabulary,
    pub tgt_vocab: Vocabulary,
}

impl Checkpoint {
    pub fn model(&self) -> Result<Model> {
        Model::from_params(self.model_config.clone(), self.params.clone())
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    step: u64,
    config: AdamConfig,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: TransformerConfig,
    train_config: TrainConfig,
    step: usize,
    rng_seed: u64,
    history: Vec<EvalRecord>,
    best_step: Option<usize>,
    pending_loss: (f64, usize),
    src_vocab: Vocabulary,
    tgt_vocab: Vocabulary,
    adam: Option<AdamHeader>,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut tensors: Vec<(String, &[usize], &[f64])> = ck
        .params
        .iter()
        .map(|(_, name, t)| (format!("param/{name}"), t.shape(), t.values()))
        .collect();
    if let Some(adam) = &ck.adam {
        if adam.m.len() != ck.params.len() {
            return Err(Error::Invariant("optimizer state does not match parameters".into()));
        }
        for (kind, moments) in [("m", &adam.m), ("v", &adam.v)] {
            for ((_, name, t), buf) in ck.params.iter().zip(moments) {
                tensors.push((format!("adam.{kind}/{name}"), t.shape(), buf));
            }
        }
    }
    let header = Header {
        model_config: ck.model_config.clone(),
        train_config: ck.train_config.clone(),
        step: ck.step,
        rng_seed: ck.rng_seed,
        history: ck.history.clone(),
        best_step: ck.best_step,
        pending_loss: ck.pending_loss,
        src_vocab: ck.src_vocab.clone(),
        tgt_vocab: ck.tgt_vocab.clone(),
        adam: ck.adam.as_ref().map(|a| AdamHeader {
            step: a.step,
            config: a.config,
        }),
        tensors: tensors
            .iter()
            .map(|(name, shape, _)| TensorEntry {
                name: name.clone(),
                dtype: "f64".into(),
                shape: shape.to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::invalid(e.to_string()))?;
    let payload_len: usize = tensors.iter().map(|(_, _, v)| v.len() * 8).sum();
    let mut out = Vec::with_capacity(8 + 4 + 8 + json.len() + payload_len + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, values) in &tensors {
        for v in *values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
    if bytes.len() < 8 + 4 + 8 + 32 {
        return Err(corrupt("file too short"));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch (truncated or modified)"));
    }
    let hlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let header_end = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length out of range"))?;
    let header: Header = serde_json::from_slice(&body[20..header_end])
        .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
    let mut cursor = header_end;
    let mut read = |entry: &TensorEntry| -> Result<Tensor> {
        if entry.dtype != "f64" {
            return Err(Error::CorruptCheckpoint(format!("unsupported dtype {}", entry.dtype)));
        }
        let n: usize = entry.shape.iter().product();
        let end = cursor + n * 8;
        if end > body.len() {
            return Err(corrupt("payload truncated"));
        }
        let values = body[cursor..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cursor = end;
        Tensor::new(entry.shape.clone(), values)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))
    };
    let mut params = ParamStore::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for entry in &header.tensors {
        let t = read(entry)?;
        if let Some(name) = entry.name.strip_prefix("param/") {
            params.insert(name, t)?;
        } else if entry.name.starts_with("adam.m/") {
            m.push(t.into_values());
        } else if entry.name.starts_with("adam.v/") {
            v.push(t.into_values());
        } else {
            return Err(Error::CorruptCheckpoint(format!("unknown tensor {}", entry.name)));
        }
    }
    if cursor != body.len() {
        return Err(corrupt("trailing bytes after payload"));
    }
    let adam = match header.adam {
        Some(a) => {
            if m.len() != params.len() || v.len() != params.len() {
                return Err(corrupt("optimizer moments do not match parameters"));
            }
            Some(AdamState {
                step: a.step,
                m,
                v,
                config: a.config,
            })
        }
        None => None,
    };
    let ck = Checkpoint {
        model_config: header.model_config,
        train_config: header.train_config,
        step: header.step,
        params,
        adam,
        rng_seed: header.rng_seed,
        history: header.history,
        best_step: header.best_step,
        pending_loss: header.pending_loss,
        src_vocab: header.src_vocab,
        tgt_vocab: header.tgt_vocab,
    };
    // shapes must agree with the stored architecture
    crate::transformer::Model::from_params(ck.model_config.clone(), ck.params.clone()).map(|_| ())?;
    Ok(ck)
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_checkpoint(ck)?;
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
