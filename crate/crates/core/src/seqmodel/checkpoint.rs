//! Binary checkpoint container.
//!
//! Layout: magic `EHRUQCKP`, format version (u32 LE), manifest length
//! (u64 LE), JSON manifest, raw f64 LE tensor data in manifest order, then
//! a SHA-256 digest of everything before it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numcore::Tensor;
use crate::seqmodel::model::Model;
use crate::seqmodel::train::rng_from_parts;
use crate::seqmodel::{ModelConfig, ModelError};

pub const MAGIC: &[u8; 8] = b"EHRUQCKP";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch; file is corrupt")]
    Checksum,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: ModelConfig,
    vocab_size: usize,
    num_ethnicities: usize,
    params: Vec<TensorEntry>,
    step: u64,
    has_moments: bool,
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
}

#[derive(Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    let mut out = [0u8; 32];
    if s.len() != 64 {
        return None;
    }
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

/// Serializes the model, its optimizer moments and its shuffle rng.
pub fn to_bytes(model: &Model) -> Vec<u8> {
    let state = &model.state;
    let has_moments = !state.m.is_empty();
    let manifest = Manifest {
        config: model.config.clone(),
        vocab_size: model.vocab_size,
        num_ethnicities: model.num_ethnicities,
        params: model
            .store
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        step: state.step,
        has_moments,
        rng_seed: hex(&state.rng.get_seed()),
        rng_stream: state.rng.get_stream(),
        rng_word_pos: state.rng.get_word_pos().to_string(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    let mut put = |t: &Tensor<f64>| t.data().iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    model.store.iter().for_each(|(_, t)| put(t));
    if has_moments {
        state.m.iter().for_each(&mut put);
        state.v.iter().for_each(&mut put);
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

pub fn from_bytes(bytes: &[u8]) -> Result<Model, ModelError> {
    let err = |m: &str| ModelError::Checkpoint(CheckpointError::Malformed(m.to_string()));
    if bytes.len() < MAGIC.len() + 12 + DIGEST_LEN || &bytes[..8] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: FORMAT_VERSION,
        }
        .into());
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(CheckpointError::Checksum.into());
    }
    let json_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let json = body.get(20..20 + json_len).ok_or_else(|| err("manifest truncated"))?;
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| err(&e.to_string()))?;
    let mut model = Model::new(manifest.config, manifest.vocab_size, manifest.num_ethnicities)?;
    let expected: Vec<TensorEntry> = model
        .store
        .iter()
        .map(|(name, t)| TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect();
    if expected != manifest.params {
        return Err(err("parameter names or shapes do not match the configuration"));
    }
    let mut data = body[20 + json_len..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |shape: &[usize]| -> Result<Tensor<f64>, ModelError> {
        let n: usize = shape.iter().product();
        let v: Vec<f64> = data.by_ref().take(n).collect();
        if v.len() != n {
            return Err(err("tensor data truncated"));
        }
        Ok(Tensor::new(shape.to_vec(), v)?)
    };
    let ids: Vec<_> = model.store.ids().collect();
    for &id in &ids {
        let shape = model.store.get(id).shape().to_vec();
        *model.store.get_mut(id) = take(&shape)?;
    }
    if manifest.has_moments {
        let shapes: Vec<Vec<usize>> = ids.iter().map(|&id| model.store.get(id).shape().to_vec()).collect();
        model.state.m = shapes.iter().map(|s| take(s)).collect::<Result<_, _>>()?;
        model.state.v = shapes.iter().map(|s| take(s)).collect::<Result<_, _>>()?;
    }
    if data.next().is_some() || (body.len() - 20 - json_len) % 8 != 0 {
        return Err(err("trailing bytes after tensor data"));
    }
    let seed = unhex(&manifest.rng_seed).ok_or_else(|| err("bad rng seed"))?;
    let word_pos: u128 = manifest.rng_word_pos.parse().map_err(|_| err("bad rng position"))?;
    model.state.step = manifest.step;
    model.state.rng = rng_from_parts(seed, manifest.rng_stream, word_pos);
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), ModelError> {
    fs::write(path, to_bytes(model)).map_err(CheckpointError::from)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model, ModelError> {
    let bytes = fs::read(path).map_err(CheckpointError::from)?;
    from_bytes(&bytes)
}
