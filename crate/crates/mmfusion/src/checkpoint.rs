//! Self-describing binary checkpoint: a versioned header, a JSON metadata
//! blob (config, vocabularies, rng state, epoch, validation loss), then
//! named parameter blobs with shapes and little-endian f64 payloads.
//! Reloading reconstructs the model bit-for-bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::data::TokenVocabulary;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::RngRegistry;

const MAGIC: &[u8; 4] = b"MMF\x01";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    config: TrainConfig,
    vocab_vilt: TokenVocabulary,
    vocab_vault: TokenVocabulary,
    epoch: usize,
    val_loss: f64,
    rng_master: u64,
    rng_streams: Vec<(String, [u64; 4])>,
}

/// A reloaded checkpoint.
pub struct LoadedCheckpoint {
    pub model: Model,
    pub rng: RngRegistry,
    pub epoch: usize,
    pub val_loss: f64,
}

pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    rng: &RngRegistry,
    epoch: usize,
    val_loss: f64,
) -> Result<()> {
    let meta = CheckpointMeta {
        config: model.config.clone(),
        vocab_vilt: model.vocab_vilt.clone(),
        vocab_vault: model.vocab_vault.clone(),
        epoch,
        val_loss,
        rng_master: rng.master(),
        rng_streams: rng.snapshot(),
    };
    let meta_json = serde_json::to_vec(&meta).expect("checkpoint meta serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_json);
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for (name, tensor) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let shape = tensor.shape();
        out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
        for d in &shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: truncated checkpoint (wanted {n} bytes at offset {})",
                self.path, self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(4)? != MAGIC {
        return Err(Error::Format(format!(
            "{}: not a checkpoint file",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }
    let meta_len = r.u64()? as usize;
    let mut meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::Format(format!("{}: bad checkpoint metadata: {e}", path.display())))?;
    meta.vocab_vilt.rebuild_index();
    meta.vocab_vault.rebuild_index();

    let mut build_rng = RngRegistry::new(meta.rng_master);
    let model = Model::new(
        meta.config,
        meta.vocab_vilt,
        meta.vocab_vault,
        &mut build_rng,
    )?;

    let n_params = r.u64()? as usize;
    if n_params != model.params.len() {
        return Err(Error::Format(format!(
            "{}: checkpoint has {n_params} parameters, model expects {}",
            path.display(),
            model.params.len()
        )));
    }
    for _ in 0..n_params {
        let name_len = r.u64()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format(format!("{}: bad parameter name", path.display())))?
            .to_string();
        let ndim = r.u64()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = model.params.get(&name).ok_or_else(|| {
            Error::Format(format!(
                "{}: checkpoint parameter `{name}` not in model",
                path.display()
            ))
        })?;
        if tensor.shape() != shape {
            return Err(Error::Format(format!(
                "{}: parameter `{name}` shape {shape:?} does not match model {:?}",
                path.display(),
                tensor.shape()
            )));
        }
        tensor.set_data(data)?;
    }

    let mut rng = RngRegistry::new(meta.rng_master);
    rng.restore(&meta.rng_streams);
    Ok(LoadedCheckpoint {
        model,
        rng,
        epoch: meta.epoch,
        val_loss: meta.val_loss,
    })
}
