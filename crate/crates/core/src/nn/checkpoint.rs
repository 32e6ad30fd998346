//! Checkpoint file: 8-byte magic, `u64` little-endian header length, a JSON
//! header (net config, tensor manifest, optional training state), then the
//! tensors back to back as little-endian `f32`. Optimizer moments ride along
//! as extra tensors.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NetConfig, PortLlm, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"FPCKPT01";

/// One stored tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub frozen: bool,
    /// Byte offset from the start of the tensor section.
    pub offset: usize,
    pub sha256: String,
}

/// Where training stood when the checkpoint was written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
    pub seed: u64,
    pub dataset_hash: String,
    pub best_val_nmse_v: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    net: NetConfig,
    lora_enabled: bool,
    frozen_checksum: String,
    tensors: Vec<ManifestEntry>,
    extra: Vec<ManifestEntry>,
    train_state: Option<TrainState>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: PortLlm<f32>,
    pub state: Option<TrainState>,
    pub extra: Vec<Tensor<f32>>,
    /// SHA-256 of the whole file.
    pub file_sha256: String,
}

fn encode(t: &Tensor<f32>, offset: &mut usize, blob: &mut Vec<u8>) -> ManifestEntry {
    let start = blob.len();
    for v in &t.data {
        blob.extend_from_slice(&v.to_le_bytes());
    }
    let entry = ManifestEntry {
        name: t.name.clone(),
        shape: t.shape.clone(),
        frozen: t.frozen,
        offset: *offset,
        sha256: hex::encode(Sha256::digest(&blob[start..])),
    };
    *offset += blob.len() - start;
    entry
}

/// Write atomically (temp file, then rename).
pub fn save_checkpoint(
    path: &Path,
    model: &PortLlm<f32>,
    state: Option<&TrainState>,
    extra: &[Tensor<f32>],
) -> Result<()> {
    let mut blob = Vec::new();
    let mut offset = 0;
    let tensors = model.tensors().iter().map(|t| encode(t, &mut offset, &mut blob)).collect();
    let extra = extra.iter().map(|t| encode(t, &mut offset, &mut blob)).collect();
    let header = Header {
        net: model.config().clone(),
        lora_enabled: model.lora_enabled(),
        frozen_checksum: model.frozen_checksum(),
        tensors,
        extra,
        train_state: state.cloned(),
    };
    let json = serde_json::to_vec(&header)?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(MAGIC)?;
        f.write_all(&(json.len() as u64).to_le_bytes())?;
        f.write_all(&json)?;
        f.write_all(&blob)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn decode(entry: &ManifestEntry, blob: &[u8]) -> Result<Vec<f32>> {
    let n: usize = entry.shape.iter().product();
    let bytes = blob
        .get(entry.offset..entry.offset + 4 * n)
        .ok_or_else(|| Error::Data(format!("tensor `{}` runs past the end of the file", entry.name)))?;
    if hex::encode(Sha256::digest(bytes)) != entry.sha256 {
        return Err(Error::Data(format!("checksum mismatch for tensor `{}`", entry.name)));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let bad = |what: &str| Error::Data(format!("{}: {what}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let json = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| bad(&e.to_string()))?;
    let blob = &bytes[16 + hlen..];

    let mut model = PortLlm::<f32>::new(header.net.clone(), 0)?;
    model.set_lora_enabled(header.lora_enabled);
    if header.tensors.len() != model.tensors().len() {
        return Err(bad("tensor count does not match the net config"));
    }
    for entry in &header.tensors {
        let t = model
            .tensor_mut(&entry.name)
            .ok_or_else(|| Error::Data(format!("unknown tensor `{}`", entry.name)))?;
        if t.shape != entry.shape || t.frozen != entry.frozen {
            return Err(Error::Data(format!(
                "tensor `{}` is {:?} (frozen={}), net expects {:?} (frozen={})",
                entry.name, entry.shape, entry.frozen, t.shape, t.frozen
            )));
        }
        t.data = decode(entry, blob)?;
    }
    if model.frozen_checksum() != header.frozen_checksum {
        return Err(bad("frozen-weight checksum mismatch"));
    }
    let extra = header
        .extra
        .iter()
        .map(|e| {
            Ok(Tensor {
                name: e.name.clone(),
                shape: e.shape.clone(),
                frozen: e.frozen,
                data: decode(e, blob)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Checkpoint {
        model,
        state: header.train_state,
        extra,
        file_sha256: hex::encode(Sha256::digest(&bytes)),
    })
}
