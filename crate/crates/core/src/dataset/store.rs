//! Dataset files: a JSON sidecar plus a raw little-endian `f32` blob with
//! dimension order `[sample, time, n, m, re/im]`, where `time` covers the
//! `T` history tables followed by the `F` future tables. Both filenames carry
//! a hash of the generating config and seed.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex32;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, SampleMeta, ScenarioConfig, Split, WindowSample};
use crate::config::ChannelConfig;
use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    content_hash: String,
    seed: u64,
    channel: ChannelConfig,
    scenario: ScenarioConfig,
    num_samples: usize,
    num_train: usize,
    num_test: usize,
    dtype: String,
    dim_order: Vec<String>,
    shape: [usize; 5],
    blob_file: String,
    blob_sha256: String,
    meta: Vec<SampleMeta>,
    train: Vec<usize>,
    test: Vec<usize>,
}

/// Paths written by [`write_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetFiles {
    pub sidecar: PathBuf,
    pub blob: PathBuf,
    pub hash: String,
}

/// 16 hex digits identifying `(channel, scenario, seed)`.
pub fn dataset_hash(channel: &ChannelConfig, scenario: &ScenarioConfig, seed: u64) -> String {
    let key = serde_json::json!({
        "format_version": FORMAT_VERSION,
        "channel": channel,
        "scenario": scenario,
        "seed": seed,
    });
    let digest = Sha256::digest(key.to_string().as_bytes());
    hex::encode(&digest[..8])
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<DatasetFiles> {
    fs::create_dir_all(dir)?;
    let hash = dataset_hash(&ds.channel, &ds.scenario, ds.seed);
    let blob_name = format!("samples-{hash}.f32");
    let blob = dir.join(&blob_name);
    let sidecar = dir.join(format!("dataset-{hash}.json"));

    let mut hasher = Sha256::new();
    let mut out = BufWriter::new(fs::File::create(&blob)?);
    let mut buf = Vec::new();
    for s in &ds.samples {
        buf.clear();
        for z in s.history().iter().chain(s.future()) {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        hasher.update(&buf);
        out.write_all(&buf)?;
    }
    out.flush()?;

    let (n, m) = ds.dims();
    let t = ds.scenario.history + ds.scenario.horizon;
    let car = Sidecar {
        format_version: FORMAT_VERSION,
        content_hash: hash.clone(),
        seed: ds.seed,
        channel: ds.channel.clone(),
        scenario: ds.scenario.clone(),
        num_samples: ds.samples.len(),
        num_train: ds.split.train.len(),
        num_test: ds.split.test.len(),
        dtype: "float32-le".into(),
        dim_order: ["sample", "time", "n", "m", "re_im"].map(String::from).to_vec(),
        shape: [ds.samples.len(), t, n, m, 2],
        blob_file: blob_name,
        blob_sha256: hex::encode(hasher.finalize()),
        meta: ds.samples.iter().map(|s| s.meta).collect(),
        train: ds.split.train.clone(),
        test: ds.split.test.clone(),
    };
    fs::write(&sidecar, serde_json::to_vec_pretty(&car)?)?;
    Ok(DatasetFiles { sidecar, blob, hash })
}

/// Load from a sidecar path, or from a directory holding exactly one sidecar.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let sidecar_path = if path.is_dir() {
        find_sidecar(path)?
    } else {
        path.to_path_buf()
    };
    let text = fs::read(&sidecar_path)
        .map_err(|e| Error::Data(format!("{}: {e}", sidecar_path.display())))?;
    let car: Sidecar = serde_json::from_slice(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", sidecar_path.display())))?;
    if car.format_version != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported dataset format {}", car.format_version)));
    }
    let [k, t, n, m, two] = car.shape;
    let (hist, fut) = (car.scenario.history, car.scenario.horizon);
    if two != 2 || t != hist + fut || [n, m] != car.channel.ports || k != car.meta.len() || k != car.num_samples {
        return Err(Error::Data(format!("inconsistent dataset shape {:?}", car.shape)));
    }
    let split = Split {
        train: car.train,
        test: car.test,
    };
    check_split(&split, k)?;

    let blob_path = sidecar_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&car.blob_file);
    let bytes = fs::read(&blob_path).map_err(|e| Error::Data(format!("{}: {e}", blob_path.display())))?;
    let expected = k * t * n * m * 2 * 4;
    if bytes.len() != expected {
        return Err(Error::Data(format!(
            "blob has {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    if hex::encode(Sha256::digest(&bytes)) != car.blob_sha256 {
        return Err(Error::Data(format!("checksum mismatch for {}", blob_path.display())));
    }

    let per_sample = t * n * m;
    let values: Vec<Complex32> = bytes
        .chunks_exact(8)
        .map(|c| {
            Complex32::new(
                f32::from_le_bytes(c[..4].try_into().expect("4 bytes")),
                f32::from_le_bytes(c[4..].try_into().expect("4 bytes")),
            )
        })
        .collect();
    let samples = values
        .chunks_exact(per_sample)
        .zip(&car.meta)
        .map(|(chunk, meta)| {
            let (h, f) = chunk.split_at(hist * n * m);
            WindowSample::new((n, m), h.to_vec(), f.to_vec(), *meta)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        channel: car.channel,
        scenario: car.scenario,
        seed: car.seed,
        samples,
        split,
    })
}

fn find_sidecar(dir: &Path) -> Result<PathBuf> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        let name = p.file_name().and_then(|s| s.to_str()).unwrap_or("");
        if name.starts_with("dataset-") && name.ends_with(".json") {
            found.push(p);
        }
    }
    match found.len() {
        1 => Ok(found.pop().expect("one entry")),
        0 => Err(Error::Data(format!("no dataset-*.json in {}", dir.display()))),
        _ => Err(Error::Data(format!(
            "several datasets in {}; pass the sidecar path",
            dir.display()
        ))),
    }
}

fn check_split(split: &Split, k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    for &i in split.train.iter().chain(&split.test) {
        if i >= k || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Data(format!("split index {i} is out of range or repeated")));
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Data("split does not cover every sample".into()));
    }
    Ok(())
}
