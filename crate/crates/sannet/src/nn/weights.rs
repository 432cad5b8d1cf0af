//! On-disk weights container.
//!
//! Layout of a container file:
//!
//! ```text
//! [ 8 bytes  ] header length, u64 little-endian
//! [ N bytes  ] UTF-8 JSON header: format version, subnetwork/phase tags,
//!              RNG seed, config hash, and one (name, shape, trainable)
//!              record per entry
//! [ rest     ] concatenated little-endian f32 blobs, in header order
//! ```
//!
//! Values are held as `f64` in memory and narrowed to `f32` on disk; loading
//! widens losslessly, so save -> load -> save is byte-identical.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::optim::ParamStore;
use crate::nn::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

/// Identity metadata stored next to the weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerMeta {
    /// Subnetwork tag: "I" autoencoder, "II" gender classifier, "III" matcher.
    pub subnetwork: String,
    /// Training phase that produced the weights (aux, pretrain, adversarial, eval).
    pub phase: String,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct EntryMeta {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    subnetwork: String,
    phase: String,
    seed: u64,
    config_hash: String,
    entries: Vec<EntryMeta>,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn save(path: &Path, params: &ParamStore, meta: &ContainerMeta) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        subnetwork: meta.subnetwork.clone(),
        phase: meta.phase.clone(),
        seed: meta.seed,
        config_hash: meta.config_hash.clone(),
        entries: params
            .iter()
            .map(|(name, e)| EntryMeta {
                name: name.to_string(),
                shape: e.value.shape().to_vec(),
                trainable: e.trainable,
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| corrupt(path, format!("header serialization failed: {e}")))?;

    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&(header_json.len() as u64).to_le_bytes())
        .map_err(|e| Error::io(path, e))?;
    w.write_all(&header_json).map_err(|e| Error::io(path, e))?;
    for (_, e) in params.iter() {
        for &v in e.value.data() {
            w.write_all(&(v as f32).to_le_bytes())
                .map_err(|err| Error::io(path, err))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, ContainerMeta)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut len_buf = [0u8; 8];
    r.read_exact(&mut len_buf)
        .map_err(|_| corrupt(path, "truncated file: missing header length"))?;
    let header_len = u64::from_le_bytes(len_buf) as usize;
    if header_len > 64 * 1024 * 1024 {
        return Err(corrupt(path, format!("implausible header length {header_len}")));
    }

    let mut header_buf = vec![0u8; header_len];
    r.read_exact(&mut header_buf)
        .map_err(|_| corrupt(path, "truncated file: header shorter than declared"))?;
    let header: Header = serde_json::from_slice(&header_buf)
        .map_err(|e| corrupt(path, format!("corrupt header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(corrupt(
            path,
            format!(
                "format version mismatch: file has {}, expected {}",
                header.format_version, FORMAT_VERSION
            ),
        ));
    }

    let mut params = ParamStore::new();
    for entry in &header.entries {
        let n: usize = entry.shape.iter().product();
        let mut blob = vec![0u8; n * 4];
        r.read_exact(&mut blob).map_err(|_| {
            corrupt(
                path,
                format!("truncated file: blob for entry `{}` incomplete", entry.name),
            )
        })?;
        let data: Vec<f64> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let tensor = Tensor::from_vec(&entry.shape, data)
            .map_err(|e| corrupt(path, format!("entry `{}`: {e}", entry.name)))?;
        params
            .insert(&entry.name, tensor, entry.trainable)
            .map_err(|e| corrupt(path, format!("{e}")))?;
    }

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(corrupt(path, "trailing bytes after final blob"));
    }

    Ok((
        params,
        ContainerMeta {
            subnetwork: header.subnetwork,
            phase: header.phase,
            seed: header.seed,
            config_hash: header.config_hash,
        },
    ))
}
