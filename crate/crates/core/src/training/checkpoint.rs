use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor2;
use crate::error::{Error, Result};
use crate::models::{Model, ModelConfig};
use crate::transport::GroundNorm;

pub const MAGIC: &[u8; 4] = b"PSAF";
pub const VERSION: u32 = 1;
/// Normalization every cloud passes through before it reaches a model.
pub const NORMALIZATION: &str = "centroid-unit-max-norm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub normalization: String,
    pub ground_metric: GroundNorm,
    pub epochs_completed: usize,
    pub tensors: Vec<TensorEntry>,
}

/// A model restored from disk together with its header.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Model,
}

fn header_for(model: &Model, epochs_completed: usize) -> CheckpointHeader {
    let config = model.config();
    CheckpointHeader {
        ground_metric: config.transport().norm,
        model: config,
        normalization: NORMALIZATION.to_string(),
        epochs_completed,
        tensors: model
            .params()
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                rows: p.value.rows(),
                cols: p.value.cols(),
                trainable: p.trainable,
            })
            .collect(),
    }
}

/// Serialized checkpoint: magic, version, header length and JSON header,
/// little-endian parameter blob, then the CRC-32 of the blob.
pub fn checkpoint_bytes(model: &Model, epochs_completed: usize) -> Vec<u8> {
    let header = serde_json::to_vec(&header_for(model, epochs_completed))
        .expect("checkpoint header serializes");
    let mut blob = Vec::with_capacity(model.params().scalar_count() * 8);
    for p in model.params().iter() {
        for v in p.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(12 + header.len() + blob.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&blob);
    out.extend_from_slice(&crc32fast::hash(&blob).to_le_bytes());
    out
}

/// Writes the checkpoint through a temporary sibling so a failed write never
/// leaves a partial file at `path`.
pub fn save_checkpoint(model: &Model, epochs_completed: usize, path: &Path) -> Result<()> {
    let bytes = checkpoint_bytes(model, epochs_completed);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str, path: &Path) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            msg: format!("truncated while reading {what}"),
        });
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8], what: &str, path: &Path) -> Result<u32> {
    let b = take(bytes, 4, what, path)?;
    Ok(u32::from_le_bytes(b.try_into().expect("four bytes")))
}

/// Parses checkpoint bytes; `path` only labels errors.
pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let corrupt = |msg: String| Error::Corrupt {
        path: path.to_path_buf(),
        msg,
    };
    let mut rest = bytes;
    if take(&mut rest, 4, "magic", path)? != MAGIC {
        return Err(corrupt("bad magic".into()));
    }
    let version = read_u32(&mut rest, "version", path)?;
    if version != VERSION {
        return Err(corrupt(format!(
            "unsupported format version {version}, expected {VERSION}"
        )));
    }
    let header_len = read_u32(&mut rest, "header length", path)? as usize;
    let header_bytes = take(&mut rest, header_len, "header", path)?;
    let header: CheckpointHeader = serde_json::from_slice(header_bytes)
        .map_err(|e| corrupt(format!("unreadable header: {e}")))?;
    let scalars: usize = header.tensors.iter().map(|t| t.rows * t.cols).sum();
    let blob = take(&mut rest, scalars * 8, "parameter blob", path)?;
    let crc = read_u32(&mut rest, "checksum", path)?;
    if !rest.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", rest.len())));
    }
    if crc32fast::hash(blob) != crc {
        return Err(corrupt("checksum mismatch".into()));
    }
    if header.normalization != NORMALIZATION {
        return Err(corrupt(format!(
            "unknown normalization {:?}",
            header.normalization
        )));
    }
    if header.ground_metric != header.model.transport().norm {
        return Err(corrupt(
            "ground metric disagrees with the model configuration".into(),
        ));
    }

    let mut model = Model::new(header.model.clone(), 0).map_err(|e| match e {
        Error::Config(msg) => corrupt(format!("invalid model configuration: {msg}")),
        other => other,
    })?;
    let store = model.params_mut();
    if store.len() != header.tensors.len() {
        return Err(corrupt(format!(
            "header declares {} tensors but the architecture has {}",
            header.tensors.len(),
            store.len()
        )));
    }
    let mut offset = 0;
    for (p, t) in store.iter_mut().zip(&header.tensors) {
        if p.name != t.name || p.value.shape() != (t.rows, t.cols) || p.trainable != t.trainable {
            return Err(corrupt(format!(
                "tensor {} ({}x{}) does not match the architecture's {} ({}x{})",
                t.name,
                t.rows,
                t.cols,
                p.name,
                p.value.rows(),
                p.value.cols()
            )));
        }
        let n = t.rows * t.cols;
        let data = blob[offset * 8..(offset + n) * 8]
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("eight bytes")))
            .collect();
        p.value = Tensor2::from_vec(t.rows, t.cols, data)?;
        offset += n;
    }
    Ok(Checkpoint { header, model })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes, path)
}

/// Loads a checkpoint and insists its architecture equals `expected`,
/// naming every differing field on both sides otherwise.
pub fn load_checkpoint_expecting(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    ensure_same_architecture(&ckpt.header.model, expected)?;
    Ok(ckpt)
}

pub fn ensure_same_architecture(found: &ModelConfig, expected: &ModelConfig) -> Result<()> {
    if found == expected {
        return Ok(());
    }
    let a = serde_json::to_value(found).expect("config serializes");
    let b = serde_json::to_value(expected).expect("config serializes");
    let mut diffs = Vec::new();
    match (a.as_object(), b.as_object()) {
        (Some(a), Some(b)) => {
            let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let (x, y) = (a.get(k), b.get(k));
                if x != y {
                    diffs.push(format!(
                        "{k}: checkpoint has {} but requested {}",
                        x.map_or("nothing".into(), |v| v.to_string()),
                        y.map_or("nothing".into(), |v| v.to_string())
                    ));
                }
            }
        }
        _ => diffs.push(format!("checkpoint has {a} but requested {b}")),
    }
    Err(Error::config(format!(
        "checkpoint architecture mismatch: {}",
        diffs.join("; ")
    )))
}
