//! Binary parameter files.
//!
//! Layout: 8-byte magic, `u32` format version, `u32` header length, a JSON
//! header (dims, vocabulary, tensor names and shapes), the tensor data as
//! little-endian `f64` in header order, and a trailing CRC-32 of everything
//! before it. All integers are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{Dims, ModelParams, Weights};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::numkit::Matrix;

const MAGIC: &[u8; 8] = b"SEQPLCK\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dims: Dims,
    vocab: Vocabulary,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: (usize, usize),
}

pub fn to_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    params.validate()?;
    let names = Weights::<Matrix>::names();
    let tensors = params.weights.tensors();
    let header = Header {
        dims: params.dims,
        vocab: params.vocab.clone(),
        tensors: names
            .into_iter()
            .zip(&tensors)
            .map(|(name, m)| TensorEntry { name, shape: m.shape() })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + header.len() + 8 * params.parameter_count() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for m in tensors {
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(bad("checksum mismatch (file truncated or corrupted)"));
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let header_len = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
    let data_start = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| bad("header length exceeds file size"))?;
    let header: Header =
        serde_json::from_slice(&body[16..data_start]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    header.dims.validate()?;

    let names = Weights::<Matrix>::names();
    let shapes = Weights::shapes(&header.dims);
    if header.tensors.len() != names.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, header lists {}",
            names.len(),
            header.tensors.len()
        )));
    }
    let mut data = &body[data_start..];
    let mut tensors = Vec::with_capacity(names.len());
    for ((entry, name), shape) in header.tensors.iter().zip(&names).zip(&shapes) {
        if &entry.name != name || entry.shape != *shape {
            return Err(Error::Checkpoint(format!(
                "tensor {:?} {:?} does not match expected {name:?} {shape:?}",
                entry.name, entry.shape
            )));
        }
        let n = shape.0 * shape.1;
        if data.len() < 8 * n {
            return Err(bad("tensor data shorter than header declares"));
        }
        let values = data[..8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        data = &data[8 * n..];
        tensors
            .push(Matrix::from_vec(shape.0, shape.1, values).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?);
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes after tensor data"));
    }
    let mut params = ModelParams::zeros(header.dims, header.vocab)?;
    params.weights = Weights::from_tensors(tensors)?;
    params.validate()?;
    Ok(params)
}

/// Writes atomically via a sibling temporary file.
pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    let bytes = to_bytes(params)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
