//! Tensor files: an 8-byte magic, a little-endian `u64` header length, a
//! JSON header mapping each tensor name to its shape, dtype and byte range,
//! then one little-endian blob holding every tensor back to back.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{NnError, Real};

const MAGIC: &[u8; 8] = b"SSETNSR1";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    shape: Vec<usize>,
    dtype: String,
    offsets: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    tensors: std::collections::BTreeMap<String, Entry>,
    metadata: Value,
}

/// Named tensors plus free-form JSON metadata.
#[derive(Debug, Clone)]
pub struct TensorFile<F> {
    pub tensors: HashMap<String, ArrayD<F>>,
    pub metadata: Value,
}

pub fn write_tensor_file<F: Real>(
    path: &Path,
    tensors: &[(String, &ArrayD<F>)],
    metadata: &Value,
) -> Result<(), NnError> {
    let mut blob = Vec::new();
    let mut entries = std::collections::BTreeMap::new();
    for (name, t) in tensors {
        let start = blob.len();
        for &v in t.as_standard_layout().iter() {
            v.write_le(&mut blob);
        }
        let prev = entries.insert(
            name.clone(),
            Entry {
                shape: t.shape().to_vec(),
                dtype: F::DTYPE.to_string(),
                offsets: [start, blob.len()],
            },
        );
        if prev.is_some() {
            return Err(NnError::Corrupt(format!("duplicate tensor name {name}")));
        }
    }
    let header = serde_json::to_vec(&Header {
        tensors: entries,
        metadata: metadata.clone(),
    })
    .map_err(|e| NnError::Corrupt(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + header.len() + blob.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&blob);
    fs::write(path, out)?;
    Ok(())
}

/// Reads a tensor file, converting stored `f32`/`f64` data to `F`.
pub fn read_tensor_file<F: Real>(path: &Path) -> Result<TensorFile<F>, NnError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(NnError::Corrupt("bad magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| NnError::Corrupt("header length out of range".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| NnError::Corrupt(e.to_string()))?;
    let blob = &bytes[body..];
    let mut tensors = HashMap::new();
    for (name, e) in header.tensors {
        let [a, b] = e.offsets;
        if a > b || b > blob.len() {
            return Err(NnError::Corrupt(format!("{name}: byte range out of bounds")));
        }
        let raw = &blob[a..b];
        let n: usize = e.shape.iter().product();
        let data: Vec<F> = match e.dtype.as_str() {
            "f32" if raw.len() == 4 * n => raw
                .chunks_exact(4)
                .map(|c| F::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            "f64" if raw.len() == 8 * n => raw
                .chunks_exact(8)
                .map(|c| F::from_f64_lossy(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
            other => return Err(NnError::Corrupt(format!("{name}: bad dtype/size {other}"))),
        };
        let arr = ArrayD::from_shape_vec(IxDyn(&e.shape), data)
            .map_err(|err| NnError::Corrupt(err.to_string()))?;
        tensors.insert(name, arr);
    }
    Ok(TensorFile {
        tensors,
        metadata: header.metadata,
    })
}
