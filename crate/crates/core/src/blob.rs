//! Flat little-endian tensor blobs with a name → (offset, shape) index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    #[default]
    F32,
    /// Lossless; required for bit-exact resume.
    F64,
}

impl Dtype {
    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    /// Byte offset into the blob.
    pub offset: u64,
    pub shape: Vec<usize>,
}

pub fn encode(store: &ParamStore, dtype: Dtype) -> (Vec<u8>, Vec<IndexEntry>) {
    let mut bytes = Vec::with_capacity(store.n_scalars() * dtype.width());
    let mut index = Vec::with_capacity(store.len());
    for (name, t) in store.iter() {
        index.push(IndexEntry {
            name: name.to_string(),
            offset: bytes.len() as u64,
            shape: t.shape.clone(),
        });
        match dtype {
            Dtype::F32 => t.data.iter().for_each(|&v| bytes.extend_from_slice(&(v as f32).to_le_bytes())),
            Dtype::F64 => t.data.iter().for_each(|&v| bytes.extend_from_slice(&v.to_le_bytes())),
        }
    }
    (bytes, index)
}

pub fn decode(bytes: &[u8], index: &[IndexEntry], dtype: Dtype) -> Result<ParamStore> {
    let w = dtype.width();
    let mut store = ParamStore::new();
    for e in index {
        let n: usize = e.shape.iter().product();
        let start = usize::try_from(e.offset).map_err(|_| Error::Data(format!("offset of `{}` overflows", e.name)))?;
        let end = start + n * w;
        let raw = bytes.get(start..end).ok_or_else(|| {
            Error::Data(format!(
                "tensor `{}` spans bytes {start}..{end} of a {}-byte blob",
                e.name,
                bytes.len()
            ))
        })?;
        let data: Vec<f64> = match dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect(),
        };
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("tensor `{}` holds non-finite values", e.name)));
        }
        store.insert(
            e.name.clone(),
            Tensor {
                shape: e.shape.clone(),
                data,
            },
        );
    }
    Ok(store)
}
