use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::checkpoint::Checkpoint;
use crate::encoder::{encode, mean_pool, EncoderConfig, PoolOptions};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::params::ParamStore;
use crate::seqdata::{FastaRecord, TokenBatch};

pub const STORE_FORMAT: &str = "mlmjepa-embeddings/1";
const EMBED_BATCH: usize = 32;

/// Row-major `n × dim` matrix of pooled embeddings with aligned ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub ids: Vec<String>,
    pub dim: usize,
    pub data: Vec<f64>,
    pub l2_normalized: bool,
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f64>, l2_normalized: bool) -> Result<Self> {
        let m = EmbeddingMatrix {
            ids,
            dim,
            data,
            l2_normalized,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.data.len() != self.ids.len() * self.dim {
            return Err(Error::Data(format!(
                "{} values for {} ids of width {}",
                self.data.len(),
                self.ids.len(),
                self.dim
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite embedding in row {}", i / self.dim)));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = self.ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Data(format!("duplicate embedding id `{dup}`")));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows gathered in the order of `idx`.
    pub fn select(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().flat_map(|&i| self.row(i).iter().copied()).collect()
    }

    pub fn position_map(&self) -> std::collections::HashMap<&str, usize> {
        self.ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }
}

/// Mean-pooled final-layer embeddings, batched in input order.
pub fn embed(params: &ParamStore, cfg: &EncoderConfig, records: &[FastaRecord], l2: bool) -> Result<EmbeddingMatrix> {
    let tok = cfg.tokenizer();
    let opts = PoolOptions {
        include_special: false,
        l2_normalize: l2,
    };
    let mut data = Vec::with_capacity(records.len() * cfg.hidden_size);
    for chunk in records.chunks(EMBED_BATCH) {
        let seqs = chunk
            .iter()
            .map(|r| {
                tok.tokenize(&r.sequence)
                    .map_err(|e| Error::Data(format!("sequence `{}`: {e}", r.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let batch = TokenBatch::from_sequences(&seqs, cfg.max_len)?;
        let hidden = encode(params, cfg, &batch)?;
        data.extend(mean_pool(&hidden, &batch, cfg.hidden_size, opts)?);
    }
    let ids = records.iter().map(|r| r.id.clone()).collect();
    EmbeddingMatrix::new(ids, cfg.hidden_size, data, l2)
}

pub fn embed_checkpoint(ckpt_dir: &Path, records: &[FastaRecord], l2: bool) -> Result<(Checkpoint, EmbeddingMatrix)> {
    let ckpt = Checkpoint::load(ckpt_dir)?;
    let m = embed(&ckpt.params, &ckpt.encoder, records, l2)?;
    Ok((ckpt, m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub format: String,
    pub n: usize,
    pub dim: usize,
    pub l2_normalized: bool,
    pub ids: Vec<String>,
    /// Free-form provenance: source run and checkpoint step.
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Writes `manifest.json` and a little-endian f32 `embeddings.bin`.
pub fn save_store(dir: &Path, m: &EmbeddingMatrix, meta: serde_json::Value) -> Result<()> {
    m.validate()?;
    let bytes: Vec<u8> = m.data.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    fsutil::write_atomic(&dir.join("embeddings.bin"), &bytes)?;
    let manifest = StoreManifest {
        format: STORE_FORMAT.into(),
        n: m.n(),
        dim: m.dim,
        l2_normalized: m.l2_normalized,
        ids: m.ids.clone(),
        meta,
    };
    fsutil::write_atomic(&dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())
}

pub fn load_store(dir: &Path) -> Result<(StoreManifest, EmbeddingMatrix)> {
    let manifest: StoreManifest = serde_json::from_str(&fsutil::read_to_string(&dir.join("manifest.json"))?)?;
    if manifest.format != STORE_FORMAT {
        return Err(Error::Data(format!("unsupported embedding store format `{}`", manifest.format)));
    }
    let path = dir.join("embeddings.bin");
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != manifest.n * manifest.dim * 4 || manifest.ids.len() != manifest.n {
        return Err(Error::Data(format!(
            "{}: {} bytes for {} × {} embeddings",
            path.display(),
            bytes.len(),
            manifest.n,
            manifest.dim
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    let m = EmbeddingMatrix::new(manifest.ids.clone(), manifest.dim, data, manifest.l2_normalized)?;
    Ok((manifest, m))
}
