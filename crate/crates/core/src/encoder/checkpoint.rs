//! On-disk checkpoints: `ckpt_<step>/manifest.json` plus `params.bin`, and
//! optional auxiliary blobs (optimizer moments, EMA teacher) sharing the
//! parameter index.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EncoderConfig;
use crate::blob::{self, Dtype, IndexEntry};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::params::ParamStore;

pub const FORMAT: &str = "mlmjepa-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub step: u64,
    pub dtype: Dtype,
    pub encoder: EncoderConfig,
    /// Index into `params.bin` and every auxiliary blob.
    pub tensors: Vec<IndexEntry>,
    /// Auxiliary blob names; each is stored as `<name>.bin`.
    #[serde(default)]
    pub aux: Vec<String>,
    /// Run metadata (seeds, objective, training configuration).
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub encoder: EncoderConfig,
    pub params: ParamStore,
    pub aux: BTreeMap<String, ParamStore>,
    pub meta: serde_json::Value,
}

pub fn dir_for(run_dir: &Path, step: u64) -> PathBuf {
    run_dir.join(format!("ckpt_{step}"))
}

impl Checkpoint {
    /// Writes into a temporary sibling directory, then renames it to `dir`.
    pub fn save(&self, dir: &Path, dtype: Dtype) -> Result<()> {
        for (name, store) in &self.aux {
            if !store.same_layout(&self.params) {
                return Err(Error::InvalidArgument(format!("auxiliary blob `{name}` differs in layout")));
            }
            if name == "params" || name.contains(['/', '\\', '.']) {
                return Err(Error::InvalidArgument(format!("invalid auxiliary blob name `{name}`")));
            }
        }
        let (bytes, tensors) = blob::encode(&self.params, dtype);
        let manifest = Manifest {
            format: FORMAT.into(),
            step: self.step,
            dtype,
            encoder: self.encoder.clone(),
            tensors,
            aux: self.aux.keys().cloned().collect(),
            meta: self.meta.clone(),
        };
        let name = dir
            .file_name()
            .ok_or_else(|| Error::InvalidArgument(format!("{} has no directory name", dir.display())))?;
        let tmp = dir.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        std::fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        fsutil::write_atomic(&tmp.join("params.bin"), &bytes)?;
        for (name, store) in &self.aux {
            fsutil::write_atomic(&tmp.join(format!("{name}.bin")), &blob::encode(store, dtype).0)?;
        }
        fsutil::write_atomic(&tmp.join("manifest.json"), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        if dir.exists() {
            std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        manifest.encoder.validate()?;
        let read = |file: &str| {
            let p = dir.join(file);
            std::fs::read(&p).map_err(|e| Error::io(p, e))
        };
        let params = blob::decode(&read("params.bin")?, &manifest.tensors, manifest.dtype)?;
        let mut aux = BTreeMap::new();
        for name in &manifest.aux {
            let bytes = read(&format!("{name}.bin"))?;
            aux.insert(name.clone(), blob::decode(&bytes, &manifest.tensors, manifest.dtype)?);
        }
        Ok(Checkpoint {
            step: manifest.step,
            encoder: manifest.encoder,
            params,
            aux,
            meta: manifest.meta,
        })
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fsutil::read_to_string(&dir.join("manifest.json"))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != FORMAT {
        return Err(Error::Data(format!("{}: unknown checkpoint format `{}`", dir.display(), m.format)));
    }
    Ok(m)
}

/// Steps of every complete checkpoint under `run_dir`, ascending.
pub fn list_steps(run_dir: &Path) -> Result<Vec<u64>> {
    let Ok(entries) = std::fs::read_dir(run_dir) else {
        return Ok(Vec::new());
    };
    let mut steps = Vec::new();
    for e in entries {
        let e = e.map_err(|err| Error::io(run_dir, err))?;
        let name = e.file_name();
        let Some(step) = name.to_str().and_then(|n| n.strip_prefix("ckpt_")).and_then(|s| s.parse().ok()) else {
            continue;
        };
        if e.path().join("manifest.json").is_file() {
            steps.push(step);
        }
    }
    steps.sort_unstable();
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::init_params;

    #[test]
    fn save_load_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = EncoderConfig::esm2_style(1, 8, 2);
        let params = init_params(&cfg, 1).unwrap();
        let mut aux = BTreeMap::new();
        aux.insert("ema".to_string(), init_params(&cfg, 2).unwrap());
        let ck = Checkpoint {
            step: 7,
            encoder: cfg,
            params,
            aux,
            meta: serde_json::json!({"objective": {"kind": "mlm"}}),
        };
        let dir = dir_for(tmp.path(), 7);
        ck.save(&dir, Dtype::F64).unwrap();
        assert_eq!(Checkpoint::load(&dir).unwrap(), ck);
        // overwriting in place leaves no temporary directories behind
        ck.save(&dir, Dtype::F32).unwrap();
        assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 1);
        assert_eq!(list_steps(tmp.path()).unwrap(), vec![7]);
        let m = read_manifest(&dir).unwrap();
        assert_eq!(m.dtype, Dtype::F32);
        let size = std::fs::metadata(dir.join("params.bin")).unwrap().len();
        assert_eq!(size as usize, ck.params.n_scalars() * 4);
    }

    #[test]
    fn missing_checkpoint_is_io_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(Checkpoint::load(&tmp.path().join("nope")), Err(Error::Io { .. })));
    }
}
