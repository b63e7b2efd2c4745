use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ModelConfig, ParamLayout};
use super::params::{ParameterSet, Tensor};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in elements (not bytes) into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub tensors: Vec<TensorEntry>,
    /// State of the training RNG when the checkpoint was taken, if any.
    pub rng_state: Option<Vec<u64>>,
    pub blob_bytes: usize,
    pub blob_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub params: ParameterSet<f32>,
    pub rng_state: Option<Vec<u64>>,
}

fn encode_blob(params: &ParameterSet<f32>) -> (Vec<u8>, Vec<TensorEntry>) {
    let mut blob = Vec::with_capacity(params.scalar_count() * 4);
    let mut entries = Vec::with_capacity(params.len());
    let mut offset = 0;
    for t in &params.tensors {
        entries.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset,
        });
        for x in &t.data {
            blob.extend_from_slice(&x.to_le_bytes());
        }
        offset += t.len();
    }
    (blob, entries)
}

impl Checkpoint {
    pub fn manifest(&self) -> Manifest {
        let (blob, tensors) = encode_blob(&self.params);
        Manifest {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            tensors,
            rng_state: self.rng_state.clone(),
            blob_bytes: blob.len(),
            blob_sha256: hex::encode(Sha256::digest(&blob)),
        }
    }
}

/// Writes `manifest.json` and `weights.bin` into `dir`, creating it if needed.
pub fn save_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    let layout = ParamLayout::new(&ckpt.config);
    let expected = ParameterSet::<f32>::zeros_for(&layout);
    expected.check_same_layout(&ckpt.params)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (blob, tensors) = encode_blob(&ckpt.params);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config: ckpt.config.clone(),
        vocab_hash: ckpt.vocab_hash.clone(),
        tensors,
        rng_state: ckpt.rng_state.clone(),
        blob_bytes: blob.len(),
        blob_sha256: hex::encode(Sha256::digest(&blob)),
    };
    let weights = dir.join(WEIGHTS_FILE);
    fs::write(&weights, &blob).map_err(|e| Error::io(&weights, e))?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json("checkpoint manifest", e))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::json("checkpoint manifest", e))?;
    let found = value.get("format_version").and_then(|v| v.as_u64());
    if found != Some(FORMAT_VERSION as u64) {
        return Err(Error::VersionMismatch {
            found: found.map_or(0, |v| v.min(u32::MAX as u64) as u32),
            expected: FORMAT_VERSION,
        });
    }
    let manifest: Manifest =
        serde_json::from_value(value).map_err(|e| Error::json("checkpoint manifest", e))?;
    manifest.config.validate()?;

    let weights = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&weights).map_err(|e| Error::io(&weights, e))?;
    if blob.len() != manifest.blob_bytes {
        return Err(Error::CorruptCheckpoint(format!(
            "{} is {} bytes, manifest says {}",
            weights.display(),
            blob.len(),
            manifest.blob_bytes
        )));
    }
    if hex::encode(Sha256::digest(&blob)) != manifest.blob_sha256 {
        return Err(Error::CorruptCheckpoint(format!("{} hash mismatch", weights.display())));
    }

    let layout = ParamLayout::new(&manifest.config);
    if manifest.tensors.len() != layout.entries.len() {
        return Err(Error::ShapeMismatch {
            name: "manifest".into(),
            detail: format!(
                "{} tensors listed, config implies {}",
                manifest.tensors.len(),
                layout.entries.len()
            ),
        });
    }
    let mut tensors = Vec::with_capacity(layout.entries.len());
    let mut expected_offset = 0;
    for (entry, (name, shape)) in manifest.tensors.iter().zip(&layout.entries) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::ShapeMismatch {
                name: entry.name.clone(),
                detail: format!("manifest has {} {:?}, config implies {name} {shape:?}", entry.name, entry.shape),
            });
        }
        if entry.offset != expected_offset {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor {} at offset {}, expected {expected_offset}",
                entry.name, entry.offset
            )));
        }
        let n: usize = shape.iter().product();
        let bytes = blob
            .get(expected_offset * 4..(expected_offset + n) * 4)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("blob too short for tensor {name}")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor {
            name: name.clone(),
            shape: shape.clone(),
            data,
        });
        expected_offset += n;
    }
    if expected_offset * 4 != blob.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "blob holds {} bytes, tensors need {}",
            blob.len(),
            expected_offset * 4
        )));
    }
    Ok(Checkpoint {
        config: manifest.config,
        vocab_hash: manifest.vocab_hash,
        params: ParameterSet { tensors },
        rng_state: manifest.rng_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{count_parameters, init_parameters};

    fn small() -> ModelConfig {
        ModelConfig {
            hidden: 8,
            intermediate: 16,
            vocab_size: 30,
            max_positions: 20,
            ..ModelConfig::default()
        }
    }

    fn ckpt() -> Checkpoint {
        Checkpoint {
            config: small(),
            vocab_hash: "abc".into(),
            params: init_parameters(&small()).unwrap(),
            rng_state: Some(vec![1, 2, 3, 4]),
        }
    }

    #[test]
    fn round_trip_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let c = ckpt();
        save_checkpoint(&c, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back, c);
        let bytes = fs::metadata(dir.path().join(WEIGHTS_FILE)).unwrap().len();
        assert_eq!(bytes as usize / 4, count_parameters(&small()) as usize);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&ckpt(), dir.path()).unwrap();
        let w = dir.path().join(WEIGHTS_FILE);
        let blob = fs::read(&w).unwrap();

        fs::write(&w, &blob[..blob.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::CorruptCheckpoint(_))));

        let mut flipped = blob.clone();
        flipped[10] ^= 1;
        fs::write(&w, &flipped).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::CorruptCheckpoint(_))));
        fs::write(&w, &blob).unwrap();

        let m = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&m).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["tensors"][3]["shape"] = serde_json::json!([7]);
        fs::write(&m, v.to_string()).unwrap();
        match load_checkpoint(dir.path()) {
            Err(Error::ShapeMismatch { name, .. }) => assert_eq!(name, "embeddings.norm.bias"),
            other => panic!("{other:?}"),
        }

        v["format_version"] = serde_json::json!(99);
        fs::write(&m, v.to_string()).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::VersionMismatch { .. })));
    }
}
