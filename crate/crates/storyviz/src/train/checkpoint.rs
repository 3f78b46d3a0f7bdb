//! Portable checkpoint format: a JSON manifest plus one binary file of raw
//! little-endian f32 arrays with a name -> (offset, shape) index. A path stem
//! `X` maps to `X.json` and `X.bin`.

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use autodiff::ParamStore;

use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayEntry {
    /// Offset into the data file, in f32 elements.
    pub offset: usize,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: String,
    pub step: u64,
    pub epoch: usize,
    pub seed: u64,
    /// Free-form snapshot: config echo, metric values, gate accuracies.
    pub metadata: BTreeMap<String, Value>,
    pub arrays: BTreeMap<String, ArrayEntry>,
    /// Total f32 element count of the data file.
    pub total_len: usize,
    pub data_file: String,
}

fn stem_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (
        stem.with_extension("json"),
        stem.with_extension("bin"),
    )
}

pub fn save_checkpoint(
    stem: &Path,
    params: &ParamStore,
    step: u64,
    epoch: usize,
    seed: u64,
    metadata: BTreeMap<String, Value>,
) -> Result<CheckpointManifest> {
    let (json_path, bin_path) = stem_paths(stem);
    if let Some(parent) = stem.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut arrays = BTreeMap::new();
    let mut data: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, value) in params.iter() {
        arrays.insert(
            name.to_string(),
            ArrayEntry {
                offset,
                shape: value.shape().to_vec(),
            },
        );
        for &x in value.iter() {
            data.extend_from_slice(&(x as f32).to_le_bytes());
        }
        offset += value.len();
    }
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION.to_string(),
        step,
        epoch,
        seed,
        metadata,
        arrays,
        total_len: offset,
        data_file: bin_path
            .file_name()
            .unwrap()
            .to_string_lossy()
            .into_owned(),
    };
    let mut f = fs::File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    f.write_all(&data).map_err(|e| Error::io(&bin_path, e))?;
    let body = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&json_path, body).map_err(|e| Error::io(&json_path, e))?;
    Ok(manifest)
}

pub fn load_checkpoint(stem: &Path) -> Result<(ParamStore, CheckpointManifest)> {
    let (json_path, bin_path) = stem_paths(stem);
    let body = fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&body)?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version `{}` unsupported (expected `{CHECKPOINT_VERSION}`)",
            manifest.version
        )));
    }
    let data = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    if data.len() != manifest.total_len * 4 {
        return Err(Error::Checkpoint(format!(
            "{}: {} bytes on disk, manifest expects {} (truncated or corrupt)",
            bin_path.display(),
            data.len(),
            manifest.total_len * 4
        )));
    }
    let mut store = ParamStore::new();
    for (name, entry) in &manifest.arrays {
        let count: usize = entry.shape.iter().product();
        if entry.offset + count > manifest.total_len {
            return Err(Error::Checkpoint(format!(
                "array `{name}` extends past the data file"
            )));
        }
        let mut values = Vec::with_capacity(count);
        for i in 0..count {
            let at = (entry.offset + i) * 4;
            let bytes: [u8; 4] = data[at..at + 4].try_into().unwrap();
            values.push(f32::from_le_bytes(bytes) as f64);
        }
        store.insert(
            name,
            ArrayD::from_shape_vec(IxDyn(&entry.shape), values)
                .map_err(|e| Error::Checkpoint(format!("array `{name}`: {e}")))?,
        );
    }
    Ok((store, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use autodiff::rng::seeded;
    use autodiff::normal_init;

    fn sample_store() -> ParamStore {
        let mut rng = seeded(7);
        let mut store = ParamStore::new();
        store.insert("a.w", normal_init(&mut rng, &[3, 4], 0.3));
        store.insert("b.k", normal_init(&mut rng, &[2, 3, 3, 3], 0.02));
        store.round_to_f32();
        store
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        let store = sample_store();
        save_checkpoint(&stem, &store, 42, 3, 9, BTreeMap::new()).unwrap();
        let (loaded, manifest) = load_checkpoint(&stem).unwrap();
        assert_eq!(manifest.step, 42);
        assert_eq!(manifest.epoch, 3);
        for (name, value) in store.iter() {
            let got = loaded.get(name).unwrap();
            assert_eq!(value, got, "array `{name}` changed across round trip");
        }
    }

    #[test]
    fn truncated_file_is_clean_error() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        save_checkpoint(&stem, &sample_store(), 1, 0, 0, BTreeMap::new()).unwrap();
        let bin = stem.with_extension("bin");
        let data = fs::read(&bin).unwrap();
        fs::write(&bin, &data[..data.len() - 5]).unwrap();
        match load_checkpoint(&stem) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("truncated")),
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        save_checkpoint(&stem, &sample_store(), 1, 0, 0, BTreeMap::new()).unwrap();
        let json = stem.with_extension("json");
        let body = fs::read_to_string(&json).unwrap().replace("\"version\": \"1\"", "\"version\": \"999\"");
        fs::write(&json, body).unwrap();
        match load_checkpoint(&stem) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version")),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn binary_layout_is_little_endian_f32_at_indexed_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        let store = sample_store();
        let manifest = save_checkpoint(&stem, &store, 0, 0, 0, BTreeMap::new()).unwrap();
        let data = fs::read(stem.with_extension("bin")).unwrap();
        let entry = &manifest.arrays["a.w"];
        let first = f32::from_le_bytes(data[entry.offset * 4..entry.offset * 4 + 4].try_into().unwrap());
        let want = store.get("a.w").unwrap().iter().next().copied().unwrap();
        assert_eq!(first as f64, want);
    }
}
