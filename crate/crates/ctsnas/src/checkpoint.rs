//! Tensor checkpointing: a JSON manifest listing names/shapes/offsets plus a
//! flat little-endian binary of the values. Writes are atomic
//! (write-temp-then-rename).

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamGroup, ParamStore};
use crate::scalar::Scalar;

pub const TENSOR_DTYPE: &str = "f64";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub group: String,
    pub shape: Vec<usize>,
    /// Offset in scalars (not bytes) into the flat payload.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorManifest {
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
}

/// Write a file atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("ckpt")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serialize named tensors into `<stem>.json` + `<stem>.bin`.
pub fn save_tensors<F: Scalar>(
    dir: &Path,
    stem: &str,
    items: &[(String, String, &ArrayD<F>)],
) -> Result<()> {
    let mut entries = Vec::with_capacity(items.len());
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, group, arr) in items {
        entries.push(TensorEntry {
            name: name.clone(),
            group: group.clone(),
            shape: arr.shape().to_vec(),
            offset,
            len: arr.len(),
        });
        for v in arr.iter() {
            payload.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
        offset += arr.len();
    }
    let manifest = TensorManifest {
        dtype: TENSOR_DTYPE.into(),
        tensors: entries,
    };
    write_atomic(
        &dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&manifest)
            .expect("manifest serializes")
            .as_bytes(),
    )?;
    write_atomic(&dir.join(format!("{stem}.bin")), &payload)?;
    Ok(())
}

/// Load tensors saved by [`save_tensors`], keyed by name.
pub fn load_tensors<F: Scalar>(
    dir: &Path,
    stem: &str,
) -> Result<HashMap<String, (String, ArrayD<F>)>> {
    let manifest_path = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
    let manifest: TensorManifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
    if manifest.dtype != TENSOR_DTYPE {
        return Err(Error::Checkpoint(format!(
            "unsupported tensor dtype {:?}",
            manifest.dtype
        )));
    }
    let mut bytes = Vec::new();
    fs::File::open(dir.join(format!("{stem}.bin")))
        .map_err(|e| Error::Checkpoint(format!("payload: {e}")))?
        .read_to_end(&mut bytes)?;
    let total: usize = manifest.tensors.iter().map(|t| t.len).sum();
    if bytes.len() != total * 8 {
        return Err(Error::Checkpoint(format!(
            "payload holds {} scalars, manifest expects {total}",
            bytes.len() / 8
        )));
    }
    let mut out = HashMap::new();
    for t in manifest.tensors {
        let mut data = Vec::with_capacity(t.len);
        for k in 0..t.len {
            let at = (t.offset + k) * 8;
            let mut b = [0u8; 8];
            b.copy_from_slice(&bytes[at..at + 8]);
            data.push(F::from_f64_lossy(f64::from_le_bytes(b)));
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&t.shape), data)
            .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", t.name)))?;
        out.insert(t.name, (t.group, arr));
    }
    Ok(out)
}

/// Save a whole parameter store (all groups).
pub fn save_store<F: Scalar>(dir: &Path, stem: &str, store: &ParamStore<F>) -> Result<()> {
    let items: Vec<(String, String, &ArrayD<F>)> = store
        .entries()
        .map(|(_, e)| (e.name.clone(), e.group.tag().to_string(), &e.value))
        .collect();
    save_tensors(dir, stem, &items)
}

/// Fill an existing store (same build recipe) from a saved checkpoint.
/// Every store entry must be present with a matching shape.
pub fn load_into_store<F: Scalar>(dir: &Path, stem: &str, store: &mut ParamStore<F>) -> Result<()> {
    let mut loaded = load_tensors::<F>(dir, stem)?;
    let ids: Vec<crate::params::ParamId> = store.entries().map(|(id, _)| id).collect();
    for id in ids {
        let name = store.entry(id).name.clone();
        let (_, arr) = loaded.remove(&name).ok_or_else(|| {
            Error::Checkpoint(format!("checkpoint missing tensor {name:?}"))
        })?;
        if arr.shape() != store.value(id).shape() {
            if name == "embed.w" {
                return Err(Error::Checkpoint(format!(
                    "feature dimension mismatch: embed.w is {:?} in the checkpoint, {:?} in the model",
                    arr.shape(),
                    store.value(id).shape()
                )));
            }
            return Err(Error::Checkpoint(format!(
                "tensor {name:?} has shape {:?} in the checkpoint, {:?} in the model",
                arr.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = arr;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{zeros, ParamGroup};
    use tempfile::tempdir;

    #[test]
    fn store_round_trip_is_bit_exact() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", ParamGroup::Theta, {
            let mut v = zeros(&[2, 3]);
            for (k, e) in v.iter_mut().enumerate() {
                *e = k as f64 * 0.37 - 1.0;
            }
            v
        });
        store.add("b", ParamGroup::Weight, zeros(&[4]));
        let dir = tempdir().unwrap();
        save_store(dir.path(), "params", &store).unwrap();

        let mut other = store.clone();
        *other.value_mut(a) = zeros(&[2, 3]);
        load_into_store(dir.path(), "params", &mut other).unwrap();
        assert_eq!(
            other.checksum(ParamGroup::Theta),
            store.checksum(ParamGroup::Theta)
        );
    }

    #[test]
    fn missing_tensor_is_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.add("a", ParamGroup::Theta, zeros(&[2]));
        let dir = tempdir().unwrap();
        save_store(dir.path(), "params", &store).unwrap();
        store.add("extra", ParamGroup::Weight, zeros(&[2]));
        let err = load_into_store(dir.path(), "params", &mut store).unwrap_err();
        assert!(err.to_string().contains("missing tensor"), "{err}");
    }

    #[test]
    fn embedding_shape_mismatch_names_feature_dimension() {
        let mut store = ParamStore::<f64>::new();
        store.add("embed.w", ParamGroup::Weight, zeros(&[2, 8]));
        let dir = tempdir().unwrap();
        save_store(dir.path(), "params", &store).unwrap();
        let mut wider = ParamStore::<f64>::new();
        wider.add("embed.w", ParamGroup::Weight, zeros(&[3, 8]));
        let err = load_into_store(dir.path(), "params", &mut wider).unwrap_err();
        assert!(
            err.to_string().contains("feature dimension mismatch"),
            "{err}"
        );
    }
}
