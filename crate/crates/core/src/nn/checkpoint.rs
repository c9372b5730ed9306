//! Parameter checkpoints: a little-endian `f64` blob at `path` plus a JSON
//! manifest at `path.json` listing names and shapes in blob order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optim::ParamStore;
use super::NnError;

const FORMAT: &str = "gridmind-params-v1";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub format: String,
    pub params: Vec<ParamEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save(store: &ParamStore, path: &Path, meta: serde_json::Value) -> Result<(), NnError> {
    let mut blob = Vec::with_capacity(store.num_scalars() * 8);
    let mut params = Vec::with_capacity(store.len());
    for id in store.ids() {
        let t = store.get(id);
        params.push(ParamEntry {
            name: store.name(id).to_string(),
            shape: t.shape().to_vec(),
        });
        for x in t.data() {
            blob.extend_from_slice(&x.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        params,
        meta,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, blob)?;
    fs::write(manifest_path(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest, NnError> {
    let text = fs::read_to_string(manifest_path(path))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != FORMAT {
        return Err(NnError::Checkpoint(format!("unknown format {:?}", m.format)));
    }
    Ok(m)
}

/// Loads values into a store whose parameters were built with the same names and shapes.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<Manifest, NnError> {
    let manifest = read_manifest(path)?;
    let blob = fs::read(path)?;
    if manifest.params.len() != store.len() {
        return Err(NnError::Checkpoint(format!(
            "checkpoint has {} tensors, model has {}",
            manifest.params.len(),
            store.len()
        )));
    }
    let expected: usize = manifest.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if blob.len() != expected * 8 {
        return Err(NnError::Checkpoint(format!(
            "blob has {} bytes, manifest needs {}",
            blob.len(),
            expected * 8
        )));
    }
    let mut offset = 0;
    for (id, entry) in store.ids().collect::<Vec<_>>().into_iter().zip(&manifest.params) {
        if store.name(id) != entry.name || store.get(id).shape() != entry.shape.as_slice() {
            return Err(NnError::Checkpoint(format!(
                "tensor {} {:?} does not match model tensor {} {:?}",
                entry.name,
                entry.shape,
                store.name(id),
                store.get(id).shape()
            )));
        }
        let dst = store.get_mut(id).data_mut();
        for x in dst.iter_mut() {
            let bytes: [u8; 8] = blob[offset..offset + 8].try_into().unwrap();
            *x = f64::from_le_bytes(bytes);
            offset += 8;
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let mut a = ParamStore::new();
        a.add("x", Tensor::new(vec![2], vec![0.1, -3.5e-300]).unwrap());
        a.add("y", Tensor::new(vec![1, 3], vec![f64::MAX, 0.0, -0.0]).unwrap());
        save(&a, &path, serde_json::json!({"k": 1})).unwrap();
        let mut b = ParamStore::new();
        b.add("x", Tensor::zeros(&[2]));
        b.add("y", Tensor::zeros(&[1, 3]));
        let m = load_into(&mut b, &path).unwrap();
        assert_eq!(m.meta["k"], 1);
        assert_eq!(a.flat_values(), b.flat_values());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let mut a = ParamStore::new();
        a.add("x", Tensor::zeros(&[2]));
        save(&a, &path, serde_json::Value::Null).unwrap();
        let mut b = ParamStore::new();
        b.add("x", Tensor::zeros(&[3]));
        assert!(load_into(&mut b, &path).is_err());
    }
}
