use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::ScaleGmnConfig;
use super::model::ScaleGmn;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

const MANIFEST: &str = "model.json";
const WEIGHTS: &str = "model.bin";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset in elements into the weights file.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest<C> {
    config: C,
    tensors: Vec<TensorEntry>,
}

/// Writes `config` and the tensors of `store` as `model.json` plus
/// `model.bin` (little-endian f32) into `dir`.
pub fn save_store<C: Serialize>(config: &C, store: &ParamStore, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut tensors = Vec::with_capacity(store.len());
    let mut bytes = Vec::with_capacity(4 * store.num_scalars());
    let mut offset = 0;
    for (name, t) in store.names().iter().zip(store.tensors()) {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.numel();
        for &v in t.data() {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = Manifest { config, tensors };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(dir.join(WEIGHTS), bytes)?;
    Ok(())
}

/// Reads the config written by [`save_store`].
pub fn load_store_config<C: DeserializeOwned>(dir: &Path) -> Result<C> {
    let manifest: Manifest<C> = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    Ok(manifest.config)
}

/// Overwrites `store` with the saved tensors. Names and shapes must match.
pub fn load_store_into(store: &mut ParamStore, dir: &Path) -> Result<()> {
    let manifest: Manifest<serde_json::Value> =
        serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
    let bytes = fs::read(dir.join(WEIGHTS))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Config("weights file length is not a multiple of 4".into()));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if store.len() != manifest.tensors.len() {
        return Err(Error::Config(format!(
            "checkpoint holds {} tensors, the model has {}",
            manifest.tensors.len(),
            store.len()
        )));
    }
    let names = store.names().to_vec();
    for (i, entry) in manifest.tensors.iter().enumerate() {
        let t = &mut store.tensors_mut()[i];
        if entry.name != names[i] || entry.shape != t.shape() {
            return Err(Error::Config(format!(
                "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                entry.name,
                entry.shape,
                names[i],
                t.shape()
            )));
        }
        let end = entry.offset + t.numel();
        let src = flat
            .get(entry.offset..end)
            .ok_or_else(|| Error::Config(format!("weights file too short for {}", entry.name)))?;
        *t = Tensor::new(entry.shape.clone(), src.to_vec())?;
    }
    Ok(())
}

pub fn save_checkpoint(model: &ScaleGmn, dir: &Path) -> Result<()> {
    save_store(&model.config, &model.store, dir)
}

/// Rebuilds the model from the stored config and overwrites its parameters.
pub fn load_checkpoint(dir: &Path) -> Result<ScaleGmn> {
    let config: ScaleGmnConfig = load_store_config(dir)?;
    // Initial values are overwritten, so any seed will do.
    let mut model = ScaleGmn::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
    load_store_into(&mut model.store, dir)?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmn::HeadKind;
    use crate::graph::Direction;

    #[test]
    fn round_trip_is_exact_at_f32() {
        let cfg = ScaleGmnConfig {
            direction: Direction::Bidirectional,
            head: HeadKind::EquivariantEdit,
            ..Default::default()
        };
        let model = ScaleGmn::new(cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_checkpoint(&model, d1.path()).unwrap();
        let loaded = load_checkpoint(d1.path()).unwrap();
        assert_eq!(loaded.config, model.config);
        for (a, b) in loaded.store.tensors().iter().zip(model.store.tensors()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x, *y as f32 as f64);
            }
        }
        save_checkpoint(&loaded, d2.path()).unwrap();
        let b1 = fs::read(d1.path().join(WEIGHTS)).unwrap();
        let b2 = fs::read(d2.path().join(WEIGHTS)).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn truncated_weights_are_rejected() {
        let model = ScaleGmn::new(ScaleGmnConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let d = tempfile::tempdir().unwrap();
        save_checkpoint(&model, d.path()).unwrap();
        let mut bytes = fs::read(d.path().join(WEIGHTS)).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(d.path().join(WEIGHTS), bytes).unwrap();
        assert!(load_checkpoint(d.path()).is_err());
    }
}
