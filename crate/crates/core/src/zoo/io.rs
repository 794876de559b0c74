use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::activation::{ActivationDescriptor, ActivationKind};
use super::cnn::CnnParams;
use super::ffnn::FfnnParams;
use super::siren::Signal;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetKind {
    Ffnn,
    Cnn,
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZooEntry {
    pub id: String,
    pub kind: NetKind,
    pub layer_dims: Vec<usize>,
    pub activations: Vec<String>,
    pub omega0: f64,
    pub label: f64,
    /// Relative to the zoo directory.
    pub weights_path: String,
    /// CNN only: number of convolution layers, kernel and maximum extents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_max: Option<[usize; 2]>,
    /// INR only: the fitted signal, relative to the zoo directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_path: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ZooManifest {
    pub entries: Vec<ZooEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ZooNet {
    Ffnn(FfnnParams),
    Cnn(CnnParams),
}

impl ZooNet {
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            ZooNet::Ffnn(n) => n.to_flat(),
            ZooNet::Cnn(n) => n.to_flat(),
        }
    }

    pub fn as_ffnn(&self) -> Option<&FfnnParams> {
        match self {
            ZooNet::Ffnn(n) => Some(n),
            ZooNet::Cnn(_) => None,
        }
    }

    pub fn as_cnn(&self) -> Option<&CnnParams> {
        match self {
            ZooNet::Cnn(n) => Some(n),
            ZooNet::Ffnn(_) => None,
        }
    }

    /// Manifest line for this network with file paths derived from `id`.
    pub fn entry(&self, id: &str, label: f64, with_signal: bool) -> ZooEntry {
        let (kind, dims, acts, conv_layers, kernel, kernel_max) = match self {
            ZooNet::Ffnn(n) => (NetKind::Ffnn, n.layer_dims(), n.activations(), None, None, None),
            ZooNet::Cnn(n) => {
                let (kh, kw) = n.convs[0].kernel_size();
                (
                    NetKind::Cnn,
                    n.layer_dims(),
                    n.activations(),
                    Some(n.convs.len()),
                    Some([kh, kw]),
                    Some([n.kernel_max.0, n.kernel_max.1]),
                )
            }
        };
        let omega0 = acts
            .iter()
            .find(|a| a.kind == ActivationKind::Sine)
            .map_or(1.0, |a| a.omega0);
        ZooEntry {
            id: id.to_string(),
            kind,
            layer_dims: dims,
            activations: acts.iter().map(|a| a.name().to_string()).collect(),
            omega0,
            label,
            weights_path: format!("weights/{id}.bin"),
            conv_layers,
            kernel,
            kernel_max,
            signal_path: with_signal.then(|| format!("signals/{id}.json")),
        }
    }
}

/// Writes `manifest.json`, one weight file per network and the optional
/// signals. Weights are stored as little-endian `f32`.
pub fn save_zoo(dir: &Path, items: &[(ZooEntry, ZooNet, Option<Signal>)]) -> Result<()> {
    fs::create_dir_all(dir.join("weights"))?;
    let mut manifest = ZooManifest::default();
    for (entry, net, signal) in items {
        let bytes: Vec<u8> = net
            .to_flat()
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect();
        fs::write(dir.join(&entry.weights_path), bytes)?;
        if let (Some(path), Some(sig)) = (&entry.signal_path, signal) {
            fs::create_dir_all(dir.join("signals"))?;
            fs::write(dir.join(path), serde_json::to_vec(sig)?)?;
        }
        manifest.entries.push(entry.clone());
    }
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_zoo(dir: &Path) -> Result<Vec<(ZooEntry, ZooNet, Option<Signal>)>> {
    let manifest: ZooManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    manifest
        .entries
        .into_iter()
        .map(|entry| {
            let bytes = fs::read(dir.join(&entry.weights_path))?;
            if bytes.len() % 4 != 0 {
                return Err(Error::InvalidNetwork(format!(
                    "{}: weight file is not a whole number of f32 values",
                    entry.id
                )));
            }
            let flat: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            let acts = entry
                .activations
                .iter()
                .map(|a| ActivationDescriptor::from_name(a, entry.omega0))
                .collect::<Result<Vec<_>>>()?;
            let net = match entry.kind {
                NetKind::Ffnn => ZooNet::Ffnn(FfnnParams::from_flat(&entry.layer_dims, &acts, &flat)?),
                NetKind::Cnn => {
                    let k = entry.kernel.unwrap_or([3, 3]);
                    let km = entry.kernel_max.unwrap_or(k);
                    ZooNet::Cnn(CnnParams::from_flat(
                        &entry.layer_dims,
                        &acts,
                        entry.conv_layers.unwrap_or(acts.len() - 1),
                        (k[0], k[1]),
                        (km[0], km[1]),
                        &flat,
                    )?)
                }
            };
            let signal = match &entry.signal_path {
                Some(p) => Some(serde_json::from_slice(&fs::read(dir.join(p))?)?),
                None => None,
            };
            Ok((entry, net, signal))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::zoo::siren_init;

    #[test]
    fn round_trip_at_single_precision() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = siren_init(&[2, 4, 1], 30.0, &mut rng).unwrap();
        let sig = Signal::from_fn(2, 2, |x, y| x * y);
        let z = ZooNet::Ffnn(net.clone());
        let e = z.entry("n0", 1.0, true);
        let cnn = CnnParams::random(
            &[1, 2],
            2,
            (3, 3),
            ActivationDescriptor::relu(),
            1.0,
            &mut rng,
        )
        .unwrap();
        let zc = ZooNet::Cnn(cnn.clone());
        let ec = zc.entry("c0", 0.75, false);
        save_zoo(dir.path(), &[(e.clone(), z, Some(sig.clone())), (ec.clone(), zc, None)]).unwrap();
        let back = load_zoo(dir.path()).unwrap();
        assert_eq!(back[0].0, e);
        assert_eq!(back[1].0, ec);
        assert_eq!(back[0].2.as_ref(), Some(&sig));
        let flat = back[0].1.to_flat();
        for (a, b) in flat.iter().zip(net.to_flat()) {
            assert_eq!(*a, b as f32 as f64);
        }
        assert_eq!(back[1].1.to_flat().len(), cnn.to_flat().len());
    }

    #[test]
    fn empty_zoo() {
        let dir = tempfile::tempdir().unwrap();
        save_zoo(dir.path(), &[]).unwrap();
        assert!(load_zoo(dir.path()).unwrap().is_empty());
    }
}
