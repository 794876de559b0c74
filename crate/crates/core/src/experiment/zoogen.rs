//! Synthetic zoos: SIRENs fitted to two shape families, and small CNNs
//! labelled with their held-out accuracy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::zoo::{siren_init, FfnnParams, train_inr, train_toy_cnn, CnnTrainConfig, InrTrainConfig, Signal, ZooEntry, ZooNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ZooKind {
    #[serde(rename = "inr-2class")]
    Inr2Class,
    #[serde(rename = "cnn-accuracy")]
    CnnAccuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InrZooConfig {
    pub layer_dims: Vec<usize>,
    pub omega0: f64,
    /// Side of the square signal grid.
    pub size: usize,
    pub steps: usize,
    pub lr: f64,
    pub target_mse: f64,
    /// Fits ending above this error count as failed.
    pub max_mse: f64,
    /// Start every fit from one initialization drawn from the zoo seed.
    pub shared_init: bool,
    /// Shape centers are drawn from `[−j, j]²`.
    pub center_jitter: f64,
    /// Disk radius / square half-side range.
    pub size_range: (f64, f64),
}

impl Default for InrZooConfig {
    fn default() -> Self {
        InrZooConfig {
            layer_dims: vec![2, 8, 8, 1],
            omega0: 10.0,
            size: 16,
            steps: 800,
            lr: 5e-3,
            target_mse: 2e-3,
            max_mse: 2e-2,
            shared_init: true,
            center_jitter: 0.0,
            size_range: (0.35, 0.6),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CnnZooConfig {
    pub channels: Vec<usize>,
    pub kernel: (usize, usize),
    /// Inclusive ranges the per-network hyperparameters are drawn from.
    pub steps: (usize, usize),
    pub lr: (f64, f64),
    pub init_scale: (f64, f64),
    pub n_train: usize,
    pub n_test: usize,
    pub noise: f64,
    /// Training stops early at a training accuracy drawn from this range.
    pub stop_at_accuracy: Option<(f64, f64)>,
    /// Initializations are drawn from this many fixed seeds (0: a fresh
    /// one per network).
    pub init_pool: usize,
}

impl Default for CnnZooConfig {
    fn default() -> Self {
        CnnZooConfig {
            channels: vec![1, 4, 4],
            kernel: (3, 3),
            steps: (200, 200),
            lr: (0.002, 0.005),
            init_scale: (1.0, 1.0),
            n_train: 96,
            n_test: 400,
            noise: 0.6,
            stop_at_accuracy: Some((0.5, 0.9)),
            init_pool: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZooGenConfig {
    pub kind: ZooKind,
    pub count: usize,
    pub inr: InrZooConfig,
    pub cnn: CnnZooConfig,
}

impl Default for ZooGenConfig {
    fn default() -> Self {
        ZooGenConfig {
            kind: ZooKind::Inr2Class,
            count: 200,
            inr: InrZooConfig::default(),
            cnn: CnnZooConfig::default(),
        }
    }
}

/// A network that could not be produced after one retry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedFit {
    pub id: String,
    pub reason: String,
}

pub type ZooItem = (ZooEntry, ZooNet, Option<Signal>);

#[derive(Clone, Debug)]
pub struct GeneratedZoo {
    pub items: Vec<ZooItem>,
    pub skipped: Vec<SkippedFit>,
}

/// Smooth indicator of a disk (`label` 0) or an axis-aligned square
/// (`label` 1) with random center and size.
pub fn shape_signal<R: Rng + ?Sized>(label: usize, cfg: &InrZooConfig, rng: &mut R) -> Signal {
    let j = cfg.center_jitter;
    let (cx, cy) = if j > 0.0 {
        (rng.random_range(-j..=j), rng.random_range(-j..=j))
    } else {
        (0.0, 0.0)
    };
    let r = rng.random_range(cfg.size_range.0..=cfg.size_range.1);
    let size = cfg.size;
    let edge = 0.08;
    Signal::from_fn(size, size, move |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        let d = if label == 0 {
            (dx * dx + dy * dy).sqrt()
        } else {
            dx.abs().max(dy.abs())
        };
        1.0 / (1.0 + ((d - r) / edge).exp())
    })
}

/// Grayscale dilation with a 3×3 window (the editing target).
pub fn dilate(signal: &Signal) -> Signal {
    let (h, w) = (signal.height, signal.width);
    let v = &signal.values;
    let values = crate::tensor::Tensor::from_fn(h * w, 1, |p, _| {
        let (r, c) = ((p / w) as isize, (p % w) as isize);
        let mut m = f64::NEG_INFINITY;
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (rr, cc) = (r + dr, c + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    m = m.max(v.get(rr as usize * w + cc as usize, 0));
                }
            }
        }
        m
    });
    Signal {
        height: h,
        width: w,
        coords: signal.coords.clone(),
        values,
    }
}

fn fit_inr(cfg: &InrZooConfig, label: usize, seed: u64, shared: Option<&FfnnParams>) -> Result<(ZooNet, Signal)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signal = shape_signal(label, cfg, &mut rng);
    let init = match shared {
        Some(net) => net.clone(),
        None => siren_init(&cfg.layer_dims, cfg.omega0, &mut rng)?,
    };
    let fit = train_inr(
        &signal,
        init,
        &InrTrainConfig {
            steps: cfg.steps,
            lr: cfg.lr,
            target_mse: Some(cfg.target_mse),
        },
    )?;
    if fit.mse > cfg.max_mse {
        return Err(crate::Error::Diverged {
            step: fit.steps,
            detail: format!("reconstruction error {:.3e} above {:.3e}", fit.mse, cfg.max_mse),
        });
    }
    Ok((ZooNet::Ffnn(fit.net), signal))
}

fn fit_cnn(cfg: &CnnZooConfig, seed: u64, pool_base: u64) -> Result<(ZooNet, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = CnnTrainConfig {
        channels: cfg.channels.clone(),
        kernel: cfg.kernel,
        steps: rng.random_range(cfg.steps.0..=cfg.steps.1),
        lr: (rng.random_range(cfg.lr.0.ln()..=cfg.lr.1.ln())).exp(),
        init_scale: rng.random_range(cfg.init_scale.0..=cfg.init_scale.1),
        n_train: cfg.n_train,
        n_test: cfg.n_test,
        noise: cfg.noise,
        stop_at_accuracy: cfg.stop_at_accuracy.map(|(a, b)| rng.random_range(a..=b)),
    };
    // one shared task: networks differ in how well they learned it
    let init_seed = if cfg.init_pool > 0 {
        pool_base.wrapping_add(rng.random_range(0..cfg.init_pool as u64))
    } else {
        rng.random()
    };
    let fit = train_toy_cnn(0, init_seed, &train)?;
    if fit.diverged {
        return Err(crate::Error::Diverged {
            step: train.steps,
            detail: "toy CNN training diverged".into(),
        });
    }
    Ok((ZooNet::Cnn(fit.net), fit.accuracy))
}

/// Fixed per-zoo draws shared by all networks.
struct Common {
    inr_init: Option<FfnnParams>,
    cnn_pool_base: u64,
}

fn make_item(cfg: &ZooGenConfig, index: usize, seed: u64, common: &Common) -> Result<ZooItem> {
    match cfg.kind {
        ZooKind::Inr2Class => {
            let label = index % 2;
            let (net, signal) = fit_inr(&cfg.inr, label, seed, common.inr_init.as_ref())?;
            let entry = net.entry(&format!("inr-{index:05}"), label as f64, true);
            Ok((entry, net, Some(signal)))
        }
        ZooKind::CnnAccuracy => {
            let (net, acc) = fit_cnn(&cfg.cnn, seed, common.cnn_pool_base)?;
            let entry = net.entry(&format!("cnn-{index:05}"), acc, false);
            Ok((entry, net, None))
        }
    }
}

/// Builds the zoo for `seed`. Each network has its own derived seed, so
/// the result does not depend on how work is scheduled.
pub fn generate_zoo(cfg: &ZooGenConfig, seed: u64) -> Result<GeneratedZoo> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let common = Common {
        inr_init: if cfg.kind == ZooKind::Inr2Class && cfg.inr.shared_init {
            Some(siren_init(&cfg.inr.layer_dims, cfg.inr.omega0, &mut master)?)
        } else {
            None
        },
        cnn_pool_base: master.random(),
    };
    let seeds: Vec<(u64, u64)> = (0..cfg.count).map(|_| (master.random(), master.random())).collect();
    let results: Vec<std::result::Result<ZooItem, SkippedFit>> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &(first, retry))| {
            make_item(cfg, i, first, &common)
                .or_else(|_| make_item(cfg, i, retry, &common))
                .map_err(|e| SkippedFit {
                    id: format!("{}-{i:05}", if cfg.kind == ZooKind::Inr2Class { "inr" } else { "cnn" }),
                    reason: e.to_string(),
                })
        })
        .collect();
    let mut items = Vec::with_capacity(results.len());
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(item) => items.push(item),
            Err(s) => skipped.push(s),
        }
    }
    Ok(GeneratedZoo { items, skipped })
}
