use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{batches, split_indices, Splits};
use super::metanet::{MetaNet, ModelSpec};
use super::zoogen::{dilate, ZooItem};
use crate::baselines::FeatureKind;
use crate::error::{Error, Result};
use crate::gmn::{HeadKind, ScaleGmnConfig};
use crate::harness::kendall_tau;
use crate::tensor::{AdamState, Binder, Tensor, Var};
use crate::zoo::{apply_orbit, CanonMode, apply_orbit_cnn, FfnnParams, OrbitElement, ScaleSampler, Signal, ZooNet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    /// Shape class of the signal an INR encodes.
    InrClassify,
    /// Held-out accuracy of a CNN.
    CnnGeneralization,
    /// Edit an INR so that it encodes the dilated signal.
    InrEdit,
}

impl Task {
    pub fn metric_name(self) -> &'static str {
        match self {
            Task::InrClassify => "accuracy",
            Task::CnnGeneralization => "kendall_tau",
            Task::InrEdit => "functional_mse",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self != Task::InrEdit
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Scalegmn,
    FlatMlp,
    StatsMlp,
    MlpEditor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub task: Task,
    pub model: ModelKind,
    /// Layer widths, edge width, head and output size are filled in from
    /// the zoo and the task.
    pub gmn: ScaleGmnConfig,
    pub baseline_hidden: Vec<usize>,
    pub editor_hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Random symmetry applied to every training network each epoch.
    pub augment: ScaleSampler,
    pub augment_permute: bool,
    /// Global gradient norm cap; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::InrClassify,
            model: ModelKind::Scalegmn,
            gmn: ScaleGmnConfig::default(),
            baseline_hidden: vec![64, 64],
            editor_hidden: 64,
            epochs: 30,
            batch_size: 16,
            lr: 3e-3,
            seed: 0,
            augment: ScaleSampler::None,
            augment_permute: false,
            grad_clip: 1.0,
        }
    }
}

impl ExperimentConfig {
    /// The concrete model for networks shaped like `sample`.
    pub fn resolve(&self, sample: &ZooNet) -> Result<ModelSpec> {
        let out_dim = match self.task {
            Task::InrClassify => 2,
            Task::CnnGeneralization => 1,
            Task::InrEdit => 0,
        };
        let is_edit = self.task == Task::InrEdit;
        if is_edit && sample.as_ffnn().is_none() {
            return Err(Error::Config("editing needs a zoo of dense networks".into()));
        }
        let num_params = sample.to_flat().len();
        Ok(match self.model {
            ModelKind::Scalegmn => {
                let (dims, edge_in) = match sample {
                    ZooNet::Ffnn(n) => (n.layer_dims(), 1),
                    ZooNet::Cnn(n) => (n.layer_dims(), n.kernel_max.0 * n.kernel_max.1),
                };
                let group = match sample {
                    ZooNet::Ffnn(n) => n.layers[0].activation.group(),
                    ZooNet::Cnn(n) => n.activations()[0].group(),
                };
                let mut g = ScaleGmnConfig {
                    layer_dims: dims,
                    group,
                    edge_in,
                    head: if is_edit { HeadKind::EquivariantEdit } else { HeadKind::Invariant },
                    ..self.gmn.clone()
                };
                if !is_edit {
                    g.out_dim = out_dim;
                }
                if g.validate().is_err() {
                    g.canon = CanonMode::for_group(group);
                }
                g.validate()?;
                ModelSpec::Scalegmn(g)
            }
            ModelKind::FlatMlp | ModelKind::StatsMlp if !is_edit => {
                let features = if self.model == ModelKind::FlatMlp {
                    FeatureKind::Flat
                } else {
                    FeatureKind::Stats
                };
                ModelSpec::FeatureMlp {
                    features,
                    in_dim: features.features(sample).len(),
                    hidden: self.baseline_hidden.clone(),
                    out_dim,
                }
            }
            ModelKind::MlpEditor if is_edit => ModelSpec::MlpEditor {
                num_params,
                hidden: self.editor_hidden,
                gamma: self.gmn.gamma_init,
            },
            m => {
                return Err(Error::Config(format!("model {m:?} does not fit task {:?}", self.task)));
            }
        })
    }
}

/// One evaluation of a metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub task: Task,
    pub metric: String,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val: f64,
    pub test: f64,
    /// Set when training stopped on a non-finite loss or update.
    pub diverged: Option<String>,
    pub splits: Splits,
}

pub struct TrainOutcome {
    pub model: MetaNet,
    pub summary: TrainSummary,
    /// Validation metric per epoch.
    pub val_history: Vec<MetricRow>,
    /// Mean training loss per epoch.
    pub train_history: Vec<MetricRow>,
}

/// Applies a symmetry of the right shape to a zoo network.
pub fn transform_net(net: &ZooNet, sampler: ScaleSampler, permute: bool, rng: &mut ChaCha8Rng) -> Result<ZooNet> {
    Ok(match net {
        ZooNet::Ffnn(n) => {
            let g = OrbitElement::sample(sampler, permute, &n.layer_dims(), rng)?;
            ZooNet::Ffnn(apply_orbit(n, &g)?)
        }
        ZooNet::Cnn(n) => {
            let g = OrbitElement::sample(sampler, permute, &n.layer_dims(), rng)?;
            ZooNet::Cnn(apply_orbit_cnn(n, &g)?)
        }
    })
}

/// A copy of the zoo with every network moved to a random point of its
/// orbit (permutations plus `sampler` scalings).
pub fn orbit_copy(items: &[ZooItem], sampler: ScaleSampler, seed: u64) -> Result<Vec<ZooItem>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items
        .iter()
        .map(|(e, n, s)| Ok((e.clone(), transform_net(n, sampler, true, &mut rng)?, s.clone())))
        .collect()
}

fn ffnn(net: &ZooNet) -> Result<&FfnnParams> {
    net.as_ffnn()
        .ok_or_else(|| Error::Config("editing needs dense networks".into()))
}

fn edit_target(item: &ZooItem) -> Result<Signal> {
    item.2
        .as_ref()
        .map(dilate)
        .ok_or_else(|| Error::Config(format!("network {} has no stored signal", item.0.id)))
}

/// Loss of `model` on a batch, on `b`'s tape.
fn batch_loss(model: &MetaNet, task: Task, b: &mut Binder, nets: &[&ZooNet], items: &[&ZooItem]) -> Result<Var> {
    match task {
        Task::InrClassify => {
            let logits = model.predict(b, nets)?;
            let labels: Vec<usize> = items.iter().map(|it| it.0.label.round() as usize).collect();
            b.tape.softmax_cross_entropy(logits, Rc::new(labels))
        }
        Task::CnnGeneralization => {
            let y = model.predict(b, nets)?;
            let t = Tensor::column(items.iter().map(|it| it.0.label).collect());
            let t = b.tape.constant(t);
            let d = b.tape.sub(y, t)?;
            let sq = b.tape.square(d);
            Ok(b.tape.mean(sq))
        }
        Task::InrEdit => {
            let dense = nets.iter().map(|n| ffnn(n)).collect::<Result<Vec<_>>>()?;
            let edited = model.edit(b, &dense)?;
            let mut total: Option<Var> = None;
            for ((vars, net), item) in edited.iter().zip(&dense).zip(items) {
                let target = edit_target(item)?;
                let x = b.tape.constant(target.coords.clone());
                let y = net.forward_tape(&mut b.tape, vars, x)?;
                let t = b.tape.constant(target.values.clone());
                let d = b.tape.sub(y, t)?;
                let sq = b.tape.square(d);
                let m = b.tape.mean(sq);
                total = Some(match total {
                    Some(acc) => b.tape.add(acc, m)?,
                    None => m,
                });
            }
            let total = total.ok_or_else(|| Error::Config("empty batch".into()))?;
            Ok(b.tape.scale(total, 1.0 / nets.len() as f64))
        }
    }
}

/// Raw model outputs `[n, out]` for the selected items (inference).
pub fn predict(model: &MetaNet, items: &[ZooItem], idx: &[usize], batch_size: usize) -> Result<Tensor> {
    let mut rows = Vec::new();
    let mut width = 0;
    for chunk in idx.chunks(batch_size.max(1)) {
        let nets: Vec<&ZooNet> = chunk.iter().map(|&i| &items[i].1).collect();
        let mut b = Binder::new(model.store(), false);
        let y = model.predict(&mut b, &nets)?;
        let y = b.tape.value(y);
        width = y.cols();
        rows.extend_from_slice(y.data());
    }
    Tensor::matrix(idx.len(), width, rows)
}

/// The task metric of `model` on the selected items.
pub fn evaluate(model: &MetaNet, task: Task, items: &[ZooItem], idx: &[usize], batch_size: usize) -> Result<f64> {
    match task {
        Task::InrClassify => {
            let y = predict(model, items, idx, batch_size)?;
            let correct = idx
                .iter()
                .enumerate()
                .filter(|&(r, &i)| {
                    let row = y.row_slice(r);
                    let pred = (0..row.len()).fold(0, |best, c| if row[c] > row[best] { c } else { best });
                    pred == items[i].0.label.round() as usize
                })
                .count();
            Ok(correct as f64 / idx.len().max(1) as f64)
        }
        Task::CnnGeneralization => {
            let y = predict(model, items, idx, batch_size)?;
            let truth: Vec<f64> = idx.iter().map(|&i| items[i].0.label).collect();
            kendall_tau(y.data(), &truth)
        }
        Task::InrEdit => {
            let mut total = 0.0;
            for chunk in idx.chunks(batch_size.max(1)) {
                let nets: Vec<&ZooNet> = chunk.iter().map(|&i| &items[i].1).collect();
                let its: Vec<&ZooItem> = chunk.iter().map(|&i| &items[i]).collect();
                let mut b = Binder::new(model.store(), false);
                let l = batch_loss(model, task, &mut b, &nets, &its)?;
                total += b.tape.value(l).item() * chunk.len() as f64;
            }
            Ok(total / idx.len().max(1) as f64)
        }
    }
}

fn clip_grad_norm(gs: &mut [Tensor], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = gs
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in gs.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= k);
        }
    }
}

fn write_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "epoch,split,metric,value")?;
    for r in rows {
        writeln!(f, "{},{},{},{}", r.epoch, r.split, r.metric, r.value)?;
    }
    Ok(())
}

/// Trains on the 70% split, selects the epoch with the best validation
/// metric and reports its test metric. With `out`, writes the best
/// checkpoint under `out/checkpoint`, `metrics.csv` (validation, one row
/// per epoch), `train_metrics.csv` and `summary.json`.
pub fn train(cfg: &ExperimentConfig, items: &[ZooItem], out: Option<&Path>) -> Result<TrainOutcome> {
    let first = items.first().ok_or_else(|| Error::Config("empty zoo".into()))?;
    let spec = cfg.resolve(&first.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MetaNet::new(&spec, &mut rng)?;
    let splits = split_indices(items.len(), cfg.seed);
    let mut adam = AdamState::new(model.store().tensors(), cfg.lr);
    let metric = cfg.task.metric_name().to_string();
    let better = |a: f64, b: f64| if cfg.task.higher_is_better() { a > b } else { a < b };

    let mut best = (0, evaluate(&model, cfg.task, items, &splits.val, cfg.batch_size)?);
    let mut best_model = model.clone();
    let mut val_history = Vec::with_capacity(cfg.epochs);
    let mut train_history = Vec::new();
    let mut diverged = None;
    let mut epochs_run = 0;
    'epochs: for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        for chunk in batches(&splits.train, cfg.batch_size, &mut rng) {
            let its: Vec<&ZooItem> = chunk.iter().map(|&i| &items[i]).collect();
            let owned: Vec<ZooNet> = if cfg.augment != ScaleSampler::None || cfg.augment_permute {
                its.iter()
                    .map(|it| transform_net(&it.1, cfg.augment, cfg.augment_permute, &mut rng))
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            let nets: Vec<&ZooNet> = if owned.is_empty() {
                its.iter().map(|it| &it.1).collect()
            } else {
                owned.iter().collect()
            };
            let mut b = Binder::new(model.store(), true);
            let loss = batch_loss(&model, cfg.task, &mut b, &nets, &its)?;
            let lv = b.tape.value(loss).item();
            if !lv.is_finite() {
                diverged = Some(format!("non-finite training loss at epoch {epoch}"));
                break 'epochs;
            }
            let grads = b.tape.backward(loss)?;
            let mut gs = b.param_grads(&grads);
            drop(b);
            clip_grad_norm(&mut gs, cfg.grad_clip);
            if let Err(e) = adam.step(model.store_mut().tensors_mut(), &gs) {
                diverged = Some(format!("epoch {epoch}: {e}"));
                break 'epochs;
            }
            loss_sum += lv * chunk.len() as f64;
        }
        epochs_run = epoch;
        train_history.push(MetricRow {
            epoch,
            split: "train".into(),
            metric: "loss".into(),
            value: loss_sum / splits.train.len().max(1) as f64,
        });
        let v = evaluate(&model, cfg.task, items, &splits.val, cfg.batch_size)?;
        val_history.push(MetricRow {
            epoch,
            split: "val".into(),
            metric: metric.clone(),
            value: v,
        });
        if v.is_finite() && better(v, best.1) {
            best = (epoch, v);
            best_model = model.clone();
        }
    }
    let test = evaluate(&best_model, cfg.task, items, &splits.test, cfg.batch_size)?;
    let summary = TrainSummary {
        task: cfg.task,
        metric,
        epochs_run,
        best_epoch: best.0,
        best_val: best.1,
        test,
        diverged,
        splits,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        best_model.save(&dir.join("checkpoint"))?;
        write_csv(&dir.join("metrics.csv"), &val_history)?;
        write_csv(&dir.join("train_metrics.csv"), &train_history)?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    }
    Ok(TrainOutcome {
        model: best_model,
        summary,
        val_history,
        train_history,
    })
}
