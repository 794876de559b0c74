use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use scalegmn_core::experiment::{CanonicalForm, ExperimentConfig};
use scalegmn_core::gmn::ScaleGmnConfig;
use scalegmn_core::harness::{CertifyConfig, NetSampler};
use scalegmn_core::zoo::ScaleSampler;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainFile {
    pub zoo: PathBuf,
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitName {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalFile {
    /// Output directory of a `train` run.
    pub run: PathBuf,
    pub zoo: PathBuf,
    #[serde(default = "default_split")]
    pub split: SplitName,
    #[serde(default)]
    pub orbit_copy: bool,
    /// Defaults to the scaling group of the zoo's activations.
    #[serde(default)]
    pub orbit_sampler: Option<ScaleSampler>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_split() -> SplitName {
    SplitName::Test
}

fn default_batch() -> usize {
    16
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertifySuite {
    pub name: String,
    pub model: ScaleGmnConfig,
    pub nets: NetSampler,
    pub certify: CertifyConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertifyFile {
    pub suites: Vec<CertifySuite>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CanonicalizeFile {
    pub zoo: PathBuf,
    #[serde(default = "default_form")]
    pub form: CanonicalForm,
    /// Random probe inputs per network for the preservation check.
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_preserve_tol")]
    pub tolerance: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_form() -> CanonicalForm {
    CanonicalForm::Scale
}

fn default_points() -> usize {
    256
}

fn default_preserve_tol() -> f64 {
    1e-8
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulateFile {
    pub network: NetSampler,
    pub nets: usize,
    /// Input points per network.
    pub points: usize,
    #[serde(default = "default_sim_tol")]
    pub tolerance: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_sim_tol() -> f64 {
    1e-6
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use scalegmn_core::experiment::{ModelKind, Task, ZooGenConfig};

    use super::*;

    fn shipped<T: serde::de::DeserializeOwned>(name: &str) -> T {
        let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
        serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
    }

    #[test]
    fn shipped_configs_parse() {
        let _: ZooGenConfig = shipped("gen-zoo-inr.json");
        let _: ZooGenConfig = shipped("gen-zoo-cnn.json");
        let _: EvalFile = shipped("eval.json");
        let _: CanonicalizeFile = shipped("canonicalize.json");
        let _: SimulateFile = shipped("simulate.json");
        let c: CertifyFile = shipped("certify.json");
        assert_eq!(c.suites.len(), 12);
        let t: TrainFile = shipped("train-inr.json");
        assert_eq!((t.experiment.task, t.experiment.model), (Task::InrClassify, ModelKind::Scalegmn));
        assert_eq!(t.experiment.gmn.input_scale, 10.0);
        let t: TrainFile = shipped("train-cnn.json");
        assert_eq!(t.experiment.epochs, 60);
        for name in ["train-edit.json", "train-inr-flat-mlp.json"] {
            let _: TrainFile = shipped(name);
        }
    }

    #[test]
    fn train_file_fills_defaults() {
        let t: TrainFile = serde_json::from_str(r#"{"zoo":"z"}"#).unwrap();
        assert_eq!(t.experiment, ExperimentConfig::default());
        assert!(serde_json::from_str::<TrainFile>("{}").is_err());
    }
}
