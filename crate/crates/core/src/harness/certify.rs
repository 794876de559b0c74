use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{FeatureMlp, MlpEditor};
use crate::error::Result;
use crate::gmn::ScaleGmn;
use crate::tensor::Tensor;
use crate::zoo::{apply_orbit, ActivationDescriptor, FfnnParams, OrbitElement, ScaleSampler};

/// Anything mapping dense networks to embeddings.
pub trait InvariantModel {
    fn embed(&self, nets: &[&FfnnParams]) -> Result<Tensor>;
    /// Stable description for the report's config hash.
    fn describe(&self) -> serde_json::Value;
}

/// Anything mapping dense networks to edited networks.
pub trait EditModel {
    fn edit(&self, nets: &[&FfnnParams]) -> Result<Vec<FfnnParams>>;
    fn describe(&self) -> serde_json::Value;
}

impl InvariantModel for ScaleGmn {
    fn embed(&self, nets: &[&FfnnParams]) -> Result<Tensor> {
        self.embed_nets(nets)
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "model": "scalegmn", "config": self.config })
    }
}

impl EditModel for ScaleGmn {
    fn edit(&self, nets: &[&FfnnParams]) -> Result<Vec<FfnnParams>> {
        self.edit_nets(nets)
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "model": "scalegmn", "config": self.config })
    }
}

impl InvariantModel for FeatureMlp {
    fn embed(&self, nets: &[&FfnnParams]) -> Result<Tensor> {
        self.embed_nets(nets)
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "model": "feature-mlp", "features": self.kind, "in_dim": self.in_dim() })
    }
}

impl EditModel for MlpEditor {
    fn edit(&self, nets: &[&FfnnParams]) -> Result<Vec<FfnnParams>> {
        self.edit_nets(nets)
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "model": "mlp-editor", "params": self.mlp.in_dim() })
    }
}

/// Random dense networks: hidden layers use `activation`, the last layer
/// is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSampler {
    pub layer_dims: Vec<usize>,
    pub activation: ActivationDescriptor,
    pub scale: f64,
}

impl NetSampler {
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Result<FfnnParams> {
        let mut acts = vec![self.activation; self.layer_dims.len() - 1];
        *acts.last_mut().expect("at least one layer") = ActivationDescriptor::identity();
        FfnnParams::random(&self.layer_dims, &acts, self.scale, rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub nets: usize,
    /// Orbit elements per network.
    pub orbits: usize,
    pub scale: ScaleSampler,
    pub permute: bool,
    pub tolerance: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub test: String,
    pub seed: u64,
    /// SHA-256 of the model description, net sampler and certify config.
    pub config_hash: String,
    pub tolerance: f64,
    pub trials: usize,
    /// One entry per (network, orbit element), network-major.
    pub deviations: Vec<f64>,
    pub max_deviation: f64,
    pub passed: bool,
}

impl SymmetryReport {
    fn new(test: &str, hash: String, cfg: &CertifyConfig, deviations: Vec<f64>) -> Self {
        let max_deviation = deviations.iter().fold(0.0f64, |m, &d| m.max(d));
        let passed = deviations.iter().all(|d| *d < cfg.tolerance);
        SymmetryReport {
            test: test.to_string(),
            seed: cfg.seed,
            config_hash: hash,
            tolerance: cfg.tolerance,
            trials: deviations.len(),
            deviations,
            max_deviation,
            passed,
        }
    }

    /// Combines reports of independent runs.
    pub fn merge(test: &str, reports: &[SymmetryReport]) -> SymmetryReport {
        let deviations: Vec<f64> = reports.iter().flat_map(|r| r.deviations.clone()).collect();
        let mut h = Sha256::new();
        for r in reports {
            h.update(r.config_hash.as_bytes());
        }
        SymmetryReport {
            test: test.to_string(),
            seed: reports.first().map_or(0, |r| r.seed),
            config_hash: hex::encode(h.finalize()),
            tolerance: reports.iter().map(|r| r.tolerance).fold(f64::INFINITY, f64::min),
            trials: deviations.len(),
            max_deviation: deviations.iter().fold(0.0f64, |m, &d| m.max(d)),
            passed: reports.iter().all(|r| r.passed),
            deviations,
        }
    }
}

fn config_hash(model: serde_json::Value, sampler: &NetSampler, cfg: &CertifyConfig) -> String {
    let doc = serde_json::json!({ "model": model, "nets": sampler, "certify": cfg });
    hex::encode(Sha256::digest(doc.to_string().as_bytes()))
}

/// A network followed by `orbits` transformed copies of it.
fn orbit_family(
    sampler: &NetSampler,
    cfg: &CertifyConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<FfnnParams>, Vec<OrbitElement>)> {
    let net = sampler.sample(rng)?;
    let mut nets = vec![net.clone()];
    let mut gs = Vec::with_capacity(cfg.orbits);
    for _ in 0..cfg.orbits {
        let g = OrbitElement::sample(cfg.scale, cfg.permute, &sampler.layer_dims, rng)?;
        nets.push(apply_orbit(&net, &g)?);
        gs.push(g);
    }
    Ok((nets, gs))
}

/// Relative embedding change `max|r(θ) − r(ψθ)| / (max|r(θ)| + 1e-9)` for
/// random networks `θ` and orbit elements `ψ`.
pub fn certify_invariance(
    model: &dyn InvariantModel,
    sampler: &NetSampler,
    cfg: &CertifyConfig,
) -> Result<SymmetryReport> {
    let hash = config_hash(model.describe(), sampler, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut deviations = Vec::with_capacity(cfg.nets * cfg.orbits);
    if cfg.orbits > 0 {
        for _ in 0..cfg.nets {
            let (nets, _) = orbit_family(sampler, cfg, &mut rng)?;
            let refs: Vec<&FfnnParams> = nets.iter().collect();
            let out = model.embed(&refs)?;
            let base = out.row_slice(0);
            let denom = base.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 1e-9;
            for k in 1..nets.len() {
                let d = out
                    .row_slice(k)
                    .iter()
                    .zip(base)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                deviations.push(d / denom);
            }
        }
    }
    Ok(SymmetryReport::new("invariance", hash, cfg, deviations))
}

/// `‖edit(ψθ) − ψ(edit θ)‖∞` for random networks and orbit elements.
pub fn certify_equivariance(
    model: &dyn EditModel,
    sampler: &NetSampler,
    cfg: &CertifyConfig,
) -> Result<SymmetryReport> {
    let hash = config_hash(model.describe(), sampler, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut deviations = Vec::with_capacity(cfg.nets * cfg.orbits);
    if cfg.orbits > 0 {
        for _ in 0..cfg.nets {
            let (nets, gs) = orbit_family(sampler, cfg, &mut rng)?;
            let refs: Vec<&FfnnParams> = nets.iter().collect();
            let edited = model.edit(&refs)?;
            for (k, g) in gs.iter().enumerate() {
                let want = apply_orbit(&edited[0], g)?.to_flat();
                let got = edited[k + 1].to_flat();
                let d = got.iter().zip(&want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                deviations.push(d);
            }
        }
    }
    Ok(SymmetryReport::new("equivariance", hash, cfg, deviations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::FeatureKind;
    use crate::gmn::{HeadKind, ScaleGmnConfig};
    use crate::tensor::Pointwise;

    fn sampler() -> NetSampler {
        NetSampler {
            layer_dims: vec![2, 8, 8, 1],
            activation: ActivationDescriptor::tanh(),
            scale: 1.0,
        }
    }

    fn cfg(nets: usize, orbits: usize) -> CertifyConfig {
        CertifyConfig {
            nets,
            orbits,
            scale: ScaleSampler::Sign,
            permute: true,
            tolerance: 1e-8,
            seed: 7,
        }
    }

    fn gmn(head: HeadKind) -> ScaleGmn {
        let c = ScaleGmnConfig {
            head,
            ..Default::default()
        };
        ScaleGmn::new(c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn zero_trials_pass_vacuously() {
        let r = certify_invariance(&gmn(HeadKind::Invariant), &sampler(), &cfg(3, 0)).unwrap();
        assert_eq!(r.trials, 0);
        assert!(r.passed);
    }

    #[test]
    fn gmn_passes_and_flat_mlp_fails() {
        let r = certify_invariance(&gmn(HeadKind::Invariant), &sampler(), &cfg(2, 10)).unwrap();
        assert!(r.passed, "{}", r.max_deviation);
        let flat = FeatureMlp::new(
            FeatureKind::Flat,
            105,
            &[16],
            2,
            Pointwise::Silu,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        let r = certify_invariance(&flat, &sampler(), &cfg(2, 10)).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn edit_certificates() {
        let model = gmn(HeadKind::EquivariantEdit);
        let id = CertifyConfig {
            scale: ScaleSampler::None,
            permute: false,
            ..cfg(2, 2)
        };
        let r = certify_equivariance(&model, &sampler(), &id).unwrap();
        assert_eq!(r.max_deviation, 0.0);
        let r = certify_equivariance(&model, &sampler(), &cfg(2, 10)).unwrap();
        assert!(r.passed, "{}", r.max_deviation);
        let editor = MlpEditor::new(105, 16, 0.1, &mut ChaCha8Rng::seed_from_u64(0));
        let r = certify_equivariance(&editor, &sampler(), &cfg(2, 10)).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn reports_are_deterministic() {
        let m = gmn(HeadKind::Invariant);
        let a = certify_invariance(&m, &sampler(), &cfg(1, 3)).unwrap();
        let b = certify_invariance(&m, &sampler(), &cfg(1, 3)).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.config_hash.len(), 64);
    }
}
