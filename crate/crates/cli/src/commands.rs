use std::fs;
use std::path::Path;
use std::process::ExitCode;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use scalegmn_core::experiment::{self, MetaNet, Task, TrainSummary, ZooItem};
use scalegmn_core::gmn::{HeadKind, ScaleGmn};
use scalegmn_core::harness::{
    certify_equivariance, certify_invariance, check_function_preservation, reference_pass, simulate_ffnn,
    SymmetryReport,
};
use scalegmn_core::tensor::Tensor;
use scalegmn_core::zoo::{load_zoo, save_zoo, ScaleSampler, ZooNet};

use crate::config::{CanonicalizeFile, CertifyFile, EvalFile, SimulateFile, SplitName, TrainFile};
use crate::CommonArgs;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] scalegmn_core::Error),
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("{0}")]
    Usage(String),
    /// A check ran to completion and did not pass.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Failed(_) => ExitCode::from(2),
            _ => ExitCode::FAILURE,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| CliError::Parse {
        path: path.display().to_string(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(scalegmn_core::Error::from)?;
    fs::write(path, text + "\n").map_err(scalegmn_core::Error::from)?;
    Ok(())
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(scalegmn_core::Error::from)?;
    Ok(())
}

fn load_items(dir: &Path) -> Result<Vec<ZooItem>> {
    Ok(load_zoo(dir)?)
}

pub fn gen_zoo(args: &CommonArgs) -> Result<()> {
    let cfg: experiment::ZooGenConfig = read_config(&args.config)?;
    let zoo = experiment::generate_zoo(&cfg, args.seed.unwrap_or(0))?;
    save_zoo(&args.out, &zoo.items)?;
    write_json(&args.out.join("skipped.json"), &zoo.skipped)?;
    println!(
        "wrote {} networks to {} ({} skipped)",
        zoo.items.len(),
        args.out.display(),
        zoo.skipped.len()
    );
    Ok(())
}

pub fn train(args: &CommonArgs) -> Result<()> {
    let mut file: TrainFile = read_config(&args.config)?;
    if let Some(s) = args.seed {
        file.experiment.seed = s;
    }
    let items = load_items(&file.zoo)?;
    create_out(&args.out)?;
    write_json(&args.out.join("config.json"), &file)?;
    let outcome = experiment::train(&file.experiment, &items, Some(&args.out))?;
    let s = &outcome.summary;
    println!(
        "best val {} {:.6} at epoch {}; test {:.6}",
        s.metric, s.best_val, s.best_epoch, s.test
    );
    if let Some(d) = &s.diverged {
        println!("stopped early: {d}");
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    task: Task,
    metric: String,
    split: SplitName,
    n: usize,
    value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    orbit_sampler: Option<ScaleSampler>,
    #[serde(skip_serializing_if = "Option::is_none")]
    orbit_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    orbit_gap: Option<f64>,
}

fn zoo_group_sampler(net: &ZooNet) -> ScaleSampler {
    let group = match net {
        ZooNet::Ffnn(n) => n.layers[0].activation.group(),
        ZooNet::Cnn(n) => n.activations()[0].group(),
    };
    ScaleSampler::for_group(group, 1.0)
}

pub fn eval(args: &CommonArgs) -> Result<()> {
    let mut file: EvalFile = read_config(&args.config)?;
    if let Some(s) = args.seed {
        file.seed = s;
    }
    let summary: TrainSummary = read_config(&file.run.join("summary.json"))?;
    let model = MetaNet::load(&file.run.join("checkpoint"))?;
    let items = load_items(&file.zoo)?;
    let idx: Vec<usize> = match file.split {
        SplitName::Train => summary.splits.train.clone(),
        SplitName::Val => summary.splits.val.clone(),
        SplitName::Test => summary.splits.test.clone(),
        SplitName::All => (0..items.len()).collect(),
    };
    if idx.iter().any(|&i| i >= items.len()) {
        return Err(CliError::Usage(format!(
            "the run was trained on a larger zoo than {}",
            file.zoo.display()
        )));
    }
    let task = summary.task;
    let value = experiment::evaluate(&model, task, &items, &idx, file.batch_size)?;
    let mut report = EvalReport {
        task,
        metric: task.metric_name().to_string(),
        split: file.split,
        n: idx.len(),
        value,
        orbit_sampler: None,
        orbit_value: None,
        orbit_gap: None,
    };
    if file.orbit_copy && !items.is_empty() {
        let sampler = file.orbit_sampler.unwrap_or_else(|| zoo_group_sampler(&items[0].1));
        let moved = experiment::orbit_copy(&items, sampler, file.seed)?;
        let v = experiment::evaluate(&model, task, &moved, &idx, file.batch_size)?;
        report.orbit_sampler = Some(sampler);
        report.orbit_value = Some(v);
        report.orbit_gap = Some((v - value).abs());
    }
    create_out(&args.out)?;
    write_json(&args.out.join("eval.json"), &report)?;
    match report.orbit_value {
        Some(v) => println!("{} {}: {:.6} (orbit copy {:.6})", report.metric, report.n, value, v),
        None => println!("{} {}: {:.6}", report.metric, report.n, value),
    }
    Ok(())
}

pub fn certify(args: &CommonArgs) -> Result<()> {
    let file: CertifyFile = read_config(&args.config)?;
    create_out(&args.out)?;
    let mut reports = Vec::with_capacity(file.suites.len());
    for suite in &file.suites {
        let mut cfg = suite.certify.clone();
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        let model = ScaleGmn::new(suite.model.clone(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
        let mut r: SymmetryReport = match suite.model.head {
            HeadKind::Invariant => certify_invariance(&model, &suite.nets, &cfg)?,
            HeadKind::EquivariantEdit => certify_equivariance(&model, &suite.nets, &cfg)?,
        };
        r.test = format!("{}/{}", suite.name, r.test);
        println!(
            "{:<40} {} max {:.3e} (tol {:.0e}, {} trials)",
            r.test,
            if r.passed { "pass" } else { "FAIL" },
            r.max_deviation,
            r.tolerance,
            r.trials
        );
        reports.push(r);
    }
    write_json(&args.out.join("certify.json"), &reports)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.test.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failed: {}", failed.join(", "))))
    }
}

#[derive(Serialize)]
struct CanonicalizeReport {
    networks: usize,
    changed: usize,
    max_deviation: f64,
    tolerance: f64,
    passed: bool,
}

fn uniform(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn canonicalize(args: &CommonArgs) -> Result<()> {
    let mut file: CanonicalizeFile = read_config(&args.config)?;
    if let Some(s) = args.seed {
        file.seed = s;
    }
    let items = load_items(&file.zoo)?;
    let mut rng = ChaCha8Rng::seed_from_u64(file.seed);
    let mut out = Vec::with_capacity(items.len());
    let mut changed = 0;
    let mut max_deviation = 0.0f64;
    for (entry, net, signal) in items {
        let n = net
            .as_ffnn()
            .ok_or_else(|| CliError::Usage(format!("{}: only dense networks can be canonicalized", entry.id)))?;
        let c = experiment::canonicalize(n, file.form)?;
        let probe = uniform(file.points, n.layer_dims()[0], &mut rng);
        max_deviation = max_deviation.max(check_function_preservation(n, &c, &probe)?);
        if c != *n {
            changed += 1;
        }
        out.push((entry, ZooNet::Ffnn(c), signal));
    }
    save_zoo(&args.out, &out)?;
    let report = CanonicalizeReport {
        networks: out.len(),
        changed,
        max_deviation,
        tolerance: file.tolerance,
        passed: max_deviation < file.tolerance,
    };
    write_json(&args.out.join("canonicalize.json"), &report)?;
    println!(
        "canonicalized {} networks ({} changed); max output deviation {:.3e}",
        report.networks, report.changed, report.max_deviation
    );
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "output deviation {:.3e} exceeds {:.0e}",
            max_deviation, file.tolerance
        )))
    }
}

#[derive(Serialize)]
struct SimulateReport {
    nets: usize,
    max_forward_deviation: f64,
    max_backward_rel_deviation: f64,
    tolerance: f64,
    passed: bool,
}

pub fn simulate(args: &CommonArgs) -> Result<()> {
    let mut file: SimulateFile = read_config(&args.config)?;
    if let Some(s) = args.seed {
        file.seed = s;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(file.seed);
    let (mut fwd, mut bwd) = (0.0f64, 0.0f64);
    let dims = &file.network.layer_dims;
    for _ in 0..file.nets {
        let net = file.network.sample(&mut rng)?;
        let x = uniform(file.points, dims[0], &mut rng);
        let g = uniform(file.points, dims[dims.len() - 1], &mut rng);
        let got = simulate_ffnn(&net, &x, Some(&g))?;
        let want = reference_pass(&net, &x, &g)?;
        let (f, b) = got.deviation(&want);
        fwd = fwd.max(f);
        bwd = bwd.max(b.unwrap_or(f64::INFINITY));
    }
    let report = SimulateReport {
        nets: file.nets,
        max_forward_deviation: fwd,
        max_backward_rel_deviation: bwd,
        tolerance: file.tolerance,
        passed: fwd < file.tolerance && bwd < file.tolerance,
    };
    create_out(&args.out)?;
    write_json(&args.out.join("simulate.json"), &report)?;
    println!("max forward deviation {fwd:.3e}");
    println!("max backward relative deviation {bwd:.3e}");
    if report.passed {
        Ok(())
    } else {
        Err(CliError::Failed(format!("simulation deviation exceeds {:.0e}", file.tolerance)))
    }
}
