//! Randomized group-action checks for the equivariant building blocks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equivariant::{BlockConfig, Canonicalizer, ReScaleEqNet, RescaleVariant, ScaleEqNet, ScaleInvNet};
use crate::error::Result;
use crate::tensor::{Binder, ParamStore, Tensor, Var};
use crate::zoo::{CanonMode, GroupKind};

/// Rows per trial input.
const ROWS: usize = 4;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockCheck {
    pub name: String,
    pub group: GroupKind,
    pub canon: CanonMode,
    pub trials: usize,
    pub max_rel_err: f64,
}

/// One multiplier from the group: ±1 for sign, `U[0.1, 10]` for positive.
pub fn sample_multiplier<R: Rng + ?Sized>(group: GroupKind, rng: &mut R) -> f64 {
    match group {
        GroupKind::Sign => {
            if rng.random_bool(0.5) {
                1.0
            } else {
                -1.0
            }
        }
        GroupKind::Positive => rng.random_range(0.1..10.0),
        GroupKind::Trivial => 1.0,
    }
}

/// `max |got − want| / max |want|`.
pub fn rel_err(got: &Tensor, want: &Tensor) -> f64 {
    let d = got
        .data()
        .iter()
        .zip(want.data())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    d / want.max_abs().max(1e-300)
}

fn random_rows<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
}

/// Per-row multipliers, and `x` with row `r` scaled by `q[r]`.
fn act_rows<R: Rng + ?Sized>(x: &Tensor, group: GroupKind, rng: &mut R) -> (Vec<f64>, Tensor) {
    let q: Vec<f64> = (0..x.rows()).map(|_| sample_multiplier(group, rng)).collect();
    let y = Tensor::from_fn(x.rows(), x.cols(), |r, c| q[r] * x.get(r, c));
    (q, y)
}

fn scale_rows(x: &Tensor, q: &[f64]) -> Tensor {
    Tensor::from_fn(x.rows(), x.cols(), |r, c| q[r] * x.get(r, c))
}

fn eval<F>(store: &ParamStore, inputs: &[Tensor], f: F) -> Result<Vec<Tensor>>
where
    F: FnOnce(&mut Binder, &[Var]) -> Result<Vec<Var>>,
{
    let mut b = Binder::new(store, false);
    let vars: Vec<Var> = inputs.iter().map(|t| b.tape.constant(t.clone())).collect();
    let outs = f(&mut b, &vars)?;
    Ok(outs.into_iter().map(|v| b.tape.value(v).clone()).collect())
}

fn block_config(canon: CanonMode, layer_norm: bool) -> BlockConfig {
    BlockConfig {
        canon,
        hidden: 12,
        layer_norm,
        ..Default::default()
    }
}

fn check_canon(group: GroupKind, canon: CanonMode, trials: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x9e37_79b9));
        let mut store = ParamStore::new();
        let c = Canonicalizer::new(&mut store, "c", canon, 5, &block_config(canon, false), &mut rng);
        let x = random_rows(ROWS, 5, &mut rng);
        let (_, y) = act_rows(&x, group, &mut rng);
        let out = eval(&store, &[x, y], |b, v| Ok(vec![c.forward(b, v[0])?, c.forward(b, v[1])?]))?;
        worst = worst.max(rel_err(&out[1], &out[0]));
    }
    Ok(worst)
}

fn check_inv(group: GroupKind, canon: CanonMode, trials: usize, seed: u64) -> Result<f64> {
    let dims = [3, 2, 4];
    let mut worst = 0.0f64;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x85eb_ca6b));
        let mut store = ParamStore::new();
        let cfg = block_config(canon, t % 2 == 1);
        let net = ScaleInvNet::new(&mut store, "inv", &dims, 2, 3, &cfg, &mut rng);
        let xs: Vec<Tensor> = dims.iter().map(|&d| random_rows(ROWS, d, &mut rng)).collect();
        let ys: Vec<Tensor> = xs.iter().map(|x| act_rows(x, group, &mut rng).1).collect();
        let p = random_rows(ROWS, 2, &mut rng);
        let mut inputs = xs.clone();
        inputs.extend(ys);
        inputs.push(p);
        let out = eval(&store, &inputs, |b, v| {
            let a = net.forward(b, &v[0..3], Some(v[6]))?;
            let c = net.forward(b, &v[3..6], Some(v[6]))?;
            Ok(vec![a, c])
        })?;
        worst = worst.max(rel_err(&out[1], &out[0]));
    }
    Ok(worst)
}

fn check_eq(group: GroupKind, canon: CanonMode, aug: usize, trials: usize, seed: u64) -> Result<f64> {
    let ins = [3, 2];
    let outs = [4, 5];
    let mut worst = 0.0f64;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0xc2b2_ae35));
        let mut store = ParamStore::new();
        let cfg = block_config(canon, false);
        let net = ScaleEqNet::new(&mut store, "eq", &ins, &outs, aug, 1 + t % 2, &cfg, &mut rng);
        let xs: Vec<Tensor> = ins.iter().map(|&d| random_rows(ROWS, d, &mut rng)).collect();
        let acted: Vec<(Vec<f64>, Tensor)> = xs.iter().map(|x| act_rows(x, group, &mut rng)).collect();
        let p = random_rows(ROWS, aug, &mut rng);
        let mut inputs = xs.clone();
        inputs.extend(acted.iter().map(|a| a.1.clone()));
        inputs.push(p);
        let out = eval(&store, &inputs, |b, v| {
            let pa = (aug > 0).then_some(v[4]);
            let mut a = net.forward(b, &v[0..2], pa)?;
            a.extend(net.forward(b, &v[2..4], pa)?);
            Ok(a)
        })?;
        for i in 0..2 {
            let want = scale_rows(&out[i], &acted[i].0);
            worst = worst.max(rel_err(&out[2 + i], &want));
        }
    }
    Ok(worst)
}

fn check_rescale(
    group: GroupKind,
    canon: CanonMode,
    variant: RescaleVariant,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let dims: &[usize] = match variant {
        RescaleVariant::Hadamard => &[3, 2, 4],
        RescaleVariant::Outer => &[2, 3],
    };
    let n = dims.len();
    let mut worst = 0.0f64;
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (t as u64).wrapping_mul(0x27d4_eb2f));
        let mut store = ParamStore::new();
        let cfg = block_config(canon, false);
        let net = ReScaleEqNet::new(&mut store, "re", variant, dims, 5, &cfg, &mut rng);
        let xs: Vec<Tensor> = dims.iter().map(|&d| random_rows(ROWS, d, &mut rng)).collect();
        let acted: Vec<(Vec<f64>, Tensor)> = xs.iter().map(|x| act_rows(x, group, &mut rng)).collect();
        let mut inputs = xs.clone();
        inputs.extend(acted.iter().map(|a| a.1.clone()));
        let out = eval(&store, &inputs, |b, v| {
            Ok(vec![net.forward(b, &v[..n])?, net.forward(b, &v[n..])?])
        })?;
        let prod: Vec<f64> = (0..ROWS).map(|r| acted.iter().map(|a| a.0[r]).product()).collect();
        worst = worst.max(rel_err(&out[1], &scale_rows(&out[0], &prod)));
    }
    Ok(worst)
}

/// Every block property for every supported (group, canonicalization)
/// pair, `trials` random draws each.
pub fn block_property_suite(trials: usize, seed: u64) -> Result<Vec<BlockCheck>> {
    let pairs = [
        (GroupKind::Sign, CanonMode::SignSymmetrize),
        (GroupKind::Sign, CanonMode::SignAbs),
        (GroupKind::Positive, CanonMode::NormDivide),
    ];
    let mut out = Vec::new();
    for (k, &(group, canon)) in pairs.iter().enumerate() {
        let s = seed.wrapping_add(1000 * k as u64);
        let mut push = |name: &str, err: f64| {
            out.push(BlockCheck {
                name: name.to_string(),
                group,
                canon,
                trials,
                max_rel_err: err,
            })
        };
        push("canonicalize", check_canon(group, canon, trials, s)?);
        push("scale_inv", check_inv(group, canon, trials, s + 1)?);
        push("scale_eq", check_eq(group, canon, 0, trials, s + 2)?);
        push("aug_scale_eq", check_eq(group, canon, 3, trials, s + 3)?);
        push(
            "rescale_eq_hadamard",
            check_rescale(group, canon, RescaleVariant::Hadamard, trials, s + 4)?,
        );
        push("rescale_eq_outer", check_rescale(group, canon, RescaleVariant::Outer, trials, s + 5)?);
    }
    Ok(out)
}
