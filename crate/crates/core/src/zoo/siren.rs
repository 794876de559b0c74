use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::{ActivationDescriptor, ActivationKind};
use super::ffnn::{FfnnLayer, FfnnParams};
use crate::error::{Error, Result};
use crate::tensor::{AdamState, Tape, Tensor, Var};

/// Samples of a function on a 2-D grid normalized to `[−1, 1]²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub height: usize,
    pub width: usize,
    /// `[n, 2]`, row-major over the grid, `(x, y)` per row.
    pub coords: Tensor,
    /// `[n, channels]`.
    pub values: Tensor,
}

impl Signal {
    pub fn from_fn(height: usize, width: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let coords = grid_coords(height, width);
        let values = Tensor::from_fn(height * width, 1, |r, _| {
            f(coords.get(r, 0), coords.get(r, 1))
        });
        Signal {
            height,
            width,
            coords,
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pixel centers of an `h × w` grid mapped to `[−1, 1]²`.
pub fn grid_coords(height: usize, width: usize) -> Tensor {
    let lin = |i: usize, n: usize| {
        if n <= 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (n - 1) as f64
        }
    };
    Tensor::from_fn(height * width, 2, |r, c| {
        if c == 0 {
            lin(r % width, width)
        } else {
            lin(r / width, height)
        }
    })
}

/// Moves a sine neuron's phase into `(−π/2, π/2]` without changing the
/// function it computes.
///
/// The neuron computes `sin(ω0·(w·x + b))`, so the shift acts on the phase
/// `ω0·b`; the returned bias satisfies `ω0·b̃ ∈ (−π/2, π/2]` except that a
/// phase of exactly `π/2` reached through an odd number of flips maps to
/// `−π/2`.
pub fn bias_shift(b: f64, w: &[f64], omega0: f64) -> (f64, Vec<f64>) {
    let phase = omega0 * b;
    let mut sign = 1.0;
    let mut w_sign = 1.0;
    let mut p = phase;
    if p < 0.0 {
        p = -p;
        w_sign = -1.0;
        sign = -sign;
    }
    if p > TAU {
        p %= TAU;
    }
    if p > PI {
        p -= PI;
        sign = -sign;
    }
    if p > FRAC_PI_2 {
        p -= PI;
        sign = -sign;
    }
    let new_b = sign * p / omega0;
    let new_w = w.iter().map(|v| sign * w_sign * v).collect();
    (new_b, new_w)
}

/// Applies [`bias_shift`] to every neuron of every sine layer.
pub fn canonicalize_phases(net: &FfnnParams) -> FfnnParams {
    let mut out = net.clone();
    for layer in out.layers.iter_mut() {
        if layer.activation.kind != ActivationKind::Sine {
            continue;
        }
        let omega0 = layer.activation.omega0;
        let cols = layer.weight.cols();
        for i in 0..layer.weight.rows() {
            let (b, w) = bias_shift(layer.bias[i], layer.weight.row_slice(i), omega0);
            layer.bias[i] = b;
            layer.weight.data_mut()[i * cols..(i + 1) * cols].copy_from_slice(&w);
        }
    }
    out
}

/// Standard SIREN initialization; sine on every layer but the last.
pub fn siren_init<R: Rng + ?Sized>(dims: &[usize], omega0: f64, rng: &mut R) -> Result<FfnnParams> {
    if dims.len() < 2 {
        return Err(Error::InvalidNetwork("a SIREN needs at least one layer".into()));
    }
    let sine = ActivationDescriptor::sine(omega0)?;
    let n = dims.len() - 1;
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = if i == 0 {
                1.0 / fan_in as f64
            } else {
                (6.0 / fan_in as f64).sqrt() / omega0
            };
            let bb = 1.0 / (fan_in as f64).sqrt();
            FfnnLayer {
                weight: Tensor::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..bound)),
                bias: (0..fan_out).map(|_| rng.random_range(-bb..bb)).collect(),
                activation: if i + 1 < n {
                    sine
                } else {
                    ActivationDescriptor::identity()
                },
            }
        })
        .collect();
    FfnnParams::new(layers)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct InrTrainConfig {
    pub steps: usize,
    pub lr: f64,
    /// Stop early once the reconstruction error drops below this.
    pub target_mse: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct InrFit {
    pub net: FfnnParams,
    pub mse: f64,
    pub steps: usize,
}

/// Reconstruction MSE of `net` on `signal`.
pub fn signal_mse(net: &FfnnParams, signal: &Signal) -> Result<f64> {
    let y = net.forward(&signal.coords)?;
    let n = y.numel() as f64;
    Ok(y.data()
        .iter()
        .zip(signal.values.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Full-batch Adam fit of `init` to `signal`.
pub fn train_inr(signal: &Signal, init: FfnnParams, cfg: &InrTrainConfig) -> Result<InrFit> {
    if !init.layers.iter().any(|l| l.activation.kind == ActivationKind::Sine) {
        return Err(Error::InvalidNetwork("INR fitting expects sine activations".into()));
    }
    let mut params = init.to_tensors();
    let mut adam = AdamState::new(&params, cfg.lr);
    let mut net = init;
    let mut mse = signal_mse(&net, signal)?;
    let mut steps = 0;
    for step in 0..cfg.steps {
        if cfg.target_mse.is_some_and(|t| mse < t) {
            break;
        }
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let x = tape.constant(signal.coords.clone());
        let y = net.forward_tape(&mut tape, &vars, x)?;
        let target = tape.constant(signal.values.clone());
        let d = tape.sub(y, target)?;
        let sq = tape.square(d);
        let loss = tape.mean(sq);
        mse = tape.value(loss).item();
        if !mse.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: "reconstruction loss is not finite".into(),
            });
        }
        let grads = tape.backward(loss)?;
        let gs: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v, &tape)).collect();
        adam.step(&mut params, &gs).map_err(|e| Error::Diverged {
            step,
            detail: e.to_string(),
        })?;
        net = net.with_tensors(&params)?;
        steps = step + 1;
    }
    mse = signal_mse(&net, signal)?;
    if !mse.is_finite() {
        return Err(Error::Diverged {
            step: steps,
            detail: "reconstruction loss is not finite".into(),
        });
    }
    Ok(InrFit { net, mse, steps })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_4;

    use super::*;

    #[test]
    fn canonical_bias_is_left_alone() {
        assert_eq!(bias_shift(0.3, &[2.0], 1.0), (0.3, vec![2.0]));
    }

    #[test]
    fn large_bias_flips_weight() {
        let (b, w) = bias_shift(3.0 * FRAC_PI_4, &[1.0], 1.0);
        assert!((b - FRAC_PI_4).abs() < 1e-15);
        assert_eq!(w, vec![-1.0]);
        for i in 0..=100 {
            let x = -5.0 + 0.1 * i as f64;
            assert!(((x + 3.0 * FRAC_PI_4).sin() - (w[0] * x + b).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn negative_small_bias_round_trips() {
        assert_eq!(bias_shift(-0.2, &[5.0], 1.0), (-0.2, vec![5.0]));
    }

    #[test]
    fn boundary_phase() {
        // π/2 stays, 3π/2 = π + π/2 is reached through one flip
        let (b, _) = bias_shift(FRAC_PI_2, &[1.0], 1.0);
        assert_eq!(b, FRAC_PI_2);
        let (b, w) = bias_shift(3.0 * FRAC_PI_2, &[1.0], 1.0);
        assert!((b + FRAC_PI_2).abs() < 1e-12 || (b - FRAC_PI_2).abs() < 1e-12);
        assert_eq!(bias_shift(b, &w, 1.0).0, b);
    }

    #[test]
    fn zero_step_training_returns_init() {
        let mut rng = rand::rng();
        let init = siren_init(&[2, 4, 1], 30.0, &mut rng).unwrap();
        let sig = Signal::from_fn(4, 4, |x, _| x);
        let cfg = InrTrainConfig {
            steps: 0,
            lr: 1e-3,
            target_mse: None,
        };
        let fit = train_inr(&sig, init.clone(), &cfg).unwrap();
        assert_eq!(fit.net, init);
        assert_eq!(fit.steps, 0);
    }
}
