use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Elementwise nonlinearity usable both on a tape and on plain scalars.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pointwise {
    Identity,
    Relu,
    Tanh,
    Silu,
    /// `sin(omega · z)`.
    Sine(f64),
}

impl Pointwise {
    pub fn apply(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Pointwise::Identity => v,
            Pointwise::Relu => tape.relu(v),
            Pointwise::Tanh => tape.tanh(v),
            Pointwise::Silu => tape.silu(v),
            Pointwise::Sine(w) => tape.sin(v, w),
        }
    }

    pub fn eval(self, z: f64) -> f64 {
        match self {
            Pointwise::Identity => z,
            Pointwise::Relu => z.max(0.0),
            Pointwise::Tanh => z.tanh(),
            Pointwise::Silu => z / (1.0 + (-z).exp()),
            Pointwise::Sine(w) => (w * z).sin(),
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Pointwise::Identity => 1.0,
            Pointwise::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Pointwise::Tanh => 1.0 - z.tanh().powi(2),
            Pointwise::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Pointwise::Sine(w) => w * (w * z).cos(),
        }
    }
}

/// Batched MLP on a tape. Rows of `x` are samples; each weight is stored
/// `[out, in]` and each optional bias `[1, out]`. `act` follows every layer
/// but the last, which gets `head` when given.
pub fn mlp_forward(
    tape: &mut Tape,
    layers: &[(Var, Option<Var>)],
    act: Pointwise,
    head: Option<Pointwise>,
    x: Var,
) -> Result<Var> {
    mlp_forward_inner(tape, layers, act, head, false, x)
}

pub(crate) fn mlp_forward_inner(
    tape: &mut Tape,
    layers: &[(Var, Option<Var>)],
    act: Pointwise,
    head: Option<Pointwise>,
    layer_norm: bool,
    x: Var,
) -> Result<Var> {
    let mut h = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let expected = tape.value(w).cols();
        let got = tape.value(h).cols();
        if expected != got {
            return Err(Error::LayerShape {
                layer: i,
                expected,
                got,
            });
        }
        h = tape.matmul_nt(h, w)?;
        if let Some(b) = b {
            h = tape.add_row(h, b)?;
        }
        if i + 1 < layers.len() {
            if layer_norm {
                h = tape.layer_norm_rows(h, 1e-5);
            }
            h = act.apply(tape, h);
        } else if let Some(f) = head {
            h = f.apply(tape, h);
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::identity(2));
        let b = tape.constant(Tensor::row(vec![0.0, 0.0]));
        let x = tape.constant(Tensor::row(vec![1.0, 2.0]));
        let y = mlp_forward(&mut tape, &[(w, Some(b))], Pointwise::Relu, None, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_head_clamps() {
        let mut tape = Tape::new();
        let w = tape.constant(Tensor::scalar(-2.0));
        let b = tape.constant(Tensor::scalar(1.0));
        let x = tape.constant(Tensor::scalar(2.0));
        let y = mlp_forward(
            &mut tape,
            &[(w, Some(b))],
            Pointwise::Identity,
            Some(Pointwise::Relu),
            x,
        )
        .unwrap();
        assert_eq!(tape.value(y).item(), 0.0);
    }

    #[test]
    fn matches_hand_rolled_two_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut rand_t = |r, c| Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let (w1, b1, w2, b2, x) = (rand_t(5, 3), rand_t(1, 5), rand_t(2, 5), rand_t(1, 2), rand_t(4, 3));

        // oracle: explicit loops
        let mut expect = vec![0.0; 8];
        for s in 0..4 {
            let mut h = [0.0; 5];
            for (o, ho) in h.iter_mut().enumerate() {
                let mut z = b1.get(0, o);
                for i in 0..3 {
                    z += w1.get(o, i) * x.get(s, i);
                }
                *ho = z.tanh();
            }
            for o in 0..2 {
                let mut z = b2.get(0, o);
                for (i, hi) in h.iter().enumerate() {
                    z += w2.get(o, i) * hi;
                }
                expect[s * 2 + o] = z;
            }
        }

        let mut tape = Tape::new();
        let vars: Vec<Var> = [&w1, &b1, &w2, &b2, &x]
            .iter()
            .map(|t| tape.constant((*t).clone()))
            .collect();
        let layers = [(vars[0], Some(vars[1])), (vars[2], Some(vars[3]))];
        let y = mlp_forward(&mut tape, &layers, Pointwise::Tanh, None, vars[4]).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }

        // determinism: bitwise repeatable
        let y2 = mlp_forward(&mut tape, &layers, Pointwise::Tanh, None, vars[4]).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(y2).data());
    }

    #[test]
    fn shape_error_names_layer() {
        let mut tape = Tape::new();
        let w1 = tape.constant(Tensor::zeros(3, 2));
        let w2 = tape.constant(Tensor::zeros(1, 4));
        let x = tape.constant(Tensor::zeros(1, 2));
        let err = mlp_forward(&mut tape, &[(w1, None), (w2, None)], Pointwise::Relu, None, x);
        assert!(matches!(
            err,
            Err(Error::LayerShape {
                layer: 1,
                expected: 4,
                got: 3
            })
        ));
    }
}
