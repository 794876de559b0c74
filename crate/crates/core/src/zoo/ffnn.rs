use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::{ActivationDescriptor, GroupKind};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// One affine layer followed by its activation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FfnnLayer {
    /// `[out, in]`.
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub activation: ActivationDescriptor,
}

/// A feedforward network `x_ℓ = σ_ℓ(W_ℓ x_{ℓ−1} + b_ℓ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FfnnParams {
    pub layers: Vec<FfnnLayer>,
}

impl FfnnParams {
    pub fn new(layers: Vec<FfnnLayer>) -> Result<Self> {
        let net = FfnnParams { layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            l.activation.validate()?;
            if l.weight.shape().len() != 2 || l.bias.len() != l.weight.rows() {
                return Err(Error::InvalidNetwork(format!(
                    "layer {}: weight {:?} with {} biases",
                    i + 1,
                    l.weight.shape(),
                    l.bias.len()
                )));
            }
            if i > 0 && l.weight.cols() != self.layers[i - 1].weight.rows() {
                return Err(Error::LayerShape {
                    layer: i + 1,
                    expected: self.layers[i - 1].weight.rows(),
                    got: l.weight.cols(),
                });
            }
        }
        Ok(())
    }

    /// Random weights `U(−scale/√in, scale/√in)`, biases `U(−scale, scale)`.
    pub fn random<R: Rng + ?Sized>(
        dims: &[usize],
        acts: &[ActivationDescriptor],
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || acts.len() != dims.len() - 1 {
            return Err(Error::InvalidNetwork(format!(
                "{} widths need {} activations, got {}",
                dims.len(),
                dims.len().saturating_sub(1),
                acts.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(acts)
            .map(|(w, &activation)| {
                let s = scale / (w[0] as f64).sqrt();
                FfnnLayer {
                    weight: Tensor::from_fn(w[1], w[0], |_, _| rng.random_range(-s..s)),
                    bias: (0..w[1]).map(|_| rng.random_range(-scale..scale)).collect(),
                    activation,
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `[d_0, d_1, …, d_L]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers[0].weight.cols()];
        d.extend(self.layers.iter().map(|l| l.weight.rows()));
        d
    }

    pub fn activations(&self) -> Vec<ActivationDescriptor> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    /// Scaling group acting on hidden layer `l` (1-based, `l < L`).
    pub fn hidden_group(&self, l: usize) -> GroupKind {
        self.layers[l - 1].activation.group()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.numel() + l.bias.len()).sum()
    }

    /// Rows of `x` are inputs.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(x)?.1.pop().expect("at least one layer"))
    }

    /// Pre-activations `z_1..z_L` and post-activations `x_0..x_L`.
    pub fn forward_trace(&self, x: &Tensor) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
        if x.cols() != self.layers[0].weight.cols() {
            return Err(Error::LayerShape {
                layer: 1,
                expected: self.layers[0].weight.cols(),
                got: x.cols(),
            });
        }
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut xs = vec![x.clone()];
        for l in &self.layers {
            let mut z = xs.last().unwrap().matmul(&l.weight.transpose())?;
            let m = z.cols();
            for (k, v) in z.data_mut().iter_mut().enumerate() {
                *v += l.bias[k % m];
            }
            xs.push(z.map(|v| l.activation.eval(v)));
            zs.push(z);
        }
        Ok((zs, xs))
    }

    /// Differentiable forward. `vars` alternates weight `[out, in]` and
    /// bias `[1, out]` per layer, as produced by [`FfnnParams::to_tensors`].
    pub fn forward_tape(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = tape.matmul_nt(h, vars[2 * i])?;
            h = tape.add_row(h, vars[2 * i + 1])?;
            h = l.activation.pointwise().apply(tape, h);
        }
        Ok(h)
    }

    /// `[W1, b1, W2, b2, …]` with biases as rows.
    pub fn to_tensors(&self) -> Vec<Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.clone(), Tensor::row(l.bias.clone())])
            .collect()
    }

    /// Inverse of [`FfnnParams::to_tensors`], keeping activations.
    pub fn with_tensors(&self, ts: &[Tensor]) -> Result<Self> {
        if ts.len() != 2 * self.layers.len() {
            return Err(Error::InvalidNetwork(format!(
                "expected {} tensors, got {}",
                2 * self.layers.len(),
                ts.len()
            )));
        }
        let layers = self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| FfnnLayer {
                weight: ts[2 * i].clone(),
                bias: ts[2 * i + 1].data().to_vec(),
                activation: l.activation,
            })
            .collect();
        Self::new(layers)
    }

    /// Flat parameter vector `W1 (row-major), b1, …, WL, bL`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn from_flat(dims: &[usize], acts: &[ActivationDescriptor], flat: &[f64]) -> Result<Self> {
        if dims.len() < 2 || acts.len() != dims.len() - 1 {
            return Err(Error::InvalidNetwork("widths and activations disagree".into()));
        }
        let need: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if flat.len() != need {
            return Err(Error::InvalidNetwork(format!(
                "expected {need} parameters, got {}",
                flat.len()
            )));
        }
        let mut at = 0;
        let mut layers = Vec::with_capacity(acts.len());
        for (w, &activation) in dims.windows(2).zip(acts) {
            let weight = Tensor::matrix(w[1], w[0], flat[at..at + w[0] * w[1]].to_vec())?;
            at += w[0] * w[1];
            let bias = flat[at..at + w[1]].to_vec();
            at += w[1];
            layers.push(FfnnLayer {
                weight,
                bias,
                activation,
            });
        }
        Self::new(layers)
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn identity_net_passes_input_through() {
        let net = FfnnParams::new(vec![FfnnLayer {
            weight: Tensor::identity(3),
            bias: vec![0.0; 3],
            activation: ActivationDescriptor::identity(),
        }])
        .unwrap();
        let x = Tensor::row(vec![0.5, -1.0, 2.0]);
        assert_eq!(net.forward(&x).unwrap(), x);
    }

    #[test]
    fn single_sine_neuron() {
        let net = FfnnParams::new(vec![FfnnLayer {
            weight: Tensor::scalar(1.0),
            bias: vec![0.0],
            activation: ActivationDescriptor::sine(FRAC_PI_2).unwrap(),
        }])
        .unwrap();
        let y = net.forward(&Tensor::scalar(1.0)).unwrap().item();
        assert!((y - 1.0).abs() < 1e-15);
    }

    #[test]
    fn flat_round_trip_and_chaining() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let acts = [ActivationDescriptor::tanh(), ActivationDescriptor::identity()];
        let net = FfnnParams::random(&[2, 3, 1], &acts, 1.0, &mut rng).unwrap();
        let back = FfnnParams::from_flat(&[2, 3, 1], &acts, &net.to_flat()).unwrap();
        assert_eq!(net, back);
        assert_eq!(net.num_params(), 13);
        assert!(FfnnParams::from_flat(&[2, 3, 1], &acts, &[0.0; 12]).is_err());

        let mut bad = net.clone();
        bad.layers[1].weight = Tensor::zeros(1, 4);
        assert!(matches!(bad.validate(), Err(Error::LayerShape { layer: 2, .. })));
        assert!(net.forward(&Tensor::zeros(1, 3)).is_err());
    }
}
