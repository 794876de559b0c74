//! A hand-wired (not learned) bidirectional metanetwork that reproduces the
//! forward and backward pass of a dense network by message passing.
//!
//! Each vertex carries `[b, z, x, 1/∇z, 1/∇x]` (every channel but the bias
//! is one entry per input point); edges relay the weights forward and their
//! reciprocals backward. Forward messages are `y.x · w`; backward messages
//! are `g(y.(1/∇z) · (1/w))` with `g` the elementwise reciprocal, and the
//! update applies `g` again to the aggregate. A zero in a channel means "not
//! reached yet"; `g` maps it to zero so empty channels stay empty.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::zoo::FfnnParams;

/// Reciprocal with `0 ↦ 0`.
fn pinv(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        1.0 / v
    }
}

/// Vertex and edge representations after one round.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationState {
    /// One row per vertex: `[b, z(m), x(m), iz(m), ix(m)]`.
    pub vertex: Vec<Vec<f64>>,
    /// Forward edges, in graph order.
    pub forward_edges: Vec<f64>,
    /// Backward edges (empty when no backward pass is simulated).
    pub backward_edges: Vec<f64>,
}

/// Recovered activations and gradients, `[m, d_ℓ]` per layer `ℓ = 0..=L`.
#[derive(Clone, Debug)]
pub struct SimulatedPass {
    pub z: Vec<Tensor>,
    pub x: Vec<Tensor>,
    pub grad_z: Option<Vec<Tensor>>,
    pub grad_x: Option<Vec<Tensor>>,
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub layer_dims: Vec<usize>,
    /// Number of input points.
    pub points: usize,
    pub backward: bool,
    /// `history[t]` is the state after `t` rounds.
    pub history: Vec<SimulationState>,
}

struct Layout {
    dims: Vec<usize>,
    vertex_offsets: Vec<usize>,
    edge_offsets: Vec<usize>,
}

impl Layout {
    fn new(dims: &[usize]) -> Self {
        let mut vertex_offsets = vec![0];
        for d in dims {
            vertex_offsets.push(vertex_offsets.last().unwrap() + d);
        }
        let mut edge_offsets = vec![0];
        for w in dims.windows(2) {
            edge_offsets.push(edge_offsets.last().unwrap() + w[0] * w[1]);
        }
        Layout {
            dims: dims.to_vec(),
            vertex_offsets,
            edge_offsets,
        }
    }

    fn vertex(&self, l: usize, i: usize) -> usize {
        self.vertex_offsets[l] + i
    }

    /// Edge from neuron `j` of layer `l − 1` to neuron `i` of layer `l`.
    fn edge(&self, l: usize, i: usize, j: usize) -> usize {
        self.edge_offsets[l - 1] + i * self.dims[l - 1] + j
    }
}

impl Simulation {
    /// Runs `L` rounds (forward only) or `2L` rounds when output gradients
    /// `grad_out` (`∇x_L`, shaped like the output) are given.
    pub fn run(net: &FfnnParams, inputs: &Tensor, grad_out: Option<&Tensor>) -> Result<Self> {
        net.validate()?;
        let dims = net.layer_dims();
        let big_l = dims.len() - 1;
        let m = inputs.rows();
        if inputs.cols() != dims[0] {
            return Err(Error::LayerShape {
                layer: 0,
                expected: dims[0],
                got: inputs.cols(),
            });
        }
        let lay = Layout::new(&dims);
        let forward_edges: Vec<f64> = net.layers.iter().flat_map(|l| l.weight.data().to_vec()).collect();
        let acts = net.activations();

        // channel offsets within a vertex row
        let (cz, cx, ciz, cix) = (1, 1 + m, 1 + 2 * m, 1 + 3 * m);
        let width = 1 + 4 * m;

        let mut backward_edges = Vec::new();
        let mut out_pe: Option<(Vec<f64>, Vec<f64>)> = None;
        if let Some(g) = grad_out {
            if g.rows() != m || g.cols() != dims[big_l] {
                return Err(Error::ShapeMismatch {
                    op: "simulate_ffnn",
                    left: vec![m, dims[big_l]],
                    right: g.shape().to_vec(),
                });
            }
            for l in 1..=big_l {
                for i in 0..dims[l] {
                    for j in 0..dims[l - 1] {
                        let w = forward_edges[lay.edge(l, i, j)];
                        if w == 0.0 {
                            return Err(Error::Simulation(format!(
                                "zero weight on edge ({}, {i}) <- ({}, {j}) has no reciprocal",
                                l,
                                l - 1
                            )));
                        }
                    }
                }
            }
            backward_edges = forward_edges.iter().map(|w| 1.0 / w).collect();
            // ∇z_L from ∇x_L needs the output pre-activations
            let (zs, _) = net.forward_trace(inputs)?;
            let zl = zs.last().expect("at least one layer");
            let act = acts[big_l - 1];
            let mut iz = vec![0.0; m * dims[big_l]];
            let mut ix = vec![0.0; m * dims[big_l]];
            for k in 0..m {
                for i in 0..dims[big_l] {
                    let gx = g.get(k, i);
                    let gz = act.derivative(zl.get(k, i)) * gx;
                    if gx == 0.0 || gz == 0.0 {
                        return Err(Error::Simulation(format!(
                            "output gradient of neuron {i} at point {k} is zero"
                        )));
                    }
                    iz[i * m + k] = 1.0 / gz;
                    ix[i * m + k] = 1.0 / gx;
                }
            }
            out_pe = Some((iz, ix));
        }

        // initialization
        let n = *lay.vertex_offsets.last().unwrap();
        let mut vertex = vec![vec![0.0; width]; n];
        for i in 0..dims[0] {
            let v = &mut vertex[lay.vertex(0, i)];
            v[0] = 1.0;
            for k in 0..m {
                v[cz + k] = inputs.get(k, i);
                v[cx + k] = inputs.get(k, i);
            }
        }
        for l in 1..=big_l {
            for i in 0..dims[l] {
                vertex[lay.vertex(l, i)][0] = net.layers[l - 1].bias[i];
            }
        }
        if let Some((iz, ix)) = &out_pe {
            for i in 0..dims[big_l] {
                let v = &mut vertex[lay.vertex(big_l, i)];
                for k in 0..m {
                    v[ciz + k] = iz[i * m + k];
                    v[cix + k] = ix[i * m + k];
                }
            }
        }
        let mut history = vec![SimulationState {
            vertex,
            forward_edges,
            backward_edges,
        }];

        let rounds = if grad_out.is_some() { 2 * big_l } else { big_l };
        for _ in 0..rounds {
            let prev = history.last().unwrap();
            let mut next = prev.clone();
            for l in 0..=big_l {
                for i in 0..dims[l] {
                    let me = &prev.vertex[lay.vertex(l, i)];
                    let mut m_fw = vec![0.0; m];
                    if l > 0 {
                        for j in 0..dims[l - 1] {
                            let y = &prev.vertex[lay.vertex(l - 1, j)];
                            let e = prev.forward_edges[lay.edge(l, i, j)];
                            for k in 0..m {
                                m_fw[k] += y[cx + k] * e;
                            }
                        }
                    }
                    let mut m_bw = vec![0.0; m];
                    let has_bw = grad_out.is_some() && l < big_l;
                    if has_bw {
                        for j in 0..dims[l + 1] {
                            let y = &prev.vertex[lay.vertex(l + 1, j)];
                            let e = prev.backward_edges[lay.edge(l + 1, j, i)];
                            for k in 0..m {
                                m_bw[k] += pinv(y[ciz + k] * e);
                            }
                        }
                    }
                    let out = &mut next.vertex[lay.vertex(l, i)];
                    if l > 0 {
                        let act = acts[l - 1];
                        for k in 0..m {
                            let z = me[0] + m_fw[k];
                            out[cz + k] = z;
                            out[cx + k] = act.eval(z);
                        }
                    }
                    if has_bw {
                        // σ at the input layer is the identity
                        let deriv = |z: f64| if l == 0 { 1.0 } else { acts[l - 1].derivative(z) };
                        for k in 0..m {
                            let gu = pinv(m_bw[k]);
                            out[ciz + k] = pinv(deriv(me[cz + k])) * gu;
                            out[cix + k] = gu;
                        }
                    }
                }
            }
            history.push(next);
        }
        Ok(Simulation {
            layer_dims: dims,
            points: m,
            backward: grad_out.is_some(),
            history,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    /// Bias channel and edge representations identical in every round.
    pub fn relays_constant(&self) -> bool {
        let first = &self.history[0];
        self.history.iter().all(|s| {
            s.forward_edges == first.forward_edges
                && s.backward_edges == first.backward_edges
                && s.vertex.iter().zip(&first.vertex).all(|(a, b)| a[0].to_bits() == b[0].to_bits())
        })
    }

    /// Channel `c` (0 = z, 1 = x, 2 = 1/∇z, 3 = 1/∇x) of layer `l` after
    /// round `t`, as `[m, d_l]`.
    pub fn channel(&self, t: usize, l: usize, c: usize) -> Tensor {
        let m = self.points;
        let lay = Layout::new(&self.layer_dims);
        let s = &self.history[t];
        Tensor::from_fn(m, self.layer_dims[l], |k, i| s.vertex[lay.vertex(l, i)][1 + c * m + k])
    }

    /// Reads `(z_ℓ, x_ℓ)` after `ℓ` rounds and, with a backward pass, the
    /// gradients after `2L − ℓ` rounds (inverting the stored reciprocals).
    pub fn extract(&self) -> Result<SimulatedPass> {
        let big_l = self.num_layers();
        let z = (0..=big_l).map(|l| self.channel(l, l, 0)).collect();
        let x = (0..=big_l).map(|l| self.channel(l, l, 1)).collect();
        if !self.backward {
            return Ok(SimulatedPass {
                z,
                x,
                grad_z: None,
                grad_x: None,
            });
        }
        let mut grad_z = Vec::with_capacity(big_l + 1);
        let mut grad_x = Vec::with_capacity(big_l + 1);
        for l in 0..=big_l {
            let t = 2 * big_l - l;
            for (c, out) in [(2, &mut grad_z), (3, &mut grad_x)] {
                let inv = self.channel(t, l, c);
                if let Some(k) = inv.data().iter().position(|&v| v == 0.0) {
                    let (p, i) = (k / inv.cols(), k % inv.cols());
                    return Err(Error::Simulation(format!(
                        "gradient channel of vertex ({l}, {i}) at point {p} is zero"
                    )));
                }
                out.push(inv.map(|v| 1.0 / v));
            }
        }
        Ok(SimulatedPass {
            z,
            x,
            grad_z: Some(grad_z),
            grad_x: Some(grad_x),
        })
    }
}

impl SimulatedPass {
    /// Largest absolute forward deviation from `reference` over all `z_ℓ`
    /// and `x_ℓ`, and the largest per-layer relative gradient deviation
    /// (`None` when either side lacks gradients).
    pub fn deviation(&self, reference: &SimulatedPass) -> (f64, Option<f64>) {
        let max_abs = |a: &Tensor, b: &Tensor| {
            a.data().iter().zip(b.data()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        };
        let fwd = self
            .z
            .iter()
            .zip(&reference.z)
            .chain(self.x.iter().zip(&reference.x))
            .fold(0.0f64, |m, (a, b)| m.max(max_abs(a, b)));
        let bwd = match (&self.grad_z, &self.grad_x, &reference.grad_z, &reference.grad_x) {
            (Some(gz), Some(gx), Some(rz), Some(rx)) => Some(
                gz.iter()
                    .zip(rz)
                    .chain(gx.iter().zip(rx))
                    .fold(0.0f64, |m, (a, b)| m.max(max_abs(a, b) / b.max_abs().max(f64::MIN_POSITIVE))),
            ),
            _ => None,
        };
        (fwd, bwd)
    }
}

/// Runs the simulation and extracts every recovered quantity.
pub fn simulate_ffnn(net: &FfnnParams, inputs: &Tensor, grad_out: Option<&Tensor>) -> Result<SimulatedPass> {
    Simulation::run(net, inputs, grad_out)?.extract()
}

/// Direct evaluation and reverse-mode gradients of `Σ x_L ⊙ grad_out`,
/// in the same layout as [`SimulatedPass`].
pub fn reference_pass(net: &FfnnParams, inputs: &Tensor, grad_out: &Tensor) -> Result<SimulatedPass> {
    use crate::tensor::Tape;
    let mut tape = Tape::new();
    let x0 = tape.leaf(inputs.clone());
    let mut zs = vec![x0];
    let mut xs = vec![x0];
    let mut cur = x0;
    for layer in &net.layers {
        let w = tape.constant(layer.weight.clone());
        let b = tape.constant(Tensor::row(layer.bias.clone()));
        let h = tape.matmul_nt(cur, w)?;
        let z = tape.add_row(h, b)?;
        let x = layer.activation.pointwise().apply(&mut tape, z);
        zs.push(z);
        xs.push(x);
        cur = x;
    }
    let g = tape.constant(grad_out.clone());
    let prod = tape.mul(cur, g)?;
    let loss = tape.sum(prod);
    let grads = tape.backward(loss)?;
    let val = |vs: &[crate::tensor::Var]| vs.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>();
    let grad = |vs: &[crate::tensor::Var]| vs.iter().map(|&v| grads.wrt(v, &tape)).collect::<Vec<_>>();
    Ok(SimulatedPass {
        z: val(&zs),
        x: val(&xs),
        grad_z: Some(grad(&zs)),
        grad_x: Some(grad(&xs)),
    })
}
