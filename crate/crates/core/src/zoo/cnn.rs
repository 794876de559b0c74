use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::activation::{ActivationDescriptor, GroupKind};
use super::ffnn::FfnnLayer;
use super::orbit::{transform_block, OrbitElement};
use crate::error::{Error, Result};
use crate::tensor::{AdamState, Tape, Tensor, Var};

/// Same-padded stride-1 convolution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    /// `[out, in, kh, kw]`.
    pub kernels: Tensor,
    pub bias: Vec<f64>,
    pub activation: ActivationDescriptor,
}

impl ConvLayer {
    pub fn out_channels(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.kernels.shape()[2], self.kernels.shape()[3])
    }
}

/// Convolutions, global average pooling, then a dense head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnParams {
    pub convs: Vec<ConvLayer>,
    pub head: Vec<FfnnLayer>,
    /// Largest kernel extent `(kh, kw)` admitted.
    pub kernel_max: (usize, usize),
}

impl CnnParams {
    pub fn validate(&self) -> Result<()> {
        if self.convs.is_empty() || self.head.is_empty() {
            return Err(Error::InvalidNetwork(
                "a CNN needs at least one convolution and one dense layer".into(),
            ));
        }
        let mut prev = self.convs[0].in_channels();
        for (i, c) in self.convs.iter().enumerate() {
            c.activation.validate()?;
            if c.kernels.shape().len() != 4 || c.bias.len() != c.out_channels() {
                return Err(Error::InvalidNetwork(format!("conv {} is malformed", i + 1)));
            }
            if c.in_channels() != prev {
                return Err(Error::LayerShape {
                    layer: i + 1,
                    expected: prev,
                    got: c.in_channels(),
                });
            }
            let (kh, kw) = c.kernel_size();
            if kh > self.kernel_max.0 || kw > self.kernel_max.1 {
                return Err(Error::KernelTooLarge {
                    got: (kh, kw),
                    max: self.kernel_max,
                });
            }
            prev = c.out_channels();
        }
        for (i, l) in self.head.iter().enumerate() {
            if l.weight.cols() != prev || l.bias.len() != l.weight.rows() {
                return Err(Error::LayerShape {
                    layer: self.convs.len() + i + 1,
                    expected: prev,
                    got: l.weight.cols(),
                });
            }
            prev = l.weight.rows();
        }
        Ok(())
    }

    /// `[c_in, c_1, …, c_K, head widths…]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut d = vec![self.convs[0].in_channels()];
        d.extend(self.convs.iter().map(ConvLayer::out_channels));
        d.extend(self.head.iter().map(|l| l.weight.rows()));
        d
    }

    pub fn activations(&self) -> Vec<ActivationDescriptor> {
        self.convs
            .iter()
            .map(|c| c.activation)
            .chain(self.head.iter().map(|l| l.activation))
            .collect()
    }

    pub fn num_layers(&self) -> usize {
        self.convs.len() + self.head.len()
    }

    /// Kernel-or-weight tensor and bias of layer `l` (0-based).
    pub fn layer(&self, l: usize) -> (&Tensor, &[f64]) {
        if l < self.convs.len() {
            (&self.convs[l].kernels, &self.convs[l].bias)
        } else {
            let h = &self.head[l - self.convs.len()];
            (&h.weight, &h.bias)
        }
    }

    /// `[K1, b1, K2, b2, …, W, b]`, biases as rows.
    pub fn to_tensors(&self) -> Vec<Tensor> {
        (0..self.num_layers())
            .flat_map(|l| {
                let (w, b) = self.layer(l);
                [w.clone(), Tensor::row(b.to_vec())]
            })
            .collect()
    }

    pub fn with_tensors(&self, ts: &[Tensor]) -> Result<Self> {
        if ts.len() != 2 * self.num_layers() {
            return Err(Error::InvalidNetwork("tensor count mismatch".into()));
        }
        let mut out = self.clone();
        let k = self.convs.len();
        for (l, pair) in ts.chunks(2).enumerate() {
            let bias = pair[1].data().to_vec();
            if l < k {
                out.convs[l].kernels = pair[0].clone();
                out.convs[l].bias = bias;
            } else {
                out.head[l - k].weight = pair[0].clone();
                out.head[l - k].bias = bias;
            }
        }
        out.validate()?;
        Ok(out)
    }

    /// Kernels `(out, in, kh, kw)` then bias per convolution, then weight
    /// and bias per dense layer.
    pub fn to_flat(&self) -> Vec<f64> {
        self.to_tensors().iter().flat_map(|t| t.data().to_vec()).collect()
    }

    pub fn from_flat(
        dims: &[usize],
        acts: &[ActivationDescriptor],
        n_convs: usize,
        kernel: (usize, usize),
        kernel_max: (usize, usize),
        flat: &[f64],
    ) -> Result<Self> {
        if acts.len() + 1 != dims.len() || n_convs == 0 || n_convs >= acts.len() {
            return Err(Error::InvalidNetwork("CNN layout does not match widths".into()));
        }
        let mut at = 0;
        let mut take = |n: usize| -> Result<Vec<f64>> {
            if at + n > flat.len() {
                return Err(Error::InvalidNetwork("weight file too short".into()));
            }
            at += n;
            Ok(flat[at - n..at].to_vec())
        };
        let mut convs = Vec::new();
        let mut head = Vec::new();
        for (l, w) in dims.windows(2).enumerate() {
            if l < n_convs {
                let k = take(w[1] * w[0] * kernel.0 * kernel.1)?;
                convs.push(ConvLayer {
                    kernels: Tensor::new(vec![w[1], w[0], kernel.0, kernel.1], k)?,
                    bias: take(w[1])?,
                    activation: acts[l],
                });
            } else {
                head.push(FfnnLayer {
                    weight: Tensor::matrix(w[1], w[0], take(w[0] * w[1])?)?,
                    bias: take(w[1])?,
                    activation: acts[l],
                });
            }
        }
        if at != flat.len() {
            return Err(Error::InvalidNetwork("weight file too long".into()));
        }
        let net = CnnParams {
            convs,
            head,
            kernel_max,
        };
        net.validate()?;
        Ok(net)
    }

    /// Random init with weights `U(±scale/√fan_in)` and small biases.
    pub fn random<R: Rng + ?Sized>(
        channels: &[usize],
        classes: usize,
        kernel: (usize, usize),
        act: ActivationDescriptor,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut convs = Vec::new();
        for w in channels.windows(2) {
            let fan = (w[0] * kernel.0 * kernel.1) as f64;
            let s = scale / fan.sqrt();
            let n = w[1] * w[0] * kernel.0 * kernel.1;
            convs.push(ConvLayer {
                kernels: Tensor::new(
                    vec![w[1], w[0], kernel.0, kernel.1],
                    (0..n).map(|_| rng.random_range(-s..s)).collect(),
                )?,
                bias: (0..w[1]).map(|_| rng.random_range(-0.1 * scale..0.1 * scale)).collect(),
                activation: act,
            });
        }
        let last = *channels.last().unwrap();
        let s = scale / (last as f64).sqrt();
        let head = vec![FfnnLayer {
            weight: Tensor::from_fn(classes, last, |_, _| rng.random_range(-s..s)),
            bias: vec![0.0; classes],
            activation: ActivationDescriptor::identity(),
        }];
        let net = CnnParams {
            convs,
            head,
            kernel_max: kernel,
        };
        net.validate()?;
        Ok(net)
    }

    /// Differentiable batched forward. `images` holds one row per pixel
    /// (`batch · h · w` rows, image-major, row-major pixels) and one column
    /// per input channel; `vars` is laid out as [`CnnParams::to_tensors`].
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        images: Var,
        batch: usize,
        height: usize,
        width: usize,
    ) -> Result<Var> {
        let mut h = images;
        for (l, conv) in self.convs.iter().enumerate() {
            let (kh, kw) = conv.kernel_size();
            let table = Rc::new(patch_table(batch, height, width, kh, kw));
            let patches = tape.gather_patches(h, table, kh * kw)?;
            h = tape.matmul_nt(patches, vars[2 * l])?;
            h = tape.add_row(h, vars[2 * l + 1])?;
            h = conv.activation.pointwise().apply(tape, h);
        }
        let hw = height * width;
        let owner: Vec<usize> = (0..batch * hw).map(|r| r / hw).collect();
        h = tape.scatter_add_rows(h, Rc::new(owner), batch)?;
        h = tape.scale(h, 1.0 / hw as f64);
        let k = self.convs.len();
        for (i, layer) in self.head.iter().enumerate() {
            h = tape.matmul_nt(h, vars[2 * (k + i)])?;
            h = tape.add_row(h, vars[2 * (k + i) + 1])?;
            h = layer.activation.pointwise().apply(tape, h);
        }
        Ok(h)
    }
}

/// Same-padding gather table: for each output pixel of each image, the
/// source pixel row of each kernel tap (`None` outside the image).
pub(crate) fn patch_table(
    batch: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
) -> Vec<Option<usize>> {
    let (pt, pl) = ((kh - 1) / 2, (kw - 1) / 2);
    let hw = height * width;
    let mut table = Vec::with_capacity(batch * hw * kh * kw);
    for b in 0..batch {
        for y in 0..height {
            for x in 0..width {
                for dy in 0..kh {
                    for dx in 0..kw {
                        let sy = (y + dy) as isize - pt as isize;
                        let sx = (x + dx) as isize - pl as isize;
                        let inside =
                            sy >= 0 && sx >= 0 && (sy as usize) < height && (sx as usize) < width;
                        table.push(
                            inside.then(|| b * hw + sy as usize * width + sx as usize),
                        );
                    }
                }
            }
        }
    }
    table
}

/// Logits for one image `[c_in, h, w]`.
pub fn cnn_forward(net: &CnnParams, image: &Tensor) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 || s[0] != net.convs[0].in_channels() {
        return Err(Error::ShapeMismatch {
            op: "cnn_forward",
            left: s.to_vec(),
            right: vec![net.convs[0].in_channels()],
        });
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let pixels = Tensor::from_fn(h * w, c, |p, ch| image.data()[ch * h * w + p]);
    let mut tape = Tape::new();
    let vars: Vec<Var> = net.to_tensors().into_iter().map(|t| tape.constant(t)).collect();
    let x = tape.constant(pixels);
    let y = net.forward_tape(&mut tape, &vars, x, 1, h, w)?;
    Ok(tape.value(y).clone())
}

/// Applies an orbit element whose hidden layers are all layers but the
/// first input and the last output.
pub fn apply_orbit_cnn(net: &CnnParams, g: &OrbitElement) -> Result<CnnParams> {
    let acts = net.activations();
    let groups: Vec<GroupKind> = acts[..acts.len() - 1].iter().map(|a| a.group()).collect();
    g.check_against(&net.layer_dims(), &groups)?;
    let n = net.num_layers();
    let mut ts = Vec::with_capacity(2 * n);
    for l in 0..n {
        let (w, b) = net.layer(l);
        let out = (l + 1 < n).then(|| &g.hidden[l]);
        let inp = (l > 0).then(|| &g.hidden[l - 1]);
        let (w2, b2) = transform_block(w, b, out, inp);
        ts.push(w2);
        ts.push(Tensor::row(b2));
    }
    net.with_tensors(&ts)
}

/// Seeded two-class 8×8 task: one Gaussian blob per image, narrow for
/// class 0 and wide for class 1, with random amplitude, center and noise.
#[derive(Clone, Debug)]
pub struct BlobTask {
    pub size: usize,
    /// `[n · size², 1]` pixel rows, image-major.
    pub train_x: Tensor,
    pub train_y: Vec<usize>,
    pub test_x: Tensor,
    pub test_y: Vec<usize>,
}

impl BlobTask {
    pub fn generate(seed: u64, n_train: usize, n_test: usize) -> Self {
        Self::with_noise(seed, n_train, n_test, 0.15)
    }

    /// As [`BlobTask::generate`] with pixel noise of standard deviation `noise`.
    pub fn with_noise(seed: u64, n_train: usize, n_test: usize, noise: f64) -> Self {
        let size = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (train_x, train_y) = blob_images(&mut rng, n_train, size, noise);
        let (test_x, test_y) = blob_images(&mut rng, n_test, size, noise);
        BlobTask {
            size,
            train_x,
            train_y,
            test_x,
            test_y,
        }
    }

    pub fn image(&self, x: &Tensor, i: usize) -> Tensor {
        let hw = self.size * self.size;
        Tensor::new(
            vec![1, self.size, self.size],
            x.data()[i * hw..(i + 1) * hw].to_vec(),
        )
        .expect("image extent")
    }
}

fn blob_images(rng: &mut ChaCha8Rng, n: usize, size: usize, noise: f64) -> (Tensor, Vec<usize>) {
    let noise = Normal::new(0.0, noise.max(0.0)).expect("valid normal");
    let mut data = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let sigma = if label == 0 {
            rng.random_range(0.6..1.1)
        } else {
            rng.random_range(1.4..2.2)
        };
        let amp = rng.random_range(0.6..1.4);
        let cy = rng.random_range(2.0..(size as f64 - 3.0));
        let cx = rng.random_range(2.0..(size as f64 - 3.0));
        for y in 0..size {
            for x in 0..size {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                data.push(amp * (-d2 / (2.0 * sigma * sigma)).exp() + noise.sample(rng));
            }
        }
        labels.push(label);
    }
    (
        Tensor::matrix(n * size * size, 1, data).expect("pixel count"),
        labels,
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CnnTrainConfig {
    pub channels: Vec<usize>,
    pub kernel: (usize, usize),
    pub steps: usize,
    pub lr: f64,
    pub init_scale: f64,
    pub n_train: usize,
    pub n_test: usize,
    /// Pixel noise of the blob task.
    pub noise: f64,
    /// Stop once training accuracy reaches this value.
    pub stop_at_accuracy: Option<f64>,
}

impl Default for CnnTrainConfig {
    fn default() -> Self {
        CnnTrainConfig {
            channels: vec![1, 4, 4],
            kernel: (3, 3),
            steps: 150,
            lr: 0.02,
            init_scale: 1.0,
            n_train: 96,
            n_test: 96,
            noise: 0.15,
            stop_at_accuracy: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CnnFit {
    pub net: CnnParams,
    pub accuracy: f64,
    pub diverged: bool,
}

fn predicted_accuracy(logits: &Tensor, y: &[usize]) -> f64 {
    let correct = (0..y.len())
        .filter(|&i| {
            let row = logits.row_slice(i);
            usize::from(row[1] > row[0]) == y[i]
        })
        .count();
    correct as f64 / y.len().max(1) as f64
}

/// Classification accuracy of `net` on pixel rows `x` with labels `y`.
pub fn cnn_accuracy(net: &CnnParams, x: &Tensor, y: &[usize], size: usize) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = net.to_tensors().into_iter().map(|t| tape.constant(t)).collect();
    let xv = tape.constant(x.clone());
    let logits = net.forward_tape(&mut tape, &vars, xv, y.len(), size, size)?;
    Ok(predicted_accuracy(tape.value(logits), y))
}

/// Trains a ReLU CNN on the blob task drawn from `task_seed`; init uses
/// `init_seed`. Held-out accuracy is measured on a disjoint test split.
pub fn train_toy_cnn(task_seed: u64, init_seed: u64, cfg: &CnnTrainConfig) -> Result<CnnFit> {
    let task = BlobTask::with_noise(task_seed, cfg.n_train, cfg.n_test, cfg.noise);
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let init = CnnParams::random(
        &cfg.channels,
        2,
        cfg.kernel,
        ActivationDescriptor::relu(),
        cfg.init_scale,
        &mut rng,
    )?;
    let mut params = init.to_tensors();
    let mut adam = AdamState::new(&params, cfg.lr);
    let labels = Rc::new(task.train_y.clone());
    let mut net = init;
    let mut diverged = false;
    for _ in 0..cfg.steps {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
        let x = tape.constant(task.train_x.clone());
        let logits = net.forward_tape(&mut tape, &vars, x, cfg.n_train, task.size, task.size)?;
        if let Some(target) = cfg.stop_at_accuracy {
            if predicted_accuracy(tape.value(logits), &labels) >= target {
                break;
            }
        }
        let loss = tape.softmax_cross_entropy(logits, labels.clone())?;
        if !tape.value(loss).item().is_finite() {
            diverged = true;
            break;
        }
        let grads = tape.backward(loss)?;
        let gs: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v, &tape)).collect();
        if adam.step(&mut params, &gs).is_err() {
            diverged = true;
            break;
        }
        net = net.with_tensors(&params)?;
    }
    let accuracy = if diverged {
        0.5
    } else {
        cnn_accuracy(&net, &task.test_x, &task.test_y, task.size)?
    };
    Ok(CnnFit {
        net,
        accuracy,
        diverged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{FfnnParams, LayerAction};

    #[test]
    fn unit_kernels_on_one_pixel_match_dense_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = CnnParams::random(&[3, 5], 2, (1, 1), ActivationDescriptor::relu(), 1.0, &mut rng)
            .unwrap();
        let dense = FfnnParams::new(vec![
            FfnnLayer {
                weight: net.convs[0].kernels.reshape(vec![5, 3]).unwrap(),
                bias: net.convs[0].bias.clone(),
                activation: ActivationDescriptor::relu(),
            },
            net.head[0].clone(),
        ])
        .unwrap();
        let img = Tensor::new(vec![3, 1, 1], vec![0.3, -1.2, 0.8]).unwrap();
        let a = cnn_forward(&net, &img).unwrap();
        let b = dense.forward(&Tensor::row(vec![0.3, -1.2, 0.8])).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn channel_rescaling_preserves_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = CnnParams::random(&[1, 3, 2], 2, (3, 3), ActivationDescriptor::relu(), 1.0, &mut rng)
            .unwrap();
        let g = OrbitElement {
            hidden: vec![
                LayerAction {
                    perm: vec![2, 0, 1],
                    scale: vec![1.0, 3.5, 0.2],
                },
                LayerAction {
                    perm: vec![1, 0],
                    scale: vec![0.7, 2.0],
                },
            ],
        };
        let t = apply_orbit_cnn(&net, &g).unwrap();
        let task = BlobTask::generate(1, 2, 2);
        for i in 0..2 {
            let img = task.image(&task.train_x, i);
            let (a, b) = (cnn_forward(&net, &img).unwrap(), cnn_forward(&t, &img).unwrap());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_kernels_propagate_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net =
            CnnParams::random(&[1, 2], 2, (3, 3), ActivationDescriptor::relu(), 1.0, &mut rng).unwrap();
        net.convs[0].kernels = net.convs[0].kernels.map(|_| 0.0);
        net.convs[0].bias = vec![0.5, -0.5];
        let img = Tensor::full(1, 4, 1.0).reshape(vec![1, 2, 2]).unwrap();
        let logits = cnn_forward(&net, &img).unwrap();
        let h = [0.5, 0.0];
        for k in 0..2 {
            let expect = net.head[0].bias[k]
                + net.head[0].weight.get(k, 0) * h[0]
                + net.head[0].weight.get(k, 1) * h[1];
            assert!((logits.data()[k] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn oversized_kernel_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net =
            CnnParams::random(&[1, 2], 2, (3, 3), ActivationDescriptor::relu(), 1.0, &mut rng).unwrap();
        net.kernel_max = (2, 2);
        assert!(matches!(net.validate(), Err(Error::KernelTooLarge { .. })));
    }
}
