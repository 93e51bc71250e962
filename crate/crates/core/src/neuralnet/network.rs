use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative evaluated at the pre-activation value.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// `h = f(W·x + b)`; `weights` is out × in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// He-uniform weights, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        let data = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        DenseLayer {
            weights: Matrix::from_vec(outputs, inputs, data).expect("sized above"),
            bias: vec![0.0; outputs],
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormLayer {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormLayer {
    pub fn new(units: usize) -> Self {
        BatchNormLayer {
            gamma: vec![1.0; units],
            beta: vec![0.0; units],
            running_mean: vec![0.0; units],
            running_var: vec![1.0; units],
            momentum: 0.99,
            epsilon: 1e-5,
        }
    }
}

/// Dense affine transform, optional batch normalization, then activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub dense: DenseLayer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm: Option<BatchNormLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub blocks: Vec<Block>,
}

/// Per-block intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct BlockCache {
    input: Matrix,
    /// Pre-activation values (after batch normalization when present).
    pre_activation: Matrix,
    norm: Option<NormCache>,
}

#[derive(Debug, Clone)]
struct NormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub mode: Mode,
    pub caches: Vec<BlockCache>,
    pub output: Matrix,
}

impl Forward {
    /// Activations of every block, in order.
    pub fn activations(&self) -> Vec<&Matrix> {
        self.caches
            .iter()
            .skip(1)
            .map(|c| &c.input)
            .chain(std::iter::once(&self.output))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub gamma: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<BlockGrads>,
    /// dL/d(network input).
    pub input: Matrix,
}

impl Gradients {
    /// Gradient tensors in the same order as [`Network::params_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in &self.blocks {
            out.push(g.weights.as_slice());
            out.push(g.bias.as_slice());
            if let (Some(gamma), Some(beta)) = (&g.gamma, &g.beta) {
                out.push(gamma.as_slice());
                out.push(beta.as_slice());
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl Network {
    pub fn from_specs<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Empty("network has no layers"));
        }
        for pair in specs.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Dimension {
                    context: "layer chain",
                    expected: pair[0].outputs,
                    actual: pair[1].inputs,
                });
            }
        }
        let blocks = specs
            .iter()
            .map(|s| Block {
                dense: DenseLayer::he_uniform(s.inputs, s.outputs, s.activation, rng),
                norm: s.batch_norm.then(|| BatchNormLayer::new(s.outputs)),
            })
            .collect();
        Ok(Network { blocks })
    }

    /// Fully connected chain over `sizes`: hidden blocks use `hidden` and
    /// batch normalization when `batch_norm`; the last block uses `output`
    /// and no normalization.
    pub fn mlp<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        batch_norm: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidParameter(
                "a network needs at least an input and an output size".into(),
            ));
        }
        let last = sizes.len() - 2;
        let specs: Vec<LayerSpec> = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                inputs: w[0],
                outputs: w[1],
                activation: if i == last { output } else { hidden },
                batch_norm: batch_norm && i != last,
            })
            .collect();
        Self::from_specs(&specs, rng)
    }

    pub fn input_size(&self) -> usize {
        self.blocks[0].dense.inputs()
    }

    pub fn output_size(&self) -> usize {
        self.blocks[self.blocks.len() - 1].dense.outputs()
    }

    pub fn has_batch_norm(&self) -> bool {
        self.blocks.iter().any(|b| b.norm.is_some())
    }

    /// Layer sizes from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_size())
            .chain(self.blocks.iter().map(|b| b.dense.outputs()))
            .collect()
    }

    /// Pure forward pass. Train mode normalizes with batch statistics (the
    /// running statistics are untouched; see [`Network::commit_batch_stats`]),
    /// Infer mode with the running statistics.
    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<Forward> {
        if x.cols() != self.input_size() {
            return Err(Error::Dimension {
                context: "network input",
                expected: self.input_size(),
                actual: x.cols(),
            });
        }
        if x.rows() == 0 {
            return Err(Error::Empty("batch"));
        }
        if mode == Mode::Train && self.has_batch_norm() && x.rows() < 2 {
            return Err(Error::BatchTooSmall(x.rows()));
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for block in &self.blocks {
            let mut z = h.mul_transposed(&block.dense.weights);
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&block.dense.bias) {
                    *v += b;
                }
            }
            let norm = match &block.norm {
                None => None,
                Some(bn) => Some(normalize(&mut z, bn, mode)),
            };
            let act = block.dense.activation;
            let out = z.map(|v| act.apply(v));
            caches.push(BlockCache {
                input: h,
                pre_activation: z,
                norm,
            });
            h = out;
        }
        Ok(Forward {
            mode,
            caches,
            output: h,
        })
    }

    /// Inference on a batch; never mutates the network.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x, Mode::Infer)?.output)
    }

    /// Folds the batch statistics of a Train-mode pass into the running
    /// statistics: `running = momentum·running + (1 − momentum)·batch`.
    pub fn commit_batch_stats(&mut self, fwd: &Forward) {
        if fwd.mode != Mode::Train {
            return;
        }
        for (block, cache) in self.blocks.iter_mut().zip(&fwd.caches) {
            if let (Some(bn), Some(nc)) = (block.norm.as_mut(), cache.norm.as_ref()) {
                let m = bn.momentum;
                for j in 0..bn.running_mean.len() {
                    bn.running_mean[j] = m * bn.running_mean[j] + (1.0 - m) * nc.batch_mean[j];
                    bn.running_var[j] = m * bn.running_var[j] + (1.0 - m) * nc.batch_var[j];
                }
            }
        }
    }

    /// Train-mode forward that also updates the running statistics.
    pub fn forward_train(&mut self, x: &Matrix) -> Result<Forward> {
        let fwd = self.forward(x, Mode::Train)?;
        self.commit_batch_stats(&fwd);
        Ok(fwd)
    }

    /// Backpropagates `grad_output` (dL/d output, same shape as the output)
    /// through a cached forward pass.
    pub fn backward(&self, fwd: &Forward, grad_output: &Matrix) -> Result<Gradients> {
        if grad_output.rows() != fwd.output.rows() || grad_output.cols() != fwd.output.cols() {
            return Err(Error::Dimension {
                context: "output gradient",
                expected: fwd.output.cols(),
                actual: grad_output.cols(),
            });
        }
        let mut grad = grad_output.clone();
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (block, cache) in self.blocks.iter().zip(&fwd.caches).rev() {
            let act = block.dense.activation;
            // through the activation
            for (g, z) in grad
                .as_mut_slice()
                .iter_mut()
                .zip(cache.pre_activation.as_slice())
            {
                *g *= act.derivative(*z);
            }
            let (gamma, beta) = match (&block.norm, &cache.norm) {
                (Some(bn), Some(nc)) => {
                    let (dgamma, dbeta) = normalize_backward(&mut grad, bn, nc, fwd.mode);
                    (Some(dgamma), Some(dbeta))
                }
                _ => (None, None),
            };
            let weights = grad.transposed_mul(&cache.input);
            let bias = grad.column_sums();
            let next = grad.mul(&block.dense.weights);
            blocks.push(BlockGrads {
                weights,
                bias,
                gamma,
                beta,
            });
            grad = next;
        }
        blocks.reverse();
        Ok(Gradients {
            blocks,
            input: grad,
        })
    }

    /// Parameter tensors: per block weights, bias, then gamma and beta when
    /// batch-normalized.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(b.dense.weights.as_mut_slice());
            out.push(b.dense.bias.as_mut_slice());
            if let Some(bn) = b.norm.as_mut() {
                out.push(bn.gamma.as_mut_slice());
                out.push(bn.beta.as_mut_slice());
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| {
            b.dense.weights.as_slice().iter().all(|v| v.is_finite())
                && b.dense.bias.iter().all(|v| v.is_finite())
                && b.norm.as_ref().is_none_or(|n| {
                    n.gamma
                        .iter()
                        .chain(&n.beta)
                        .chain(&n.running_mean)
                        .chain(&n.running_var)
                        .all(|v| v.is_finite())
                })
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Model("network has no layers".into()));
        }
        let mut prev = self.input_size();
        for (i, b) in self.blocks.iter().enumerate() {
            let d = &b.dense;
            if d.inputs() != prev || d.bias.len() != d.outputs() {
                return Err(Error::Model(format!("layer {i} shapes are inconsistent")));
            }
            if let Some(bn) = &b.norm {
                let n = d.outputs();
                if bn.gamma.len() != n
                    || bn.beta.len() != n
                    || bn.running_mean.len() != n
                    || bn.running_var.len() != n
                {
                    return Err(Error::Model(format!("layer {i} batch-norm shapes")));
                }
                if bn.epsilon <= 0.0 || bn.running_var.iter().any(|v| *v < 0.0) {
                    return Err(Error::Model(format!("layer {i} batch-norm statistics")));
                }
            }
            prev = d.outputs();
        }
        if !self.is_finite() {
            return Err(Error::Model("non-finite parameter".into()));
        }
        Ok(())
    }
}

fn normalize(z: &mut Matrix, bn: &BatchNormLayer, mode: Mode) -> NormCache {
    let units = z.cols();
    let (mean, var) = match mode {
        Mode::Train => {
            let n = z.rows() as f64;
            let mean: Vec<f64> = z.column_sums().into_iter().map(|s| s / n).collect();
            let mut var = vec![0.0; units];
            for r in 0..z.rows() {
                for (j, v) in z.row(r).iter().enumerate() {
                    let d = v - mean[j];
                    var[j] += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            (mean, var)
        }
        Mode::Infer => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + bn.epsilon).sqrt()).collect();
    let mut normalized = Matrix::zeros(z.rows(), units);
    for r in 0..z.rows() {
        let xr = normalized.row_mut(r);
        for j in 0..units {
            xr[j] = (z[(r, j)] - mean[j]) * inv_std[j];
        }
        let zr = z.row_mut(r);
        for j in 0..units {
            zr[j] = bn.gamma[j] * xr[j] + bn.beta[j];
        }
    }
    NormCache {
        normalized,
        inv_std,
        batch_mean: mean,
        batch_var: var,
    }
}

/// Replaces `grad` (dL/d normalized-and-shifted output) with dL/d(affine
/// output) and returns (dgamma, dbeta).
fn normalize_backward(
    grad: &mut Matrix,
    bn: &BatchNormLayer,
    nc: &NormCache,
    mode: Mode,
) -> (Vec<f64>, Vec<f64>) {
    let units = grad.cols();
    let rows = grad.rows();
    let mut dgamma = vec![0.0; units];
    let mut dbeta = vec![0.0; units];
    for r in 0..rows {
        for j in 0..units {
            let g = grad[(r, j)];
            dgamma[j] += g * nc.normalized[(r, j)];
            dbeta[j] += g;
        }
    }
    match mode {
        Mode::Infer => {
            for r in 0..rows {
                for j in 0..units {
                    grad[(r, j)] *= bn.gamma[j] * nc.inv_std[j];
                }
            }
        }
        Mode::Train => {
            // dz = inv_std/B · (B·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)), dx̂ = γ·dy
            let n = rows as f64;
            let mut sum_dxhat = vec![0.0; units];
            let mut sum_dxhat_xhat = vec![0.0; units];
            for r in 0..rows {
                for j in 0..units {
                    let dxhat = grad[(r, j)] * bn.gamma[j];
                    sum_dxhat[j] += dxhat;
                    sum_dxhat_xhat[j] += dxhat * nc.normalized[(r, j)];
                }
            }
            for r in 0..rows {
                for j in 0..units {
                    let dxhat = grad[(r, j)] * bn.gamma[j];
                    grad[(r, j)] = nc.inv_std[j] / n
                        * (n * dxhat - sum_dxhat[j] - nc.normalized[(r, j)] * sum_dxhat_xhat[j]);
                }
            }
        }
    }
    (dgamma, dbeta)
}

/// Mean over the batch of per-sample mean squared error, and its gradient
/// with respect to `output`.
pub fn mse_loss(output: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if output.rows() != target.rows() || output.cols() != target.cols() {
        return Err(Error::Dimension {
            context: "loss target",
            expected: output.cols(),
            actual: target.cols(),
        });
    }
    let scale = 1.0 / (output.rows() * output.cols()) as f64;
    let mut grad = Matrix::zeros(output.rows(), output.cols());
    let mut loss = 0.0;
    for ((g, y), t) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(output.as_slice())
        .zip(target.as_slice())
    {
        let d = y - t;
        loss += d * d;
        *g = 2.0 * d * scale;
    }
    Ok((loss * scale, grad))
}

/// Per-row mean squared error.
pub fn row_mse(output: &Matrix, target: &Matrix) -> Vec<f64> {
    (0..output.rows())
        .map(|r| {
            let n = output.cols() as f64;
            output
                .row(r)
                .iter()
                .zip(target.row(r))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n
        })
        .collect()
}
