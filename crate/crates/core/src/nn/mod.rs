//! Minimal dense-tensor network core: fixed layer set with hand-written
//! forward and backward passes, an MSE objective, and seeded SGD optimizers.

pub mod conv;
pub mod gradcheck;
pub mod optim;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use conv::{conv2d_backward, conv2d_forward};
pub use optim::{OptimizerKind, OptimizerState};

/// Declarative layer description; parameters live in [`Layer`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Relu,
    Sigmoid,
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }
}

/// A layer together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d {
        kernel: Tensor, // [C_out, C_in, kH, kW]
        bias: Tensor,   // [C_out]
        stride: usize,
        pad: usize,
    },
    Dense {
        weight: Tensor, // [out, in]
        bias: Tensor,   // [out]
    },
    Relu,
    Sigmoid,
    Flatten,
    Reshape {
        shape: Vec<usize>,
    },
}

/// Glorot-uniform limit for a weight tensor.
fn glorot(fan_in: usize, fan_out: usize) -> f32 {
    (6.0 / (fan_in + fan_out) as f32).sqrt()
}

fn uniform_tensor(shape: Vec<usize>, limit: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("extent product matches generated length")
}

impl Layer {
    /// Fresh layer with seeded Glorot-uniform weights and zero biases.
    pub fn init(spec: &LayerSpec, rng: &mut ChaCha8Rng) -> Self {
        match *spec {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kh,
                kw,
                stride,
                pad,
            } => {
                let limit = glorot(in_channels * kh * kw, out_channels * kh * kw);
                Layer::Conv2d {
                    kernel: uniform_tensor(vec![out_channels, in_channels, kh, kw], limit, rng),
                    bias: Tensor::zeros(vec![out_channels]),
                    stride,
                    pad,
                }
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                let limit = glorot(in_dim, out_dim);
                Layer::Dense {
                    weight: uniform_tensor(vec![out_dim, in_dim], limit, rng),
                    bias: Tensor::zeros(vec![out_dim]),
                }
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Sigmoid => Layer::Sigmoid,
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Reshape { ref shape } => Layer::Reshape {
                shape: shape.clone(),
            },
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Conv2d {
                kernel,
                stride,
                pad,
                ..
            } => {
                let s = kernel.shape();
                LayerSpec::Conv2d {
                    in_channels: s[1],
                    out_channels: s[0],
                    kh: s[2],
                    kw: s[3],
                    stride: *stride,
                    pad: *pad,
                }
            }
            Layer::Dense { weight, .. } => LayerSpec::Dense {
                in_dim: weight.shape()[1],
                out_dim: weight.shape()[0],
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::Sigmoid => LayerSpec::Sigmoid,
            Layer::Flatten => LayerSpec::Flatten,
            Layer::Reshape { shape } => LayerSpec::Reshape {
                shape: shape.clone(),
            },
        }
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv2d {
                kernel,
                bias,
                stride,
                pad,
            } => conv2d_forward(input, kernel, bias.data(), *stride, *pad),
            Layer::Dense { weight, bias } => {
                let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
                if input.len() != in_dim {
                    return Err(Error::ShapeMismatch(format!(
                        "dense expects {} inputs, got {} (shape {:?})",
                        in_dim,
                        input.len(),
                        input.shape()
                    )));
                }
                let x = input.data();
                let w = weight.data();
                let mut out = bias.data().to_vec();
                for (o, out_v) in out.iter_mut().enumerate() {
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    let mut acc = 0.0f32;
                    for (wv, xv) in row.iter().zip(x) {
                        acc += wv * xv;
                    }
                    *out_v += acc;
                }
                Tensor::new(vec![out_dim], out)
            }
            Layer::Relu => Ok(Tensor::new(
                input.shape().to_vec(),
                input.data().iter().map(|&v| v.max(0.0)).collect(),
            )?),
            Layer::Sigmoid => Ok(Tensor::new(
                input.shape().to_vec(),
                input.data().iter().map(|&v| sigmoid(v)).collect(),
            )?),
            Layer::Flatten => input.reshaped(vec![input.len()]),
            Layer::Reshape { shape } => input.reshaped(shape.clone()).map_err(|_| {
                Error::ShapeMismatch(format!(
                    "reshape to {:?} incompatible with input shape {:?}",
                    shape,
                    input.shape()
                ))
            }),
        }
    }

    /// Returns (parameter gradients, input gradient).
    ///
    /// `input`/`output` come from the forward cache for this layer.
    fn backward(&self, input: &Tensor, output: &Tensor, grad_out: &Tensor) -> Result<(LayerGrads, Tensor)> {
        if !grad_out.same_shape(output) {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient shape {:?} does not match cached output {:?}",
                grad_out.shape(),
                output.shape()
            )));
        }
        match self {
            Layer::Conv2d {
                kernel,
                bias,
                stride,
                pad,
            } => {
                let (kg, bg, ig) =
                    conv2d_backward(input, kernel, bias.data(), *stride, *pad, grad_out)?;
                Ok((LayerGrads::Conv2d { kernel: kg, bias: bg }, ig))
            }
            Layer::Dense { weight, .. } => {
                let (out_dim, in_dim) = (weight.shape()[0], weight.shape()[1]);
                let x = input.data();
                let w = weight.data();
                let g = grad_out.data();
                let mut wgrad = vec![0.0f32; out_dim * in_dim];
                let mut igrad = vec![0.0f32; in_dim];
                for o in 0..out_dim {
                    let gv = g[o];
                    let row = &w[o * in_dim..(o + 1) * in_dim];
                    let wrow = &mut wgrad[o * in_dim..(o + 1) * in_dim];
                    for i in 0..in_dim {
                        wrow[i] = gv * x[i];
                        igrad[i] += gv * row[i];
                    }
                }
                Ok((
                    LayerGrads::Dense {
                        weight: Tensor::new(vec![out_dim, in_dim], wgrad)?,
                        bias: Tensor::new(vec![out_dim], g.to_vec())?,
                    },
                    Tensor::new(vec![in_dim], igrad)?,
                ))
            }
            Layer::Relu => {
                let data = input
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                Ok((LayerGrads::None, Tensor::new(input.shape().to_vec(), data)?))
            }
            Layer::Sigmoid => {
                let data = output
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&y, &g)| g * y * (1.0 - y))
                    .collect();
                Ok((LayerGrads::None, Tensor::new(input.shape().to_vec(), data)?))
            }
            Layer::Flatten | Layer::Reshape { .. } => Ok((
                LayerGrads::None,
                grad_out.reshaped(input.shape().to_vec())?,
            )),
        }
    }

    fn params(&self) -> Vec<&Tensor> {
        match self {
            Layer::Conv2d { kernel, bias, .. } => vec![kernel, bias],
            Layer::Dense { weight, bias } => vec![weight, bias],
            _ => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv2d { kernel, bias, .. } => vec![kernel, bias],
            Layer::Dense { weight, bias } => vec![weight, bias],
            _ => vec![],
        }
    }
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-layer parameter gradients, shape-congruent with the layer parameters.
#[derive(Debug, Clone)]
pub enum LayerGrads {
    Conv2d { kernel: Tensor, bias: Tensor },
    Dense { weight: Tensor, bias: Tensor },
    None,
}

/// Gradients for every parameter of a network plus the network input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
    pub input: Tensor,
}

impl Gradients {
    /// Flattened view matching [`Network::params`] order.
    pub fn param_grads(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for lg in &self.layers {
            match lg {
                LayerGrads::Conv2d { kernel, bias } => {
                    out.push(kernel);
                    out.push(bias);
                }
                LayerGrads::Dense { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                LayerGrads::None => {}
            }
        }
        out
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        let mine = self.param_grads_mut();
        let theirs = other.param_grads();
        if mine.len() != theirs.len() {
            return Err(Error::ShapeMismatch(
                "gradient accumulation across mismatched networks".into(),
            ));
        }
        for (m, t) in mine.into_iter().zip(theirs) {
            if !m.same_shape(t) {
                return Err(Error::ShapeMismatch(
                    "gradient accumulation across mismatched shapes".into(),
                ));
            }
            for (a, b) in m.data_mut().iter_mut().zip(t.data()) {
                *a += b;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f32) {
        for t in self.param_grads_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    fn param_grads_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for lg in &mut self.layers {
            match lg {
                LayerGrads::Conv2d { kernel, bias } => {
                    out.push(kernel);
                    out.push(bias);
                }
                LayerGrads::Dense { weight, bias } => {
                    out.push(weight);
                    out.push(bias);
                }
                LayerGrads::None => {}
            }
        }
        out
    }
}

/// Activation cache from one forward pass: the input to every layer plus the
/// final output (`values.len() == layers + 1`).
#[derive(Debug, Clone)]
pub struct Cache {
    values: Vec<Tensor>,
}

impl Cache {
    pub fn output(&self) -> &Tensor {
        self.values.last().expect("cache holds at least the input")
    }
}

/// A sequential chain of layers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    /// Build from specs with seeded initialization.
    pub fn init(specs: &[LayerSpec], rng: &mut ChaCha8Rng) -> Self {
        Self {
            layers: specs.iter().map(|s| Layer::init(s, rng)).collect(),
        }
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(Layer::spec).collect()
    }

    /// Rebuild from specs and a stream of parameter tensors (checkpoint load).
    pub fn from_specs_and_params<I>(specs: &[LayerSpec], params: &mut I, path: &str) -> Result<Self>
    where
        I: Iterator<Item = Tensor>,
    {
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let layer = match *spec {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kh,
                    kw,
                    stride,
                    pad,
                } => {
                    let kernel = next_param(params, path)?;
                    let bias = next_param(params, path)?;
                    if kernel.shape() != [out_channels, in_channels, kh, kw]
                        || bias.shape() != [out_channels]
                    {
                        return Err(Error::format(path, "conv2d parameter shape mismatch"));
                    }
                    Layer::Conv2d {
                        kernel,
                        bias,
                        stride,
                        pad,
                    }
                }
                LayerSpec::Dense { in_dim, out_dim } => {
                    let weight = next_param(params, path)?;
                    let bias = next_param(params, path)?;
                    if weight.shape() != [out_dim, in_dim] || bias.shape() != [out_dim] {
                        return Err(Error::format(path, "dense parameter shape mismatch"));
                    }
                    Layer::Dense { weight, bias }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Sigmoid => Layer::Sigmoid,
                LayerSpec::Flatten => Layer::Flatten,
                LayerSpec::Reshape { ref shape } => Layer::Reshape {
                    shape: shape.clone(),
                },
            };
            layers.push(layer);
        }
        Ok(Self { layers })
    }

    /// Forward pass, returning the output and the cache needed by backward.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, Cache)> {
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer
                .forward(values.last().expect("pushed above"))
                .map_err(|e| {
                    Error::ShapeMismatch(format!(
                        "layer {} ({}): {}",
                        i,
                        layer.spec().kind_name(),
                        e
                    ))
                })?;
            values.push(out);
        }
        let output = values.last().expect("non-empty").clone();
        Ok((output, Cache { values }))
    }

    /// Output only; discards the cache.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward(input)?.0)
    }

    /// Backward pass from an upstream gradient on the network output.
    pub fn backward(&self, cache: &Cache, grad_output: &Tensor) -> Result<Gradients> {
        if cache.values.len() != self.layers.len() + 1 {
            return Err(Error::ShapeMismatch(format!(
                "cache holds {} activations, network with {} layers expects {}",
                cache.values.len(),
                self.layers.len(),
                self.layers.len() + 1
            )));
        }
        let mut grad = grad_output.clone();
        let mut layer_grads = vec![LayerGrads::None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (pg, ig) = layer
                .backward(&cache.values[i], &cache.values[i + 1], &grad)
                .map_err(|e| {
                    Error::ShapeMismatch(format!(
                        "layer {} ({}): {}",
                        i,
                        layer.spec().kind_name(),
                        e
                    ))
                })?;
            layer_grads[i] = pg;
            grad = ig;
        }
        Ok(Gradients {
            layers: layer_grads,
            input: grad,
        })
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::params).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(Layer::params_mut).collect()
    }

    pub fn param_tensors(&self) -> Vec<Tensor> {
        self.params().into_iter().cloned().collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Zero-shaped gradients for accumulation.
    pub fn zero_grads(&self, input_shape: &[usize]) -> Gradients {
        let layers = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d { kernel, bias, .. } => LayerGrads::Conv2d {
                    kernel: Tensor::zeros(kernel.shape().to_vec()),
                    bias: Tensor::zeros(bias.shape().to_vec()),
                },
                Layer::Dense { weight, bias } => LayerGrads::Dense {
                    weight: Tensor::zeros(weight.shape().to_vec()),
                    bias: Tensor::zeros(bias.shape().to_vec()),
                },
                _ => LayerGrads::None,
            })
            .collect();
        Gradients {
            layers,
            input: Tensor::zeros(input_shape.to_vec()),
        }
    }
}

fn next_param<I: Iterator<Item = Tensor>>(params: &mut I, path: &str) -> Result<Tensor> {
    params
        .next()
        .ok_or_else(|| Error::format(path, "checkpoint holds fewer tensors than the layer chain needs"))
}

/// Mean-squared-error objective.
///
/// Returns the scalar loss (f64 accumulation) and the gradient tensor
/// `2 * (pred - target) / N`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if !pred.same_shape(target) {
        return Err(Error::ShapeMismatch(format!(
            "mse_loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len();
    if n == 0 {
        return Err(Error::Config("mse_loss over zero elements".into()));
    }
    let mut sum = 0.0f64;
    let mut grad = vec![0.0f32; n];
    let scale = 2.0 / n as f32;
    for i in 0..n {
        let d = pred.data()[i] - target.data()[i];
        sum += (d as f64) * (d as f64);
        grad[i] = scale * d;
    }
    Ok((sum / n as f64, Tensor::new(pred.shape().to_vec(), grad)?))
}
