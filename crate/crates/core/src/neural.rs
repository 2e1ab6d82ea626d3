//! Feed-forward networks with hand-written backpropagation.
//!
//! Hidden layers apply the configured nonlinearity; the output layer is
//! linear. Weights are stored row-major, one row per output unit.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::RandomSource;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    #[inline]
    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.inputs..(o + 1) * self.inputs]
    }

    /// `out[o] = b[o] + W[o] . x`
    pub fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (o, slot) in out.iter_mut().enumerate() {
            *slot = self.biases[o] + dot(self.row(o), x);
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Per-layer parameter gradients, same layout as the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        check_same_shape(self, other)?;
        for (a, b) in self
            .weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .zip(other.weights.iter().chain(other.biases.iter()))
        {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|g| *g == 0.0))
    }

    /// Flattened view in network parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

fn check_same_shape(a: &Gradients, b: &Gradients) -> Result<()> {
    if a.weights.len() != b.weights.len() {
        return Err(Error::Shape {
            expected: a.weights.len(),
            actual: b.weights.len(),
        });
    }
    for (x, y) in a.weights.iter().zip(&b.weights).chain(a.biases.iter().zip(&b.biases)) {
        if x.len() != y.len() {
            return Err(Error::Shape {
                expected: x.len(),
                actual: y.len(),
            });
        }
    }
    Ok(())
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct Trace {
    input: Vec<f64>,
    /// Pre-activation of every layer; the last entry is the output.
    pre: Vec<Vec<f64>>,
    /// Post-activation of every hidden layer.
    post: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().expect("network has a layer")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpNetwork {
    layer_sizes: Vec<usize>,
    activation: Activation,
    layers: Vec<Layer>,
}

impl MlpNetwork {
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::config(
                "layer_sizes",
                "need at least an input and an output size",
            ));
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::config("layer_sizes", "layer sizes must be positive"));
        }
        let layers = layer_sizes
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Ok(MlpNetwork {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            layers,
        })
    }

    /// Uniform initialization in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(layer_sizes: &[usize], activation: Activation, rng: &mut RandomSource) -> Result<Self> {
        let mut net = MlpNetwork::zeros(layer_sizes, activation)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs as f64).sqrt();
            for p in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: input.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.outputs];
            layer.affine(&x, &mut out);
            if k < last {
                out.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            x = out;
        }
        Ok(x)
    }

    /// Scalar output of a single-output network.
    pub fn forward_scalar(&self, input: &[f64]) -> Result<f64> {
        if self.output_dim() != 1 {
            return Err(Error::Shape {
                expected: 1,
                actual: self.output_dim(),
            });
        }
        Ok(self.forward(input)?[0])
    }

    /// Finishes a forward pass given the first layer's pre-activation.
    /// `scratch` is reused between calls.
    pub fn forward_from_first_preactivation(&self, pre: &[f64], scratch: &mut Vec<f64>) -> f64 {
        debug_assert_eq!(pre.len(), self.layers[0].outputs);
        if self.layers.len() == 1 {
            return pre[0];
        }
        let mut x: Vec<f64> = pre.iter().map(|v| self.activation.apply(*v)).collect();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate().skip(1) {
            scratch.clear();
            scratch.resize(layer.outputs, 0.0);
            layer.affine(&x, scratch);
            if k < last {
                scratch.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            std::mem::swap(&mut x, scratch);
        }
        x[0]
    }

    /// Adds `W1[:, offset..offset + x.len()] . x` into `out`.
    pub fn first_layer_block(&self, offset: usize, x: &[f64], out: &mut [f64]) {
        let layer = &self.layers[0];
        for (o, slot) in out.iter_mut().enumerate() {
            *slot += dot(&layer.row(o)[offset..offset + x.len()], x);
        }
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<Trace> {
        self.check_input(input)?;
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(last);
        for (k, layer) in self.layers.iter().enumerate() {
            let x: &[f64] = if k == 0 { input } else { &post[k - 1] };
            let mut z = vec![0.0; layer.outputs];
            layer.affine(x, &mut z);
            if k < last {
                post.push(z.iter().map(|v| self.activation.apply(*v)).collect());
            }
            pre.push(z);
        }
        Ok(Trace {
            input: input.to_vec(),
            pre,
            post,
        })
    }

    /// Backpropagates `output_grad` (gradient of the loss with respect to
    /// the network output) through a recorded pass. Parameter gradients are
    /// added into `grads` when given; the input gradient is returned.
    pub fn backward(
        &self,
        trace: &Trace,
        output_grad: &[f64],
        mut grads: Option<&mut Gradients>,
    ) -> Result<Vec<f64>> {
        if output_grad.len() != self.output_dim() {
            return Err(Error::Shape {
                expected: self.output_dim(),
                actual: output_grad.len(),
            });
        }
        let mut delta = output_grad.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let x: &[f64] = if k == 0 { &trace.input } else { &trace.post[k - 1] };
            if let Some(g) = grads.as_deref_mut() {
                let gw = &mut g.weights[k];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(x).for_each(|(w, xi)| *w += d * xi);
                }
                g.biases[k].iter_mut().zip(&delta).for_each(|(b, d)| *b += d);
            }
            let mut below = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                below.iter_mut().zip(layer.row(o)).for_each(|(b, w)| *b += d * w);
            }
            if k > 0 {
                for (b, z) in below.iter_mut().zip(&trace.pre[k - 1]) {
                    *b *= self.activation.derivative(*z);
                }
            }
            delta = below;
        }
        Ok(delta)
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// loss gradient at the output.
    pub fn grad_params(&self, input: &[f64], loss_grad_at_output: &[f64]) -> Result<Gradients> {
        let trace = self.forward_trace(input)?;
        let mut grads = self.zero_gradients();
        self.backward(&trace, loss_grad_at_output, Some(&mut grads))?;
        Ok(grads)
    }

    /// Gradient of the scalar output with respect to the input.
    pub fn grad_input(&self, input: &[f64]) -> Result<Vec<f64>> {
        if self.output_dim() != 1 {
            return Err(Error::Shape {
                expected: 1,
                actual: self.output_dim(),
            });
        }
        let trace = self.forward_trace(input)?;
        self.backward(&trace, &[1.0], None)
    }

    /// `theta <- theta - eta * gradient`. Faults if any parameter becomes
    /// non-finite.
    pub fn sgd_step(&mut self, gradient: &Gradients, eta: f64) -> Result<()> {
        check_same_shape(&self.zero_gradients(), gradient)?;
        for (k, layer) in self.layers.iter_mut().enumerate() {
            layer
                .weights
                .iter_mut()
                .zip(&gradient.weights[k])
                .for_each(|(w, g)| *w -= eta * g);
            layer
                .biases
                .iter_mut()
                .zip(&gradient.biases[k])
                .for_each(|(b, g)| *b -= eta * g);
        }
        self.check_finite()
    }

    pub fn check_finite(&self) -> Result<()> {
        for (k, layer) in self.layers.iter().enumerate() {
            if layer
                .weights
                .iter()
                .chain(layer.biases.iter())
                .any(|p| !p.is_finite())
            {
                return Err(Error::NumericalFault(format!(
                    "non-finite parameter in layer {k}"
                )));
            }
        }
        Ok(())
    }

    /// Parameters in a fixed order: per layer, weights then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::Shape {
                expected: self.parameter_count(),
                actual: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for l in &mut self.layers {
            for p in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *p = it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Hex SHA-256 over the bit patterns of all parameters.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in self.flatten() {
            h.update(p.to_bits().to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn same_architecture(&self, other: &MlpNetwork) -> bool {
        self.layer_sizes == other.layer_sizes && self.activation == other.activation
    }
}

/// A live network and its slowly tracking target copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetPair {
    pub live: MlpNetwork,
    pub target: MlpNetwork,
    pub tau: f64,
}

impl TargetPair {
    pub fn new(live: MlpNetwork, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::config("tau", format!("{tau} is not in (0, 1]")));
        }
        Ok(TargetPair {
            target: live.clone(),
            live,
            tau,
        })
    }

    /// `target <- (1 - tau) * target + tau * live`.
    pub fn soft_update(&mut self) {
        let tau = self.tau;
        for (t, l) in self.target.layers.iter_mut().zip(&self.live.layers) {
            for (tp, lp) in t
                .weights
                .iter_mut()
                .zip(&l.weights)
                .chain(t.biases.iter_mut().zip(&l.biases))
            {
                *tp = (1.0 - tau) * *tp + tau * lp;
            }
        }
    }
}

pub const CHECKPOINT_FORMAT: &str = "slate-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NetworkCheckpoint {
    format: String,
    version: u32,
    network: MlpNetwork,
}

impl MlpNetwork {
    pub fn to_checkpoint(&self) -> Result<String> {
        Ok(serde_json::to_string(&NetworkCheckpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            network: self.clone(),
        })?)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let ck: NetworkCheckpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::config(
                "checkpoint",
                format!("unsupported checkpoint {} v{}", ck.format, ck.version),
            ));
        }
        ck.network.validate()?;
        Ok(ck.network)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        MlpNetwork::from_checkpoint(&std::fs::read_to_string(path)?)
    }

    /// Structural consistency of deserialized networks.
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() != self.layers.len() + 1 {
            return Err(Error::config("layer_sizes", "does not match layer count"));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.inputs != self.layer_sizes[k]
                || l.outputs != self.layer_sizes[k + 1]
                || l.weights.len() != l.inputs * l.outputs
                || l.biases.len() != l.outputs
            {
                return Err(Error::config("layers", format!("layer {k} is malformed")));
            }
        }
        self.check_finite()
    }
}
