//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! Everything the learners train is an [`Mlp`]: a stack of affine layers,
//! each followed by a fixed [`Activation`]. Batches are row-major
//! `(batch, features)` matrices. Weights are stored `(out, in)`.
//!
//! A forward pass that will be differentiated keeps its intermediate
//! activations in a [`Trace`]; [`Mlp::backward`] consumes that trace plus the
//! gradient of some scalar with respect to the network output and returns
//! the parameter [`Gradients`] together with the gradient with respect to the
//! network input. The input gradient is what lets the actor losses chain
//! through critics and the frozen decoder.

mod adam;
mod gradients;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use adam::{AdamConfig, AdamSnapshot, AdamState};
pub use gradients::{Gradients, LayerGradients};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative written in terms of the activation's output `y = f(x)`.
    #[inline]
    fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// Shape `(out, in)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Intermediate activations of one batched forward pass.
///
/// `activations[0]` is the input batch and `activations[k + 1]` is the output
/// of layer `k`.
#[derive(Debug, Clone)]
pub struct Trace {
    activations: Vec<Array2<f64>>,
}

impl Trace {
    pub fn input(&self) -> &Array2<f64> {
        &self.activations[0]
    }

    pub fn output(&self) -> &Array2<f64> {
        self.activations
            .last()
            .expect("trace holds at least the input")
    }

    pub fn into_output(mut self) -> Array2<f64> {
        self.activations
            .pop()
            .expect("trace holds at least the input")
    }
}

/// Multi-layer perceptron parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "MlpRecord", try_from = "MlpRecord")]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    /// Builds a network with weights and biases drawn uniformly from
    /// `±1/sqrt(fan_in)`.
    ///
    /// `sizes` lists the input width, every hidden width and the output width.
    /// Hidden layers use `hidden`, the last layer uses `output`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Self::build(sizes, hidden, output, |fan_in, n| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        })
    }

    /// Same shapes as [`Mlp::new`] with every parameter set to zero.
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        Self::build(sizes, hidden, output, |_, n| vec![0.0; n])
    }

    fn build(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        mut fill: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::invalid(
                "layer_sizes",
                "need at least an input and an output size",
            ));
        }
        if let Some(pos) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::invalid(
                format!("layer_sizes[{pos}]"),
                "layer sizes must be positive",
            ));
        }
        let n_layers = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, pair)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let weight =
                    Array2::from_shape_vec((fan_out, fan_in), fill(fan_in, fan_in * fan_out))
                        .expect("weight buffer sized to shape");
                let bias = Array1::from(fill(fan_in, fan_out));
                let activation = if k + 1 == n_layers { output } else { hidden };
                Layer {
                    weight,
                    bias,
                    activation,
                }
            })
            .collect();
        Ok(Mlp { layers })
    }

    /// Validates adjacent dimensions and finiteness.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("layers", "network needs at least one layer"));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::shape(
                    "layer bias",
                    layer.output_dim(),
                    layer.bias.len(),
                ));
            }
            if layer.input_dim() == 0 || layer.output_dim() == 0 {
                return Err(Error::invalid(format!("layers[{k}]"), "empty layer"));
            }
            if k > 0 && layers[k - 1].output_dim() != layer.input_dim() {
                return Err(Error::shape(
                    "adjacent layers",
                    layers[k - 1].output_dim(),
                    layer.input_dim(),
                ));
            }
        }
        let mlp = Mlp { layers };
        if !mlp.is_finite() {
            return Err(Error::non_finite("network parameters"));
        }
        Ok(mlp)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Layer::output_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }

    /// True when `other` has identical layer sizes and activations.
    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.activation == b.activation)
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x =
            ArrayView2::from_shape((1, input.len()), input).expect("slice viewed as a single row");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols())?;
        let mut h = self.affine(0, input);
        for k in 1..self.layers.len() {
            h = self.affine(k, h.view());
        }
        Ok(h)
    }

    /// Forward pass that keeps every intermediate activation for [`Mlp::backward`].
    pub fn forward_trace(&self, input: ArrayView2<f64>) -> Result<Trace> {
        self.check_input(input.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_owned());
        for k in 0..self.layers.len() {
            let next = self.affine(k, activations[k].view());
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), width));
        }
        Ok(())
    }

    fn affine(&self, k: usize, x: ArrayView2<f64>) -> Array2<f64> {
        let layer = &self.layers[k];
        let mut out = x.dot(&layer.weight.t());
        out += &layer.bias;
        let act = layer.activation;
        if act != Activation::Identity {
            out.mapv_inplace(|v| act.apply(v));
        }
        out
    }

    /// Reverse-mode pass.
    ///
    /// `output_grad[b, j]` is the derivative of the scalar being
    /// differentiated with respect to output `j` of batch row `b`. Parameter
    /// gradients are summed over the batch; any averaging belongs in
    /// `output_grad`.
    pub fn backward(
        &self,
        trace: &Trace,
        output_grad: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        let out = trace.output();
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::shape(
                "trace depth",
                self.layers.len() + 1,
                trace.activations.len(),
            ));
        }
        if output_grad.dim() != out.dim() {
            return Err(Error::shape(
                "output gradient",
                out.len(),
                output_grad.len(),
            ));
        }
        let mut delta = output_grad.to_owned();
        let mut layer_grads = Vec::with_capacity(self.layers.len());
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let act = layer.activation;
            if act != Activation::Identity {
                Zip::from(&mut delta)
                    .and(&trace.activations[k + 1])
                    .for_each(|d, &y| *d *= act.derivative_at_output(y));
            }
            let weight = delta.t().dot(&trace.activations[k]);
            let bias = delta.sum_axis(Axis(0));
            layer_grads.push(LayerGradients { weight, bias });
            delta = delta.dot(&layer.weight);
        }
        layer_grads.reverse();
        Ok((Gradients::from_layers(layer_grads), delta))
    }

    /// Single-sample convenience wrapper around [`Mlp::forward_trace`] and
    /// [`Mlp::backward`].
    pub fn backward_single(
        &self,
        input: &[f64],
        output_grad: &[f64],
    ) -> Result<(Gradients, Vec<f64>)> {
        let x =
            ArrayView2::from_shape((1, input.len()), input).expect("slice viewed as a single row");
        let trace = self.forward_trace(x)?;
        if output_grad.len() != self.output_dim() {
            return Err(Error::shape(
                "output gradient",
                self.output_dim(),
                output_grad.len(),
            ));
        }
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad)
            .expect("slice viewed as a single row");
        let (grads, input_grad) = self.backward(&trace, g)?;
        Ok((grads, input_grad.into_raw_vec_and_offset().0))
    }

    /// All parameters, layer by layer: weights row-major, then biases.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    /// Inverse of [`Mlp::params_flat`].
    pub fn set_params_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::shape(
                "flat parameter vector",
                self.param_count(),
                values.len(),
            ));
        }
        let mut it = values.iter().copied();
        for layer in &mut self.layers {
            layer
                .weight
                .iter_mut()
                .for_each(|w| *w = it.next().unwrap());
            layer.bias.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    /// SHA-256 over layer sizes, activations and the exact parameter bits.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        self.feed_hash(&mut hasher);
        hex_digest(hasher)
    }

    pub(crate) fn feed_hash(&self, hasher: &mut Sha256) {
        for size in self.layer_sizes() {
            hasher.update((size as u64).to_le_bytes());
        }
        for layer in &self.layers {
            hasher.update([layer.activation.tag()]);
        }
        for v in self.params_flat() {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
}

pub(crate) fn hex_digest(hasher: Sha256) -> String {
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Soft target update: every target parameter becomes
/// `tau * online + (1 - tau) * target`.
pub fn polyak_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid("tau", format!("{tau} is outside (0, 1]")));
    }
    if !target.same_shape(online) {
        return Err(Error::invalid(
            "polyak_update",
            "target and online networks differ in shape",
        ));
    }
    let keep = 1.0 - tau;
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        Zip::from(&mut t.weight)
            .and(&o.weight)
            .for_each(|t, &o| *t = tau * o + keep * *t);
        Zip::from(&mut t.bias)
            .and(&o.bias)
            .for_each(|t, &o| *t = tau * o + keep * *t);
    }
    Ok(())
}

/// On-disk form of an [`Mlp`]: sizes, activations and row-major parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MlpRecord {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl From<Mlp> for MlpRecord {
    fn from(mlp: Mlp) -> Self {
        MlpRecord {
            layer_sizes: mlp.layer_sizes(),
            activations: mlp.layers.iter().map(|l| l.activation).collect(),
            weights: mlp
                .layers
                .iter()
                .map(|l| l.weight.iter().copied().collect())
                .collect(),
            biases: mlp.layers.iter().map(|l| l.bias.to_vec()).collect(),
        }
    }
}

impl TryFrom<MlpRecord> for Mlp {
    type Error = Error;

    fn try_from(rec: MlpRecord) -> Result<Self> {
        let n = rec.layer_sizes.len().saturating_sub(1);
        if n == 0 || rec.activations.len() != n || rec.weights.len() != n || rec.biases.len() != n {
            return Err(Error::Format {
                what: "network record",
                reason: "layer count disagrees across fields".into(),
            });
        }
        let layers = (0..n)
            .map(|k| {
                let (fan_in, fan_out) = (rec.layer_sizes[k], rec.layer_sizes[k + 1]);
                let weight = Array2::from_shape_vec((fan_out, fan_in), rec.weights[k].clone())
                    .map_err(|e| Error::Format {
                        what: "network record",
                        reason: format!("layer {k} weights: {e}"),
                    })?;
                Ok(Layer {
                    weight,
                    bias: Array1::from(rec.biases[k].clone()),
                    activation: rec.activations[k],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers)
    }
}
