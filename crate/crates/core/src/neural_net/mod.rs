//! Fully-connected ELU networks with hand-written reverse-mode gradients.
//!
//! Batches are row-major `(samples × features)` matrices. A layer computes
//! `z = x Wᵀ + b`; hidden layers apply ELU, the output layer is affine.

mod adamax;
mod io;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

pub use adamax::{AdamaxConfig, AdamaxState};
pub use io::{read_mlp, write_mlp, MAGIC};

use crate::{Error, Result};

/// ELU with unit scale: `x` for `x >= 0`, `exp(x) - 1` otherwise.
pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

fn elu_grad(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        x.exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
}

impl MlpSpec {
    pub const DEFAULT_HIDDEN_LAYERS: usize = 5;
    pub const DEFAULT_HIDDEN_WIDTH: usize = 150;

    pub fn new(
        input_dim: usize,
        hidden_layers: usize,
        hidden_width: usize,
        output_dim: usize,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_layers == 0 || hidden_width == 0 || output_dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "network dimensions must be at least 1: {input_dim} in, \
                 {hidden_layers}x{hidden_width} hidden, {output_dim} out"
            )));
        }
        Ok(MlpSpec {
            input_dim,
            hidden_layers,
            hidden_width,
            output_dim,
        })
    }

    /// Five hidden layers of width 150.
    pub fn with_defaults(input_dim: usize, output_dim: usize) -> Self {
        MlpSpec {
            input_dim,
            hidden_layers: Self::DEFAULT_HIDDEN_LAYERS,
            hidden_width: Self::DEFAULT_HIDDEN_WIDTH,
            output_dim,
        }
    }

    /// `(fan_in, fan_out)` of every affine layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.input_dim;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_width));
            fan_in = self.hidden_width;
        }
        dims.push((fan_in, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// Weights `(fan_out × fan_in)` and biases of one affine layer. Also used for
/// gradients and optimizer moments, which share the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    spec: MlpSpec,
    pub layers: Vec<Layer>,
}

/// Gradient (or any other per-parameter quantity) shaped like [`MlpParams`].
pub type MlpGradients = Vec<Layer>;

/// Activations kept from a batched forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer: the batch itself, then each hidden activation.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl MlpParams {
    pub fn zeros(spec: MlpSpec) -> Self {
        let layers = spec
            .layer_dims()
            .into_iter()
            .map(|(i, o)| Layer {
                weight: Array2::zeros((o, i)),
                bias: Array1::zeros(o),
            })
            .collect();
        MlpParams { spec, layers }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn glorot<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Self {
        let mut p = Self::zeros(spec);
        for layer in &mut p.layers {
            let (o, i) = layer.weight.dim();
            let limit = (6.0 / (i + o) as f64).sqrt();
            layer
                .weight
                .mapv_inplace(|_| rng.random_range(-limit..=limit));
        }
        p
    }

    /// Rebuilds parameters from layer arrays, checking them against `spec`.
    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        let dims = spec.layer_dims();
        if dims.len() != layers.len() {
            return Err(Error::DimensionMismatch {
                expected: dims.len(),
                got: layers.len(),
            });
        }
        for ((i, o), l) in dims.iter().zip(&layers) {
            if l.weight.dim() != (*o, *i) || l.bias.len() != *o {
                return Err(Error::DimensionMismatch {
                    expected: o * i,
                    got: l.weight.len(),
                });
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("network parameter".into()));
            }
        }
        Ok(MlpParams { spec, layers })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn zero_gradients(&self) -> MlpGradients {
        self.layers
            .iter()
            .map(|l| Layer {
                weight: Array2::zeros(l.weight.raw_dim()),
                bias: Array1::zeros(l.bias.len()),
            })
            .collect()
    }

    pub fn output_layer_mut(&mut self) -> &mut Layer {
        self.layers.last_mut().expect("at least one layer")
    }

    /// Single-input forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; self.spec.output_dim];
        self.forward_into(x, &mut out);
        Ok(out)
    }

    /// Allocation-light single-input forward pass; `x` and `out` must match
    /// the `MlpSpec` dimensions.
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        let mut a: Vec<f64> = x.to_vec();
        let mut z = Vec::with_capacity(self.spec.hidden_width);
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            z.clear();
            for (row, b) in layer.weight.rows().into_iter().zip(layer.bias.iter()) {
                let s: f64 = row.iter().zip(&a).map(|(w, v)| w * v).sum();
                z.push(s + b);
            }
            if li == last {
                out.copy_from_slice(&z);
            } else {
                a.clear();
                a.extend(z.iter().map(|&v| elu(v)));
            }
        }
    }

    /// Batched forward pass, one output row per input row.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut a = x.to_owned();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weight.t());
            z += &layer.bias;
            if li < last {
                z.mapv_inplace(elu);
            }
            a = z;
        }
        a
    }

    /// Batched forward pass that keeps what [`MlpParams::backward`] needs.
    pub fn forward_cached(&self, x: ArrayView2<f64>) -> ForwardCache {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        inputs.push(x.to_owned());
        let mut output = Array2::zeros((0, 0));
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = inputs[li].dot(&layer.weight.t());
            z += &layer.bias;
            if li < last {
                let a = z.mapv(elu);
                pre.push(z);
                inputs.push(a);
            } else {
                output = z;
            }
        }
        ForwardCache { inputs, pre, output }
    }

    /// Reverse pass: given `upstream = ∂L/∂output` per row, returns the
    /// parameter gradient summed over rows and `∂L/∂input` per row.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
    ) -> (MlpGradients, Array2<f64>) {
        let mut grads = self.zero_gradients();
        let input_grad = self.backward_into(cache, upstream, &mut grads);
        (grads, input_grad)
    }

    /// Like [`MlpParams::backward`] but accumulates into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<f64>,
        grads: &mut MlpGradients,
    ) -> Array2<f64> {
        let mut delta = upstream.to_owned();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let g = &mut grads[li];
            g.weight += &delta.t().dot(&cache.inputs[li]);
            g.bias += &delta.sum_axis(Axis(0));
            let mut back = delta.dot(&layer.weight);
            if li > 0 {
                ndarray::Zip::from(&mut back)
                    .and(&cache.pre[li - 1])
                    .for_each(|d, &z| *d *= elu_grad(z));
            }
            delta = back;
        }
        delta
    }

    /// Gradients of `⟨upstream, f(x)⟩` for a single input: parameter
    /// gradients and the input gradient.
    pub fn gradient(&self, x: &[f64], upstream: &[f64]) -> Result<(MlpGradients, Vec<f64>)> {
        if x.len() != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                got: x.len(),
            });
        }
        if upstream.len() != self.spec.output_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.output_dim,
                got: upstream.len(),
            });
        }
        let xb = ArrayView2::from_shape((1, x.len()), x).expect("contiguous row");
        let ub = ArrayView2::from_shape((1, upstream.len()), upstream).expect("contiguous row");
        let cache = self.forward_cached(xb);
        let (g, dx) = self.backward(&cache, ub);
        Ok((g, dx.into_raw_vec_and_offset().0))
    }

    /// All parameters in serialization order (per layer: weights row-major,
    /// then biases).
    pub fn flatten(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.spec.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.param_count(),
                got: values.len(),
            });
        }
        let mut it = values.iter();
        for l in &mut self.layers {
            for (dst, src) in l.weight.iter_mut().chain(l.bias.iter_mut()).zip(&mut it) {
                *dst = *src;
            }
        }
        Ok(())
    }
}

/// Layer arrays in serialization order.
pub fn flatten(layers: &[Layer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
        .collect()
}

/// `acc += other`, layer by layer.
pub fn add_assign(acc: &mut [Layer], other: &[Layer]) {
    for (a, b) in acc.iter_mut().zip(other) {
        a.weight += &b.weight;
        a.bias += &b.bias;
    }
}

pub fn scale_in_place(layers: &mut [Layer], s: f64) {
    for l in layers {
        l.weight *= s;
        l.bias *= s;
    }
}
