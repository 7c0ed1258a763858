//! Fully connected networks with a shared hidden activation and a linear
//! output layer.
//!
//! Layer `l` maps `h_{l-1} -> h_l` through `z = h W_lᵀ + b_l`; weights are
//! stored `(h_l × h_{l-1})`. Batches are row-major `(n × d)` matrices.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{gemm, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Sine,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sine => z.sin(),
        }
    }

    /// Derivative given the pre-activation `z` and the activation value `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sine => z.cos(),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Sine => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Sine),
            other => Err(Error::Format(format!("unknown activation id {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    pub(crate) weights: Vec<Matrix>,
    pub(crate) biases: Vec<Vec<f64>>,
    activation: Activation,
}

/// Gradients co-shaped with an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 3 {
        return Err(Error::config(format!(
            "need input, at least one hidden layer and output, got sizes {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::config(format!(
            "layer sizes must be positive: {layer_sizes:?}"
        )));
    }
    Ok(())
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases. Deterministic in `seed`.
    pub fn init(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(layer_sizes, activation, &mut rng)
    }

    pub fn init_with_rng<R: rand::Rng + ?Sized>(
        layer_sizes: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Assemble from explicit weights and biases.
    pub fn from_parts(
        weights: Vec<Matrix>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::config("weights/biases must be non-empty and paired"));
        }
        let mut layer_sizes = vec![weights[0].cols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.cols() != *layer_sizes.last().unwrap() || b.len() != w.rows() {
                return Err(Error::shape(format!("layer {l} weight/bias shapes inconsistent")));
            }
            layer_sizes.push(w.rows());
        }
        validate_sizes(&layer_sizes)?;
        Ok(MlpParams {
            layer_sizes,
            weights,
            biases,
            activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_params(&self) -> usize {
        self.layer_sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// All parameters flattened: per layer, weights row-major then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    /// Inverse of [`MlpParams::flatten`].
    pub fn unflatten_from(&self, flat: &[f64]) -> Result<MlpParams> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut out = self.clone();
        let mut at = 0;
        for (w, b) in out.weights.iter_mut().zip(out.biases.iter_mut()) {
            let n = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
            let nb = b.len();
            b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(out)
    }

    pub fn zero_grads(&self) -> MlpGrads {
        MlpGrads {
            weights: self
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_batch(batch)?;
        let mut h = batch.clone();
        let last = self.num_layers() - 1;
        for l in 0..=last {
            let mut z = self.affine(l, &h);
            if l != last {
                let act = self.activation;
                for v in z.as_mut_slice() {
                    *v = act.apply(*v);
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Forward pass that keeps every layer's input and pre-activation.
    pub(crate) fn forward_trace(&self, batch: &Matrix) -> Result<ForwardTrace> {
        self.check_batch(batch)?;
        let last = self.num_layers() - 1;
        let mut inputs = Vec::with_capacity(self.num_layers());
        let mut pre = Vec::with_capacity(last);
        let mut h = batch.clone();
        for l in 0..=last {
            let z = self.affine(l, &h);
            inputs.push(h);
            if l == last {
                return Ok(ForwardTrace {
                    inputs,
                    pre,
                    output: z,
                });
            }
            let act = self.activation;
            h = z.map(|v| act.apply(v));
            pre.push(z);
        }
        unreachable!("loop returns on the last layer")
    }

    /// Reverse pass through a recorded trace. Returns parameter gradients and,
    /// when `want_input_grad`, the gradient with respect to the batch.
    pub(crate) fn backward_trace(
        &self,
        trace: &ForwardTrace,
        upstream: &Matrix,
        want_input_grad: bool,
    ) -> Result<(MlpGrads, Option<Matrix>)> {
        if upstream.shape() != trace.output.shape() {
            return Err(Error::shape(format!(
                "upstream gradient {:?} vs output {:?}",
                upstream.shape(),
                trace.output.shape()
            )));
        }
        let mut grads = self.zero_grads();
        let mut delta = upstream.clone();
        for l in (0..self.num_layers()).rev() {
            // dW_l = deltaᵀ · h_{l-1}
            gemm(1.0, &delta, true, &trace.inputs[l], false, 0.0, &mut grads.weights[l]);
            grads.biases[l] = delta.column_sums();
            if l == 0 && !want_input_grad {
                break;
            }
            let w = &self.weights[l];
            let mut dh = Matrix::zeros(delta.rows(), w.cols());
            gemm(1.0, &delta, false, w, false, 0.0, &mut dh);
            if l == 0 {
                return Ok((grads, Some(dh)));
            }
            let z = &trace.pre[l - 1];
            let a = &trace.inputs[l];
            let act = self.activation;
            for ((d, &zv), &av) in dh
                .as_mut_slice()
                .iter_mut()
                .zip(z.as_slice())
                .zip(a.as_slice())
            {
                *d *= act.derivative(zv, av);
            }
            delta = dh;
        }
        Ok((grads, None))
    }

    /// Exact gradients of `sum(upstream ⊙ forward(batch))` with respect to
    /// the parameters and the batch. Activations are recomputed internally.
    pub fn backward(&self, batch: &Matrix, upstream: &Matrix) -> Result<(MlpGrads, Matrix)> {
        let trace = self.forward_trace(batch)?;
        let (grads, input_grad) = self.backward_trace(&trace, upstream, true)?;
        Ok((grads, input_grad.expect("input gradient requested")))
    }

    fn affine(&self, l: usize, h: &Matrix) -> Matrix {
        let w = &self.weights[l];
        let b = &self.biases[l];
        let mut z = Matrix::zeros(h.rows(), w.rows());
        for r in 0..z.rows() {
            z.row_mut(r).copy_from_slice(b);
        }
        gemm(1.0, h, false, w, true, 1.0, &mut z);
        z
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "batch has {} columns, network expects {}",
                batch.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

pub(crate) struct ForwardTrace {
    /// Input of every layer (`inputs[0]` is the batch).
    inputs: Vec<Matrix>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Matrix>,
    pub(crate) output: Matrix,
}

impl MlpGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn from_flat_like(params: &MlpParams, flat: &[f64]) -> Result<MlpGrads> {
        let p = params.unflatten_from(flat)?;
        Ok(MlpGrads {
            weights: p.weights,
            biases: p.biases,
        })
    }

    pub fn is_congruent(&self, params: &MlpParams) -> bool {
        self.weights.len() == params.weights.len()
            && self
                .weights
                .iter()
                .zip(&params.weights)
                .all(|(g, w)| g.shape() == w.shape())
            && self
                .biases
                .iter()
                .zip(&params.biases)
                .all(|(g, b)| g.len() == b.len())
    }

    pub fn add_assign(&mut self, other: &MlpGrads) -> Result<()> {
        if self.weights.len() != other.weights.len() {
            return Err(Error::shape("gradient layer counts differ"));
        }
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            if a.shape() != b.shape() {
                return Err(Error::shape("gradient weight shapes differ"));
            }
            for (x, y) in a.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> MlpGrads {
        MlpGrads {
            weights: self.weights.iter().map(|w| w.scale(s)).collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.iter().map(|v| v * s).collect())
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &MlpGrads) -> f64 {
        self.flatten()
            .iter()
            .zip(other.flatten())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}
