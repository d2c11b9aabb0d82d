//! Feedforward networks with a hand-written backward pass.
//!
//! Weights are stored `in x out` so a layer computes `x · W + b` on a
//! row-major batch. The forward pass can record a [`Tape`] of per-layer
//! inputs and outputs which [`backprop_tape`] consumes.

use serde::{Deserialize, Serialize};

use super::{DiffError, Matrix, RngStream};

pub const DEFAULT_HIDDEN: [usize; 2] = [64, 32];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Softplus,
    Sigmoid,
    Softmax,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
            Activation::Softplus => "softplus",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "relu" => Activation::Relu,
            "identity" => Activation::Identity,
            "softplus" => Activation::Softplus,
            "sigmoid" => Activation::Sigmoid,
            "softmax" => Activation::Softmax,
            _ => return None,
        })
    }

    fn apply(self, m: &mut Matrix) {
        match self {
            Activation::Identity => {}
            Activation::Relu => m.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Softplus => m.as_mut_slice().iter_mut().for_each(|v| *v = softplus(*v)),
            Activation::Sigmoid => m.as_mut_slice().iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Softmax => {
                for i in 0..m.rows() {
                    softmax_in_place(m.row_mut(i));
                }
            }
        }
    }

    /// Converts `grad` (w.r.t. the activation output) into the gradient
    /// w.r.t. the pre-activation.
    fn backward(self, pre: &Matrix, out: &Matrix, grad: &mut Matrix) {
        let g = grad.as_mut_slice();
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for (gv, &p) in g.iter_mut().zip(pre.as_slice()) {
                    if p <= 0.0 {
                        *gv = 0.0;
                    }
                }
            }
            Activation::Softplus => {
                for (gv, &p) in g.iter_mut().zip(pre.as_slice()) {
                    *gv *= sigmoid(p);
                }
            }
            Activation::Sigmoid => {
                for (gv, &y) in g.iter_mut().zip(out.as_slice()) {
                    *gv *= y * (1.0 - y);
                }
            }
            Activation::Softmax => {
                let cols = out.cols();
                for (grow, yrow) in g.chunks_exact_mut(cols).zip(out.as_slice().chunks_exact(cols)) {
                    let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (gv, &y) in grow.iter_mut().zip(yrow) {
                        *gv = y * (*gv - dot);
                    }
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `in x out`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.weight.cols()
    }
}

/// Parameters of a feedforward network. The same type doubles as the
/// container for parameter gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

pub type MlpGrads = MlpParams;

impl MlpParams {
    /// Rectifier hidden layers, `head` on the output. Weights and biases are
    /// uniform on `±1/sqrt(fan_in)`.
    pub fn new(widths: &[usize], head: Activation, rng: &mut RngStream) -> Result<Self, DiffError> {
        let mut params = Self::zeros(widths, head)?;
        for layer in &mut params.layers {
            let bound = 1.0 / (layer.input_width() as f64).sqrt();
            for w in layer.weight.as_mut_slice() {
                *w = rng.uniform_range(-bound, bound);
            }
            for b in &mut layer.bias {
                *b = rng.uniform_range(-bound, bound);
            }
        }
        Ok(params)
    }

    /// `input -> 64 -> 32 -> output`.
    pub fn with_default_hidden(
        input: usize,
        output: usize,
        head: Activation,
        rng: &mut RngStream,
    ) -> Result<Self, DiffError> {
        Self::new(&[input, DEFAULT_HIDDEN[0], DEFAULT_HIDDEN[1], output], head, rng)
    }

    pub fn zeros(widths: &[usize], head: Activation) -> Result<Self, DiffError> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(DiffError::Dimension(format!("invalid layer widths {widths:?}")));
        }
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                weight: Matrix::zeros(w[0], w[1]),
                bias: vec![0.0; w[1]],
                activation: if i + 1 == n { head } else { Activation::Relu },
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                    activation: l.activation,
                })
                .collect(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output_width()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(Layer::output_width));
        w
    }

    pub fn head(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.len()).sum()
    }

    /// Checks that consecutive layers chain.
    pub fn validate(&self) -> Result<(), DiffError> {
        if self.layers.is_empty() {
            return Err(DiffError::Dimension("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.output_width() {
                return Err(DiffError::Dimension(format!("layer {i} bias length mismatch")));
            }
            if i > 0 && self.layers[i - 1].output_width() != l.input_width() {
                return Err(DiffError::Dimension(format!("layer {i} does not chain")));
            }
        }
        Ok(())
    }

    /// Weights then bias, layer by layer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<(), DiffError> {
        if flat.len() != self.num_params() {
            return Err(DiffError::Dimension(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weight.as_mut_slice();
            w.copy_from_slice(&flat[at..at + w.len()]);
            at += w.len();
            let b = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + b]);
            at += b;
        }
        Ok(())
    }
}

/// Per-layer activations recorded by the forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    outputs: Vec<Matrix>,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        &self.outputs[self.outputs.len() - 1]
    }

    /// Pre-activations of the final layer (logits for sigmoid/softmax heads).
    pub fn final_pre_activation(&self) -> &Matrix {
        &self.pre[self.pre.len() - 1]
    }
}

pub fn mlp_forward(params: &MlpParams, batch: &Matrix) -> Result<Matrix, DiffError> {
    let mut x = check_input(params, batch)?.clone();
    for layer in &params.layers {
        let mut y = x.matmul(&layer.weight)?;
        y.add_row_vector(&layer.bias)?;
        layer.activation.apply(&mut y);
        x = y;
    }
    Ok(x)
}

pub fn forward_with_tape(params: &MlpParams, batch: &Matrix) -> Result<(Matrix, Tape), DiffError> {
    let mut x = check_input(params, batch)?.clone();
    let mut tape = Tape {
        inputs: Vec::with_capacity(params.layers.len()),
        pre: Vec::with_capacity(params.layers.len()),
        outputs: Vec::with_capacity(params.layers.len()),
    };
    for layer in &params.layers {
        let mut pre = x.matmul(&layer.weight)?;
        pre.add_row_vector(&layer.bias)?;
        let mut out = pre.clone();
        layer.activation.apply(&mut out);
        tape.inputs.push(x);
        tape.pre.push(pre);
        x = out.clone();
        tape.outputs.push(out);
    }
    Ok((x, tape))
}

/// Gradients of the scalar loss whose gradient w.r.t. the network output is
/// `upstream`, with respect to every parameter and to the input batch.
pub fn backprop(params: &MlpParams, batch: &Matrix, upstream: &Matrix) -> Result<(MlpGrads, Matrix), DiffError> {
    let (_, tape) = forward_with_tape(params, batch)?;
    backprop_tape(params, &tape, upstream)
}

pub fn backprop_tape(params: &MlpParams, tape: &Tape, upstream: &Matrix) -> Result<(MlpGrads, Matrix), DiffError> {
    if upstream.shape() != tape.output().shape() {
        return Err(DiffError::Dimension(format!(
            "upstream gradient {:?} vs output {:?}",
            upstream.shape(),
            tape.output().shape()
        )));
    }
    let mut grads = params.zeros_like();
    let mut g = upstream.clone();
    for (i, layer) in params.layers.iter().enumerate().rev() {
        layer.activation.backward(&tape.pre[i], &tape.outputs[i], &mut g);
        grads.layers[i].weight = tape.inputs[i].t_matmul(&g)?;
        grads.layers[i].bias = g.sum_rows();
        g = g.matmul_t(&layer.weight)?;
    }
    Ok((grads, g))
}

fn check_input<'a>(params: &MlpParams, batch: &'a Matrix) -> Result<&'a Matrix, DiffError> {
    if batch.cols() != params.input_width() {
        return Err(DiffError::Dimension(format!(
            "batch has {} columns, network expects {}",
            batch.cols(),
            params.input_width()
        )));
    }
    Ok(batch)
}
