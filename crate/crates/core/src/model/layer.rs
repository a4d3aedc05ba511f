use serde::{Deserialize, Serialize};

use crate::numerics::{dot, Matrix, RngState};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Silu,
    Sigmoid,
    Identity,
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `pre`, given `out = apply(pre)`.
    #[inline]
    pub fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = sigmoid(pre);
                s * (1.0 + pre * (1.0 - s))
            }
            Activation::Sigmoid => out * (1.0 - out),
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer `y = act(x·Wᵀ + b)` with `W` stored `(out × in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub(crate) weight: Matrix,
    pub(crate) bias: Vec<f64>,
    pub(crate) activation: Activation,
}

pub(crate) struct LayerTrace {
    pub pre: Matrix,
    pub out: Matrix,
}

impl DenseLayer {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::Shape(format!(
                "bias of length {} for a {}x{} weight",
                bias.len(),
                weight.rows(),
                weight.cols()
            )));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("layer bias".into()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut RngState) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = (0..in_dim * out_dim)
            .map(|_| rng.uniform_range(-bound, bound))
            .collect();
        let bias = (0..out_dim).map(|_| rng.uniform_range(-bound, bound)).collect();
        Self {
            weight: Matrix::from_vec_unchecked(out_dim, in_dim, weight),
            bias,
            activation,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        Self::zeros(self.in_dim(), self.out_dim(), self.activation)
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn pre_activation(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "layer expects {} inputs, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        let mut out = Matrix::zeros(x.rows(), self.out_dim());
        for r in 0..x.rows() {
            let xr = x.row(r);
            for (o, (dst, b)) in out.row_mut(r).iter_mut().zip(&self.bias).enumerate() {
                *dst = dot(xr, self.weight.row(o)) + b;
            }
        }
        Ok(out)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.trace(x)?.out)
    }

    pub(crate) fn trace(&self, x: &Matrix) -> Result<LayerTrace> {
        let pre = self.pre_activation(x)?;
        let out = match self.activation {
            Activation::Identity => pre.clone(),
            act => pre.map(|v| act.apply(v)),
        };
        Ok(LayerTrace { pre, out })
    }

    /// Gradients for this layer from `dout`, plus the gradient w.r.t. the
    /// input when `want_input` is set.
    pub(crate) fn backward(
        &self,
        input: &Matrix,
        trace: &LayerTrace,
        dout: &Matrix,
        want_input: bool,
    ) -> (DenseLayer, Option<Matrix>) {
        let dpre = match self.activation {
            Activation::Identity => dout.clone(),
            act => {
                let mut d = dout.clone();
                for ((g, &p), &o) in d.data_mut().iter_mut().zip(trace.pre.data()).zip(trace.out.data()) {
                    *g *= act.derivative(p, o);
                }
                d
            }
        };
        self.backward_from_pre(input, &dpre, want_input)
    }

    pub(crate) fn backward_from_pre(
        &self,
        input: &Matrix,
        dpre: &Matrix,
        want_input: bool,
    ) -> (DenseLayer, Option<Matrix>) {
        let mut grad = self.zeros_like();
        let mut dinput = want_input.then(|| Matrix::zeros(input.rows(), self.in_dim()));
        let in_dim = self.in_dim();
        for b in 0..input.rows() {
            let xr = input.row(b);
            for (o, &g) in dpre.row(b).iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                let gw = &mut grad.weight.data_mut()[o * in_dim..(o + 1) * in_dim];
                for (w, &x) in gw.iter_mut().zip(xr) {
                    *w += g * x;
                }
                if let Some(di) = dinput.as_mut() {
                    for (d, &w) in di.row_mut(b).iter_mut().zip(self.weight.row(o)) {
                        *d += g * w;
                    }
                }
            }
        }
        (grad, dinput)
    }
}
