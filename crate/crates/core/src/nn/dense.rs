//! Dense layers and the two-hidden-layer tanh MLP used for feedforward
//! policies, critics, and the probe decoder.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::init::{scaled_uniform, zeros1};
use crate::error::{Error, Result};

/// Fully connected layer, weights stored input-major: `y = x · w + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Dense {
            w: scaled_uniform(inputs, outputs, rng),
            b: zeros1(outputs),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Dense {
            w: Array2::zeros(self.w.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients for a batch and returns the input
    /// gradient. `x` must be the forward input, `dy` the output gradient.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.w += &x.t().dot(&dy);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Two hidden tanh layers plus a linear output map.
#[derive(Debug, Clone)]
pub struct MlpNet {
    pub h1: Dense,
    pub h2: Dense,
    pub out: Dense,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

/// Forward activations needed for the backward pass.
pub struct MlpCache {
    pub x: Array2<f64>,
    pub a1: Array2<f64>,
    pub a2: Array2<f64>,
}

impl MlpNet {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Self {
        MlpNet {
            h1: Dense::new(input_dim, hidden_dim, rng),
            h2: Dense::new(hidden_dim, hidden_dim, rng),
            out: Dense::new(hidden_dim, output_dim, rng),
            input_dim,
            hidden_dim,
            output_dim,
        }
    }

    pub fn zeros_like(&self) -> Self {
        MlpNet {
            h1: self.h1.zeros_like(),
            h2: self.h2.zeros_like(),
            out: self.out.zeros_like(),
            ..*self
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let a1 = self.h1.forward(x).mapv(f64::tanh);
        let a2 = self.h2.forward(a1.view()).mapv(f64::tanh);
        let y = self.out.forward(a2.view());
        let cache = MlpCache {
            x: x.to_owned(),
            a1,
            a2,
        };
        (y, cache)
    }

    /// Output without keeping the cache, plus the concatenated post-tanh
    /// hidden activations (the feedforward analog of a recurrent hidden state).
    pub fn forward_with_hidden(&self, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let (y, cache) = self.forward(x);
        let batch = cache.a1.nrows();
        let mut hidden = Array2::zeros((batch, 2 * self.hidden_dim));
        hidden
            .slice_mut(ndarray::s![.., ..self.hidden_dim])
            .assign(&cache.a1);
        hidden
            .slice_mut(ndarray::s![.., self.hidden_dim..])
            .assign(&cache.a2);
        (y, hidden)
    }

    pub fn backward(&self, cache: &MlpCache, dy: ArrayView2<f64>, grad: &mut MlpNet) -> Array2<f64> {
        let da2 = self.out.backward(cache.a2.view(), dy, &mut grad.out);
        let dz2 = &da2 * &cache.a2.mapv(|a| 1.0 - a * a);
        let da1 = self.h2.backward(cache.a1.view(), dz2.view(), &mut grad.h2);
        let dz1 = &da1 * &cache.a1.mapv(|a| 1.0 - a * a);
        self.h1.backward(cache.x.view(), dz1.view(), &mut grad.h1)
    }

    pub fn check_finite(&self, y: ArrayView2<f64>) -> Result<()> {
        if y.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numerical("mlp output".into()))
        }
    }

    pub fn param_count(&self) -> usize {
        self.h1.param_count() + self.h2.param_count() + self.out.param_count()
    }
}
