//! Two-layer LSTM with a linear output map and exact backpropagation
//! through time.
//!
//! Gate order inside the fused weight matrices is `[input, forget, candidate,
//! output]`, each a block of `hidden_dim` columns. The forget-gate bias is
//! initialized to 1.0 so fresh networks preserve cell state by default.
//!
//! Everything is batched: a step maps a `(B, D)` input matrix to a `(B, A)`
//! output matrix, carrying per-row hidden state. Single-vector evaluation is
//! the `B = 1` case. Sequence processing keeps per-step caches so the backward
//! pass replays the exact forward computation.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::Rng;

use super::dense::Dense;
use super::init::scaled_uniform;
use crate::error::{Error, Result};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM layer: fused input weights `wx (D, 4H)`, recurrent weights
/// `wh (H, 4H)`, bias `b (4H)`.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub wx: Array2<f64>,
    pub wh: Array2<f64>,
    pub b: Array1<f64>,
    pub hidden_dim: usize,
}

impl LstmLayer {
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let mut b = Array1::zeros(4 * hidden_dim);
        // forget-gate block starts at H
        b.slice_mut(s![hidden_dim..2 * hidden_dim]).fill(1.0);
        LstmLayer {
            wx: scaled_uniform(input_dim, 4 * hidden_dim, rng),
            wh: scaled_uniform(hidden_dim, 4 * hidden_dim, rng),
            b,
            hidden_dim,
        }
    }

    pub fn zeros_like(&self) -> Self {
        LstmLayer {
            wx: Array2::zeros(self.wx.raw_dim()),
            wh: Array2::zeros(self.wh.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
            hidden_dim: self.hidden_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        self.wx.len() + self.wh.len() + self.b.len()
    }
}

/// Post-activation gate values and states of one layer at one step.
#[derive(Debug, Clone)]
pub struct GateCache {
    pub i: Array2<f64>,
    pub f: Array2<f64>,
    pub g: Array2<f64>,
    pub o: Array2<f64>,
    pub c: Array2<f64>,
    pub h: Array2<f64>,
}

/// All intermediate activations of one forward step across both layers,
/// sufficient to reproduce the step bit-exactly and to run the exact
/// backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub x: Array2<f64>,
    pub layers: Vec<GateCache>,
}

/// Per-row hidden state of the full stack: `h` and `c` per layer, `(B, H)`.
#[derive(Debug, Clone)]
pub struct LstmState {
    pub h: Vec<Array2<f64>>,
    pub c: Vec<Array2<f64>>,
}

impl LstmState {
    pub fn zeros(layers: usize, batch: usize, hidden_dim: usize) -> Self {
        LstmState {
            h: (0..layers).map(|_| Array2::zeros((batch, hidden_dim))).collect(),
            c: (0..layers).map(|_| Array2::zeros((batch, hidden_dim))).collect(),
        }
    }

    /// Zeroes one row (one environment slot) across all layers.
    pub fn reset_row(&mut self, row: usize) {
        for a in self.h.iter_mut().chain(self.c.iter_mut()) {
            a.row_mut(row).fill(0.0);
        }
    }

    pub fn batch(&self) -> usize {
        self.h[0].nrows()
    }

    /// Concatenated `h` across layers for one row; the probe's latent vector.
    pub fn concat_hidden(&self, row: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.h.len() * self.h[0].ncols());
        for h in &self.h {
            out.extend(h.row(row).iter().copied());
        }
        out
    }
}

/// Two LSTM layers plus a linear output map.
#[derive(Debug, Clone)]
pub struct LstmNet {
    pub layers: Vec<LstmLayer>,
    pub out: Dense,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

/// Sequence cache: one `StepCache` per timestep.
pub struct SeqCache {
    pub steps: Vec<StepCache>,
}

impl LstmNet {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Self {
        let layers = vec![
            LstmLayer::new(input_dim, hidden_dim, rng),
            LstmLayer::new(hidden_dim, hidden_dim, rng),
        ];
        LstmNet {
            layers,
            out: Dense::new(hidden_dim, output_dim, rng),
            input_dim,
            hidden_dim,
            output_dim,
        }
    }

    pub fn zeros_like(&self) -> Self {
        LstmNet {
            layers: self.layers.iter().map(LstmLayer::zeros_like).collect(),
            out: self.out.zeros_like(),
            ..*self
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LstmLayer::param_count).sum::<usize>() + self.out.param_count()
    }

    pub fn initial_state(&self, batch: usize) -> LstmState {
        LstmState::zeros(self.layers.len(), batch, self.hidden_dim)
    }

    /// One forward step for a `(B, D)` input. Advances `state` in place and
    /// returns the output together with the cache for the backward pass.
    pub fn step(&self, x: ArrayView2<f64>, state: &mut LstmState) -> Result<(Array2<f64>, StepCache)> {
        if x.ncols() != self.input_dim {
            return Err(Error::dim("lstm step input", self.input_dim, x.ncols()));
        }
        if state.batch() != x.nrows() {
            return Err(Error::dim("lstm step state batch", x.nrows(), state.batch()));
        }
        let h = self.hidden_dim;
        let mut layer_caches = Vec::with_capacity(self.layers.len());
        let mut layer_in = x.to_owned();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut z = layer_in.dot(&layer.wx) + state.h[li].dot(&layer.wh);
            z += &layer.b;
            let i = z.slice(s![.., 0..h]).mapv(sigmoid);
            let f = z.slice(s![.., h..2 * h]).mapv(sigmoid);
            let g = z.slice(s![.., 2 * h..3 * h]).mapv(f64::tanh);
            let o = z.slice(s![.., 3 * h..4 * h]).mapv(sigmoid);
            let c = &f * &state.c[li] + &i * &g;
            let h_new = &o * &c.mapv(f64::tanh);
            if !h_new.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical(format!("lstm layer {}", li + 1)));
            }
            state.h[li] = h_new.clone();
            state.c[li] = c.clone();
            layer_caches.push(GateCache { i, f, g, o, c, h: h_new.clone() });
            layer_in = h_new;
        }
        let y = self.out.forward(layer_in.view());
        Ok((
            y,
            StepCache {
                x: x.to_owned(),
                layers: layer_caches,
            },
        ))
    }

    /// Single-vector convenience wrapper around [`LstmNet::step`].
    pub fn step_vec(&self, x: &[f64], state: &mut LstmState) -> Result<Vec<f64>> {
        let xm = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|_| Error::dim("lstm step input", self.input_dim, x.len()))?;
        let (y, _) = self.step(xm, state)?;
        Ok(y.row(0).to_vec())
    }

    /// Unrolls the network over a padded `(T, B, D)` input block starting from
    /// a zero state. Returns `(T, B, A)` outputs and the full sequence cache.
    pub fn forward_seq(&self, xs: &Array3<f64>) -> Result<(Array3<f64>, SeqCache)> {
        let (t_len, batch, _) = xs.dim();
        let mut state = self.initial_state(batch);
        let mut ys = Array3::zeros((t_len, batch, self.output_dim));
        let mut steps = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (y, cache) = self.step(xs.index_axis(Axis(0), t), &mut state)?;
            ys.index_axis_mut(Axis(0), t).assign(&y);
            steps.push(cache);
        }
        Ok((ys, SeqCache { steps }))
    }

    /// Exact backpropagation through time over a cached forward unroll.
    ///
    /// `upstream` is the `(T, B, A)` gradient of the loss with respect to the
    /// outputs; `mask[t][b] = false` marks padded steps, whose upstream
    /// gradient is forced to zero so they contribute exactly nothing. The
    /// hidden-state gradient never crosses the sequence start, so episode
    /// boundaries (each trajectory unrolls from its own zero state) isolate
    /// credit assignment.
    pub fn backward_seq(
        &self,
        cache: &SeqCache,
        upstream: &Array3<f64>,
        mask: Option<&Array2<bool>>,
    ) -> Result<LstmNet> {
        let t_len = cache.steps.len();
        if upstream.dim().0 != t_len {
            return Err(Error::dim("bptt upstream steps", t_len, upstream.dim().0));
        }
        let batch = upstream.dim().1;
        let h_dim = self.hidden_dim;
        let n_layers = self.layers.len();
        let mut grad = self.zeros_like();

        // recurrent gradients flowing from step t+1 into step t, per layer
        let mut dh_next: Vec<Array2<f64>> = (0..n_layers).map(|_| Array2::zeros((batch, h_dim))).collect();
        let mut dc_next: Vec<Array2<f64>> = (0..n_layers).map(|_| Array2::zeros((batch, h_dim))).collect();

        for t in (0..t_len).rev() {
            let step = &cache.steps[t];
            let mut dy = upstream.index_axis(Axis(0), t).to_owned();
            if let Some(m) = mask {
                for b in 0..batch {
                    if !m[[t, b]] {
                        dy.row_mut(b).fill(0.0);
                    }
                }
            }
            // output layer: input was the top layer's h at step t
            let top_h = &step.layers[n_layers - 1].h;
            let mut dh_top = self.out.backward(top_h.view(), dy.view(), &mut grad.out);
            dh_top += &dh_next[n_layers - 1];

            let mut dh_layer = dh_top;
            for li in (0..n_layers).rev() {
                let gc = &step.layers[li];
                let layer = &self.layers[li];
                let (h_prev, c_prev) = if t == 0 {
                    (Array2::zeros((batch, h_dim)), Array2::zeros((batch, h_dim)))
                } else {
                    let prev = &cache.steps[t - 1].layers[li];
                    (prev.h.clone(), prev.c.clone())
                };
                let tanh_c = gc.c.mapv(f64::tanh);
                let d_o = &dh_layer * &tanh_c;
                let mut dc = dc_next[li].clone();
                dc += &(&dh_layer * &gc.o * &tanh_c.mapv(|v| 1.0 - v * v));
                let d_i = &dc * &gc.g;
                let d_g = &dc * &gc.i;
                let d_f = &dc * &c_prev;
                dc_next[li] = &dc * &gc.f;

                let mut dz = Array2::zeros((batch, 4 * h_dim));
                dz.slice_mut(s![.., 0..h_dim])
                    .assign(&(&d_i * &gc.i * &gc.i.mapv(|v| 1.0 - v)));
                dz.slice_mut(s![.., h_dim..2 * h_dim])
                    .assign(&(&d_f * &gc.f * &gc.f.mapv(|v| 1.0 - v)));
                dz.slice_mut(s![.., 2 * h_dim..3 * h_dim])
                    .assign(&(&d_g * &gc.g.mapv(|v| 1.0 - v * v)));
                dz.slice_mut(s![.., 3 * h_dim..4 * h_dim])
                    .assign(&(&d_o * &gc.o * &gc.o.mapv(|v| 1.0 - v)));

                let layer_in = if li == 0 { &step.x } else { &step.layers[li - 1].h };
                grad.layers[li].wx += &layer_in.t().dot(&dz);
                grad.layers[li].wh += &h_prev.t().dot(&dz);
                grad.layers[li].b += &dz.sum_axis(Axis(0));

                dh_next[li] = dz.dot(&layer.wh.t());
                let dx = dz.dot(&layer.wx.t());
                if li > 0 {
                    dh_layer = dx + &dh_next[li - 1];
                } else {
                    // input gradient discarded: observations are not trained
                    dh_layer = dx;
                }
            }
        }
        Ok(grad)
    }
}
