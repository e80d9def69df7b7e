//! Hand-rolled neural network core: dense layers, a two-layer LSTM with exact
//! backpropagation through time, the fixed-sigma Gaussian action head, and
//! Adam. Gradients are derived per layer type and checked against central
//! finite differences in the test suites.

pub mod adam;
pub mod dense;
pub mod gaussian;
pub mod init;
pub mod lstm;

pub use adam::{AdamParams, AdamState};
pub use dense::{Dense, MlpCache, MlpNet};
pub use gaussian::{action_std, gaussian_logprob, logprob_grad_mean, sample_action, LOG_STD};
pub use lstm::{GateCache, LstmLayer, LstmNet, LstmState, SeqCache, StepCache};

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which architecture family a policy or critic belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyFamily {
    Lstm,
    #[serde(rename = "ff")]
    Feedforward,
}

impl PolicyFamily {
    pub fn tag(self) -> u8 {
        match self {
            PolicyFamily::Lstm => 0,
            PolicyFamily::Feedforward => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(PolicyFamily::Lstm),
            1 => Ok(PolicyFamily::Feedforward),
            other => Err(Error::Checkpoint(format!("unknown policy family tag {other}"))),
        }
    }
}

/// Either network family behind one stepping/parameter interface.
#[derive(Debug, Clone)]
pub enum NetKind {
    Lstm(LstmNet),
    Mlp(MlpNet),
}

/// Recurrent carry of a [`NetKind`]; feedforward nets are stateless.
#[derive(Debug, Clone)]
pub enum NetState {
    Lstm(LstmState),
    Stateless,
}

impl NetState {
    pub fn reset_row(&mut self, row: usize) {
        if let NetState::Lstm(s) = self {
            s.reset_row(row);
        }
    }
}

impl NetKind {
    pub fn family(&self) -> PolicyFamily {
        match self {
            NetKind::Lstm(_) => PolicyFamily::Lstm,
            NetKind::Mlp(_) => PolicyFamily::Feedforward,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            NetKind::Lstm(n) => n.input_dim,
            NetKind::Mlp(n) => n.input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            NetKind::Lstm(n) => n.output_dim,
            NetKind::Mlp(n) => n.output_dim,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            NetKind::Lstm(n) => n.hidden_dim,
            NetKind::Mlp(n) => n.hidden_dim,
        }
    }

    /// Width of the latent vector the probe harvests: concatenated `h` across
    /// LSTM layers, or both post-tanh hidden layers for feedforward nets.
    pub fn latent_dim(&self) -> usize {
        2 * self.hidden_dim()
    }

    pub fn initial_state(&self, batch: usize) -> NetState {
        match self {
            NetKind::Lstm(n) => NetState::Lstm(n.initial_state(batch)),
            NetKind::Mlp(_) => NetState::Stateless,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            NetKind::Lstm(n) => n.param_count(),
            NetKind::Mlp(n) => n.param_count(),
        }
    }

    /// One batched evaluation step; advances recurrent state in place.
    pub fn forward_step(&self, x: ArrayView2<f64>, state: &mut NetState) -> Result<Array2<f64>> {
        match (self, state) {
            (NetKind::Lstm(n), NetState::Lstm(s)) => Ok(n.step(x, s)?.0),
            (NetKind::Mlp(n), NetState::Stateless) => {
                let (y, _) = n.forward(x);
                n.check_finite(y.view())?;
                Ok(y)
            }
            _ => Err(Error::Config("state does not match network family".into())),
        }
    }

    /// Like [`NetKind::forward_step`] but also returns the per-row latent
    /// vector after the step.
    pub fn forward_step_with_latent(
        &self,
        x: ArrayView2<f64>,
        state: &mut NetState,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        match (self, state) {
            (NetKind::Lstm(n), NetState::Lstm(s)) => {
                let (y, _) = n.step(x, s)?;
                let batch = x.nrows();
                let h = n.hidden_dim;
                let mut latent = Array2::zeros((batch, 2 * h));
                latent.slice_mut(ndarray::s![.., ..h]).assign(&s.h[0]);
                latent.slice_mut(ndarray::s![.., h..]).assign(&s.h[1]);
                Ok((y, latent))
            }
            (NetKind::Mlp(n), NetState::Stateless) => {
                let (y, latent) = n.forward_with_hidden(x);
                n.check_finite(y.view())?;
                Ok((y, latent))
            }
            _ => Err(Error::Config("state does not match network family".into())),
        }
    }

    /// Fixed serialization order of the parameter tensors.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        match self {
            NetKind::Lstm(n) => {
                let mut out = Vec::new();
                for (li, layer) in n.layers.iter().enumerate() {
                    out.push((format!("lstm{}.wx", li + 1), layer.wx.shape().to_vec()));
                    out.push((format!("lstm{}.wh", li + 1), layer.wh.shape().to_vec()));
                    out.push((format!("lstm{}.b", li + 1), layer.b.shape().to_vec()));
                }
                out.push(("out.w".into(), n.out.w.shape().to_vec()));
                out.push(("out.b".into(), n.out.b.shape().to_vec()));
                out
            }
            NetKind::Mlp(n) => vec![
                ("h1.w".into(), n.h1.w.shape().to_vec()),
                ("h1.b".into(), n.h1.b.shape().to_vec()),
                ("h2.w".into(), n.h2.w.shape().to_vec()),
                ("h2.b".into(), n.h2.b.shape().to_vec()),
                ("out.w".into(), n.out.w.shape().to_vec()),
                ("out.b".into(), n.out.b.shape().to_vec()),
            ],
        }
    }

    /// Copies all parameters into a flat vector in layout order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        match self {
            NetKind::Lstm(n) => {
                for layer in &n.layers {
                    out.extend(layer.wx.iter());
                    out.extend(layer.wh.iter());
                    out.extend(layer.b.iter());
                }
                out.extend(n.out.w.iter());
                out.extend(n.out.b.iter());
            }
            NetKind::Mlp(n) => {
                for d in [&n.h1, &n.h2, &n.out] {
                    out.extend(d.w.iter());
                    out.extend(d.b.iter());
                }
            }
        }
        out
    }

    /// Loads parameters from a flat vector in layout order.
    pub fn load_flat(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.param_count() {
            return Err(Error::dim("load_flat", self.param_count(), data.len()));
        }
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&data[pos..pos + dst.len()]);
            pos += dst.len();
        };
        match self {
            NetKind::Lstm(n) => {
                for layer in &mut n.layers {
                    take(layer.wx.as_slice_mut().unwrap());
                    take(layer.wh.as_slice_mut().unwrap());
                    take(layer.b.as_slice_mut().unwrap());
                }
                take(n.out.w.as_slice_mut().unwrap());
                take(n.out.b.as_slice_mut().unwrap());
            }
            NetKind::Mlp(n) => {
                for d in [&mut n.h1, &mut n.h2, &mut n.out] {
                    take(d.w.as_slice_mut().unwrap());
                    take(d.b.as_slice_mut().unwrap());
                }
            }
        }
        Ok(())
    }
}

/// Gaussian policy of either family; the action standard deviation is the
/// constant `e^-2` and is not a trainable parameter.
#[derive(Debug, Clone)]
pub struct Policy {
    pub net: NetKind,
    pub obs_dim: usize,
    pub action_dim: usize,
}

/// Value network of the same family/shape as its paired policy, scalar output.
#[derive(Debug, Clone)]
pub struct Critic {
    pub net: NetKind,
    pub obs_dim: usize,
}

impl Policy {
    pub fn new(
        family: PolicyFamily,
        obs_dim: usize,
        action_dim: usize,
        hidden_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let net = match family {
            PolicyFamily::Lstm => NetKind::Lstm(LstmNet::new(obs_dim, hidden_dim, action_dim, rng)),
            PolicyFamily::Feedforward => {
                NetKind::Mlp(MlpNet::new(obs_dim, hidden_dim, action_dim, rng))
            }
        };
        Policy {
            net,
            obs_dim,
            action_dim,
        }
    }

    pub fn family(&self) -> PolicyFamily {
        self.net.family()
    }

    pub fn log_std(&self) -> f64 {
        LOG_STD
    }

    pub fn initial_state(&self, batch: usize) -> NetState {
        self.net.initial_state(batch)
    }

    /// Deterministic action means for a batch of observations.
    pub fn mean_step(&self, x: ArrayView2<f64>, state: &mut NetState) -> Result<Array2<f64>> {
        self.net.forward_step(x, state)
    }
}

impl Critic {
    pub fn new(family: PolicyFamily, obs_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let net = match family {
            PolicyFamily::Lstm => NetKind::Lstm(LstmNet::new(obs_dim, hidden_dim, 1, rng)),
            PolicyFamily::Feedforward => NetKind::Mlp(MlpNet::new(obs_dim, hidden_dim, 1, rng)),
        };
        Critic { net, obs_dim }
    }

    pub fn initial_state(&self, batch: usize) -> NetState {
        self.net.initial_state(batch)
    }

    /// Scalar values for a batch of observations.
    pub fn value_step(&self, x: ArrayView2<f64>, state: &mut NetState) -> Result<Array1<f64>> {
        let y = self.net.forward_step(x, state)?;
        Ok(y.column(0).to_owned())
    }
}

/// Named, shaped, row-major parameter tensor; the unit of checkpoint
/// serialization.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamTensor {
    pub fn validate(&self) -> Result<()> {
        let expect: usize = self.shape.iter().product();
        if expect != self.values.len() {
            return Err(Error::dim(
                format!("tensor {}", self.name),
                expect,
                self.values.len(),
            ));
        }
        if !self.values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("tensor {}", self.name)));
        }
        Ok(())
    }
}

impl NetKind {
    /// Parameters as a named-tensor list, names prefixed for namespacing.
    pub fn to_tensors(&self, prefix: &str) -> Vec<ParamTensor> {
        let layout = self.param_layout();
        let flat = self.params_flat();
        let mut out = Vec::with_capacity(layout.len());
        let mut pos = 0;
        for (name, shape) in layout {
            let len: usize = shape.iter().product();
            out.push(ParamTensor {
                name: format!("{prefix}{name}"),
                shape,
                values: flat[pos..pos + len].to_vec(),
            });
            pos += len;
        }
        out
    }

    /// Loads parameters from a named-tensor list; names and shapes must match
    /// the network's layout exactly.
    pub fn load_tensors(&mut self, prefix: &str, tensors: &[ParamTensor]) -> Result<()> {
        let layout = self.param_layout();
        let mut flat = Vec::with_capacity(self.param_count());
        for (name, shape) in &layout {
            let want = format!("{prefix}{name}");
            let tensor = tensors
                .iter()
                .find(|t| t.name == want)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {want}")))?;
            tensor.validate()?;
            if &tensor.shape != shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {want}: shape {:?} does not match {:?}",
                    tensor.shape, shape
                )));
            }
            flat.extend_from_slice(&tensor.values);
        }
        self.load_flat(&flat)
    }
}

/// Parameter count of the reference LSTM architecture at given dimensions;
/// recorded in checkpoints next to the actual policy's count.
pub fn lstm_param_count(obs_dim: usize, hidden_dim: usize, action_dim: usize) -> usize {
    let l1 = obs_dim * 4 * hidden_dim + hidden_dim * 4 * hidden_dim + 4 * hidden_dim;
    let l2 = hidden_dim * 4 * hidden_dim + hidden_dim * 4 * hidden_dim + 4 * hidden_dim;
    let out = hidden_dim * action_dim + action_dim;
    l1 + l2 + out
}

/// Policy state alias used throughout the trainer.
pub type PolicyState = NetState;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flat_roundtrip_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for family in [PolicyFamily::Lstm, PolicyFamily::Feedforward] {
            let policy = Policy::new(family, 7, 3, 10, &mut rng);
            let flat = policy.net.params_flat();
            assert_eq!(flat.len(), policy.net.param_count());
            let mut other = Policy::new(family, 7, 3, 10, &mut rng);
            other.net.load_flat(&flat).unwrap();
            assert_eq!(other.net.params_flat(), flat);
        }
    }

    #[test]
    fn layout_lengths_sum_to_param_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let policy = Policy::new(PolicyFamily::Lstm, 15, 4, 128, &mut rng);
        let total: usize = policy
            .net
            .param_layout()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        assert_eq!(total, policy.net.param_count());
        assert_eq!(total, lstm_param_count(15, 128, 4));
    }

    #[test]
    fn critic_output_is_scalar() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for family in [PolicyFamily::Lstm, PolicyFamily::Feedforward] {
            let critic = Critic::new(family, 5, 8, &mut rng);
            assert_eq!(critic.net.output_dim(), 1);
            let mut st = critic.initial_state(3);
            let x = ndarray::Array2::zeros((3, 5));
            let v = critic.value_step(x.view(), &mut st).unwrap();
            assert_eq!(v.len(), 3);
        }
    }

    #[test]
    fn log_std_is_the_fixed_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let policy = Policy::new(PolicyFamily::Lstm, 4, 2, 6, &mut rng);
        assert_eq!(policy.log_std(), -2.0);
    }
}
