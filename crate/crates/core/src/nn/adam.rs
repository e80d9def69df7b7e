//! Adam with bias-corrected moment estimates, operating on flat parameter
//! vectors. A named layout maps flat offsets back to tensor names for
//! diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub hp: AdamParams,
    layout: Vec<(String, std::ops::Range<usize>)>,
}

impl AdamState {
    pub fn new(layout: Vec<(String, Vec<usize>)>, hp: AdamParams) -> Self {
        let mut spans = Vec::with_capacity(layout.len());
        let mut offset = 0;
        for (name, shape) in layout {
            let len: usize = shape.iter().product();
            spans.push((name, offset..offset + len));
            offset += len;
        }
        AdamState {
            m: vec![0.0; offset],
            v: vec![0.0; offset],
            step: 0,
            hp,
            layout: spans,
        }
    }

    pub fn param_len(&self) -> usize {
        self.m.len()
    }

    fn name_at(&self, idx: usize) -> &str {
        self.layout
            .iter()
            .find(|(_, r)| r.contains(&idx))
            .map(|(n, _)| n.as_str())
            .unwrap_or("<unknown>")
    }

    /// One Adam step: `theta -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn update(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::dim("adam update", self.m.len(), grad.len()));
        }
        if self.hp.learning_rate <= 0.0 {
            return Err(Error::Config("adam learning rate must be positive".into()));
        }
        if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient in {}",
                self.name_at(bad)
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = self.hp.beta1;
        let b2 = self.hp.beta2;
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for k in 0..theta.len() {
            let g = grad[k];
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g;
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            theta[k] -= self.hp.learning_rate * m_hat / (v_hat.sqrt() + self.hp.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_state(lr: f64) -> AdamState {
        AdamState::new(
            vec![("theta".into(), vec![1])],
            AdamParams {
                learning_rate: lr,
                ..AdamParams::default()
            },
        )
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut st = scalar_state(0.1);
        let mut theta = [3.25];
        st.update(&mut theta, &[0.0]).unwrap();
        assert_eq!(theta[0], 3.25);
    }

    #[test]
    fn first_step_is_signed_learning_rate() {
        // bias correction makes m_hat = g and v_hat = g^2, so the step is
        // -lr * g / |g| up to epsilon
        for &g in &[0.5f64, -2.0, 0.037] {
            let mut st = scalar_state(0.01);
            let mut theta = [1.0];
            st.update(&mut theta, &[g]).unwrap();
            let delta = theta[0] - 1.0;
            let expect = -0.01 * g.signum();
            assert!(
                (delta - expect).abs() / expect.abs() < 1e-6,
                "g={g}: delta {delta}"
            );
        }
    }

    #[test]
    fn five_step_trace_matches_hand_recursion() {
        // lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8, theta0=1.0,
        // grads [0.5, -0.3, 0.8, 0.1, -0.9]; recursion evaluated independently
        let expected = [
            0.900000002,
            0.8808501989417752,
            0.8204965636828663,
            0.7654640634791922,
            0.7676062489650929,
        ];
        let mut st = scalar_state(0.1);
        let mut theta = [1.0];
        for (g, want) in [0.5, -0.3, 0.8, 0.1, -0.9].iter().zip(expected) {
            st.update(&mut theta, &[*g]).unwrap();
            assert!(
                (theta[0] - want).abs() < 1e-10,
                "got {} want {want}",
                theta[0]
            );
        }
    }

    #[test]
    fn non_finite_gradient_names_the_tensor() {
        let mut st = AdamState::new(
            vec![("w1".into(), vec![2]), ("w2".into(), vec![2])],
            AdamParams::default(),
        );
        let mut theta = [0.0; 4];
        let err = st.update(&mut theta, &[0.0, 0.0, f64::NAN, 0.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("w2"), "message should name tensor: {msg}");
    }

    #[test]
    fn step_counter_strictly_increases() {
        let mut st = scalar_state(0.1);
        let mut theta = [0.0];
        for want in 1..=4 {
            st.update(&mut theta, &[0.1]).unwrap();
            assert_eq!(st.step, want);
        }
    }
}
