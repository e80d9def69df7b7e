//! Clipped-surrogate building blocks: probability ratios, the pessimistic
//! objective, and the closed-form fixed-sigma Gaussian KL estimate.

use crate::nn::action_std;

/// Exponent guard: ratios are clamped at `e^+-30` with a warning, far outside
/// any useful optimization regime.
const RATIO_EXPONENT_CLAMP: f64 = 30.0;

/// `r = pi_new(a|s) / pi_old(a|s)` from log-probabilities.
pub fn probability_ratio(logp_new: f64, logp_old: f64) -> f64 {
    let d = logp_new - logp_old;
    if d.abs() > RATIO_EXPONENT_CLAMP {
        eprintln!("warning: probability-ratio exponent {d:.1} clamped to +-{RATIO_EXPONENT_CLAMP}");
        return d.clamp(-RATIO_EXPONENT_CLAMP, RATIO_EXPONENT_CLAMP).exp();
    }
    d.exp()
}

/// Mean over samples of `min(r * A, clip(r, 1-eps, 1+eps) * A)`; the
/// optimizer ascends this value (or descends its negation).
pub fn surrogate_loss(ratios: &[f64], advantages: &[f64], epsilon: f64) -> f64 {
    assert_eq!(ratios.len(), advantages.len());
    if ratios.is_empty() {
        return 0.0;
    }
    let total: f64 = ratios
        .iter()
        .zip(advantages)
        .map(|(&r, &a)| (r * a).min(r.clamp(1.0 - epsilon, 1.0 + epsilon) * a))
        .sum();
    total / ratios.len() as f64
}

/// Closed-form KL between diagonal Gaussians with the shared fixed sigma:
/// mean over samples of `sum_d (mu_old - mu_new)^2 / (2 sigma^2)`.
pub fn kl_estimate(means_old: &[Vec<f64>], means_new: &[Vec<f64>]) -> f64 {
    assert_eq!(means_old.len(), means_new.len());
    if means_old.is_empty() {
        return 0.0;
    }
    let inv_two_var = 1.0 / (2.0 * action_std() * action_std());
    let total: f64 = means_old
        .iter()
        .zip(means_new)
        .map(|(old, new)| {
            old.iter()
                .zip(new)
                .map(|(o, n)| (o - n) * (o - n))
                .sum::<f64>()
                * inv_two_var
        })
        .sum();
    total / means_old.len() as f64
}

/// Per-sample KL term used by the batched trainer (sum form, caller divides).
pub fn kl_term(mean_old: &[f64], mean_new: &[f64]) -> f64 {
    let inv_two_var = 1.0 / (2.0 * action_std() * action_std());
    mean_old
        .iter()
        .zip(mean_new)
        .map(|(o, n)| (o - n) * (o - n))
        .sum::<f64>()
        * inv_two_var
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ratio_identity_and_doubling() {
        assert_eq!(probability_ratio(-1.37, -1.37), 1.0);
        let r = probability_ratio(-0.5 + std::f64::consts::LN_2, -0.5);
        assert!((r - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_exponent_is_clamped() {
        let r = probability_ratio(100.0, 0.0);
        assert_eq!(r, 30.0f64.exp());
        let r = probability_ratio(0.0, 100.0);
        assert_eq!(r, (-30.0f64).exp());
    }

    #[test]
    fn surrogate_direct_substitutions() {
        // r=1.3, A=1, eps=0.2 -> min(1.3, 1.2) = 1.2
        assert!((surrogate_loss(&[1.3], &[1.0], 0.2) - 1.2).abs() < 1e-15);
        // r=0.5, A=-1, eps=0.2 -> min(-0.5, -0.8) = -0.8
        assert!((surrogate_loss(&[0.5], &[-1.0], 0.2) + 0.8).abs() < 1e-15);
        // r=1: clipping inactive
        for a in [-2.5, 0.0, 0.7] {
            assert_eq!(surrogate_loss(&[1.0], &[a], 0.2), a);
        }
    }

    #[test]
    fn clipped_objective_is_pessimistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            let r: f64 = rng.gen_range(0.0..3.0);
            let a: f64 = rng.gen_range(-2.0..2.0);
            let clipped = (r * a).min(r.clamp(0.8, 1.2) * a);
            assert!(clipped <= r * a + 1e-15);
        }
    }

    #[test]
    fn kl_zero_for_identical_means() {
        let means = vec![vec![0.3, -0.7], vec![1.1, 0.0]];
        assert_eq!(kl_estimate(&means, &means), 0.0);
    }

    #[test]
    fn kl_half_for_one_sigma_gap() {
        let old = vec![vec![0.0]];
        let new = vec![vec![action_std()]];
        assert!((kl_estimate(&old, &new) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kl_matches_quadrature() {
        // KL(p || q) for 1-d gaussians, numerically integrated
        let mu_p = 0.13;
        let mu_q = -0.06;
        let sigma = action_std();
        let pdf = |mu: f64, x: f64| {
            let z = (x - mu) / sigma;
            (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        };
        let (lo, hi) = (mu_p - 9.0 * sigma, mu_p + 9.0 * sigma);
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| {
            let p = pdf(mu_p, x);
            if p <= 0.0 {
                0.0
            } else {
                p * (p / pdf(mu_q, x)).ln()
            }
        };
        let mut acc = f(lo) + f(hi);
        for k in 1..n {
            acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(lo + k as f64 * h);
        }
        let quad = acc * h / 3.0;
        let closed = kl_estimate(&[vec![mu_p]], &[vec![mu_q]]);
        assert!((quad - closed).abs() < 1e-4, "quad {quad} closed {closed}");
    }
}
