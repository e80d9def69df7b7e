//! Fixed-width diagonal Gaussian action head.
//!
//! The action standard deviation is pinned at `e^-2` per dimension and never
//! receives gradient updates.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Log standard deviation of the action distribution; a training constant.
pub const LOG_STD: f64 = -2.0;

/// `e^-2`, the per-dimension action standard deviation.
pub fn action_std() -> f64 {
    LOG_STD.exp()
}

const LN_2PI: f64 = 1.8378770664093453;

/// Exact diagonal-Gaussian log-density of `action` under mean `mean`.
pub fn gaussian_logprob(mean: &[f64], action: &[f64]) -> Result<f64> {
    if mean.len() != action.len() {
        return Err(Error::dim("gaussian logprob", mean.len(), action.len()));
    }
    let sigma = action_std();
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let mut lp = 0.0;
    for (m, a) in mean.iter().zip(action) {
        let d = a - m;
        lp += -d * d * inv_two_var - LOG_STD - 0.5 * LN_2PI;
    }
    Ok(lp)
}

/// Gradient of the log-density with respect to the mean: `(a - mu) / sigma^2`.
pub fn logprob_grad_mean(mean: &[f64], action: &[f64]) -> Vec<f64> {
    let inv_var = 1.0 / (action_std() * action_std());
    mean.iter()
        .zip(action)
        .map(|(m, a)| (a - m) * inv_var)
        .collect()
}

/// Draws `mean + sigma * z` with `z` standard normal per dimension.
pub fn sample_action(mean: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let sigma = action_std();
    mean.iter()
        .map(|m| m + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn peak_density_one_dimension() {
        // 2 - ln(2*pi)/2
        let lp = gaussian_logprob(&[0.4], &[0.4]).unwrap();
        assert!((lp - 1.0810614667953273).abs() < 1e-12);
    }

    #[test]
    fn symmetric_about_mean() {
        for delta in [0.01, 0.3, 2.5] {
            let plus = gaussian_logprob(&[1.0], &[1.0 + delta]).unwrap();
            let minus = gaussian_logprob(&[1.0], &[1.0 - delta]).unwrap();
            assert_eq!(plus, minus);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        // Simpson's rule over [mean - 6s, mean + 6s]
        let mean = [0.7];
        let sigma = action_std();
        let (lo, hi) = (mean[0] - 6.0 * sigma, mean[0] + 6.0 * sigma);
        let n = 4000;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| gaussian_logprob(&mean, &[x]).unwrap().exp();
        let mut acc = f(lo) + f(hi);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(lo + k as f64 * h);
        }
        let integral = acc * h / 3.0;
        assert!((integral - 1.0).abs() < 1e-6, "integral {integral}");
    }

    #[test]
    fn sample_std_matches_fixed_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mean = [0.0, 1.0, -2.0];
        let n = 100_000;
        let mut sums = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for _ in 0..n {
            let a = sample_action(&mean, &mut rng);
            for d in 0..3 {
                sums[d] += a[d];
                sq[d] += a[d] * a[d];
            }
        }
        for d in 0..3 {
            let m = sums[d] / n as f64;
            let std = (sq[d] / n as f64 - m * m).sqrt();
            let target = action_std();
            assert!((std - target).abs() / target < 0.02, "dim {d}: {std}");
        }
    }

    #[test]
    fn identical_seeds_identical_actions() {
        let mean = [0.3, -0.9];
        let a1 = sample_action(&mean, &mut ChaCha8Rng::seed_from_u64(77));
        let a2 = sample_action(&mean, &mut ChaCha8Rng::seed_from_u64(77));
        assert_eq!(a1, a2);
    }

    #[test]
    fn mismatched_dimensions_error() {
        assert!(gaussian_logprob(&[0.0, 1.0], &[0.0]).is_err());
    }
}
