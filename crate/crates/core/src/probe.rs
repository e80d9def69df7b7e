//! Hidden-state science: harvesting (latent, dynamics-parameter) pairs from
//! rolled episodes, supervised decoding of the parameters back out of the
//! latents, and 2-D principal-component projections of latent trajectories.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvFactory;
use crate::error::{Error, Result};
use crate::nn::{AdamParams, AdamState, MlpNet, NetKind, Policy};
use crate::ppo::{collect_rollouts, derive_seed, streams, CollectMode, CollectOptions, Normalizer};

/// What the decoder reads: recurrent latents or single raw observations
/// (the memoryless control).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Latent,
    Observation,
}

#[derive(Debug, Clone)]
pub struct ProbeRecord {
    pub features: Vec<f64>,
    /// Ground-truth dynamics parameters of the episode, spec-entry order.
    pub targets: Vec<f64>,
    pub episode: u64,
    pub step: u32,
}

/// Supervised dataset of latent/parameter pairs with train/test episodes
/// kept disjoint.
#[derive(Debug, Clone)]
pub struct HiddenStateDataset {
    pub feature_kind: FeatureKind,
    pub feature_dim: usize,
    pub target_names: Vec<String>,
    pub target_lo: Vec<f64>,
    pub target_hi: Vec<f64>,
    pub train: Vec<ProbeRecord>,
    pub test: Vec<ProbeRecord>,
}

impl HiddenStateDataset {
    pub fn target_dim(&self) -> usize {
        self.target_names.len()
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.target_lo
            .iter()
            .zip(&self.target_hi)
            .map(|(lo, hi)| (hi - lo) / 2.0)
            .collect()
    }

    /// No episode id may appear in both splits.
    pub fn check_split_hygiene(&self) -> Result<()> {
        use std::collections::HashSet;
        let train: HashSet<u64> = self.train.iter().map(|r| r.episode).collect();
        if self.test.iter().any(|r| train.contains(&r.episode)) {
            return Err(Error::Validation(
                "an episode id appears in both probe splits".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HarvestConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Steps skipped at the start of each episode: early hidden states cannot
    /// yet encode the episode's dynamics.
    pub burn_in: usize,
    pub feature_kind: FeatureKind,
    pub slots: usize,
    pub workers: usize,
    pub max_steps: usize,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        HarvestConfig {
            n_train: 40_000,
            n_test: 10_000,
            burn_in: 30,
            feature_kind: FeatureKind::Latent,
            slots: 16,
            workers: 2,
            max_steps: 300,
        }
    }
}

/// Rolls episodes under freshly sampled dynamics and pairs each post-burn-in
/// step's latent (or raw observation) with the episode's parameter vector.
/// Train episodes come strictly before test episodes, so the splits are
/// disjoint by construction.
pub fn harvest_hidden_states(
    policy: &Policy,
    factory: &EnvFactory,
    normalizer: &Normalizer,
    cfg: &HarvestConfig,
    seed: u64,
) -> Result<HiddenStateDataset> {
    let spec = factory()?.randomization_spec().clone();
    let target_names: Vec<String> = spec.entries.iter().map(|e| e.name.clone()).collect();
    let target_lo: Vec<f64> = spec.entries.iter().map(|e| e.lo).collect();
    let target_hi: Vec<f64> = spec.entries.iter().map(|e| e.hi).collect();
    let feature_dim = match cfg.feature_kind {
        FeatureKind::Latent => policy.net.latent_dim(),
        FeatureKind::Observation => policy.obs_dim,
    };

    let needed = cfg.n_train + cfg.n_test;
    let per_episode_guess = cfg.max_steps.saturating_sub(cfg.burn_in).max(1);
    let mut train = Vec::with_capacity(cfg.n_train);
    let mut test = Vec::with_capacity(cfg.n_test);
    let mut episode_base = 0u64;
    let mut collected = 0usize;

    const MAX_WAVES: u64 = 12;
    for wave in 0..MAX_WAVES {
        if collected >= needed {
            break;
        }
        let remaining = needed - collected;
        let wave_episodes =
            (remaining.div_ceil(per_episode_guess) + remaining / (4 * per_episode_guess) + 4)
                .min(4096);
        let opts = CollectOptions {
            mode: CollectMode::Count(wave_episodes),
            slots: cfg.slots,
            workers: cfg.workers,
            record_latents: cfg.feature_kind == FeatureKind::Latent,
            record_raw_obs: cfg.feature_kind == FeatureKind::Observation,
            deterministic: false,
            max_steps: cfg.max_steps,
            seed_stream: derive_seed(seed, streams::PROBE, wave),
        };
        let buffer = collect_rollouts(policy, None, factory, Some(normalizer), &opts)?;
        for (k, traj) in buffer.trajectories.iter().enumerate() {
            let episode = episode_base + k as u64;
            let feats: &Vec<Vec<f64>> = match cfg.feature_kind {
                FeatureKind::Latent => traj
                    .latents
                    .as_ref()
                    .ok_or_else(|| Error::Config("latents were not recorded".into()))?,
                FeatureKind::Observation => traj
                    .raw_observations
                    .as_ref()
                    .ok_or_else(|| Error::Config("raw observations were not recorded".into()))?,
            };
            let targets = traj.params.vector();
            for (step, f) in feats.iter().enumerate().skip(cfg.burn_in) {
                if train.len() >= cfg.n_train && test.len() >= cfg.n_test {
                    break;
                }
                let record = ProbeRecord {
                    features: f.clone(),
                    targets: targets.clone(),
                    episode,
                    step: step as u32,
                };
                if train.len() < cfg.n_train {
                    train.push(record);
                    collected += 1;
                } else {
                    // an episode must not straddle the split boundary
                    if test.is_empty() && train.last().map(|r| r.episode) == Some(episode) {
                        continue;
                    }
                    test.push(record);
                    collected += 1;
                }
            }
        }
        episode_base += buffer.trajectories.len() as u64;
    }

    if train.len() < cfg.n_train || test.len() < cfg.n_test {
        return Err(Error::Validation(format!(
            "insufficient surviving episodes: harvested {} train / {} test of {} / {}",
            train.len(),
            test.len(),
            cfg.n_train,
            cfg.n_test
        )));
    }

    let dataset = HiddenStateDataset {
        feature_kind: cfg.feature_kind,
        feature_dim,
        target_names,
        target_lo,
        target_hi,
        train,
        test,
    };
    dataset.check_split_hygiene()?;
    Ok(dataset)
}

/// Small dense regressor from latent vectors to dynamics parameters,
/// trained on range-normalized targets.
#[derive(Debug, Clone)]
pub struct DecoderNetwork {
    pub net: MlpNet,
    pub target_lo: Vec<f64>,
    pub target_hi: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DecoderConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            hidden_dim: 64,
            epochs: 40,
            batch_size: 256,
            learning_rate: 1e-3,
        }
    }
}

impl DecoderNetwork {
    fn normalize_target(&self, t: &[f64]) -> Vec<f64> {
        t.iter()
            .zip(self.target_lo.iter().zip(&self.target_hi))
            .map(|(v, (lo, hi))| {
                let w = hi - lo;
                if w > 0.0 {
                    (v - lo) / w
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn predict(&self, features: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, features.len()), features.to_vec()).unwrap();
        let (y, _) = self.net.forward(x.view());
        y.row(0)
            .iter()
            .zip(self.target_lo.iter().zip(&self.target_hi))
            .map(|(z, (lo, hi))| lo + z * (hi - lo))
            .collect()
    }
}

/// Minimizes mean-squared error on normalized targets for a fixed epoch
/// budget; deterministic given the seed.
pub fn train_decoder(
    dataset: &HiddenStateDataset,
    cfg: &DecoderConfig,
    seed: u64,
) -> Result<DecoderNetwork> {
    if dataset.train.is_empty() {
        return Err(Error::Validation("empty probe training split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = MlpNet::new(dataset.feature_dim, cfg.hidden_dim, dataset.target_dim(), &mut rng);
    let mut decoder = DecoderNetwork {
        net,
        target_lo: dataset.target_lo.clone(),
        target_hi: dataset.target_hi.clone(),
    };
    let mut adam = AdamState::new(
        NetKind::Mlp(decoder.net.clone()).param_layout(),
        AdamParams {
            learning_rate: cfg.learning_rate,
            ..AdamParams::default()
        },
    );

    let n = dataset.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let rows = chunk.len();
            let mut x = Array2::zeros((rows, dataset.feature_dim));
            let mut y = Array2::zeros((rows, dataset.target_dim()));
            for (r, &i) in chunk.iter().enumerate() {
                let rec = &dataset.train[i];
                for d in 0..dataset.feature_dim {
                    x[[r, d]] = rec.features[d];
                }
                for (d, v) in decoder.normalize_target(&rec.targets).into_iter().enumerate() {
                    y[[r, d]] = v;
                }
            }
            let (pred, cache) = decoder.net.forward(x.view());
            let err = &pred - &y;
            let loss = err.iter().map(|e| e * e).sum::<f64>() / rows as f64;
            if !loss.is_finite() {
                return Err(Error::Numerical("decoder training diverged".into()));
            }
            let dy = err.mapv(|e| 2.0 * e / rows as f64);
            let mut grad = decoder.net.zeros_like();
            decoder.net.backward(&cache, dy.view(), &mut grad);
            let mut flat = NetKind::Mlp(decoder.net.clone()).params_flat();
            adam.update(&mut flat, &NetKind::Mlp(grad).params_flat())?;
            let mut kind = NetKind::Mlp(decoder.net);
            kind.load_flat(&flat)?;
            decoder.net = match kind {
                NetKind::Mlp(n) => n,
                _ => unreachable!(),
            };
        }
    }
    Ok(decoder)
}

/// Per-parameter error report. The percent error is measured against the
/// randomization range half-width (documented in every emitted header):
/// `mpe = mean(|pred - true| / half_width) * 100`.
#[derive(Debug, Clone)]
pub struct ParameterMetrics {
    pub name: String,
    pub mae: f64,
    pub mpe: f64,
    pub baseline_mae: f64,
    pub baseline_mpe: f64,
}

#[derive(Debug, Clone)]
pub struct ProbeMetrics {
    pub per_parameter: Vec<ParameterMetrics>,
}

impl ProbeMetrics {
    pub fn get(&self, name: &str) -> Option<&ParameterMetrics> {
        self.per_parameter.iter().find(|p| p.name == name)
    }
}

/// Evaluates on the test split; the predict-training-mean baseline is always
/// reported alongside.
pub fn evaluate_decoder(decoder: &DecoderNetwork, dataset: &HiddenStateDataset) -> Result<ProbeMetrics> {
    if dataset.test.is_empty() {
        return Err(Error::Validation("empty probe test split".into()));
    }
    let dim = dataset.target_dim();
    let half = dataset.half_widths();
    // training-split mean in native units
    let mut mean = vec![0.0; dim];
    for rec in &dataset.train {
        for d in 0..dim {
            mean[d] += rec.targets[d];
        }
    }
    for m in &mut mean {
        *m /= dataset.train.len() as f64;
    }

    let mut abs_err = vec![0.0; dim];
    let mut base_err = vec![0.0; dim];
    for rec in &dataset.test {
        let pred = decoder.predict(&rec.features);
        for d in 0..dim {
            abs_err[d] += (pred[d] - rec.targets[d]).abs();
            base_err[d] += (mean[d] - rec.targets[d]).abs();
        }
    }
    let n = dataset.test.len() as f64;
    let per_parameter = (0..dim)
        .map(|d| {
            let mae = abs_err[d] / n;
            let baseline_mae = base_err[d] / n;
            let hw = half[d].max(1e-12);
            ParameterMetrics {
                name: dataset.target_names[d].clone(),
                mae,
                mpe: mae / hw * 100.0,
                baseline_mae,
                baseline_mpe: baseline_mae / hw * 100.0,
            }
        })
        .collect();
    Ok(ProbeMetrics { per_parameter })
}

/// Two-dimensional latent projection: top-2 principal directions of the
/// row-wise covariance, extracted by power iteration with deflation.
#[derive(Debug, Clone)]
pub struct LatentProjection {
    pub coords: Vec<[f64; 2]>,
    pub components: [Vec<f64>; 2],
    /// Fraction of total variance along each component.
    pub explained_variance: [f64; 2],
    /// Set when the data has fewer than two directions of nonzero variance.
    pub degenerate_second: bool,
}

fn power_iterate(cov: &Array2<f64>, dim: usize) -> (Array1<f64>, f64) {
    // deterministic, mildly asymmetric start vector
    let mut v = Array1::from_shape_fn(dim, |i| 1.0 + (i as f64 + 1.0) * 1e-3);
    let mut norm = v.dot(&v).sqrt();
    v /= norm;
    let mut eigenvalue = 0.0;
    for _ in 0..1000 {
        let mut w = cov.dot(&v);
        norm = w.dot(&w).sqrt();
        if norm < 1e-300 {
            return (v, 0.0);
        }
        w /= norm;
        let lambda = w.dot(&cov.dot(&w));
        // sign-agnostic convergence measure
        let delta = (&w - &v)
            .mapv(f64::abs)
            .sum()
            .min((&w + &v).mapv(f64::abs).sum());
        v = w;
        eigenvalue = lambda;
        if delta < 1e-13 {
            break;
        }
    }
    (v, eigenvalue)
}

/// `rows` is the `T x D` matrix of latent vectors, one timestep per row.
pub fn pca_top2(rows: &Array2<f64>) -> Result<LatentProjection> {
    let (t_len, dim) = rows.dim();
    if t_len <= 2 {
        return Err(Error::Validation("pca needs more than two samples".into()));
    }
    let mean = rows.mean_axis(ndarray::Axis(0)).expect("nonempty");
    let centered = rows - &mean.broadcast((t_len, dim)).expect("broadcast");
    let mut cov = centered.t().dot(&centered) / t_len as f64;
    let total_variance: f64 = (0..dim).map(|d| cov[[d, d]]).sum();

    let (v1, l1) = power_iterate(&cov, dim);
    for i in 0..dim {
        for j in 0..dim {
            cov[[i, j]] -= l1 * v1[i] * v1[j];
        }
    }
    let (v2, l2) = power_iterate(&cov, dim);
    let degenerate_second = total_variance <= 0.0 || l2 / total_variance.max(1e-300) < 1e-12;

    let coords = (0..t_len)
        .map(|t| {
            let row = centered.row(t);
            [row.dot(&v1), row.dot(&v2)]
        })
        .collect();
    let tv = total_variance.max(1e-300);
    Ok(LatentProjection {
        coords,
        components: [v1.to_vec(), v2.to_vec()],
        explained_variance: [l1.max(0.0) / tv, l2.max(0.0) / tv],
        degenerate_second,
    })
}

/// Phase-clustering statistic over a projected latent trajectory: mean
/// pairwise distance between same-phase points (across cycles) versus
/// different-phase points. A clock-locked limit cycle makes the first
/// strictly smaller.
pub fn phase_clustering(coords: &[[f64; 2]], phases: &[usize]) -> (f64, f64) {
    assert_eq!(coords.len(), phases.len());
    let mut same = (0.0, 0usize);
    let mut diff = (0.0, 0usize);
    for i in 0..coords.len() {
        for j in (i + 1)..coords.len() {
            let dx = coords[i][0] - coords[j][0];
            let dy = coords[i][1] - coords[j][1];
            let d = (dx * dx + dy * dy).sqrt();
            if phases[i] == phases[j] {
                same.0 += d;
                same.1 += 1;
            } else {
                diff.0 += d;
                diff.1 += 1;
            }
        }
    }
    (same.0 / same.1.max(1) as f64, diff.0 / diff.1.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynrand::RandomizationSpec;
    use crate::env::{DiagnosticEnv, DiagnosticEnvConfig, Environment};
    use crate::nn::PolicyFamily;
    use std::sync::Arc;

    fn diag_factory() -> EnvFactory {
        Arc::new(|| {
            Ok(Box::new(DiagnosticEnv::new(
                DiagnosticEnvConfig::default(),
                RandomizationSpec::diagnostic_default(),
            )?) as Box<dyn Environment>)
        })
    }

    fn small_policy(seed: u64) -> Policy {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Policy::new(PolicyFamily::Lstm, 2, 1, 8, &mut rng)
    }

    fn small_harvest(n_train: usize, n_test: usize) -> HarvestConfig {
        HarvestConfig {
            n_train,
            n_test,
            burn_in: 10,
            slots: 4,
            workers: 2,
            ..HarvestConfig::default()
        }
    }

    #[test]
    fn dataset_sizes_are_exact_and_splits_disjoint() {
        let policy = small_policy(1);
        let ds = harvest_hidden_states(
            &policy,
            &diag_factory(),
            &Normalizer::identity(2),
            &small_harvest(1500, 400),
            9,
        )
        .unwrap();
        assert_eq!(ds.train.len(), 1500);
        assert_eq!(ds.test.len(), 400);
        ds.check_split_hygiene().unwrap();
        assert_eq!(ds.feature_dim, 16);
    }

    #[test]
    fn harvested_targets_lie_in_spec_ranges() {
        let policy = small_policy(2);
        let ds = harvest_hidden_states(
            &policy,
            &diag_factory(),
            &Normalizer::identity(2),
            &small_harvest(600, 200),
            10,
        )
        .unwrap();
        for rec in ds.train.iter().chain(&ds.test) {
            for (d, &v) in rec.targets.iter().enumerate() {
                assert!(v >= ds.target_lo[d] && v <= ds.target_hi[d]);
            }
            assert!(rec.step >= 10, "burn-in not respected");
        }
    }

    #[test]
    fn constant_targets_drive_mae_to_zero() {
        let policy = small_policy(3);
        let mut ds = harvest_hidden_states(
            &policy,
            &diag_factory(),
            &Normalizer::identity(2),
            &small_harvest(800, 200),
            11,
        )
        .unwrap();
        for rec in ds.train.iter_mut().chain(ds.test.iter_mut()) {
            rec.targets = vec![1.05, 0.8];
        }
        let cfg = DecoderConfig {
            epochs: 60,
            ..DecoderConfig::default()
        };
        let decoder = train_decoder(&ds, &cfg, 3).unwrap();
        let metrics = evaluate_decoder(&decoder, &ds).unwrap();
        for p in &metrics.per_parameter {
            assert!(p.mae < 0.005, "{}: mae {}", p.name, p.mae);
        }
    }

    #[test]
    fn untrained_policy_latents_do_not_beat_the_baseline() {
        let policy = small_policy(4);
        let ds = harvest_hidden_states(
            &policy,
            &diag_factory(),
            &Normalizer::identity(2),
            &small_harvest(2000, 600),
            12,
        )
        .unwrap();
        let decoder = train_decoder(&ds, &DecoderConfig::default(), 4).unwrap();
        let metrics = evaluate_decoder(&decoder, &ds).unwrap();
        for p in &metrics.per_parameter {
            assert!(
                p.mae >= 0.95 * p.baseline_mae,
                "{}: {} vs baseline {}",
                p.name,
                p.mae,
                p.baseline_mae
            );
        }
    }

    #[test]
    fn shuffled_labels_reduce_to_the_baseline() {
        let policy = small_policy(5);
        let mut ds = harvest_hidden_states(
            &policy,
            &diag_factory(),
            &Normalizer::identity(2),
            &small_harvest(2000, 600),
            13,
        )
        .unwrap();
        // break the pairing
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut targets: Vec<Vec<f64>> = ds.train.iter().map(|r| r.targets.clone()).collect();
        targets.shuffle(&mut rng);
        for (rec, t) in ds.train.iter_mut().zip(targets) {
            rec.targets = t;
        }
        let decoder = train_decoder(&ds, &DecoderConfig::default(), 5).unwrap();
        let metrics = evaluate_decoder(&decoder, &ds).unwrap();
        for p in &metrics.per_parameter {
            assert!(
                p.mae >= 0.9 * p.baseline_mae,
                "{}: {} vs baseline {}",
                p.name,
                p.mae,
                p.baseline_mae
            );
        }
    }

    #[test]
    fn decoder_training_is_deterministic() {
        let policy = small_policy(6);
        let ds = harvest_hidden_states(
            &policy,
            &diag_factory(),
            &Normalizer::identity(2),
            &small_harvest(800, 200),
            14,
        )
        .unwrap();
        let cfg = DecoderConfig {
            epochs: 5,
            ..DecoderConfig::default()
        };
        let a = train_decoder(&ds, &cfg, 7).unwrap();
        let b = train_decoder(&ds, &cfg, 7).unwrap();
        assert_eq!(
            NetKind::Mlp(a.net).params_flat(),
            NetKind::Mlp(b.net).params_flat()
        );
    }

    #[test]
    fn mean_predictor_has_fifty_percent_mpe_on_uniform_targets() {
        // closed form: E|U - mid| / half_width = 1/2 for uniform targets
        let policy = small_policy(7);
        let ds = harvest_hidden_states(
            &policy,
            &diag_factory(),
            &Normalizer::identity(2),
            &small_harvest(4000, 2000),
            15,
        )
        .unwrap();
        let decoder = train_decoder(
            &ds,
            &DecoderConfig {
                epochs: 0,
                ..DecoderConfig::default()
            },
            8,
        )
        .unwrap();
        let metrics = evaluate_decoder(&decoder, &ds).unwrap();
        for p in &metrics.per_parameter {
            assert!(
                (p.baseline_mpe - 50.0).abs() < 6.0,
                "{}: baseline mpe {}",
                p.name,
                p.baseline_mpe
            );
        }
    }

    #[test]
    fn pca_on_a_line_captures_everything_in_one_component() {
        let dir = [0.6f64, -0.8, 0.0, 0.0];
        let rows = Array2::from_shape_fn((50, 4), |(t, d)| (t as f64 - 25.0) * dir[d]);
        let proj = pca_top2(&rows).unwrap();
        assert!((proj.explained_variance[0] - 1.0).abs() < 1e-9);
        assert!(proj.degenerate_second);
        for c in &proj.coords {
            assert!(c[1].abs() < 1e-6, "second coordinate {c:?}");
        }
    }

    #[test]
    fn pca_components_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows = Array2::from_shape_fn((200, 6), |_| rng.gen_range(-1.0..1.0));
        let proj = pca_top2(&rows).unwrap();
        let v1 = Array1::from(proj.components[0].clone());
        let v2 = Array1::from(proj.components[1].clone());
        assert!((v1.dot(&v1) - 1.0).abs() < 1e-8);
        assert!((v2.dot(&v2) - 1.0).abs() < 1e-8);
        assert!(v1.dot(&v2).abs() < 1e-8);
        assert!(proj.explained_variance[0] >= proj.explained_variance[1]);
    }

    /// Jacobi rotations: the independent dense eigensolver oracle.
    fn jacobi_eigenvalues(mut a: Array2<f64>) -> Vec<f64> {
        let n = a.nrows();
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[[i, j]] * a[[i, j]];
                }
            }
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[[p, q]].abs() < 1e-18 {
                        continue;
                    }
                    let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[[k, p]];
                        let akq = a[[k, q]];
                        a[[k, p]] = c * akp - s * akq;
                        a[[k, q]] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[[p, k]];
                        let aqk = a[[q, k]];
                        a[[p, k]] = c * apk - s * aqk;
                        a[[q, k]] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
        eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
        eig
    }

    #[test]
    fn top_two_eigenpairs_match_the_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let raw = Array2::from_shape_fn((40, 5), |_| rng.gen_range(-2.0..2.0));
        let proj = pca_top2(&raw).unwrap();

        let mean = raw.mean_axis(ndarray::Axis(0)).unwrap();
        let centered = &raw - &mean.broadcast((40, 5)).unwrap();
        let cov = centered.t().dot(&centered) / 40.0;
        let total: f64 = (0..5).map(|d| cov[[d, d]]).sum();
        let eig = jacobi_eigenvalues(cov);
        assert!((proj.explained_variance[0] - eig[0] / total).abs() < 1e-6);
        assert!((proj.explained_variance[1] - eig[1] / total).abs() < 1e-6);
    }

    #[test]
    fn pca_rejects_tiny_inputs() {
        let rows = Array2::zeros((2, 3));
        assert!(pca_top2(&rows).is_err());
    }

    #[test]
    fn synthetic_phase_ring_clusters_by_phase() {
        // three cycles of a 28-phase ring with small noise
        let phase_len = 28;
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut coords = Vec::new();
        let mut phases = Vec::new();
        for _cycle in 0..3 {
            for w in 0..phase_len {
                let a = 2.0 * std::f64::consts::PI * w as f64 / phase_len as f64;
                coords.push([
                    a.cos() + rng.gen_range(-0.01..0.01),
                    a.sin() + rng.gen_range(-0.01..0.01),
                ]);
                phases.push(w);
            }
        }
        let (same, diff) = phase_clustering(&coords, &phases);
        assert!(same < diff, "same {same} diff {diff}");
    }
}
