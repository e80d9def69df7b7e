//! Generalized advantage estimation over a rollout buffer.

use super::rollout::RolloutBuffer;

/// Fills per-step advantages and returns:
///
/// `delta_t = r_t + gamma V_{t+1} - V_t`, `A_t = sum_k (gamma lambda)^k delta_{t+k}`,
/// bootstrapping `V_T` with zero at terminal states and the recorded critic
/// value at cap-truncated states. Returns are `A + V` computed from the raw
/// advantages; afterwards the advantages are normalized to zero mean / unit
/// variance across the whole buffer.
pub fn estimate_advantages(buffer: &mut RolloutBuffer, gamma: f64, lambda: f64) {
    for traj in &mut buffer.trajectories {
        let t_len = traj.len();
        traj.advantages = vec![0.0; t_len];
        traj.returns = vec![0.0; t_len];
        let final_value = if traj.terminal { 0.0 } else { traj.bootstrap_value };
        let mut acc = 0.0;
        for t in (0..t_len).rev() {
            let v_next = if t + 1 < t_len { traj.values[t + 1] } else { final_value };
            let delta = traj.rewards[t] + gamma * v_next - traj.values[t];
            acc = delta + gamma * lambda * acc;
            traj.advantages[t] = acc;
            traj.returns[t] = acc + traj.values[t];
        }
    }

    // normalize advantages across the iteration
    let n = buffer.total_steps.max(1) as f64;
    let mean: f64 = buffer
        .trajectories
        .iter()
        .flat_map(|t| t.advantages.iter())
        .sum::<f64>()
        / n;
    let var: f64 = buffer
        .trajectories
        .iter()
        .flat_map(|t| t.advantages.iter())
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / n;
    let std = var.sqrt().max(1e-8);
    for traj in &mut buffer.trajectories {
        for a in &mut traj.advantages {
            *a = (*a - mean) / std;
        }
    }
}

/// Raw (unnormalized) advantage recursion for one trajectory; the oracle-side
/// form used in tests and for inspecting single episodes.
pub fn raw_advantages(
    rewards: &[f64],
    values: &[f64],
    final_value: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let t_len = rewards.len();
    let mut adv = vec![0.0; t_len];
    let mut acc = 0.0;
    for t in (0..t_len).rev() {
        let v_next = if t + 1 < t_len { values[t + 1] } else { final_value };
        let delta = rewards[t] + gamma * v_next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    adv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::rollout::Trajectory;

    fn buffer_from(rewards: Vec<f64>, values: Vec<f64>, terminal: bool, bootstrap: f64) -> RolloutBuffer {
        let total = rewards.len();
        let traj = Trajectory {
            rewards,
            values,
            terminal,
            bootstrap_value: bootstrap,
            ..Trajectory::default()
        };
        RolloutBuffer {
            trajectories: vec![traj],
            total_steps: total,
        }
    }

    #[test]
    fn lambda_zero_is_one_step_td() {
        let rewards = vec![1.0, -0.5, 2.0, 0.3];
        let values = vec![0.2, 0.7, -0.1, 0.4];
        let adv = raw_advantages(&rewards, &values, 0.0, 0.9, 0.0);
        for t in 0..4 {
            let v_next = if t + 1 < 4 { values[t + 1] } else { 0.0 };
            let td = rewards[t] + 0.9 * v_next - values[t];
            assert!((adv[t] - td).abs() < 1e-15);
        }
    }

    #[test]
    fn monte_carlo_limit_sums_future_rewards() {
        let rewards = vec![1.0, 2.0, 3.0, 4.0];
        let values = vec![0.0; 4];
        let adv = raw_advantages(&rewards, &values, 0.0, 1.0, 1.0);
        assert_eq!(adv, vec![10.0, 9.0, 7.0, 4.0]);
    }

    #[test]
    fn three_step_recursion_matches_hand_computation() {
        // gamma=0.9, lambda=0.95, r=[1.0, 0.5, 2.0], V=[0.3, 0.6, 0.1], terminal
        let adv = raw_advantages(&[1.0, 0.5, 2.0], &[0.3, 0.6, 0.1], 0.0, 0.9, 0.95);
        let expect = [2.6203974999999997, 1.6144999999999998, 1.9];
        for (a, e) in adv.iter().zip(expect) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn returns_are_raw_advantage_plus_value() {
        let mut buf = buffer_from(vec![1.0, 0.5, 2.0], vec![0.3, 0.6, 0.1], true, 0.0);
        estimate_advantages(&mut buf, 0.9, 0.95);
        let t = &buf.trajectories[0];
        let expect = [2.9203974999999995, 2.2144999999999997, 2.0];
        for (r, e) in t.returns.iter().zip(expect) {
            assert!((r - e).abs() < 1e-12, "{r} vs {e}");
        }
    }

    #[test]
    fn truncated_episodes_bootstrap_from_the_critic() {
        let boot = 0.8;
        let adv_trunc = raw_advantages(&[1.0], &[0.5], boot, 0.9, 0.95);
        let adv_term = raw_advantages(&[1.0], &[0.5], 0.0, 0.9, 0.95);
        assert!((adv_trunc[0] - (1.0 + 0.9 * boot - 0.5)).abs() < 1e-15);
        assert!((adv_term[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn advantages_are_normalized_per_iteration() {
        let mut buf = RolloutBuffer {
            trajectories: vec![
                Trajectory {
                    rewards: vec![1.0, 2.0, 0.5, -0.3],
                    values: vec![0.1, 0.2, 0.3, 0.4],
                    terminal: true,
                    ..Trajectory::default()
                },
                Trajectory {
                    rewards: vec![0.7, -1.0, 0.2],
                    values: vec![0.5, 0.1, 0.0],
                    terminal: false,
                    bootstrap_value: 0.25,
                    ..Trajectory::default()
                },
            ],
            total_steps: 7,
        };
        estimate_advantages(&mut buf, 0.99, 0.95);
        let all: Vec<f64> = buf
            .trajectories
            .iter()
            .flat_map(|t| t.advantages.iter().copied())
            .collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
}
