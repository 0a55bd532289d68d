use super::rollout::Trajectory;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Gae {
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
}

/// Generalized advantage estimates per segment, before normalization.
/// Value targets are `advantage + value`.
pub fn compute_gae(traj: &Trajectory, gamma: f64, lambda: f64) -> Result<Gae> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let n = traj.len();
    let mut advantages = vec![0.0; n];
    for seg in &traj.segments {
        let mut next_value = if seg.terminal { 0.0 } else { seg.bootstrap };
        let mut acc = 0.0;
        for k in (seg.start..seg.start + seg.len).rev() {
            let delta = traj.rewards[k] + gamma * next_value - traj.values[k];
            acc = delta + gamma * lambda * acc;
            advantages[k] = acc;
            next_value = traj.values[k];
        }
    }
    let targets = advantages.iter().zip(&traj.values).map(|(a, v)| a + v).collect();
    Ok(Gae { advantages, targets })
}

/// Shifts and scales to zero mean and unit variance in place.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    for a in adv.iter_mut() {
        *a = (*a - mean) * scale;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::rollout::Segment;

    fn traj(rewards: &[f64], values: &[f64], terminal: bool, bootstrap: f64) -> Trajectory {
        let mut t = Trajectory::new(1, 1);
        t.rewards = rewards.to_vec();
        t.values = values.to_vec();
        t.segments.push(Segment {
            start: 0,
            len: rewards.len(),
            bootstrap,
            terminal,
        });
        t
    }

    #[test]
    fn examples() {
        let g = compute_gae(&traj(&[0.7], &[0.2], true, 5.0), 0.99, 1.0).unwrap();
        assert!((g.advantages[0] - 0.5).abs() < 1e-15);
        let g = compute_gae(&traj(&[0.0; 4], &[0.0; 4], true, 0.0), 0.99, 0.95).unwrap();
        assert!(g.advantages.iter().all(|&a| a == 0.0));
        assert!(compute_gae(&Trajectory::new(1, 1), 0.99, 1.0).is_err());
    }

    #[test]
    fn truncated_segment_bootstraps() {
        let g = compute_gae(&traj(&[1.0], &[0.0], false, 2.0), 0.5, 1.0).unwrap();
        assert_eq!(g.advantages[0], 2.0);
    }

    #[test]
    fn normalization_moments() {
        let mut a: Vec<f64> = (0..1000).map(|k| ((k * 37) % 101) as f64 * 0.3 - 4.0).collect();
        normalize_advantages(&mut a);
        let m = a.iter().sum::<f64>() / 1000.0;
        let v = a.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 1000.0;
        assert!(m.abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-3);
    }
}
