//! Diagonal Gaussian action distribution with clipped samples.

use rand_distr::{Distribution, StandardNormal};

use crate::rng::SeedStream;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Debug, PartialEq)]
pub struct SampledAction {
    /// Unclipped draw; its density gives `log_prob`.
    pub sample: Vec<f64>,
    /// `sample` clipped to `[-1, 1]`, the value sent to the environment.
    pub clipped: Vec<f64>,
    pub log_prob: f64,
}

pub fn clamp_log_std(l: f64) -> f64 {
    l.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

pub fn log_prob(mean: &[f64], log_std: &[f64], x: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(x)
        .map(|((&m, &l), &v)| {
            let l = clamp_log_std(l);
            let z = (v - m) * (-l).exp();
            -0.5 * z * z - l - HALF_LN_2PI
        })
        .sum()
}

pub fn sample_action(mean: &[f64], log_std: &[f64], seed: SeedStream) -> SampledAction {
    let mut rng = seed.rng();
    let sample: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .map(|(&m, &l)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            m + clamp_log_std(l).exp() * z
        })
        .collect();
    let clipped = sample.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
    let log_prob = log_prob(mean, log_std, &sample);
    SampledAction {
        sample,
        clipped,
        log_prob,
    }
}

/// Deterministic action: the mean clipped to `[-1, 1]`.
pub fn mode_action(mean: &[f64]) -> Vec<f64> {
    mean.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
}

/// `KL(old || new)` summed over dimensions.
pub fn kl_divergence(mean_old: &[f64], log_std_old: &[f64], mean_new: &[f64], log_std_new: &[f64]) -> f64 {
    mean_old
        .iter()
        .zip(log_std_old)
        .zip(mean_new.iter().zip(log_std_new))
        .map(|((&mo, &lo), (&mn, &ln))| {
            let (lo, ln) = (clamp_log_std(lo), clamp_log_std(ln));
            let var_ratio = (2.0 * (lo - ln)).exp();
            let d = (mo - mn) * (-ln).exp();
            ln - lo + 0.5 * (var_ratio + d * d) - 0.5
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_prob_at_mean() {
        assert!((log_prob(&[0.3], &[0.0], &[0.3]) + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn degenerate_std_returns_clipped_mean() {
        let a = sample_action(&[0.4, 1.7], &[-50.0, -50.0], SeedStream::new(1));
        assert!((a.clipped[0] - 0.4).abs() < 1e-8);
        assert_eq!(a.clipped[1], 1.0);
        assert!(a.log_prob.is_finite());
    }

    #[test]
    fn density_integrates_to_one() {
        let (m, l) = (0.2, (0.3f64).ln());
        let h = 1e-3;
        let mass: f64 = (-6000..=6000).map(|k| log_prob(&[m], &[l], &[m + k as f64 * h]).exp() * h).sum();
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    }

    #[test]
    fn sample_mean_matches() {
        let n = 20_000;
        let mean = [0.5, -0.3];
        let ls = [0.1f64.ln(); 2];
        let mut acc = [0.0; 2];
        for i in 0..n {
            let a = sample_action(&mean, &ls, SeedStream::new(3).child(i));
            acc[0] += a.clipped[0];
            acc[1] += a.clipped[1];
        }
        assert!((acc[0] / n as f64 - 0.5).abs() < 0.005);
        assert!((acc[1] / n as f64 + 0.3).abs() < 0.005);
    }

    #[test]
    fn kl_is_zero_for_equal_and_positive_otherwise() {
        assert_eq!(kl_divergence(&[0.1], &[-0.5], &[0.1], &[-0.5]), 0.0);
        // KL(N(0,1) || N(1,1)) = 1/2
        assert!((kl_divergence(&[0.0], &[0.0], &[1.0], &[0.0]) - 0.5).abs() < 1e-15);
        assert!(kl_divergence(&[0.0], &[0.0], &[0.0], &[0.7]) > 0.0);
    }
}
