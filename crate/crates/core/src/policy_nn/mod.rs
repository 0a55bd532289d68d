//! Policy and value networks, the Gaussian action head and the optimizer.

mod adam;
mod checkpoint;
mod gaussian;
mod mlp;
mod squash;

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use gaussian::{
    clamp_log_std, kl_divergence, log_prob, mode_action, sample_action, SampledAction, LOG_STD_MAX, LOG_STD_MIN,
};
pub use mlp::{Linear, Mlp, MlpCache};
pub use squash::{squash_to_mfc, ActionMode, SquashSpec};

pub const OUTPUT_SCALE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub init_log_std: f64,
}

impl PolicyShape {
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        PolicyShape {
            obs_dim,
            action_dim,
            hidden: vec![256, 256],
            init_log_std: 0.0,
        }
    }

    pub fn with_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.hidden = hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.action_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig(format!("degenerate network shape {self:?}")));
        }
        if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&self.init_log_std) {
            return Err(Error::InvalidConfig("initial log-std out of range".into()));
        }
        Ok(())
    }

    fn sizes(&self, out: usize) -> Vec<usize> {
        let mut s = vec![self.obs_dim];
        s.extend(&self.hidden);
        s.push(out);
        s
    }
}

/// Policy mean network, state-independent log-std and value network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub policy: Mlp,
    pub log_std: Array1<f64>,
    pub value: Mlp,
}

pub fn init_params(shape: &PolicyShape, seed: SeedStream) -> Result<PolicyParams> {
    shape.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.named("policy").raw());
    let policy = Mlp::init(&shape.sizes(shape.action_dim), OUTPUT_SCALE, &mut rng);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.named("value").raw());
    let value = Mlp::init(&shape.sizes(1), 1.0, &mut rng);
    Ok(PolicyParams {
        policy,
        log_std: Array1::from_elem(shape.action_dim, shape.init_log_std),
        value,
    })
}

pub fn forward_policy(p: &PolicyParams, obs: ArrayView2<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    Ok((p.policy.forward(obs)?, p.log_std.mapv(clamp_log_std)))
}

impl PolicyParams {
    pub fn obs_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    /// Checks the parameters against `shape`.
    pub fn check_shape(&self, shape: &PolicyShape) -> Result<()> {
        let expect = |sizes: Vec<usize>| sizes.windows(2).map(|w| (w[0], w[1])).collect::<Vec<_>>();
        if self.policy.shapes() != expect(shape.sizes(shape.action_dim))
            || self.value.shapes() != expect(shape.sizes(1))
            || self.log_std.len() != shape.action_dim
        {
            return Err(Error::Shape(format!("parameters do not match {shape:?}")));
        }
        Ok(())
    }

    /// Mean and clamped log-std for a single observation.
    pub fn act(&self, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = ArrayView2::from_shape((1, obs.len()), obs).map_err(|e| Error::Shape(e.to_string()))?;
        let (mean, log_std) = forward_policy(self, x)?;
        Ok((mean.into_raw_vec_and_offset().0, log_std.to_vec()))
    }

    pub fn values(&self, obs: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.value.forward(obs)?.column(0).to_owned())
    }

    pub fn zeros_like(&self) -> Self {
        PolicyParams {
            policy: self.policy.zeros_like(),
            log_std: Array1::zeros(self.log_std.len()),
            value: self.value.zeros_like(),
        }
    }

    /// Policy tensors (including log-std) followed by value tensors.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.policy.tensors();
        t.push(self.log_std.as_slice().unwrap());
        t.extend(self.value.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.policy.tensors_mut();
        t.push(self.log_std.as_slice_mut().unwrap());
        t.extend(self.value.tensors_mut());
        t
    }

    /// Number of leading entries of [`Self::tensors`] that belong to the policy.
    pub fn policy_tensor_count(&self) -> usize {
        2 * self.policy.layers.len() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small() -> PolicyShape {
        PolicyShape::new(36, 144).with_hidden(vec![32, 32])
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let mut p = init_params(&small(), SeedStream::new(0)).unwrap();
        for t in p.tensors_mut() {
            t.fill(0.0);
        }
        let (mean, log_std) = forward_policy(&p, Array2::from_elem((3, 36), 0.7).view()).unwrap();
        assert!(mean.iter().all(|&v| v == 0.0));
        assert!(log_std.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_deterministic_and_finite() {
        for s in 0..20 {
            let a = init_params(&small(), SeedStream::new(s)).unwrap();
            assert!(a.is_finite());
            assert_eq!(a, init_params(&small(), SeedStream::new(s)).unwrap());
        }
        assert_ne!(
            init_params(&small(), SeedStream::new(1)).unwrap(),
            init_params(&small(), SeedStream::new(2)).unwrap()
        );
    }

    #[test]
    fn initial_means_are_small() {
        let p = init_params(&PolicyShape::new(36, 144), SeedStream::new(9)).unwrap();
        let mut rng = SeedStream::new(10).rng();
        let obs = Array2::from_shape_fn((64, 36), |_| rng.random_range(-1.0..1.0));
        let (mean, _) = forward_policy(&p, obs.view()).unwrap();
        let max = mean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 0.1, "{max}");
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let p = init_params(&small(), SeedStream::new(0)).unwrap();
        assert!(forward_policy(&p, Array2::zeros((1, 35)).view()).is_err());
        assert!(p.check_shape(&small()).is_ok());
        assert!(p.check_shape(&PolicyShape::new(36, 144)).is_err());
    }

    #[test]
    fn lipschitz_in_input() {
        let p = init_params(&small(), SeedStream::new(4)).unwrap();
        // tanh is 1-Lipschitz, so the product of spectral norms (bounded by
        // Frobenius norms) bounds the slope.
        let bound: f64 = p
            .policy
            .layers
            .iter()
            .map(|l| l.weight.iter().map(|w| w * w).sum::<f64>().sqrt())
            .product();
        let mut rng = SeedStream::new(5).rng();
        for _ in 0..50 {
            let x: Vec<f64> = (0..36).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-1e-3..1e-3)).collect();
            let (mx, _) = p.act(&x).unwrap();
            let (my, _) = p.act(&y).unwrap();
            let dy: f64 = mx.iter().zip(&my).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let dx: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(dy <= bound * dx * (1.0 + 1e-9));
        }
    }
}
