use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;

use super::gae::{compute_gae, normalize_advantages};
use super::rollout::Trajectory;
use super::PpoConfig;
use crate::error::{Error, Result};
use crate::policy_nn::{adam_update, AdamState, PolicyParams, LOG_STD_MAX, LOG_STD_MIN};
use crate::rng::SeedStream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean `KL(old || new)` over the batch after the update.
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub kl_coeff: f64,
    pub grad_norm: f64,
}

/// Per-minibatch losses and parameter gradients.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub grads: PolicyParams,
}

fn gather(src: &[f64], width: usize, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), width));
    for (r, &k) in idx.iter().enumerate() {
        out.row_mut(r)
            .as_slice_mut()
            .unwrap()
            .copy_from_slice(&src[k * width..(k + 1) * width]);
    }
    out
}

/// Loss `-surrogate + beta * KL + c_v * MSE` on the rows `idx` and its gradient.
pub fn loss_and_grad(
    params: &PolicyParams,
    traj: &Trajectory,
    advantages: &[f64],
    targets: &[f64],
    idx: &[usize],
    cfg: &PpoConfig,
    kl_coeff: f64,
) -> Result<LossGrad> {
    let (d, a) = (traj.obs_dim, traj.action_dim);
    let b = idx.len() as f64;
    let x = gather(&traj.obs, d, idx);
    let acts = gather(&traj.actions, a, idx);
    let old_means = gather(&traj.means, a, idx);
    let (mu, cache) = params.policy.forward_cached(x.view())?;
    let ls: Vec<f64> = params.log_std.iter().map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX)).collect();
    let inv_var: Vec<f64> = ls.iter().map(|l| (-2.0 * l).exp()).collect();
    let old_var: Vec<f64> = traj.log_std.iter().map(|l| (2.0 * l).exp()).collect();
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();

    let mut g_mu = Array2::<f64>::zeros(mu.raw_dim());
    let mut g_ls = vec![0.0; a];
    let (mut surrogate, mut kl_sum, mut clipped) = (0.0, 0.0, 0usize);
    for (r, &k) in idx.iter().enumerate() {
        let mut logp = 0.0;
        for j in 0..a {
            let diff = acts[[r, j]] - mu[[r, j]];
            logp += -0.5 * diff * diff * inv_var[j] - ls[j] - half_ln_2pi;
        }
        let ratio = (logp - traj.log_probs[k]).exp();
        let adv = advantages[k];
        let unclipped = ratio * adv;
        let clipped_obj = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
        let g_logp = if unclipped <= clipped_obj {
            surrogate += unclipped;
            -unclipped / b
        } else {
            surrogate += clipped_obj;
            clipped += 1;
            0.0
        };
        for j in 0..a {
            let diff = acts[[r, j]] - mu[[r, j]];
            let dm = mu[[r, j]] - old_means[[r, j]];
            kl_sum += ls[j] - traj.log_std[j] + 0.5 * (old_var[j] + dm * dm) * inv_var[j] - 0.5;
            g_mu[[r, j]] = g_logp * diff * inv_var[j] + kl_coeff / b * dm * inv_var[j];
            g_ls[j] += g_logp * (diff * diff * inv_var[j] - 1.0)
                + kl_coeff / b * (1.0 - (old_var[j] + dm * dm) * inv_var[j]);
        }
    }
    let (v, vcache) = params.value.forward_cached(x.view())?;
    let mut g_v = Array2::<f64>::zeros(v.raw_dim());
    let mut se = 0.0;
    for (r, &k) in idx.iter().enumerate() {
        let err = v[[r, 0]] - targets[k];
        se += err * err;
        g_v[[r, 0]] = 2.0 * cfg.value_loss_coeff * err / b;
    }
    let policy_loss = -surrogate / b;
    let value_loss = se / b;
    let kl = kl_sum / b;

    let mut grads = params.zeros_like();
    grads.policy = params.policy.backward(&cache, g_mu.view())?;
    grads.value = params.value.backward(&vcache, g_v.view())?;
    for (j, g) in g_ls.into_iter().enumerate() {
        let raw = params.log_std[j];
        grads.log_std[j] = if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) { g } else { 0.0 };
    }
    Ok(LossGrad {
        policy_loss,
        value_loss,
        kl,
        clip_fraction: clipped as f64 / b,
        grads,
    })
}

fn l2(tensors: &[&[f64]]) -> f64 {
    tensors.iter().flat_map(|t| t.iter()).map(|g| g * g).sum::<f64>().sqrt()
}

/// Scales the policy and value gradients separately to norm at most
/// `max_norm` (zero disables). Returns the joint norm before clipping.
pub fn clip_gradients(grads: &mut PolicyParams, max_norm: f64) -> f64 {
    let split = grads.policy_tensor_count();
    let (pn, vn) = {
        let t = grads.tensors();
        (l2(&t[..split]), l2(&t[split..]))
    };
    if max_norm > 0.0 {
        let mut t = grads.tensors_mut();
        for (range, norm) in [(0..split, pn), (split..t.len(), vn)] {
            if norm > max_norm {
                let s = max_norm / norm;
                for tensor in &mut t[range] {
                    tensor.iter_mut().for_each(|g| *g *= s);
                }
            }
        }
    }
    (pn * pn + vn * vn).sqrt()
}

/// Mean `KL(old || current)` over all rows.
pub fn batch_kl(params: &PolicyParams, traj: &Trajectory) -> Result<f64> {
    let x = ndarray::ArrayView2::from_shape((traj.len(), traj.obs_dim), &traj.obs)
        .map_err(|e| Error::Shape(e.to_string()))?;
    let mu = params.policy.forward(x)?;
    let ls: Array1<f64> = params.log_std.mapv(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX));
    let a = traj.action_dim;
    let mut total = 0.0;
    for (r, row) in mu.rows().into_iter().enumerate() {
        total += crate::policy_nn::kl_divergence(
            &traj.means[r * a..(r + 1) * a],
            &traj.log_std,
            row.as_slice().unwrap(),
            ls.as_slice().unwrap(),
        );
    }
    Ok(total / traj.len() as f64)
}

/// Adaptive KL coefficient rule.
pub fn adapt_kl_coeff(kl_coeff: f64, mean_kl: f64, target: f64) -> f64 {
    if mean_kl > 2.0 * target {
        kl_coeff * 2.0
    } else if mean_kl < 0.5 * target {
        kl_coeff * 0.5
    } else {
        kl_coeff
    }
}

/// Several epochs of shuffled minibatch steps on one batch.
pub fn ppo_update(
    params: &mut PolicyParams,
    adam: &mut AdamState,
    traj: &Trajectory,
    cfg: &PpoConfig,
    kl_coeff: f64,
    seed: SeedStream,
) -> Result<UpdateStats> {
    traj.validate()?;
    let gae = compute_gae(traj, cfg.gamma, cfg.gae_lambda)?;
    let mut adv = gae.advantages;
    normalize_advantages(&mut adv);
    let n = traj.len();
    let mb = cfg.minibatch.min(n).max(1);
    let mut order: Vec<usize> = (0..n).collect();
    let (mut pl, mut vl, mut cf, mut gn, mut count) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for epoch in 0..cfg.epochs_per_batch {
        order.shuffle(&mut seed.child(epoch as u64).rng());
        for (mi, idx) in order.chunks(mb).enumerate() {
            let mut lg = loss_and_grad(params, traj, &adv, &gae.targets, idx, cfg, kl_coeff)?;
            let total = lg.policy_loss + kl_coeff * lg.kl + cfg.value_loss_coeff * lg.value_loss;
            if !total.is_finite() || !lg.grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    minibatch: mi,
                    policy_loss: lg.policy_loss,
                    value_loss: lg.value_loss,
                    kl: lg.kl,
                });
            }
            let norm = clip_gradients(&mut lg.grads, cfg.max_grad_norm);
            adam_update(&mut params.tensors_mut(), &lg.grads.tensors(), adam, cfg.learning_rate)?;
            if epoch + 1 == cfg.epochs_per_batch {
                pl += lg.policy_loss;
                vl += lg.value_loss;
                cf += lg.clip_fraction;
                gn += norm;
                count += 1.0;
            }
        }
    }
    let mean_kl = batch_kl(params, traj)?;
    let count = f64::max(count, 1.0);
    Ok(UpdateStats {
        policy_loss: pl / count,
        value_loss: vl / count,
        mean_kl,
        clip_fraction: cf / count,
        kl_coeff: adapt_kl_coeff(kl_coeff, mean_kl, cfg.kl_target),
        grad_norm: gn / count,
    })
}
