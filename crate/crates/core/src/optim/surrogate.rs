//! The clipped surrogate with a KL penalty toward the reference policy.

use super::UpdateConfig;
use crate::catalog::ActionCatalog;
use crate::error::{Error, Result};
use crate::policy::{kl_with_grad, log_softmax, net, PolicyParameters, RolloutPass};
use crate::rollout::Rollout;

/// f = Σ_t [min(r_t a, clip(r_t, 1 ± ε) a) − β KL_t] over trainable steps,
/// with r_t = π_new(a_t | h_t) / π_old(a_t | h_t). KL_t compares the new and
/// reference policies over the vocabulary (renormalized) at language steps
/// and over the environment's actions at external steps. Returns the value
/// and its gradient with respect to `new`.
pub fn ppo_surrogate(
    new: &PolicyParameters,
    old: &PolicyParameters,
    reference: &PolicyParameters,
    rollout: &Rollout,
    advantage: f64,
    cfg: &UpdateConfig,
    catalog: &ActionCatalog,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; new.len()];
    let value = ppo_surrogate_into(new, old, reference, rollout, advantage, cfg, catalog, 1.0, &mut grad)?;
    Ok((value, grad))
}

/// [`ppo_surrogate`] accumulating `weight ×` the gradient into `grad`.
#[allow(clippy::too_many_arguments)]
pub fn ppo_surrogate_into(
    new: &PolicyParameters,
    old: &PolicyParameters,
    reference: &PolicyParameters,
    rollout: &Rollout,
    advantage: f64,
    cfg: &UpdateConfig,
    catalog: &ActionCatalog,
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let use_kl = cfg.beta > 0.0;
    if advantage == 0.0 && !use_kl {
        return Ok(0.0);
    }
    let pass = RolloutPass::new(new, rollout);
    let old_pass = (!std::ptr::eq(new, old) && new.data != old.data).then(|| RolloutPass::new(old, rollout));
    let ref_pass = use_kl.then(|| RolloutPass::new(reference, rollout));
    let n_vocab = new.n_vocab;
    let mut value = 0.0;
    let mut dgs = Vec::new();
    for r in rollout.records.iter().filter(|r| r.trainable) {
        let support = catalog.support(r.env)?;
        let a = r.action.global - support.start;
        let g = pass.g(r.pre_history_len);
        let z = new.logits(g, support.clone());
        let lp = log_softmax(&z);
        let lp_old = match &old_pass {
            Some(op) => log_softmax(&old.logits(op.g(r.pre_history_len), support.clone()))[a],
            None => lp[a],
        };
        if !lp_old.is_finite() {
            return Err(Error::InvalidState("taken action has zero probability under the old policy".into()));
        }
        let ratio = (lp[a] - lp_old).exp();
        let unclipped = ratio * advantage;
        let clipped = ratio.clamp(1.0 - cfg.epsilon, 1.0 + cfg.epsilon) * advantage;
        let mut dz = vec![0.0; z.len()];
        if unclipped <= clipped {
            // d(r a)/dz = a r (onehot − p)
            for (i, l) in lp.iter().enumerate() {
                dz[i] = -advantage * ratio * l.exp();
            }
            dz[a] += advantage * ratio;
        }
        let mut step_value = unclipped.min(clipped);
        if let Some(rp) = &ref_pass {
            let zr = reference.logits(rp.g(r.pre_history_len), support.clone());
            // language steps: vocabulary rows only, which lead the support
            let k = if r.env.is_language() { n_vocab } else { z.len() };
            let (kl, dkl) = kl_with_grad(&z[..k], &zr[..k]);
            step_value -= cfg.beta * kl;
            for (d, g) in dz[..k].iter_mut().zip(&dkl) {
                *d -= cfg.beta * g;
            }
        }
        value += step_value;
        for d in dz.iter_mut() {
            *d *= weight;
        }
        let mut dg = vec![0.0; new.layout().d];
        new.head_backward(g, support, &dz, grad, &mut dg);
        dgs.push((r.pre_history_len, dg));
    }
    net::backward(&new.data, new.layout(), &pass.trace, &dgs, grad);
    Ok(value)
}
