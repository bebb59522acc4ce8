//! Counterfactual rollouts and the CPO / GRPO group updates.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::surrogate::ppo_surrogate_into;
use super::{Adam, AdvantageMode, UpdateConfig};
use crate::catalog::{ActionCatalog, EnvId};
use crate::envs::EnvRegistry;
use crate::error::{Error, Result};
use crate::policy::{log_softmax, NeuralPolicy, PolicyParameters, RolloutPass};
use crate::rollout::{continue_rollout, replay_prefix, rollout, Rollout, RolloutOptions};
use crate::tasks::TaskInstance;

/// Which case of the update function a group used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Every factual reward was ≤ 0: train on τ' with r̄' − r̄.
    Counterfactual,
    /// Group-standardized factual rewards.
    Factual,
}

/// (r − μ) / max(σ, floor) with the population standard deviation.
pub fn standardize(rewards: &[f64], sigma_floor: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mu = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / n;
    let s = var.sqrt().max(sigma_floor);
    rewards.iter().map(|r| (r - mu) / s).collect()
}

pub fn grpo_advantages(rewards: &[f64], sigma_floor: f64) -> Vec<f64> {
    standardize(rewards, sigma_floor)
}

/// The counterfactual branch fires iff every factual reward is ≤ 0.
pub fn cpo_branch(factual: &[f64]) -> Branch {
    if factual.iter().all(|&r| r <= 0.0) {
        Branch::Counterfactual
    } else {
        Branch::Factual
    }
}

/// Advantages of the CPO update. `counterfactual` is required only when
/// the counterfactual branch fires; its advantages are r̄'_i − r̄_i.
pub fn cpo_advantages(factual: &[f64], counterfactual: Option<&[f64]>, sigma_floor: f64) -> Result<(Branch, Vec<f64>)> {
    match cpo_branch(factual) {
        Branch::Factual => Ok((Branch::Factual, standardize(factual, sigma_floor))),
        Branch::Counterfactual => {
            let cf = counterfactual
                .ok_or_else(|| Error::InvalidState("counterfactual rewards are required for this group".into()))?;
            if cf.len() != factual.len() {
                return Err(Error::InvalidState("factual and counterfactual groups differ in size".into()));
            }
            Ok((Branch::Counterfactual, cf.iter().zip(factual).map(|(c, f)| c - f).collect()))
        }
    }
}

/// τ_i, τ'_i and the intervention that links them.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutPair {
    pub factual: Rollout,
    pub counterfactual: Rollout,
    pub intervention_step: usize,
    pub forced_route: EnvId,
}

/// (step, weight) for every language step of `factual`: the probability of
/// the route's description under the language softmax at h_t, with the
/// geometric mean over tokens for multi-token descriptions.
pub fn intervention_weights(
    params: &PolicyParameters,
    factual: &Rollout,
    route: EnvId,
    catalog: &ActionCatalog,
) -> Result<Vec<(usize, f64)>> {
    let desc = catalog.env(route)?.route_desc.clone();
    if route.is_language() || desc.is_empty() {
        return Err(Error::Config("the forced route must be an external environment with a description".into()));
    }
    let support = catalog.support(EnvId::LANGUAGE)?;
    let pass = RolloutPass::new(params, factual);
    let hist = factual.final_state.history();
    let mut out = Vec::new();
    for (t, r) in factual.records.iter().enumerate() {
        if !r.env.is_language() {
            continue;
        }
        let lp0 = log_softmax(&params.logits(pass.g(r.pre_history_len), support.clone()))[desc[0].0];
        let mut total = lp0;
        if desc.len() > 1 {
            let mut h = hist[..r.pre_history_len].to_vec();
            for k in 1..desc.len() {
                h.push(desc[k - 1]);
                total += log_softmax(&params.logits(&params.encode(&h), support.clone()))[desc[k].0];
            }
        }
        out.push((t, (total / desc.len() as f64).exp()));
    }
    Ok(out)
}

/// Draw t' from the weights, uniformly if they are all zero.
pub fn sample_intervention<R: Rng + ?Sized>(weights: &[(usize, f64)], rng: &mut R) -> Option<usize> {
    if weights.is_empty() {
        return None;
    }
    match WeightedIndex::new(weights.iter().map(|w| w.1)) {
        Ok(d) => Some(weights[d.sample(rng)].0),
        Err(_) => Some(weights[rng.gen_range(0..weights.len())].0),
    }
}

/// Build τ' from τ: sample t', replay τ's first t' steps, force the route
/// at t' and continue sampling to termination.
#[allow(clippy::too_many_arguments)]
pub fn counterfactual_rollout<R: Rng + ?Sized>(
    params: &PolicyParameters,
    factual: &Rollout,
    route: EnvId,
    task: &TaskInstance,
    catalog: &ActionCatalog,
    registry: &EnvRegistry,
    opts: &RolloutOptions,
    rng: &mut R,
) -> Result<RolloutPair> {
    let weights = intervention_weights(params, factual, route, catalog)?;
    let t = sample_intervention(&weights, rng)
        .ok_or_else(|| Error::InvalidState("factual rollout has no language step".into()))?;
    let (state, records) = replay_prefix(factual, t, task, catalog, registry)?;
    let policy = NeuralPolicy::new(params);
    let cf = continue_rollout(&policy, task, catalog, registry, opts, rng, state, records, Some(catalog.route_action(route)))?;
    Ok(RolloutPair { factual: factual.clone(), counterfactual: cf, intervention_step: t, forced_route: route })
}

/// Shared, read-only pieces of an update.
#[derive(Debug, Clone, Copy)]
pub struct UpdateContext<'a> {
    pub catalog: &'a ActionCatalog,
    pub registry: &'a EnvRegistry,
    pub rollout: &'a RolloutOptions,
}

/// Summary of one optimizer step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchMetrics {
    pub groups: usize,
    /// Mean cumulative reward of the factual rollouts.
    pub mean_reward: f64,
    /// Fraction of factual rollouts that solved their task.
    pub success_rate: f64,
    /// Route actions per factual rollout.
    pub tool_invocations: f64,
    /// Fraction of groups on the counterfactual branch.
    pub cf_fraction: f64,
    /// Mean counterfactual reward over the groups that built them.
    pub cf_mean_reward: Option<f64>,
    /// Rollouts generated, factual and counterfactual.
    pub episodes: usize,
    /// Surrogate value at the start of the step.
    pub objective: f64,
}

/// One CPO optimizer step over the groups rooted at `tasks`, forcing
/// `route` in counterfactual rollouts.
#[allow(clippy::too_many_arguments)]
pub fn cpo_batch_update<R: Rng + ?Sized>(
    params: &mut PolicyParameters,
    adam: &mut Adam,
    reference: &PolicyParameters,
    tasks: &[TaskInstance],
    route: EnvId,
    cfg: &UpdateConfig,
    ctx: &UpdateContext,
    rng: &mut R,
) -> Result<BatchMetrics> {
    group_update(params, adam, reference, tasks, Some(route), AdvantageMode::Cpo, cfg, ctx, rng)
}

/// One GRPO optimizer step: standardized factual advantages only.
#[allow(clippy::too_many_arguments)]
pub fn grpo_batch_update<R: Rng + ?Sized>(
    params: &mut PolicyParameters,
    adam: &mut Adam,
    reference: &PolicyParameters,
    tasks: &[TaskInstance],
    cfg: &UpdateConfig,
    ctx: &UpdateContext,
    rng: &mut R,
) -> Result<BatchMetrics> {
    group_update(params, adam, reference, tasks, None, AdvantageMode::Grpo, cfg, ctx, rng)
}

#[allow(clippy::too_many_arguments)]
fn group_update<R: Rng + ?Sized>(
    params: &mut PolicyParameters,
    adam: &mut Adam,
    reference: &PolicyParameters,
    tasks: &[TaskInstance],
    route: Option<EnvId>,
    mode: AdvantageMode,
    cfg: &UpdateConfig,
    ctx: &UpdateContext,
    rng: &mut R,
) -> Result<BatchMetrics> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::Config("an update needs at least one initial state".into()));
    }
    let mut metrics = BatchMetrics { groups: tasks.len(), ..Default::default() };
    let mut batch: Vec<(Rollout, f64)> = Vec::new();
    let (mut cf_reward, mut cf_groups, mut solved) = (0.0, 0, 0);
    for task in tasks {
        let policy = NeuralPolicy::new(params);
        let factual = (0..cfg.m)
            .map(|_| rollout(&policy, task, ctx.catalog, ctx.registry, ctx.rollout, rng))
            .collect::<Result<Vec<_>>>()?;
        metrics.episodes += factual.len();
        let rewards: Vec<f64> = factual.iter().map(|r| r.cumulative_reward).collect();
        metrics.mean_reward += rewards.iter().sum::<f64>();
        metrics.tool_invocations += factual.iter().map(|r| r.tool_invocations() as f64).sum::<f64>();
        solved += factual.iter().filter(|r| crate::tasks::solved(r, task, ctx.catalog)).count();
        let branch = match mode {
            AdvantageMode::Cpo => cpo_branch(&rewards),
            AdvantageMode::Grpo => Branch::Factual,
        };
        match branch {
            Branch::Factual => {
                batch.extend(factual.into_iter().zip(standardize(&rewards, cfg.sigma_floor)));
            }
            Branch::Counterfactual => {
                let route = route.ok_or_else(|| Error::Config("counterfactual updates need a route".into()))?;
                let mut cfs = Vec::with_capacity(cfg.m);
                for f in &factual {
                    let pair = counterfactual_rollout(params, f, route, task, ctx.catalog, ctx.registry, ctx.rollout, rng)?;
                    let mut cf = pair.counterfactual;
                    // The copied prefix did not cause the difference in reward.
                    for r in &mut cf.records[..pair.intervention_step] {
                        r.trainable = false;
                    }
                    cfs.push(cf);
                }
                metrics.episodes += cfs.len();
                let cf_rewards: Vec<f64> = cfs.iter().map(|r| r.cumulative_reward).collect();
                cf_reward += cf_rewards.iter().sum::<f64>() / cf_rewards.len() as f64;
                cf_groups += 1;
                let (_, adv) = cpo_advantages(&rewards, Some(&cf_rewards), cfg.sigma_floor)?;
                batch.extend(cfs.into_iter().zip(adv));
            }
        }
    }
    let n = (tasks.len() * cfg.m) as f64;
    metrics.mean_reward /= n;
    metrics.tool_invocations /= n;
    metrics.success_rate = solved as f64 / n;
    metrics.cf_fraction = cf_groups as f64 / tasks.len() as f64;
    metrics.cf_mean_reward = (cf_groups > 0).then(|| cf_reward / cf_groups as f64);

    // 1/m per group (Eq. 1), averaged over groups.
    let weight = 1.0 / n;
    let old = (cfg.ppo_epochs > 1).then(|| params.clone());
    for epoch in 0..cfg.ppo_epochs {
        let mut grad = vec![0.0; params.len()];
        let mut value = 0.0;
        for (ro, adv) in &batch {
            let old_ref = old.as_ref().unwrap_or(params);
            value += weight * ppo_surrogate_into(params, old_ref, reference, ro, *adv, cfg, ctx.catalog, weight, &mut grad)?;
        }
        if epoch == 0 {
            metrics.objective = value;
        }
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("surrogate value {value} or its gradient is not finite")));
        }
        if grad.iter().all(|&g| g == 0.0) {
            continue;
        }
        adam.ascend(&mut params.data, &grad);
        params.version += 1;
        if !params.is_finite() {
            return Err(Error::NonFinite("parameters became non-finite after an update".into()));
        }
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn branch_selection() {
        assert_eq!(cpo_branch(&[0.0, 0.0, 0.0, 0.0]), Branch::Counterfactual);
        assert_eq!(cpo_branch(&[-1.0, -0.5]), Branch::Counterfactual);
        assert_eq!(cpo_branch(&[-1.0, 1e-9]), Branch::Factual);
    }

    #[test]
    fn standardized_examples() {
        assert_eq!(standardize(&[1.0, 0.0, 0.0, 1.0], 1e-6), vec![1.0, -1.0, -1.0, 1.0]);
        assert_eq!(grpo_advantages(&[1.0, 0.0], 1e-6), vec![1.0, -1.0]);
        assert_eq!(standardize(&[0.3, 0.3, 0.3], 1e-6), vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn counterfactual_advantages_are_differences() {
        let (b, a) = cpo_advantages(&[0.0, -1.0], Some(&[1.0, -1.0]), 1e-6).unwrap();
        assert_eq!(b, Branch::Counterfactual);
        assert_eq!(a, vec![1.0, 0.0]);
        assert!(cpo_advantages(&[0.0, 0.0], None, 1e-6).is_err());
        let (b, _) = cpo_advantages(&[1.0, 0.0], None, 1e-6).unwrap();
        assert_eq!(b, Branch::Factual);
    }

    #[test]
    fn degenerate_weights_fall_back_to_uniform() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let w = [(0, 0.0), (2, 0.0), (5, 0.0)];
        let mut seen = [false; 6];
        for _ in 0..200 {
            seen[sample_intervention(&w, &mut rng).unwrap()] = true;
        }
        assert_eq!(seen, [true, false, true, false, false, true]);
        let w = [(0, 0.0), (3, 0.7), (4, 0.0)];
        assert!((0..100).all(|_| sample_intervention(&w, &mut rng) == Some(3)));
        assert_eq!(sample_intervention(&[], &mut rng), None);
    }
}
