//! Global state, action availability and the expanded rollout loop.
//!
//! Every episode starts in the language environment with the task prompt
//! in its history. At each step the policy picks an action restricted to
//! the active environment: vocabulary tokens extend the history, a route
//! action appends its description and enters its environment, and an
//! environment action runs that environment's step, appends the returned
//! observation and returns to language when the step signals exit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{ActionCatalog, ActionId, ActionKind, EnvId, EnvKind, TokenId};
use crate::envs::{EnvRegistry, LatentState};
use crate::error::{Error, Result};
use crate::policy::ActionDistribution;
use crate::tasks::{RewardConfig, TaskInstance};

/// Who produced a history position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Agent,
    RouteDesc,
    Observation,
}

/// s_t = (h_t, e_t, z_t) plus a step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalState {
    history: Vec<TokenId>,
    tags: Vec<Provenance>,
    pub active_env: EnvId,
    pub latent: LatentState,
    pub step_count: usize,
}

impl GlobalState {
    pub fn new(prompt: &[TokenId], latent: LatentState) -> Self {
        Self {
            history: prompt.to_vec(),
            tags: vec![Provenance::Observation; prompt.len()],
            active_env: EnvId::LANGUAGE,
            latent,
            step_count: 0,
        }
    }

    pub fn history(&self) -> &[TokenId] {
        &self.history
    }

    pub fn tags(&self) -> &[Provenance] {
        &self.tags
    }

    fn append(&mut self, tokens: &[TokenId], tag: Provenance) {
        self.history.extend_from_slice(tokens);
        self.tags.extend(std::iter::repeat_n(tag, tokens.len()));
    }
}

/// Actions available in the active environment: every vocabulary token and
/// every route action in language, the environment's own set otherwise.
pub fn available_actions(state: &GlobalState, catalog: &ActionCatalog) -> Result<Vec<ActionId>> {
    Ok(catalog.support(state.active_env)?.map(|g| catalog.action(g)).collect())
}

/// Result of applying one action.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub reward: f64,
    /// History positions appended with the observation tag.
    pub observation_positions: Vec<usize>,
    pub exit: bool,
}

/// Apply `action` to `state` in place.
pub fn apply_action(
    state: &mut GlobalState,
    action: ActionId,
    catalog: &ActionCatalog,
    registry: &EnvRegistry,
) -> Result<Applied> {
    let support = catalog.support(state.active_env)?;
    assert!(
        support.contains(&action.global),
        "action {} is not available in environment {}",
        catalog.label(action),
        state.active_env
    );
    let start = state.history.len();
    let mut exit = false;
    match action.kind {
        ActionKind::Vocab { token } => state.append(&[token], Provenance::Agent),
        ActionKind::Route { env } => {
            let desc = catalog.env(env)?.route_desc.clone();
            state.append(&desc, Provenance::RouteDesc);
            registry.enter(env, &mut state.latent);
            state.active_env = env;
        }
        ActionKind::Env { env, local } => {
            let out = registry.step(env, &mut state.latent, local)?;
            let obs = out
                .observation
                .iter()
                .map(|s| {
                    catalog
                        .token(s)
                        .ok_or_else(|| Error::InvalidState(format!("observation token {s:?} not in vocabulary")))
                })
                .collect::<Result<Vec<_>>>()?;
            state.append(&obs, Provenance::Observation);
            if out.exit {
                state.active_env = EnvId::LANGUAGE;
                exit = true;
            }
        }
    }
    state.step_count += 1;
    let observation_positions = (start..state.history.len())
        .filter(|&i| state.tags[i] == Provenance::Observation)
        .collect();
    Ok(Applied { reward: 0.0, observation_positions, exit })
}

/// A policy over the expanded action space. The cursor lets stateful
/// policies cache work across the steps of one episode.
pub trait Policy {
    type Cursor;

    fn cursor(&self) -> Self::Cursor;

    fn distribution(&self, cursor: &mut Self::Cursor, state: &GlobalState, catalog: &ActionCatalog)
        -> ActionDistribution;
}

/// Uniform over the available actions.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    type Cursor = ();

    fn cursor(&self) {}

    fn distribution(&self, _: &mut (), state: &GlobalState, catalog: &ActionCatalog) -> ActionDistribution {
        ActionDistribution::uniform(catalog.support(state.active_env).expect("valid active env"))
    }
}

/// A stateless policy defined by a closure.
pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&GlobalState, &ActionCatalog) -> ActionDistribution,
{
    type Cursor = ();

    fn cursor(&self) {}

    fn distribution(&self, _: &mut (), state: &GlobalState, catalog: &ActionCatalog) -> ActionDistribution {
        (self.0)(state, catalog)
    }
}

/// Plays a fixed action sequence, then falls back to uniform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedPolicy {
    pub actions: Vec<ActionId>,
}

impl Policy for ScriptedPolicy {
    type Cursor = ();

    fn cursor(&self) {}

    fn distribution(&self, _: &mut (), state: &GlobalState, catalog: &ActionCatalog) -> ActionDistribution {
        let support = catalog.support(state.active_env).expect("valid active env");
        match self.actions.get(state.step_count) {
            Some(a) if support.contains(&a.global) => ActionDistribution::one_hot(support, a.global),
            _ => ActionDistribution::uniform(support),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    #[default]
    Sample,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutOptions {
    pub max_steps: usize,
    #[serde(default)]
    pub decoding: Decoding,
    #[serde(default)]
    pub reward: RewardConfig,
}

impl RolloutOptions {
    pub fn new(max_steps: usize) -> Self {
        Self { max_steps, decoding: Decoding::Sample, reward: RewardConfig::default() }
    }

    pub fn greedy(mut self) -> Self {
        self.decoding = Decoding::Greedy;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    AnswerEmitted,
    StepLimit,
    EnvError,
}

/// One agent decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// History length before the action was applied.
    pub pre_history_len: usize,
    pub env: EnvId,
    pub action: ActionId,
    pub reward: f64,
    /// Whether the decision receives policy-gradient updates.
    pub trainable: bool,
    /// Log-probability of the action under the generating policy.
    pub logprob: f64,
    /// Set on the intervened step of a counterfactual rollout.
    pub forced: bool,
    pub exit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub prompt_len: usize,
    pub records: Vec<StepRecord>,
    pub cumulative_reward: f64,
    pub final_state: GlobalState,
    pub terminated_by: Termination,
}

impl Rollout {
    /// Number of route actions into environments of `kind`.
    pub fn invocations(&self, catalog: &ActionCatalog, kind: EnvKind) -> usize {
        self.records
            .iter()
            .filter(|r| match r.action.kind {
                ActionKind::Route { env } => catalog.env(env).map(|e| e.kind == kind).unwrap_or(false),
                _ => false,
            })
            .count()
    }

    /// Number of route actions into any external environment.
    pub fn tool_invocations(&self) -> usize {
        self.records.iter().filter(|r| matches!(r.action.kind, ActionKind::Route { .. })).count()
    }

    /// Agent-emitted vocabulary tokens in order.
    pub fn emitted_tokens(&self) -> Vec<TokenId> {
        self.records
            .iter()
            .filter_map(|r| match r.action.kind {
                ActionKind::Vocab { token } => Some(token),
                _ => None,
            })
            .collect()
    }

    /// Header line plus one line per record.
    pub fn to_jsonl(&self, catalog: &ActionCatalog) -> String {
        let hist = self.final_state.history();
        let header = serde_json::json!({
            "type": "rollout",
            "prompt": catalog.render(&hist[..self.prompt_len]),
            "final_history": catalog.render(hist),
            "cumulative_reward": self.cumulative_reward,
            "terminated_by": self.terminated_by,
            "records": self.records.len(),
        });
        let mut out = header.to_string();
        out.push('\n');
        for (t, r) in self.records.iter().enumerate() {
            let kind = match r.action.kind {
                ActionKind::Vocab { .. } => "vocab",
                ActionKind::Route { .. } => "route",
                ActionKind::Env { .. } => "env_action",
            };
            let line = serde_json::json!({
                "type": "record",
                "t": t,
                "env": r.env.0,
                "action_kind": kind,
                "action_label": catalog.label(r.action),
                "reward": r.reward,
                "trainable": r.trainable,
            });
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

/// Initial global state for a task.
pub fn initial_state(task: &TaskInstance, catalog: &ActionCatalog, registry: &EnvRegistry) -> Result<GlobalState> {
    let prompt = task.prompt_ids(catalog)?;
    Ok(GlobalState::new(&prompt, registry.initial_latent(task.target.hidden.clone())))
}

/// Sample one episode of `task` under `policy`.
pub fn rollout<P: Policy, R: Rng + ?Sized>(
    policy: &P,
    task: &TaskInstance,
    catalog: &ActionCatalog,
    registry: &EnvRegistry,
    opts: &RolloutOptions,
    rng: &mut R,
) -> Result<Rollout> {
    let state = initial_state(task, catalog, registry)?;
    continue_rollout(policy, task, catalog, registry, opts, rng, state, Vec::new(), None)
}

/// Run the rollout loop from `state`, whose history is already described by
/// `records`. If `forced` is given it replaces the first sampled action.
#[allow(clippy::too_many_arguments)]
pub fn continue_rollout<P: Policy, R: Rng + ?Sized>(
    policy: &P,
    task: &TaskInstance,
    catalog: &ActionCatalog,
    registry: &EnvRegistry,
    opts: &RolloutOptions,
    rng: &mut R,
    mut state: GlobalState,
    mut records: Vec<StepRecord>,
    mut forced: Option<ActionId>,
) -> Result<Rollout> {
    assert!(opts.max_steps >= 1, "max_steps must be at least 1");
    let prompt_len = task.prompt.len();
    let stop = catalog.token(task.stop_token());
    let mut cursor = policy.cursor();
    let mut terminated_by = Termination::StepLimit;
    while records.len() < opts.max_steps {
        let dist = policy.distribution(&mut cursor, &state, catalog);
        let is_forced = forced.is_some();
        let global = match forced.take() {
            Some(a) => a.global,
            None => match opts.decoding {
                Decoding::Sample => dist.sample(rng),
                Decoding::Greedy => dist.greedy(),
            },
        };
        let action = catalog.action(global);
        let p = dist.prob(global);
        let pre_history_len = state.history.len();
        let env = state.active_env;
        let applied = match apply_action(&mut state, action, catalog, registry) {
            Ok(a) => a,
            Err(_) => {
                terminated_by = Termination::EnvError;
                break;
            }
        };
        records.push(StepRecord {
            pre_history_len,
            env,
            action,
            reward: applied.reward,
            trainable: true,
            logprob: p.ln(),
            forced: is_forced,
            exit: applied.exit,
        });
        if matches!(action.kind, ActionKind::Vocab { token } if Some(token) == stop) {
            terminated_by = Termination::AnswerEmitted;
            break;
        }
    }
    let mut out = Rollout { prompt_len, records, cumulative_reward: 0.0, final_state: state, terminated_by };
    let terminal = crate::tasks::terminal_reward(&out, task, catalog, &opts.reward);
    if let Some(last) = out.records.last_mut() {
        last.reward += terminal;
    }
    out.cumulative_reward = out.records.iter().map(|r| r.reward).sum();
    Ok(out)
}

/// Rebuild the state reached after the first `t` records of `rollout` by
/// replaying their actions from the task's initial state.
pub fn replay_prefix(
    rollout: &Rollout,
    t: usize,
    task: &TaskInstance,
    catalog: &ActionCatalog,
    registry: &EnvRegistry,
) -> Result<(GlobalState, Vec<StepRecord>)> {
    let mut state = initial_state(task, catalog, registry)?;
    let mut records = Vec::with_capacity(t);
    for rec in &rollout.records[..t] {
        apply_action(&mut state, rec.action, catalog, registry)?;
        let mut r = rec.clone();
        r.reward = 0.0;
        records.push(r);
    }
    Ok((state, records))
}
