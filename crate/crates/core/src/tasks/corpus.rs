//! Synthetic transcripts for language pretraining. Every transcript is the
//! history an episode would produce, built by replaying scripted actions
//! through the real environments so observation strings are exact.

use rand::seq::SliceRandom;
use rand::Rng;

use super::gen::sorted_labels;
use super::{TaskInstance, TaskKind};
use crate::catalog::{ActionCatalog, ActionId, ActionKind, EnvKind, ANSWER, CALCULATOR_BUTTONS, EQUALS};
use crate::envs::EnvRegistry;
use crate::error::{Error, Result};
use crate::policy::Transcript;
use crate::rollout::{apply_action, initial_state};
use crate::sortlab::perm::min_swap;

/// Shape of the generated corpus.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    /// Fraction of language-task transcripts that use the calculator.
    pub tool_fraction: f64,
    /// Fraction of sorting/ordering transcripts that follow insertion sort
    /// instead of random play.
    pub informed_fraction: f64,
    /// Upper bound on random compare/swap operations per sorting transcript,
    /// as a multiple of the array length.
    pub ops_per_item: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { tool_fraction: 0.1, informed_fraction: 1.0, ops_per_item: 2 }
    }
}

/// Replay `actions` and score the positions that stand for a decision: agent
/// tokens, route descriptions and the echo that opens each environment
/// observation. Prompts and environment outputs are context only.
fn replay(task: &TaskInstance, actions: &[ActionId], catalog: &ActionCatalog, registry: &EnvRegistry) -> Result<Transcript> {
    let mut s = initial_state(task, catalog, registry)?;
    let mut scored = vec![false; s.history().len()];
    for &a in actions {
        let before = s.history().len();
        apply_action(&mut s, a, catalog, registry)?;
        let added = s.history().len() - before;
        let keep = match a.kind {
            ActionKind::Env { .. } => added.min(1),
            _ => added,
        };
        scored.extend((0..added).map(|i| i < keep));
    }
    Ok(Transcript { tokens: s.history().to_vec(), scored })
}

fn say(catalog: &ActionCatalog, words: &[String]) -> Result<Vec<ActionId>> {
    words
        .iter()
        .map(|w| {
            catalog
                .token(w)
                .map(|t| catalog.vocab_action(t))
                .ok_or_else(|| Error::Config(format!("token {w:?} not in vocabulary")))
        })
        .collect()
}

fn env_of(catalog: &ActionCatalog, kind: EnvKind) -> Result<crate::catalog::EnvId> {
    catalog
        .env_by_kind(kind)
        .map(|e| e.id)
        .ok_or_else(|| Error::Config(format!("catalog has no {kind:?} environment")))
}

/// Press `keys` on the calculator after routing to it.
fn calculator_actions(catalog: &ActionCatalog, keys: &[String]) -> Result<Vec<ActionId>> {
    let calc = env_of(catalog, EnvKind::Calculator)?;
    let mut out = vec![catalog.route_action(calc)];
    for k in keys.iter().map(String::as_str).chain([EQUALS]) {
        let local = CALCULATOR_BUTTONS
            .iter()
            .position(|b| *b == k)
            .ok_or_else(|| Error::Config(format!("{k:?} is not a calculator button")))?;
        out.push(catalog.env_action(calc, local));
    }
    Ok(out)
}

/// Actions of a language-scored answer: either a direct answer or a
/// calculator call followed by the answer.
pub fn answer_actions(task: &TaskInstance, use_tool: bool, catalog: &ActionCatalog) -> Result<Vec<ActionId>> {
    let answer = task
        .target
        .tokens
        .as_ref()
        .ok_or_else(|| Error::Config("task has no target tokens".into()))?;
    let mut actions = Vec::new();
    if use_tool {
        if let Some(expr) = &task.metadata.expression {
            actions.extend(calculator_actions(catalog, expr)?);
        }
    }
    let mut tail = vec![ANSWER.to_string()];
    tail.extend(answer.iter().cloned());
    tail.push(task.stop_token().to_string());
    actions.extend(say(catalog, &tail)?);
    Ok(actions)
}

/// A correct action sequence for any task: min_swap swaps read off the
/// hidden array for sorting, the target answer otherwise.
pub fn oracle_actions(task: &TaskInstance, catalog: &ActionCatalog) -> Result<Vec<ActionId>> {
    if task.kind != TaskKind::Sort {
        return answer_actions(task, false, catalog);
    }
    let z = task.hidden().ok_or_else(|| Error::Config("task has no hidden array".into()))?;
    let swp = env_of(catalog, EnvKind::Swap)?;
    let mut actions = Vec::new();
    for (i, j) in min_swap(&z.target_permutation()) {
        actions.extend([catalog.route_action(swp), catalog.env_action(swp, i), catalog.env_action(swp, j)]);
    }
    actions.extend(say(catalog, &[task.stop_token().to_string()])?);
    Ok(actions)
}

/// Transcript of a language-scored task: either a direct answer or a
/// calculator call followed by the answer.
pub fn answer_transcript(
    task: &TaskInstance,
    use_tool: bool,
    catalog: &ActionCatalog,
    registry: &EnvRegistry,
) -> Result<Transcript> {
    replay(task, &answer_actions(task, use_tool, catalog)?, catalog, registry)
}

/// Random compare/swap play on a hidden array, ending with the stop token.
pub fn random_play_transcript<R: Rng + ?Sized>(
    task: &TaskInstance,
    max_ops: usize,
    catalog: &ActionCatalog,
    registry: &EnvRegistry,
    rng: &mut R,
) -> Result<Transcript> {
    let n = task.hidden().map(|z| z.len()).ok_or_else(|| Error::Config("task has no hidden array".into()))?;
    let cmp = env_of(catalog, EnvKind::Compare)?;
    let swp = env_of(catalog, EnvKind::Swap)?;
    let mut actions = Vec::new();
    for _ in 0..rng.gen_range(0..=max_ops) {
        let env = if rng.gen_bool(0.5) { cmp } else { swp };
        let pair = rand::seq::index::sample(rng, n, 2);
        actions.push(catalog.route_action(env));
        actions.push(catalog.env_action(env, pair.index(0)));
        actions.push(catalog.env_action(env, pair.index(1)));
    }
    finish_hidden_play(task, catalog, &mut actions)?;
    replay(task, &actions, catalog, registry)
}

fn finish_hidden_play(task: &TaskInstance, catalog: &ActionCatalog, actions: &mut Vec<ActionId>) -> Result<()> {
    if task.kind == TaskKind::Order {
        let mut tail = vec![ANSWER.to_string()];
        tail.extend(task.target.tokens.clone().unwrap_or_else(|| sorted_labels(task.hidden().unwrap())));
        actions.extend(say(catalog, &tail)?);
    }
    actions.extend(say(catalog, &[task.stop_token().to_string()])?);
    Ok(())
}

/// Insertion sort on the hidden array: compare neighbours, swap while out
/// of order, then stop.
pub fn insertion_play_transcript(task: &TaskInstance, catalog: &ActionCatalog, registry: &EnvRegistry) -> Result<Transcript> {
    let z = task.hidden().ok_or_else(|| Error::Config("task has no hidden array".into()))?;
    let cmp = env_of(catalog, EnvKind::Compare)?;
    let swp = env_of(catalog, EnvKind::Swap)?;
    let mut v = z.values.clone();
    let mut actions = Vec::new();
    for i in 1..v.len() {
        let mut j = i;
        while j > 0 {
            actions.extend([catalog.route_action(cmp), catalog.env_action(cmp, j - 1), catalog.env_action(cmp, j)]);
            if z.direction.in_order(v[j - 1], v[j]) {
                break;
            }
            actions.extend([catalog.route_action(swp), catalog.env_action(swp, j - 1), catalog.env_action(swp, j)]);
            v.swap(j - 1, j);
            j -= 1;
        }
    }
    finish_hidden_play(task, catalog, &mut actions)?;
    replay(task, &actions, catalog, registry)
}

/// One transcript per task, in task order.
pub fn build_corpus<R: Rng + ?Sized>(
    tasks: &[TaskInstance],
    cfg: &CorpusConfig,
    catalog: &ActionCatalog,
    registry: &EnvRegistry,
    rng: &mut R,
) -> Result<Vec<Transcript>> {
    tasks
        .iter()
        .map(|t| match t.kind {
            TaskKind::Sort | TaskKind::Order if rng.gen_bool(cfg.informed_fraction) => {
                insertion_play_transcript(t, catalog, registry)
            }
            TaskKind::Sort | TaskKind::Order => {
                let n = t.hidden().map(|z| z.len()).unwrap_or(2);
                random_play_transcript(t, cfg.ops_per_item * n, catalog, registry, rng)
            }
            _ => answer_transcript(t, rng.gen_bool(cfg.tool_fraction), catalog, registry),
        })
        .collect()
}

/// Shuffle and split off a held-out tail.
pub fn split_corpus<R: Rng + ?Sized>(mut corpus: Vec<Transcript>, holdout: f64, rng: &mut R) -> (Vec<Transcript>, Vec<Transcript>) {
    corpus.shuffle(rng);
    let k = ((corpus.len() as f64) * (1.0 - holdout)).round() as usize;
    let test = corpus.split_off(k.min(corpus.len()));
    (corpus, test)
}
