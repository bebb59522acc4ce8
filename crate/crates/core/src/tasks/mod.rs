//! Task instances, dataset generators and terminal rewards.

pub mod corpus;
pub mod gen;
pub mod words;

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use crate::catalog::{ActionCatalog, EnvKind, TokenId, ANSWER, DONE, END};
use crate::envs::{expr, HiddenArray};
use crate::error::{Error, Result};
use crate::rollout::{Rollout, Termination};
use crate::sortlab::perm::min_swap_count;

pub use gen::{
    gen_arithmetic, gen_count, gen_countdown, gen_ordering, gen_sorting, generate, ArithmeticConfig,
    CountConfig, CountdownConfig, GeneratorConfig, OrderingConfig, SortingConfig,
};
pub use corpus::{answer_actions, answer_transcript, oracle_actions, build_corpus, insertion_play_transcript, random_play_transcript, split_corpus, CorpusConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Arithmetic,
    Countdown,
    Count,
    Sort,
    Order,
}

/// Canonical answer tokens for language-scored tasks, the hidden array for
/// tasks played against compare/swap.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<HiddenArray>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numbers: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operand_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paraphrased: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Symbolic form of the source expression (arithmetic, countdown).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expression: Option<Vec<String>>,
    /// `order` or `compare` for ordering instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    /// Target integer value (countdown).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_value: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub prompt: Vec<String>,
    pub target: Target,
    #[serde(default)]
    pub metadata: Metadata,
    #[serde(default)]
    pub seed: u64,
}

impl TaskInstance {
    /// A sorting instance over `hidden`.
    pub fn sorting(hidden: HiddenArray, seed: u64) -> Self {
        let mut prompt = vec!["sort".to_string()];
        prompt.extend(hidden.labels.iter().cloned());
        prompt.push(hidden.direction.word().to_string());
        let n = hidden.len();
        Self {
            kind: TaskKind::Sort,
            prompt,
            target: Target { tokens: None, hidden: Some(hidden) },
            metadata: Metadata { n: Some(n), ..Default::default() },
            seed,
        }
    }

    pub fn hidden(&self) -> Option<&HiddenArray> {
        self.target.hidden.as_ref()
    }

    pub fn prompt_ids(&self, catalog: &ActionCatalog) -> Result<Vec<TokenId>> {
        self.prompt
            .iter()
            .map(|w| catalog.token(w).ok_or_else(|| Error::Config(format!("prompt token {w:?} is not in the vocabulary"))))
            .collect()
    }

    /// Vocabulary token whose emission ends the episode.
    pub fn stop_token(&self) -> &'static str {
        match self.kind {
            TaskKind::Sort => DONE,
            _ => END,
        }
    }

    pub fn validate(&self, catalog: &ActionCatalog) -> Result<()> {
        self.prompt_ids(catalog)?;
        match self.kind {
            TaskKind::Sort => {
                let h = self.hidden().ok_or_else(|| Error::Config("sort instance without hidden array".into()))?;
                if !h.distinct() {
                    return Err(Error::Config("hidden values must be distinct".into()));
                }
            }
            _ => {
                if self.target.tokens.is_none() {
                    return Err(Error::Config(format!("{:?} instance without target tokens", self.kind)));
                }
            }
        }
        Ok(())
    }
}

/// Sorting reward shaping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub lambda_cmp: f64,
    pub lambda_swap: f64,
    pub floor: f64,
    /// Comparisons allowed without penalty, indexed by array length.
    pub comparison_budget: Vec<usize>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { lambda_cmp: 0.05, lambda_swap: 0.05, floor: -1.0, comparison_budget: vec![0, 0, 1, 3, 5, 7] }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cmp >= 0.0 && self.lambda_swap >= 0.0) {
            return Err(Error::Config("penalty coefficients must be non-negative".into()));
        }
        if !(self.floor <= 0.0) {
            return Err(Error::Config("reward floor must be <= 0".into()));
        }
        Ok(())
    }

    pub fn budget(&self, n: usize) -> usize {
        self.comparison_budget.get(n).copied().unwrap_or_else(|| crate::sortlab::info_lower_bound(n))
    }
}

/// Agent tokens between the last answer delimiter and the stop token, if
/// the episode ended by emitting the stop token.
pub fn extract_answer(rollout: &Rollout, catalog: &ActionCatalog) -> Option<Vec<String>> {
    if rollout.terminated_by != Termination::AnswerEmitted {
        return None;
    }
    let emitted = rollout.emitted_tokens();
    let (_, body) = emitted.split_last()?;
    let answer = catalog.token(ANSWER)?;
    let start = body.iter().rposition(|&t| t == answer)?;
    Some(catalog.render(&body[start + 1..]))
}

/// Exact-match reward in {0, 1}.
pub fn reward_em(rollout: &Rollout, task: &TaskInstance, catalog: &ActionCatalog) -> f64 {
    let Some(answer) = extract_answer(rollout, catalog) else {
        return 0.0;
    };
    let ok = match task.kind {
        TaskKind::Countdown => match (&task.metadata.numbers, task.metadata.target_value) {
            (Some(nums), Some(target)) => verify_countdown_answer(&answer, nums, target),
            _ => false,
        },
        _ => task.target.tokens.as_ref().is_some_and(|t| *t == answer),
    };
    if ok {
        1.0
    } else {
        0.0
    }
}

/// True iff the expression parses, uses each of `numbers` exactly once and
/// evaluates to `target`.
pub fn verify_countdown_answer<S: AsRef<str>>(expr_tokens: &[S], numbers: &[i64], target: i64) -> bool {
    let Ok(parsed) = expr::parse(expr_tokens) else {
        return false;
    };
    let mut used: Vec<BigInt> = parsed.numbers.clone();
    let mut given: Vec<BigInt> = numbers.iter().map(|&n| BigInt::from(n)).collect();
    used.sort();
    given.sort();
    if used != given {
        return false;
    }
    parsed.eval().map(|v| v == BigRational::from_integer(target.into())).unwrap_or(false)
}

/// A sorting episode only counts if the agent said "done" on a sorted array;
/// running out of steps is a failure.
fn sorted_and_stopped(rollout: &Rollout) -> bool {
    rollout.terminated_by == Termination::AnswerEmitted
        && rollout.final_state.latent.array.as_ref().is_some_and(|z| z.is_sorted())
}

/// Sorting reward: 1 if the final hidden array is sorted, minus penalties
/// for comparisons beyond the optimal worst case and swaps beyond the
/// minimum, floored.
pub fn reward_sorting(rollout: &Rollout, task: &TaskInstance, catalog: &ActionCatalog, cfg: &RewardConfig) -> f64 {
    let Some(initial) = task.hidden() else {
        return cfg.floor;
    };
    let sorted = sorted_and_stopped(rollout);
    let compares = rollout.invocations(catalog, EnvKind::Compare);
    let swaps = rollout.invocations(catalog, EnvKind::Swap);
    sorting_reward_value(sorted, compares, swaps, initial, cfg)
}

pub fn sorting_reward_value(sorted: bool, compares: usize, swaps: usize, initial: &HiddenArray, cfg: &RewardConfig) -> f64 {
    let n = initial.len();
    let s_min = min_swap_count(&initial.target_permutation());
    let base = if sorted { 1.0 } else { 0.0 };
    let penalty = cfg.lambda_cmp * compares.saturating_sub(cfg.budget(n)) as f64
        + cfg.lambda_swap * swaps.saturating_sub(s_min) as f64;
    (base - penalty).max(cfg.floor)
}

/// Terminal reward hook used by the rollout driver.
pub fn terminal_reward(rollout: &Rollout, task: &TaskInstance, catalog: &ActionCatalog, cfg: &RewardConfig) -> f64 {
    match task.kind {
        TaskKind::Sort => reward_sorting(rollout, task, catalog, cfg),
        _ => reward_em(rollout, task, catalog),
    }
}

/// Whether an episode counts as solved for accuracy metrics.
pub fn solved(rollout: &Rollout, task: &TaskInstance, catalog: &ActionCatalog) -> bool {
    match task.kind {
        TaskKind::Sort => sorted_and_stopped(rollout),
        _ => reward_em(rollout, task, catalog) == 1.0,
    }
}

/// Write instances as JSON lines.
pub fn write_jsonl<W: Write>(mut w: W, tasks: &[TaskInstance]) -> Result<()> {
    for t in tasks {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Load a JSONL dataset of externally supplied or generated instances.
pub fn read_jsonl(path: &Path) -> Result<Vec<TaskInstance>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Count of instances per sorting length, for manifests.
pub fn length_histogram(tasks: &[TaskInstance]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for t in tasks {
        if let Some(n) = t.metadata.n {
            *h.entry(n).or_insert(0) += 1;
        }
    }
    h
}
