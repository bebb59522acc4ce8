//! Evaluation reports: exact match per task kind and sorting accuracy
//! stratified by the minimum number of swaps.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::ActionCatalog;
use crate::envs::EnvRegistry;
use crate::error::Result;
use crate::optim::train::default_max_steps;
use crate::rollout::{rollout, Decoding, Policy, Rollout, RolloutOptions};
use crate::sortlab::perm::min_swap_count;
use crate::tasks::{solved, RewardConfig, TaskInstance, TaskKind};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub n: usize,
    pub solved: usize,
    pub accuracy: Option<f64>,
}

impl Tally {
    fn add(&mut self, ok: bool) {
        self.n += 1;
        self.solved += ok as usize;
    }

    fn finish(&mut self) {
        self.accuracy = (self.n > 0).then(|| self.solved as f64 / self.n as f64);
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    pub tally: Tally,
    pub mean_reward: f64,
    pub tool_invocations_per_rollout: f64,
}

/// Sorting accuracy for one array length.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SortReport {
    pub tally: Tally,
    /// Index k holds instances needing exactly k swaps (k = 0..n−1).
    pub by_min_swaps: Vec<Tally>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub decoding: Decoding,
    pub samples_per_task: usize,
    pub overall: Tally,
    /// Keyed by task kind ("arithmetic", "countdown", ...).
    pub by_kind: BTreeMap<String, KindReport>,
    /// Keyed by array length.
    pub sorting: BTreeMap<usize, SortReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    pub decoding: Decoding,
    #[serde(default = "one")]
    pub samples: usize,
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

impl EvalOptions {
    pub fn new(decoding: Decoding) -> Self {
        Self { decoding, samples: 1, max_steps: None, reward: RewardConfig::default(), seed: 0 }
    }
}

fn kind_name(kind: TaskKind) -> String {
    serde_json::to_value(kind).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Roll out `make_policy(task)` on every task (`samples` times each) and
/// aggregate. Sampling uses a per-task seed so results do not depend on
/// scheduling.
pub fn evaluate<P, F>(
    tasks: &[TaskInstance],
    make_policy: F,
    catalog: &ActionCatalog,
    registry: &EnvRegistry,
    opts: &EvalOptions,
) -> Result<EvalReport>
where
    P: Policy,
    F: Fn(&TaskInstance) -> Result<P> + Sync,
{
    let runs: Vec<Vec<Rollout>> = tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let policy = make_policy(t)?;
            let mut ro = RolloutOptions::new(opts.max_steps.unwrap_or_else(|| default_max_steps(t.kind)));
            ro.decoding = opts.decoding;
            ro.reward = opts.reward.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(i as u64));
            (0..opts.samples.max(1)).map(|_| rollout(&policy, t, catalog, registry, &ro, &mut rng)).collect()
        })
        .collect::<Result<_>>()?;
    let mut report = EvalReport { decoding: opts.decoding, samples_per_task: opts.samples.max(1), ..Default::default() };
    for (t, rs) in tasks.iter().zip(&runs) {
        let k = report.by_kind.entry(kind_name(t.kind)).or_default();
        for r in rs {
            let ok = solved(r, t, catalog);
            report.overall.add(ok);
            k.tally.add(ok);
            k.mean_reward += r.cumulative_reward;
            k.tool_invocations_per_rollout += r.tool_invocations() as f64;
            if t.kind == TaskKind::Sort {
                if let Some(z) = t.hidden() {
                    let s = report.sorting.entry(z.len()).or_insert_with(|| SortReport {
                        tally: Tally::default(),
                        by_min_swaps: vec![Tally::default(); z.len().max(1)],
                    });
                    s.tally.add(ok);
                    s.by_min_swaps[min_swap_count(&z.target_permutation())].add(ok);
                }
            }
        }
    }
    report.overall.finish();
    for k in report.by_kind.values_mut() {
        let n = k.tally.n.max(1) as f64;
        k.mean_reward /= n;
        k.tool_invocations_per_rollout /= n;
        k.tally.finish();
    }
    for s in report.sorting.values_mut() {
        s.tally.finish();
        s.by_min_swaps.iter_mut().for_each(Tally::finish);
    }
    Ok(report)
}
