//! Sorting strategies: insertion sort, exact optimal trees, the pivot
//! sorter for four items, and greedy-policy extraction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::order::{ComparisonSet, InfoSpace, Objective, MAX_SEARCH_N};
use super::perm::{min_swap, permutations};
use super::tree::{sorts, target_of, DecisionTree, Node, SortStats, Swap, Trace};
use crate::catalog::{ActionCatalog, ActionKind, EnvKind, LABELS};
use crate::envs::{Direction, EnvRegistry, HiddenArray};
use crate::error::{Error, Result};
use crate::policy::ActionDistribution;
use crate::rollout::{rollout, GlobalState, Policy, Provenance, RolloutOptions, Termination};
use crate::tasks::TaskInstance;

/// Adjacent comparisons and swaps of textbook insertion sort (ascending).
pub fn insertion_sort_trace<T: PartialOrd + Clone>(values: &[T]) -> (usize, usize) {
    let mut a = values.to_vec();
    let (mut comparisons, mut swaps) = (0, 0);
    for i in 1..a.len() {
        let mut j = i;
        while j > 0 {
            comparisons += 1;
            if a[j - 1] > a[j] {
                a.swap(j - 1, j);
                swaps += 1;
                j -= 1;
            } else {
                break;
            }
        }
    }
    (comparisons, swaps)
}

/// Build a tree by letting `next` choose the comparison at every
/// information state; once it stops, the leaf applies min_swap.
pub fn strategy_tree<F>(n: usize, direction: Direction, mut next: F) -> DecisionTree
where
    F: FnMut(&mut InfoSpace, u128) -> Option<Swap>,
{
    fn build<F: FnMut(&mut InfoSpace, u128) -> Option<Swap>>(
        space: &mut InfoSpace,
        mask: u128,
        direction: Direction,
        next: &mut F,
    ) -> Node {
        let consistent: Vec<Vec<usize>> = space.members(mask).into_iter().map(|k| space.perms[k].clone()).collect();
        match next(space, mask) {
            None => {
                let swaps = if consistent.len() == 1 { min_swap(&target_of(&consistent[0], direction)) } else { Vec::new() };
                Node::Leaf { swaps, consistent }
            }
            Some(pair) => {
                let (l, g) = space.children(mask, pair);
                let mut child = |m: u128| (m != 0).then(|| Box::new(build(space, m, direction, next)));
                let less = child(l);
                let greater = child(g);
                Node::Compare { pair, consistent, less, greater }
            }
        }
    }
    let mut space = InfoSpace::new(n);
    let full = space.full();
    let root = build(&mut space, full, direction, &mut next);
    DecisionTree { n, direction, root }
}

/// Exact optimal comparison tree for `objective`, finished by min_swap.
pub fn optimal_comparison_tree(n: usize, objective: Objective, direction: Direction) -> Result<DecisionTree> {
    if n > MAX_SEARCH_N {
        return Err(Error::Config(format!("optimal search supports n <= {MAX_SEARCH_N}")));
    }
    Ok(strategy_tree(n, direction, |space, mask| space.best_pair(mask, objective)))
}

/// The pivot rule: among comparisons that keep the worst case optimal,
/// prefer those involving position A, then the smallest expected remaining
/// work, then the lowest pair.
pub fn pivot_next(space: &mut InfoSpace, mask: u128) -> Option<Swap> {
    let pairs = space.informative_pairs(mask);
    if pairs.is_empty() {
        return None;
    }
    let k = space.worst_case(mask);
    pairs
        .into_iter()
        .filter_map(|p| {
            let (l, g) = space.children(mask, p);
            if !(space.solvable(l, k - 1) && space.solvable(g, k - 1)) {
                return None;
            }
            let work = space.min_path_length(l) + space.min_path_length(g);
            Some(((p.0 != 0, work, p), p))
        })
        .min()
        .map(|(_, p)| p)
}

/// Comparison schedule and swaps of one pivot-sorter run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PivotTrace {
    pub comparisons: Vec<(Swap, bool)>,
    pub swaps: Vec<Swap>,
}

/// Sort four hidden items through `compare(x, y)` (true when the value at x
/// is smaller) and `swap(x, y)`: pivot on A, resolve what the pivot leaves
/// open with as few extra comparisons as possible, then apply min_swap.
pub fn pivot_sort4<C, S>(direction: Direction, mut compare: C, mut swap: S) -> Result<PivotTrace>
where
    C: FnMut(usize, usize) -> bool,
    S: FnMut(usize, usize),
{
    let mut space = InfoSpace::new(4);
    let mut rels = ComparisonSet::new(4);
    let mut comparisons = Vec::new();
    loop {
        let mask = space.mask_of(&rels);
        let Some((x, y)) = pivot_next(&mut space, mask) else {
            break;
        };
        let lt = compare(x, y);
        rels.record(x, y, lt)?;
        comparisons.push(((x, y), lt));
    }
    let swaps = min_swap(&target_of(&rels.total_order()?, direction));
    for &(a, b) in &swaps {
        swap(a, b);
    }
    Ok(PivotTrace { comparisons, swaps })
}

/// The pivot sorter as a decision tree.
pub fn pivot_tree(direction: Direction) -> DecisionTree {
    strategy_tree(4, direction, pivot_next)
}

/// Run `policy` greedily on one representative of every relative-order
/// class of `n` values and merge the observed behaviour into a tree.
/// Fails on the first input where the policy swaps before the order is
/// resolved, compares after swapping, makes an invalid pick, or fails to
/// stop within the step limit.
pub fn extract_decision_tree<P: Policy>(
    policy: &P,
    n: usize,
    direction: Direction,
    catalog: &ActionCatalog,
    registry: &EnvRegistry,
    max_steps: usize,
) -> Result<DecisionTree> {
    let opts = RolloutOptions::new(max_steps).greedy();
    let mut traces = Vec::new();
    for perm in permutations(n) {
        let values = perm.iter().map(|&r| r as i64 + 1).collect();
        let task = TaskInstance::sorting(HiddenArray::new(values, direction), 0);
        let ro = rollout(policy, &task, catalog, registry, &opts, &mut ChaCha8Rng::seed_from_u64(0))?;
        let fail = |reason: &str| Error::Extraction { perm: perm.clone(), reason: reason.to_string() };
        if ro.terminated_by != Termination::AnswerEmitted {
            return Err(fail("policy did not stop within the step limit"));
        }
        let mut trace = Trace::default();
        let mut rels = ComparisonSet::new(n);
        let mut i = 0;
        while i < ro.records.len() {
            let ActionKind::Route { env } = ro.records[i].action.kind else {
                i += 1;
                continue;
            };
            let kind = catalog.env(env)?.kind;
            let picks: Vec<usize> = ro.records[i + 1..]
                .iter()
                .take(2)
                .filter_map(|r| match r.action.kind {
                    ActionKind::Env { local, .. } => Some(local),
                    _ => None,
                })
                .collect();
            if picks.len() != 2 || picks[0] == picks[1] || picks.iter().any(|&p| p >= n) {
                return Err(fail("invalid or incomplete selection"));
            }
            let (x, y) = (picks[0], picks[1]);
            match kind {
                EnvKind::Compare => {
                    if !trace.swaps.is_empty() {
                        return Err(fail("comparison after a swap"));
                    }
                    let lt = perm[x] < perm[y];
                    rels.record(x, y, lt)?;
                    trace.comparisons.push(((x, y), lt));
                }
                EnvKind::Swap => {
                    if rels.total_order().is_err() {
                        return Err(fail("swap before the order is resolved"));
                    }
                    trace.swaps.push((x, y));
                }
                EnvKind::Calculator => return Err(fail("calculator used while sorting")),
            }
            i += 3;
        }
        traces.push((perm.clone(), trace));
    }
    DecisionTree::from_traces(n, direction, traces)
}

/// Plays a decision tree through the compare and swap environments,
/// reading comparison outcomes back from the history.
#[derive(Debug, Clone)]
pub struct TreePolicy {
    pub tree: DecisionTree,
}

enum Op {
    Compare(Swap, Option<bool>),
    Swap(Swap, bool),
}

fn label_index(s: &str) -> Option<usize> {
    LABELS.iter().position(|l| *l == s)
}

/// Compare and swap invocations found in the history, possibly unfinished.
fn parse_ops(state: &GlobalState, catalog: &ActionCatalog) -> Vec<Op> {
    let words: Vec<&str> = state.history().iter().map(|&t| catalog.token_str(t)).collect();
    let tags = state.tags();
    let mut ops = Vec::new();
    for i in (0..words.len()).filter(|&i| tags[i] == Provenance::RouteDesc) {
        let at = |k: usize| words.get(i + k).copied().filter(|_| tags.get(i + k) == Some(&Provenance::Observation));
        let x = at(1).and_then(label_index).unwrap_or(usize::MAX);
        let y = at(2).and_then(label_index).unwrap_or(usize::MAX);
        match words[i] {
            "compare" => ops.push(Op::Compare((x, y), at(4).map(|r| r == "<"))),
            "swap" => ops.push(Op::Swap((x, y), at(3) == Some("swapped"))),
            _ => {}
        }
    }
    ops
}

impl TreePolicy {
    fn next(&self, state: &GlobalState, catalog: &ActionCatalog) -> Option<crate::catalog::ActionId> {
        let cmp = catalog.env_by_kind(EnvKind::Compare)?.id;
        let swp = catalog.env_by_kind(EnvKind::Swap)?.id;
        let ops = parse_ops(state, catalog);
        let mut node = &self.tree.root;
        let mut done_swaps = 0;
        for op in &ops {
            match (op, node) {
                (Op::Compare(_, Some(lt)), Node::Compare { less, greater, .. }) => {
                    node = if *lt { less.as_deref()? } else { greater.as_deref()? };
                }
                (Op::Swap(_, true), _) => done_swaps += 1,
                _ => {}
            }
        }
        let echoed = |pair: Swap| usize::from(pair.0 != usize::MAX);
        if state.active_env == cmp {
            let Node::Compare { pair, .. } = node else { return None };
            let picked = match ops.last() {
                Some(Op::Compare(p, None)) => echoed(*p),
                _ => 0,
            };
            return Some(catalog.env_action(cmp, if picked == 0 { pair.0 } else { pair.1 }));
        }
        if state.active_env == swp {
            let Node::Leaf { swaps, .. } = node else { return None };
            let &(x, y) = swaps.get(done_swaps)?;
            let picked = match ops.last() {
                Some(Op::Swap(p, false)) => echoed(*p),
                _ => 0,
            };
            return Some(catalog.env_action(swp, if picked == 0 { x } else { y }));
        }
        match node {
            Node::Compare { .. } => Some(catalog.route_action(cmp)),
            Node::Leaf { swaps, .. } if done_swaps < swaps.len() => Some(catalog.route_action(swp)),
            Node::Leaf { .. } => catalog.token("done").map(|t| catalog.vocab_action(t)),
        }
    }
}

impl Policy for TreePolicy {
    type Cursor = ();

    fn cursor(&self) {}

    fn distribution(&self, _: &mut (), state: &GlobalState, catalog: &ActionCatalog) -> ActionDistribution {
        let support = catalog.support(state.active_env).expect("valid active env");
        match self.next(state, catalog) {
            Some(a) if support.contains(&a.global) => ActionDistribution::one_hot(support, a.global),
            _ => ActionDistribution::uniform(support),
        }
    }
}

/// Strategies compared by [`sort_stats`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    Insertion,
    PivotSort4,
    Optimal,
    OptimalAverage,
}

pub enum Strategy {
    Insertion,
    PivotSort4,
    Optimal(Objective),
    Tree(DecisionTree),
}

/// Exhaustive comparison/swap statistics (ascending targets). Insertion
/// sort beyond eight items is sampled with a fixed seed.
pub fn sort_stats(strategy: &Strategy, n: usize) -> Result<SortStats> {
    match strategy {
        Strategy::Insertion => {
            let mut st = SortStats { n, ..Default::default() };
            if n <= 8 {
                for p in permutations(n) {
                    let (c, s) = insertion_sort_trace(&p);
                    st.add(c, s, true);
                }
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let mut p: Vec<usize> = (0..n).collect();
                for _ in 0..100_000 {
                    p.shuffle(&mut rng);
                    let (c, s) = insertion_sort_trace(&p);
                    st.add(c, s, true);
                }
            }
            Ok(st)
        }
        Strategy::PivotSort4 => {
            if n != 4 {
                return Err(Error::Config("the pivot sorter handles exactly four items".into()));
            }
            let mut st = SortStats { n, ..Default::default() };
            for p in permutations(4) {
                let mut arr = p.clone();
                let t = pivot_sort4(Direction::Ascending, |x, y| arr[x] < arr[y], |_, _| {})?;
                for &(a, b) in &t.swaps {
                    arr.swap(a, b);
                }
                st.add(t.comparisons.len(), t.swaps.len(), sorts(&p, &t.swaps, Direction::Ascending));
            }
            Ok(st)
        }
        Strategy::Optimal(obj) => Ok(optimal_comparison_tree(n, *obj, Direction::Ascending)?.stats()),
        Strategy::Tree(t) => Ok(t.stats()),
    }
}
