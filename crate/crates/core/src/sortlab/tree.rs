//! Comparison decision trees: compare nodes branch on the outcome, leaves
//! hold the swaps performed once comparing stops.

use std::fmt::Write as _;

use num_rational::Ratio;
use serde::Serialize;

use super::perm::{apply_swaps, is_identity};
use crate::catalog::LABELS;
use crate::envs::Direction;
use crate::error::{Error, Result};

pub type Swap = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// Compare the values at `pair.0` and `pair.1`; `less` is followed when
    /// the first is smaller. A missing child means no consistent
    /// permutation reaches it.
    Compare {
        pair: (usize, usize),
        consistent: Vec<Vec<usize>>,
        less: Option<Box<Node>>,
        greater: Option<Box<Node>>,
    },
    Leaf {
        swaps: Vec<Swap>,
        consistent: Vec<Vec<usize>>,
    },
}

/// What one permutation class experienced: comparisons with outcomes, then
/// swaps.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub comparisons: Vec<(Swap, bool)>,
    pub swaps: Vec<Swap>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecisionTree {
    pub n: usize,
    pub direction: Direction,
    pub root: Node,
}

/// Exact comparison and swap counts of a strategy over a set of inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SortStats {
    pub n: usize,
    pub cases: u64,
    pub total_comparisons: u64,
    pub total_swaps: u64,
    pub worst_comparisons: usize,
    pub correct: u64,
}

impl SortStats {
    pub fn add(&mut self, comparisons: usize, swaps: usize, correct: bool) {
        self.cases += 1;
        self.total_comparisons += comparisons as u64;
        self.total_swaps += swaps as u64;
        self.worst_comparisons = self.worst_comparisons.max(comparisons);
        self.correct += correct as u64;
    }

    pub fn avg_comparisons_exact(&self) -> Ratio<u64> {
        Ratio::new(self.total_comparisons, self.cases.max(1))
    }

    pub fn avg_swaps_exact(&self) -> Ratio<u64> {
        Ratio::new(self.total_swaps, self.cases.max(1))
    }

    pub fn avg_comparisons(&self) -> f64 {
        self.total_comparisons as f64 / self.cases.max(1) as f64
    }

    pub fn avg_swaps(&self) -> f64 {
        self.total_swaps as f64 / self.cases.max(1) as f64
    }

    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.cases.max(1) as f64
    }
}

/// Whether applying `swaps` to `perm` leaves it sorted in `direction`.
pub fn sorts(perm: &[usize], swaps: &[Swap], direction: Direction) -> bool {
    let out = apply_swaps(perm, swaps);
    match direction {
        Direction::Ascending => is_identity(&out),
        Direction::Descending => out.iter().enumerate().all(|(i, &r)| r == out.len() - 1 - i),
    }
}

/// Rank vector of the sorted positions in `direction`.
pub fn target_of(perm: &[usize], direction: Direction) -> Vec<usize> {
    match direction {
        Direction::Ascending => perm.to_vec(),
        Direction::Descending => perm.iter().map(|&r| perm.len() - 1 - r).collect(),
    }
}

impl Node {
    pub fn consistent(&self) -> &[Vec<usize>] {
        match self {
            Node::Compare { consistent, .. } | Node::Leaf { consistent, .. } => consistent,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Compare { less, greater, .. } => {
                1 + less.as_ref().map_or(0, |c| c.node_count()) + greater.as_ref().map_or(0, |c| c.node_count())
            }
        }
    }

    /// Follow `perm`'s comparison outcomes to a leaf: (depth, swaps).
    pub fn route(&self, perm: &[usize]) -> Option<(usize, &[Swap])> {
        let mut node = self;
        let mut depth = 0;
        loop {
            match node {
                Node::Leaf { swaps, .. } => return Some((depth, swaps)),
                Node::Compare { pair: (x, y), less, greater, .. } => {
                    let child = if perm[*x] < perm[*y] { less } else { greater };
                    node = child.as_deref()?;
                    depth += 1;
                }
            }
        }
    }

    fn visit_leaves<'a>(&'a self, depth: usize, f: &mut impl FnMut(usize, &'a [Swap], &'a [Vec<usize>])) {
        match self {
            Node::Leaf { swaps, consistent } => f(depth, swaps, consistent),
            Node::Compare { less, greater, .. } => {
                for c in [less, greater].into_iter().flatten() {
                    c.visit_leaves(depth + 1, f);
                }
            }
        }
    }

    fn is_redundant(&self) -> bool {
        let Node::Compare { consistent, less, greater, .. } = self else {
            return false;
        };
        match (less, greater) {
            (Some(l), Some(g)) => same_actions(l, g, consistent),
            _ => true,
        }
    }
}

fn same_actions(a: &Node, b: &Node, perms: &[Vec<usize>]) -> bool {
    perms.iter().all(|p| match (a.route(p), b.route(p)) {
        (Some((_, sa)), Some((_, sb))) => sa == sb,
        _ => false,
    })
}

fn total_depth(node: &Node, perms: &[Vec<usize>]) -> usize {
    perms.iter().map(|p| node.route(p).map_or(usize::MAX / 2, |(d, _)| d)).sum()
}

/// Re-route `perms` through `node`, recomputing consistent sets. Every
/// permutation must reach a leaf.
fn reroute(node: &Node, perms: Vec<Vec<usize>>) -> Option<Node> {
    if perms.is_empty() {
        return None;
    }
    Some(match node {
        Node::Leaf { swaps, .. } => Node::Leaf { swaps: swaps.clone(), consistent: perms },
        Node::Compare { pair, less, greater, .. } => {
            let (l, g): (Vec<_>, Vec<_>) = perms.iter().cloned().partition(|p| p[pair.0] < p[pair.1]);
            let child = |c: &Option<Box<Node>>, ps: Vec<Vec<usize>>| c.as_deref().and_then(|c| reroute(c, ps)).map(Box::new);
            Node::Compare { pair: *pair, consistent: perms, less: child(less, l), greater: child(greater, g) }
        }
    })
}

fn prune_node(node: Node) -> Node {
    let Node::Compare { pair, consistent, less, greater } = node else {
        return node;
    };
    let less = less.map(|c| Box::new(prune_node(*c)));
    let greater = greater.map(|c| Box::new(prune_node(*c)));
    match (less, greater) {
        (Some(c), None) | (None, Some(c)) => *c,
        (Some(l), Some(g)) => {
            if same_actions(&l, &g, &consistent) {
                let keep = if total_depth(&g, &consistent) < total_depth(&l, &consistent) { g } else { l };
                let rerouted = reroute(&keep, consistent).expect("non-empty permutation set");
                prune_node(rerouted)
            } else {
                Node::Compare { pair, consistent, less: Some(l), greater: Some(g) }
            }
        }
        (None, None) => Node::Leaf { swaps: Vec::new(), consistent },
    }
}

fn label(i: usize) -> &'static str {
    LABELS.get(i).copied().unwrap_or("?")
}

impl DecisionTree {
    /// Merge per-permutation traces into a tree. Permutations sharing a
    /// comparison prefix must agree on the next comparison.
    pub fn from_traces(n: usize, direction: Direction, traces: Vec<(Vec<usize>, Trace)>) -> Result<Self> {
        let mut root: Option<Box<Node>> = None;
        for (perm, trace) in traces {
            insert(&mut root, &perm, &trace.comparisons, &trace.swaps)?;
        }
        let root = root.ok_or_else(|| Error::InvalidState("no traces".into()))?;
        Ok(Self { n, direction, root: *root })
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    pub fn leaf_count(&self) -> usize {
        let mut k = 0;
        self.root.visit_leaves(0, &mut |_, _, _| k += 1);
        k
    }

    /// Leaves as (depth, swaps, consistent permutations).
    pub fn leaves(&self) -> Vec<(usize, Vec<Swap>, Vec<Vec<usize>>)> {
        let mut out = Vec::new();
        self.root.visit_leaves(0, &mut |d, s, c| out.push((d, s.to_vec(), c.to_vec())));
        out
    }

    pub fn stats(&self) -> SortStats {
        let mut st = SortStats { n: self.n, ..Default::default() };
        self.root.visit_leaves(0, &mut |d, swaps, perms| {
            for p in perms {
                st.add(d, swaps.len(), sorts(p, swaps, self.direction));
            }
        });
        st
    }

    /// Comparisons made for `perm` with outcomes, in order.
    pub fn schedule(&self, perm: &[usize]) -> Vec<(Swap, bool)> {
        let mut out = Vec::new();
        let mut node = &self.root;
        while let Node::Compare { pair, less, greater, .. } = node {
            let lt = perm[pair.0] < perm[pair.1];
            out.push((*pair, lt));
            match if lt { less } else { greater } {
                Some(c) => node = c,
                None => break,
            }
        }
        out
    }

    /// Structural checks: consistent sets partition along outcomes and
    /// every leaf sorts its permutations.
    pub fn check(&self) -> Result<()> {
        fn walk(node: &Node, direction: Direction) -> Result<()> {
            match node {
                Node::Leaf { swaps, consistent } => {
                    for p in consistent {
                        if !sorts(p, swaps, direction) {
                            return Err(Error::Extraction { perm: p.clone(), reason: "leaf swaps do not sort".into() });
                        }
                    }
                    Ok(())
                }
                Node::Compare { pair, consistent, less, greater } => {
                    for (child, want) in [(less, true), (greater, false)] {
                        let expect: Vec<_> =
                            consistent.iter().filter(|p| (p[pair.0] < p[pair.1]) == want).cloned().collect();
                        match child {
                            Some(c) => {
                                if c.consistent() != expect.as_slice() {
                                    return Err(Error::InvalidState("child consistent set mismatch".into()));
                                }
                                walk(c, direction)?;
                            }
                            None if !expect.is_empty() => {
                                return Err(Error::InvalidState("reachable outcome has no child".into()));
                            }
                            None => {}
                        }
                    }
                    Ok(())
                }
            }
        }
        walk(&self.root, self.direction)
    }

    /// Paths (false = less branch) of compare nodes that pruning removes
    /// locally: a determined outcome, or identical leaf actions either way.
    pub fn redundant_paths(&self) -> Vec<Vec<bool>> {
        fn walk(node: &Node, path: &mut Vec<bool>, out: &mut Vec<Vec<bool>>) {
            if let Node::Compare { less, greater, .. } = node {
                if node.is_redundant() {
                    out.push(path.clone());
                }
                for (c, b) in [(less, false), (greater, true)] {
                    if let Some(c) = c {
                        path.push(b);
                        walk(c, path, out);
                        path.pop();
                    }
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.root, &mut Vec::new(), &mut out);
        out
    }

    /// Graphviz rendering; nodes at `highlight` paths are drawn red.
    pub fn to_dot(&self, highlight: &[Vec<bool>]) -> String {
        fn walk(node: &Node, path: &mut Vec<bool>, highlight: &[Vec<bool>], next: &mut usize, out: &mut String) -> usize {
            let id = *next;
            *next += 1;
            let red = if highlight.contains(path) { ", color=red, fontcolor=red" } else { "" };
            match node {
                Node::Leaf { swaps, consistent } => {
                    let body = if swaps.is_empty() {
                        "no swaps".to_string()
                    } else {
                        swaps.iter().map(|&(a, b)| format!("swap {} {}", label(a), label(b))).collect::<Vec<_>>().join("\\n")
                    };
                    let k = consistent.len();
                    let cases = if k == 1 { "case" } else { "cases" };
                    let _ = writeln!(out, "  n{id} [shape=ellipse, label=\"{body}\\n({k} {cases})\"{red}];");
                }
                Node::Compare { pair, less, greater, .. } => {
                    let _ = writeln!(out, "  n{id} [shape=box, label=\"{}?{}\"{red}];", label(pair.0), label(pair.1));
                    for (c, b, edge) in [(less, false, "<"), (greater, true, ">")] {
                        if let Some(c) = c {
                            path.push(b);
                            let cid = walk(c, path, highlight, next, out);
                            path.pop();
                            let _ = writeln!(out, "  n{id} -> n{cid} [label=\"{edge}\"];");
                        }
                    }
                }
            }
            id
        }
        let mut out = String::from("digraph decision_tree {\n");
        walk(&self.root, &mut Vec::new(), highlight, &mut 0, &mut out);
        out.push_str("}\n");
        out
    }
}

fn insert(slot: &mut Option<Box<Node>>, perm: &[usize], comps: &[(Swap, bool)], swaps: &[Swap]) -> Result<()> {
    let conflict = |reason: &str| Error::Extraction { perm: perm.to_vec(), reason: reason.to_string() };
    match slot {
        None => {
            let node = match comps.split_first() {
                None => Node::Leaf { swaps: swaps.to_vec(), consistent: vec![perm.to_vec()] },
                Some((&(pair, lt), rest)) => {
                    let mut child = None;
                    insert(&mut child, perm, rest, swaps)?;
                    let (less, greater) = if lt { (child, None) } else { (None, child) };
                    Node::Compare { pair, consistent: vec![perm.to_vec()], less, greater }
                }
            };
            *slot = Some(Box::new(node));
            Ok(())
        }
        Some(node) => match (&mut **node, comps.split_first()) {
            (Node::Leaf { swaps: s, consistent }, None) => {
                if s != swaps {
                    return Err(conflict("indistinguishable inputs received different swaps"));
                }
                consistent.push(perm.to_vec());
                Ok(())
            }
            (Node::Compare { pair, consistent, less, greater }, Some((&(p, lt), rest))) => {
                if *pair != p {
                    return Err(conflict("inputs with identical observations received different comparisons"));
                }
                consistent.push(perm.to_vec());
                insert(if lt { less } else { greater }, perm, rest, swaps)
            }
            _ => Err(conflict("inputs with identical observations stopped comparing at different points")),
        },
    }
}

/// Remove compare nodes whose outcome is already determined or whose two
/// subtrees end in the same swaps for every consistent permutation.
pub fn prune_redundant(tree: &DecisionTree) -> DecisionTree {
    DecisionTree { n: tree.n, direction: tree.direction, root: prune_node(tree.root.clone()) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(swaps: Vec<Swap>, consistent: Vec<Vec<usize>>) -> Node {
        Node::Leaf { swaps, consistent }
    }

    #[test]
    fn duplicated_comparison_is_removed() {
        // n = 2: compare A?B twice, then swap if needed
        let traces = vec![
            (vec![0, 1], Trace { comparisons: vec![((0, 1), true), ((0, 1), true)], swaps: vec![] }),
            (vec![1, 0], Trace { comparisons: vec![((0, 1), false), ((0, 1), false)], swaps: vec![(0, 1)] }),
        ];
        let t = DecisionTree::from_traces(2, Direction::Ascending, traces).unwrap();
        t.check().unwrap();
        assert_eq!(t.node_count(), 5);
        assert_eq!(t.redundant_paths(), vec![vec![false], vec![true]]);
        let p = prune_redundant(&t);
        p.check().unwrap();
        assert_eq!(p.node_count(), 3);
        assert_eq!(prune_redundant(&p), p);
        assert_eq!(p.stats().accuracy(), 1.0);
    }

    #[test]
    fn irrelevant_comparison_is_removed() {
        // comparing when both outcomes lead to the same swaps
        let root = Node::Compare {
            pair: (0, 1),
            consistent: vec![vec![0, 1], vec![1, 0]],
            less: Some(Box::new(leaf(vec![], vec![vec![0, 1]]))),
            greater: Some(Box::new(leaf(vec![], vec![vec![1, 0]]))),
        };
        let t = DecisionTree { n: 2, direction: Direction::Ascending, root };
        assert_eq!(t.redundant_paths(), vec![Vec::<bool>::new()]);
        let p = prune_redundant(&t);
        assert_eq!(p.node_count(), 1);
        assert_eq!(p.stats().correct, 1);
    }

    #[test]
    fn minimal_tree_is_unchanged() {
        let traces = vec![
            (vec![0, 1], Trace { comparisons: vec![((0, 1), true)], swaps: vec![] }),
            (vec![1, 0], Trace { comparisons: vec![((0, 1), false)], swaps: vec![(0, 1)] }),
        ];
        let t = DecisionTree::from_traces(2, Direction::Ascending, traces).unwrap();
        assert_eq!(prune_redundant(&t), t);
        assert!(t.redundant_paths().is_empty());
    }

    #[test]
    fn conflicting_traces_are_rejected() {
        let traces = vec![
            (vec![0, 1, 2], Trace { comparisons: vec![((0, 1), true)], swaps: vec![] }),
            (vec![0, 2, 1], Trace { comparisons: vec![((0, 2), true)], swaps: vec![] }),
        ];
        assert!(matches!(
            DecisionTree::from_traces(3, Direction::Ascending, traces),
            Err(Error::Extraction { .. })
        ));
    }

    #[test]
    fn descending_targets() {
        assert!(sorts(&[1, 0], &[], Direction::Descending));
        assert!(sorts(&[0, 1], &[(0, 1)], Direction::Descending));
        assert_eq!(target_of(&[2, 0, 1], Direction::Descending), vec![0, 2, 1]);
    }
}
