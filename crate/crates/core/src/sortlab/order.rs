//! Accumulated comparison results and exact search over information states.
//!
//! An information state is the set of permutations consistent with the
//! comparisons seen so far, stored as a bitmask over the lexicographic list
//! of permutations (at most 120 of them for n = 5).

use std::collections::HashMap;

use super::perm::permutations;
use crate::error::{Error, Result};

/// Largest array length the bitmask search supports.
pub const MAX_SEARCH_N: usize = 5;

/// Strict relations between positions, kept transitively closed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonSet {
    n: usize,
    /// `less[x][y]`: the value at x is known to be smaller than at y.
    less: Vec<Vec<bool>>,
}

impl ComparisonSet {
    pub fn new(n: usize) -> Self {
        Self { n, less: vec![vec![false; n]; n] }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Record that the value at `x` is smaller than the value at `y`.
    pub fn add_less(&mut self, x: usize, y: usize) -> Result<()> {
        if x == y || self.less[y][x] {
            return Err(Error::InvalidState(format!("relation {x} < {y} contradicts earlier comparisons")));
        }
        if self.less[x][y] {
            return Ok(());
        }
        let below: Vec<usize> = (0..self.n).filter(|&a| a == x || self.less[a][x]).collect();
        let above: Vec<usize> = (0..self.n).filter(|&b| b == y || self.less[y][b]).collect();
        for &a in &below {
            for &b in &above {
                self.less[a][b] = true;
            }
        }
        Ok(())
    }

    /// Record the outcome of comparing `x` with `y`.
    pub fn record(&mut self, x: usize, y: usize, x_less: bool) -> Result<()> {
        if x_less {
            self.add_less(x, y)
        } else {
            self.add_less(y, x)
        }
    }

    pub fn less(&self, x: usize, y: usize) -> bool {
        self.less[x][y]
    }

    /// Whether the relation between `x` and `y` is implied.
    pub fn known(&self, x: usize, y: usize) -> bool {
        self.less[x][y] || self.less[y][x]
    }

    pub fn consistent(&self, perm: &[usize]) -> bool {
        (0..self.n).all(|x| (0..self.n).all(|y| !self.less[x][y] || perm[x] < perm[y]))
    }

    /// Ascending rank of every position, if the relations form a total order.
    pub fn total_order(&self) -> Result<Vec<usize>> {
        let mut ranks = Vec::with_capacity(self.n);
        for x in 0..self.n {
            let below = (0..self.n).filter(|&y| self.less[y][x]).count();
            let above = (0..self.n).filter(|&y| self.less[x][y]).count();
            if below + above != self.n - 1 {
                return Err(Error::Indeterminate(format!("position {x} is not ordered against every other")));
            }
            ranks.push(below);
        }
        Ok(ranks)
    }
}

/// Which comparison count a search minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    WorstCase,
    Average,
}

/// Permutations of one length plus the outcome masks of every comparison.
#[derive(Debug, Clone)]
pub struct InfoSpace {
    pub n: usize,
    pub perms: Vec<Vec<usize>>,
    /// `less_mask[x][y]`: permutations where the value at x is below y.
    less_mask: Vec<Vec<u128>>,
    worst: HashMap<(u128, usize), bool>,
    path_len: HashMap<u128, u64>,
}

impl InfoSpace {
    pub fn new(n: usize) -> Self {
        assert!(n <= MAX_SEARCH_N, "exact search supports n <= {MAX_SEARCH_N}");
        let perms = permutations(n);
        let mut less_mask = vec![vec![0u128; n]; n];
        for (k, p) in perms.iter().enumerate() {
            for x in 0..n {
                for y in 0..n {
                    if p[x] < p[y] {
                        less_mask[x][y] |= 1 << k;
                    }
                }
            }
        }
        Self { n, perms, less_mask, worst: HashMap::new(), path_len: HashMap::new() }
    }

    pub fn full(&self) -> u128 {
        if self.perms.len() == 128 {
            u128::MAX
        } else {
            (1u128 << self.perms.len()) - 1
        }
    }

    pub fn less_mask(&self, x: usize, y: usize) -> u128 {
        self.less_mask[x][y]
    }

    pub fn index_of(&self, perm: &[usize]) -> usize {
        self.perms.binary_search_by(|p| p.as_slice().cmp(perm)).expect("a permutation of 0..n")
    }

    pub fn mask_of(&self, rels: &ComparisonSet) -> u128 {
        let mut m = self.full();
        for x in 0..self.n {
            for y in 0..self.n {
                if rels.less(x, y) {
                    m &= self.less_mask[x][y];
                }
            }
        }
        m
    }

    pub fn members(&self, mask: u128) -> Vec<usize> {
        (0..self.perms.len()).filter(|&k| mask >> k & 1 == 1).collect()
    }

    /// Comparisons that split `mask` into two non-empty parts, in
    /// lexicographic pair order.
    pub fn informative_pairs(&self, mask: u128) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for x in 0..self.n {
            for y in x + 1..self.n {
                let l = mask & self.less_mask[x][y];
                if l != 0 && l != mask {
                    out.push((x, y));
                }
            }
        }
        out
    }

    fn split(&self, mask: u128, (x, y): (usize, usize)) -> (u128, u128) {
        let l = mask & self.less_mask[x][y];
        (l, mask & !l)
    }

    /// Whether every permutation in `mask` can be identified with at most
    /// `k` further comparisons.
    pub fn solvable(&mut self, mask: u128, k: usize) -> bool {
        let size = mask.count_ones() as u64;
        if size <= 1 {
            return true;
        }
        if k >= 64 || size > 1u64 << k {
            return k >= 64;
        }
        if let Some(&v) = self.worst.get(&(mask, k)) {
            return v;
        }
        let mut pairs = self.informative_pairs(mask);
        // try the most balanced splits first
        pairs.sort_by_key(|&p| {
            let (l, _) = self.split(mask, p);
            (2 * l.count_ones() as i64 - size as i64).abs()
        });
        let ok = pairs.into_iter().any(|p| {
            let (l, g) = self.split(mask, p);
            self.solvable(l, k - 1) && self.solvable(g, k - 1)
        });
        self.worst.insert((mask, k), ok);
        ok
    }

    /// Minimal worst-case number of comparisons to identify `mask`.
    pub fn worst_case(&mut self, mask: u128) -> usize {
        let mut k = 0;
        while (1u128 << k) < mask.count_ones() as u128 {
            k += 1;
        }
        while !self.solvable(mask, k) {
            k += 1;
        }
        k
    }

    /// Minimal total number of comparisons summed over the permutations of
    /// `mask` (external path length of the best tree).
    pub fn min_path_length(&mut self, mask: u128) -> u64 {
        let size = mask.count_ones() as u64;
        if size <= 1 {
            return 0;
        }
        if let Some(&v) = self.path_len.get(&mask) {
            return v;
        }
        let mut best = u64::MAX;
        for p in self.informative_pairs(mask) {
            let (l, g) = self.split(mask, p);
            best = best.min(size + self.min_path_length(l) + self.min_path_length(g));
        }
        self.path_len.insert(mask, best);
        best
    }

    /// The comparison an optimal tree makes at `mask`, lowest pair on ties.
    pub fn best_pair(&mut self, mask: u128, objective: Objective) -> Option<(usize, usize)> {
        let pairs = self.informative_pairs(mask);
        match objective {
            Objective::WorstCase => {
                let k = self.worst_case(mask);
                pairs.into_iter().find(|&p| {
                    let (l, g) = self.split(mask, p);
                    self.solvable(l, k - 1) && self.solvable(g, k - 1)
                })
            }
            Objective::Average => {
                let target = self.min_path_length(mask);
                let size = mask.count_ones() as u64;
                pairs.into_iter().find(|&p| {
                    let (l, g) = self.split(mask, p);
                    size + self.min_path_length(l) + self.min_path_length(g) == target
                })
            }
        }
    }

    /// Children masks of comparing `pair` at `mask`: (less, greater).
    pub fn children(&self, mask: u128, pair: (usize, usize)) -> (u128, u128) {
        self.split(mask, pair)
    }
}
