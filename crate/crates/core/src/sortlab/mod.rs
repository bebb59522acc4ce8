//! Ground truth for the sorting study: minimal swaps, exact optimal
//! comparison trees, classical baselines, the pivot sorter and decision
//! trees extracted from greedy policies.

pub mod order;
pub mod perm;
pub mod strategies;
pub mod tree;

use std::io::Write;

pub use order::{ComparisonSet, InfoSpace, Objective};
pub use perm::{cycle_count, info_lower_bound, min_swap, min_swap_count, permutations};
pub use strategies::{
    extract_decision_tree, insertion_sort_trace, optimal_comparison_tree, pivot_next, pivot_sort4, pivot_tree,
    sort_stats, strategy_tree, PivotTrace, Strategy, StrategyName, TreePolicy,
};
pub use tree::{prune_redundant, DecisionTree, Node, SortStats, Trace};

use num_rational::Ratio;

use crate::error::Result;

/// Exact average of n − cycles over all permutations of n.
pub fn optimal_swap_stats(n: usize) -> Ratio<u64> {
    assert!(n <= 8, "exhaustive average supports n <= 8");
    let perms = permutations(n);
    let total: u64 = perms.iter().map(|p| min_swap_count(p) as u64).sum();
    Ratio::new(total, perms.len() as u64)
}

/// Minimal swap sequence from accumulated comparisons; fails unless they
/// determine a total order.
pub fn min_swap_from(rels: &ComparisonSet) -> Result<Vec<(usize, usize)>> {
    Ok(min_swap(&rels.total_order()?))
}

/// Header of the statistics CSV.
pub const STATS_HEADER: &str = "strategy,n,cases,avg_comparisons,avg_swaps,worst_comparisons,accuracy";

pub fn write_stats_row<W: Write>(mut w: W, name: &str, st: &SortStats) -> std::io::Result<()> {
    writeln!(
        w,
        "{name},{},{},{:.6},{:.6},{},{:.6}",
        st.n,
        st.cases,
        st.avg_comparisons(),
        st.avg_swaps(),
        st.worst_comparisons,
        st.accuracy()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swap_averages() {
        assert_eq!(optimal_swap_stats(2), Ratio::new(1, 2));
        assert_eq!(optimal_swap_stats(4), Ratio::new(46, 24));
    }

    #[test]
    fn stats_rows_have_header_width() {
        let st = sort_stats(&Strategy::Insertion, 3).unwrap();
        let mut buf = Vec::new();
        write_stats_row(&mut buf, "insertion", &st).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(line.trim().split(',').count(), STATS_HEADER.split(',').count());
    }
}
