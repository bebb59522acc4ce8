//! Permutations in rank form: `perm[i]` is the sorted position of the value
//! currently held at position `i`.

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("successor exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
}

/// Number of cycles, counting fixed points.
pub fn cycle_count(perm: &[usize]) -> usize {
    let mut seen = vec![false; perm.len()];
    let mut cycles = 0;
    for start in 0..perm.len() {
        if seen[start] {
            continue;
        }
        cycles += 1;
        let mut i = start;
        while !seen[i] {
            seen[i] = true;
            i = perm[i];
        }
    }
    cycles
}

/// n minus the number of cycles.
pub fn min_swap_count(perm: &[usize]) -> usize {
    perm.len() - cycle_count(perm)
}

/// A shortest sequence of position swaps that sorts the array: each swap
/// sends one value to its final position, closing the cycles one by one.
pub fn min_swap(perm: &[usize]) -> Vec<(usize, usize)> {
    let mut p = perm.to_vec();
    let mut out = Vec::with_capacity(min_swap_count(perm));
    for i in 0..p.len() {
        while p[i] != i {
            let j = p[i];
            p.swap(i, j);
            out.push((i, j));
        }
    }
    out
}

/// Apply position swaps to a rank vector.
pub fn apply_swaps(perm: &[usize], swaps: &[(usize, usize)]) -> Vec<usize> {
    let mut p = perm.to_vec();
    for &(a, b) in swaps {
        p.swap(a, b);
    }
    p
}

pub fn is_identity(perm: &[usize]) -> bool {
    perm.iter().enumerate().all(|(i, &p)| i == p)
}

/// n!
pub fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

/// ⌈log₂ n!⌉, the information-theoretic comparison lower bound.
pub fn info_lower_bound(n: usize) -> usize {
    let f = factorial(n);
    let mut k = 0;
    while (1u64 << k) < f {
        k += 1;
    }
    k
}
