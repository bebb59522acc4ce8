use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// A probability distribution over the contiguous support of one
/// environment. Actions outside the support have probability exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub support: Range<usize>,
    pub probs: Vec<f64>,
}

impl ActionDistribution {
    /// Softmax of `logits` (indexed by global action) restricted to `support`.
    pub fn masked_softmax(logits: &[f64], support: Range<usize>) -> Self {
        let probs = softmax(&logits[support.clone()]);
        Self { support, probs }
    }

    pub fn uniform(support: Range<usize>) -> Self {
        let n = support.len();
        Self { probs: vec![1.0 / n as f64; n], support }
    }

    /// All mass on `global`, which must lie in `support`.
    pub fn one_hot(support: Range<usize>, global: usize) -> Self {
        assert!(support.contains(&global), "action {global} outside support {support:?}");
        let mut probs = vec![0.0; support.len()];
        probs[global - support.start] = 1.0;
        Self { support, probs }
    }

    pub fn prob(&self, global: usize) -> f64 {
        if self.support.contains(&global) {
            self.probs[global - self.support.start]
        } else {
            0.0
        }
    }

    /// Inverse-CDF sample using a single uniform draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last_nonzero = self.support.start;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                last_nonzero = self.support.start + i;
            }
            acc += p;
            if u < acc {
                return self.support.start + i;
            }
        }
        last_nonzero
    }

    /// Most probable action; ties resolve to the lowest global index.
    pub fn greedy(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        self.support.start + best
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// `log softmax(z)` without forming the probabilities first.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|&v| v - lse).collect()
}
