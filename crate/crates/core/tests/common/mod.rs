//! Brute-force reference implementations shared by the test targets.

#![allow(dead_code)]

pub mod gradchecks;

use ood_core::Rng;

/// `P(pos > neg) + ½·P(pos = neg)` over every pair.
pub fn pairwise_auroc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn distinct_descending(pos: &[f64], neg: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = pos.iter().chain(neg).copied().collect();
    t.sort_by(|a, b| b.total_cmp(a));
    t.dedup();
    t
}

fn counts_at(pos: &[f64], neg: &[f64], t: f64) -> (usize, usize) {
    (
        pos.iter().filter(|&&s| s >= t).count(),
        neg.iter().filter(|&&s| s >= t).count(),
    )
}

/// Average precision by enumerating every threshold and summing
/// `(R_i - R_{i-1}) · P_i`.
pub fn enumerated_ap(pos: &[f64], neg: &[f64]) -> f64 {
    let mut ap = 0.0;
    let mut prev_tp = 0usize;
    for t in distinct_descending(pos, neg) {
        let (tp, fp) = counts_at(pos, neg, t);
        if tp > prev_tp {
            ap += ((tp - prev_tp) as f64 / pos.len() as f64) * (tp as f64 / (tp + fp) as f64);
        }
        prev_tp = tp;
    }
    ap
}

/// Smallest FPR over every threshold reaching the target TPR.
pub fn enumerated_fpr(pos: &[f64], neg: &[f64], level: f64) -> f64 {
    distinct_descending(pos, neg)
        .into_iter()
        .map(|t| counts_at(pos, neg, t))
        .filter(|&(tp, _)| tp as f64 / pos.len() as f64 >= level)
        .map(|(_, fp)| fp as f64 / neg.len() as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Scores on a coarse grid so ties are common.
pub fn random_scores(rng: &mut Rng, max_len: usize) -> Vec<f64> {
    let n = 1 + rng.below(max_len);
    let grid = 2 + rng.below(20);
    (0..n).map(|_| rng.below(grid) as f64 / grid as f64).collect()
}
