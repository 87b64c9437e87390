//! Shared inputs for the benchmarks.

use ood_core::Rng;

/// `n` scores on a grid of `levels` values, so ties are common.
pub fn tied_scores(rng: &mut Rng, n: usize, levels: u32) -> Vec<f64> {
    (0..n)
        .map(|_| f64::from(rng.below(levels as usize) as u32) / f64::from(levels))
        .collect()
}

/// Random token ids in `2..vocab` with per-row lengths in `1..=max_len`,
/// PAD-filled after each length.
pub fn token_batch(rng: &mut Rng, rows: usize, max_len: usize, vocab: usize) -> (Vec<usize>, Vec<usize>) {
    let mut ids = vec![0; rows * max_len];
    let mut lengths = Vec::with_capacity(rows);
    for r in 0..rows {
        let len = 1 + rng.below(max_len);
        for t in 0..len {
            ids[r * max_len + t] = 2 + rng.below(vocab - 2);
        }
        lengths.push(len);
    }
    (ids, lengths)
}
