//! Threshold-free OOD detection metrics.
//!
//! Orientation: OOD is the positive class and the detection score is
//! `1 - Score(x)`, so larger means "more OOD". Every function takes the
//! positive-class scores first. All arithmetic is `f64`.

use serde::{Deserialize, Serialize};

use crate::detector::ScoreSet;
use crate::error::{Error, Result};

fn validate(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidInput(format!(
            "metrics need nonempty positive and negative lists (got {} and {})",
            pos.len(),
            neg.len()
        )));
    }
    if pos.iter().chain(neg).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("detection score".into()));
    }
    Ok(())
}

/// Scores of both classes sorted by descending score, grouped into blocks of
/// equal score: `(positives in block, negatives in block)`.
fn descending_blocks(pos: &[f64], neg: &[f64]) -> Vec<(usize, usize)> {
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut prev: Option<f64> = None;
    for (s, is_pos) in all {
        if prev != Some(s) {
            blocks.push((0, 0));
            prev = Some(s);
        }
        let b = blocks.last_mut().unwrap();
        if is_pos {
            b.0 += 1;
        } else {
            b.1 += 1;
        }
    }
    blocks
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half. Computed from the
/// Mann-Whitney rank sum with mid-ranks.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    validate(pos, neg)?;
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    // Ascending order; ranks start at 1.
    let mut rank_sum = 0.0;
    let mut seen = 0usize;
    for (bp, bn) in descending_blocks(pos, neg).into_iter().rev() {
        let size = bp + bn;
        // Mid-rank of positions seen+1 ..= seen+size, doubled to stay integral.
        let twice_mid = (2 * seen + size + 1) as f64;
        rank_sum += bp as f64 * twice_mid;
        seen += size;
    }
    let u = rank_sum / 2.0 - np * (np + 1.0) / 2.0;
    Ok(u / (np * nn))
}

/// Which class counts as positive for average precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    OodPositive,
    IndPositive,
}

/// Average precision of `pos` against `neg`: tied scores form one
/// threshold, and `AP = Σ ΔRecall · Precision` over distinct thresholds in
/// descending order.
pub fn average_precision(pos: &[f64], neg: &[f64]) -> Result<f64> {
    validate(pos, neg)?;
    let total_pos = pos.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for (bp, bn) in descending_blocks(pos, neg) {
        tp += bp;
        fp += bn;
        if bp > 0 {
            ap += (bp as f64 / total_pos) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// AUPR of a [`ScoreSet`] (max-softmax scores) in either orientation.
pub fn aupr(scores: &ScoreSet, orientation: Orientation) -> Result<f64> {
    match orientation {
        Orientation::OodPositive => average_precision(&scores.ood_detection(), &scores.ind_detection()),
        // Higher max-softmax means more in-domain.
        Orientation::IndPositive => average_precision(&scores.ind_scores, &scores.ood_scores),
    }
}

/// Smallest false-positive rate among thresholds (swept over every distinct
/// score, predicting positive when `score >= threshold`) whose true-positive
/// rate is at least `level`.
pub fn fpr_at_tpr(pos: &[f64], neg: &[f64], level: f64) -> Result<f64> {
    validate(pos, neg)?;
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::InvalidInput(format!("TPR level {level} outside (0, 1]")));
    }
    let (np, nn) = (pos.len(), neg.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for (bp, bn) in descending_blocks(pos, neg) {
        tp += bp;
        fp += bn;
        if tp as f64 / np as f64 >= level {
            return Ok(fp as f64 / nn as f64);
        }
    }
    unreachable!("the lowest threshold admits every positive")
}

/// The five headline detection metrics, as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub auroc: f64,
    pub aupr_ood_positive: f64,
    pub aupr_ind_positive: f64,
    pub fpr_at_95tpr: f64,
    pub fpr_at_90tpr: f64,
}

/// Metric values ×100 rounded to two decimals next to the raw fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub percent: MetricBlock,
    pub raw: MetricBlock,
}

fn percent2(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}

impl MetricBlock {
    pub fn map(&self, f: impl Fn(f64) -> f64) -> MetricBlock {
        MetricBlock {
            auroc: f(self.auroc),
            aupr_ood_positive: f(self.aupr_ood_positive),
            aupr_ind_positive: f(self.aupr_ind_positive),
            fpr_at_95tpr: f(self.fpr_at_95tpr),
            fpr_at_90tpr: f(self.fpr_at_90tpr),
        }
    }

    pub fn report(&self) -> MetricReport {
        MetricReport {
            percent: self.map(percent2),
            raw: *self,
        }
    }

    /// `(name, value)` pairs in a fixed order.
    pub fn fields(&self) -> [(&'static str, f64); 5] {
        [
            ("auroc", self.auroc),
            ("aupr_ood_positive", self.aupr_ood_positive),
            ("aupr_ind_positive", self.aupr_ind_positive),
            ("fpr_at_95tpr", self.fpr_at_95tpr),
            ("fpr_at_90tpr", self.fpr_at_90tpr),
        ]
    }
}

/// All metrics for IND vs OOD max-softmax scores.
pub fn metric_block(scores: &ScoreSet) -> Result<MetricBlock> {
    let ood = scores.ood_detection();
    let ind = scores.ind_detection();
    Ok(MetricBlock {
        auroc: auroc(&ood, &ind)?,
        aupr_ood_positive: average_precision(&ood, &ind)?,
        aupr_ind_positive: aupr(scores, Orientation::IndPositive)?,
        fpr_at_95tpr: fpr_at_tpr(&ood, &ind, 0.95)?,
        fpr_at_90tpr: fpr_at_tpr(&ood, &ind, 0.90)?,
    })
}
