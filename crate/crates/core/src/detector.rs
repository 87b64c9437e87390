//! Max-softmax OOD scoring and threshold decisions.
//!
//! `Score(x) = max_k softmax(logits(x))_k`; an input is flagged OOD when its
//! score is strictly below the threshold η.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::classifier::Classifier;
use crate::corpus::EncodedSplit;
use crate::error::{Error, Result};
use crate::numerics::loss::max_softmax;
use crate::numerics::Real;

/// Margin placed above the largest score when every score must be detected.
pub const BOUNDARY_MARGIN: f64 = 1e-9;

/// Max-softmax score of one logit row.
pub fn score_logits<F: Real>(logits: &[F]) -> f64 {
    max_softmax(logits)
}

/// Score of a single encoded sequence under an eval-mode forward pass.
pub fn score<F: Real>(model: &Classifier<F>, ids: &[usize], len: usize) -> Result<f64> {
    let logits = model.logits_for(ids, &[len])?;
    Ok(score_logits(logits.row(0)))
}

/// Scores of every row of `split`.
pub fn score_split<F: Real>(model: &Classifier<F>, split: &EncodedSplit) -> Result<Vec<f64>> {
    let logits = model.predict(split)?;
    Ok((0..logits.rows()).map(|i| score_logits(logits.row(i))).collect())
}

/// Detection threshold η.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Threshold(f64);

impl Threshold {
    /// A user-chosen threshold, which must lie strictly inside `(0, 1)`.
    pub fn new(eta: f64) -> Result<Self> {
        if eta > 0.0 && eta < 1.0 {
            Ok(Threshold(eta))
        } else {
            Err(Error::InvalidInput(format!("threshold {eta} outside (0, 1)")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Ind,
    Ood,
}

/// OOD iff `score < η`; a score equal to η is in-domain.
pub fn detect(score: f64, eta: Threshold) -> Decision {
    if score < eta.0 {
        Decision::Ood
    } else {
        Decision::Ind
    }
}

/// Smallest threshold under which at least `target_tpr` of the validation
/// OOD scores fall strictly below η.
///
/// With scores sorted ascending and `k = ⌈target·n⌉`, η is the midpoint
/// between the k-th smallest score and the next strictly larger score, or
/// the largest score plus [`BOUNDARY_MARGIN`] when no larger score exists.
pub fn select_threshold(ood_scores: &[f64], target_tpr: f64) -> Result<Threshold> {
    if ood_scores.is_empty() {
        return Err(Error::InvalidInput(
            "threshold selection needs validation OOD scores".into(),
        ));
    }
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::InvalidInput(format!("target TPR {target_tpr} outside (0, 1]")));
    }
    if ood_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("validation score".into()));
    }
    let mut sorted = ood_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // Guard against 0.95 * 20 = 19.000000000000004.
    let k = ((target_tpr * n as f64) - 1e-9).ceil().max(1.0) as usize;
    let kth = sorted[k.min(n) - 1];
    let eta = match sorted[k.min(n)..].iter().find(|&&s| s > kth) {
        Some(&next) => kth + (next - kth) / 2.0,
        None => kth + BOUNDARY_MARGIN,
    };
    Ok(Threshold(eta))
}

/// Max-softmax scores of IND-labelled and OOS-labelled evaluation examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub ind_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl ScoreSet {
    pub fn new(ind_scores: Vec<f64>, ood_scores: Vec<f64>) -> Result<Self> {
        if ind_scores.is_empty() || ood_scores.is_empty() {
            return Err(Error::InvalidInput("score set needs IND and OOD scores".into()));
        }
        if ind_scores
            .iter()
            .chain(&ood_scores)
            .any(|s| !s.is_finite() || *s <= 0.0 || *s > 1.0)
        {
            return Err(Error::InvalidInput("max-softmax scores must lie in (0, 1]".into()));
        }
        Ok(ScoreSet { ind_scores, ood_scores })
    }

    /// Score every row of the IND and OOD evaluation splits.
    pub fn from_model<F: Real>(model: &Classifier<F>, ind: &EncodedSplit, ood: &EncodedSplit) -> Result<Self> {
        Self::new(score_split(model, ind)?, score_split(model, ood)?)
    }

    /// OOD-positive detection scores `1 - Score(x)` of the OOD examples.
    pub fn ood_detection(&self) -> Vec<f64> {
        self.ood_scores.iter().map(|s| 1.0 - s).collect()
    }

    /// OOD-positive detection scores `1 - Score(x)` of the IND examples.
    pub fn ind_detection(&self) -> Vec<f64> {
        self.ind_scores.iter().map(|s| 1.0 - s).collect()
    }

    /// Two-column CSV: `split,score` with `split ∈ {ind, ood}`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("split,score\n");
        for s in &self.ind_scores {
            let _ = writeln!(out, "ind,{s}");
        }
        for s in &self.ood_scores {
            let _ = writeln!(out, "ood,{s}");
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("split,score") {
            return Err(Error::InvalidInput("score CSV must start with `split,score`".into()));
        }
        let (mut ind, mut ood) = (Vec::new(), Vec::new());
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = || Error::InvalidInput(format!("score CSV row {}: {line:?}", i + 2));
            let (split, value) = line.split_once(',').ok_or_else(bad)?;
            let v: f64 = value.parse().map_err(|_| bad())?;
            match split {
                "ind" => ind.push(v),
                "ood" => ood.push(v),
                _ => return Err(bad()),
            }
        }
        Self::new(ind, ood)
    }
}
