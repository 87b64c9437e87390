use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Autoencoder, AuxClassifier};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::numerics::loss::max_softmax;

/// Why a candidate was dropped. Rules are checked in declaration order and a
/// candidate is counted under the first rule it trips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionRule {
    ExactMatch,
    Jaccard,
    Confidence,
}

/// Per-rule rejection counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionReport {
    pub candidates: usize,
    pub kept: usize,
    pub exact_match: usize,
    pub jaccard: usize,
    pub confidence: usize,
    pub jaccard_threshold: f64,
    pub confidence_threshold: f64,
}

impl RejectionReport {
    pub fn rejected(&self) -> usize {
        self.exact_match + self.jaccard + self.confidence
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<Vec<String>>,
    /// Verdict of every candidate, in input order.
    pub verdicts: Vec<Option<RejectionRule>>,
    pub report: RejectionReport,
}

/// Max-softmax confidence of some classifier on token sequences.
pub trait ConfidenceScorer {
    fn confidence(&self, candidates: &[Vec<String>]) -> Result<Vec<f64>>;
}

impl<T> ConfidenceScorer for T
where
    T: Fn(&[Vec<String>]) -> Vec<f64>,
{
    fn confidence(&self, candidates: &[Vec<String>]) -> Result<Vec<f64>> {
        Ok(self(candidates))
    }
}

/// Confidence of the auxiliary classifier on the encoder's latent codes.
pub struct AuxScorer<'a> {
    pub autoencoder: &'a Autoencoder<f32>,
    pub aux: &'a AuxClassifier<f32>,
    pub vocab: &'a Vocabulary,
}

impl ConfidenceScorer for AuxScorer<'_> {
    fn confidence(&self, candidates: &[Vec<String>]) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Ok(Vec::new());
        }
        let max_len = self.autoencoder.max_len();
        let mut ids = Vec::with_capacity(candidates.len() * max_len);
        let mut lengths = Vec::with_capacity(candidates.len());
        for c in candidates {
            let (row, len) = self.vocab.encode(c, max_len);
            ids.extend(row);
            lengths.push(len);
        }
        let (z, _) = self.autoencoder.encode_with(self.autoencoder.store(), &ids, &lengths)?;
        let logits = self.aux.forward(&z)?;
        Ok((0..logits.rows()).map(|i| max_softmax(logits.row(i))).collect())
    }
}

/// `|A ∩ B| / |A ∪ B|` of two token sets; two empty sets have similarity 1.
pub fn jaccard<S: AsRef<str>>(a: &[S], b: &[S]) -> f64 {
    let a: HashSet<&str> = a.iter().map(AsRef::as_ref).collect();
    let b: HashSet<&str> = b.iter().map(AsRef::as_ref).collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Token-set index over the IND training utterances.
struct OverlapIndex {
    exact: HashSet<Vec<String>>,
    intern: HashMap<String, u32>,
    set_sizes: Vec<usize>,
    postings: Vec<Vec<u32>>,
}

impl OverlapIndex {
    fn new(ind_train: &[Vec<String>]) -> Self {
        let exact = ind_train.iter().cloned().collect();
        let mut intern = HashMap::new();
        let mut postings: Vec<Vec<u32>> = Vec::new();
        let mut sets: HashSet<Vec<u32>> = HashSet::new();
        let mut set_sizes = Vec::new();
        for seq in ind_train {
            let mut set: Vec<u32> = seq
                .iter()
                .map(|t| {
                    let next = intern.len() as u32;
                    *intern.entry(t.clone()).or_insert(next)
                })
                .collect();
            set.sort_unstable();
            set.dedup();
            if !sets.insert(set.clone()) {
                continue;
            }
            let idx = set_sizes.len() as u32;
            set_sizes.push(set.len());
            for &t in &set {
                if postings.len() <= t as usize {
                    postings.resize_with(t as usize + 1, Vec::new);
                }
                postings[t as usize].push(idx);
            }
        }
        OverlapIndex {
            exact,
            intern,
            set_sizes,
            postings,
        }
    }

    /// Largest Jaccard similarity between `seq` and any indexed set.
    fn max_jaccard(&self, seq: &[String]) -> f64 {
        let distinct: HashSet<&str> = seq.iter().map(String::as_str).collect();
        if distinct.is_empty() {
            return if self.set_sizes.contains(&0) { 1.0 } else { 0.0 };
        }
        let mut overlap: HashMap<u32, usize> = HashMap::new();
        for t in &distinct {
            if let Some(&id) = self.intern.get(*t) {
                for &s in &self.postings[id as usize] {
                    *overlap.entry(s).or_default() += 1;
                }
            }
        }
        overlap
            .into_iter()
            .map(|(s, inter)| inter as f64 / (distinct.len() + self.set_sizes[s as usize] - inter) as f64)
            .fold(0.0, f64::max)
    }
}

/// Drop candidates that duplicate or nearly duplicate IND training
/// utterances, or on which the classifier is confident.
///
/// A candidate is rejected on an exact token-sequence match, on token-set
/// Jaccard similarity `>= jaccard_threshold` with any training utterance, or
/// on max-softmax confidence `>= confidence_threshold`.
pub fn post_filter(
    candidates: &[Vec<String>],
    ind_train: &[Vec<String>],
    scorer: &dyn ConfidenceScorer,
    jaccard_threshold: f64,
    confidence_threshold: f64,
) -> Result<FilterOutcome> {
    let index = OverlapIndex::new(ind_train);
    let mut verdicts: Vec<Option<RejectionRule>> = candidates
        .par_iter()
        .map(|c| {
            if index.exact.contains(c) {
                Some(RejectionRule::ExactMatch)
            } else if index.max_jaccard(c) >= jaccard_threshold {
                Some(RejectionRule::Jaccard)
            } else {
                None
            }
        })
        .collect();
    let open: Vec<usize> = (0..candidates.len()).filter(|&i| verdicts[i].is_none()).collect();
    let pending: Vec<Vec<String>> = open.iter().map(|&i| candidates[i].clone()).collect();
    let confidence = scorer.confidence(&pending)?;
    if confidence.len() != pending.len() {
        return Err(Error::Shape(format!(
            "scorer returned {} confidences for {} candidates",
            confidence.len(),
            pending.len()
        )));
    }
    for (&i, &p) in open.iter().zip(&confidence) {
        if p >= confidence_threshold {
            verdicts[i] = Some(RejectionRule::Confidence);
        }
    }
    let count = |rule| verdicts.iter().filter(|v| **v == Some(rule)).count();
    let kept: Vec<Vec<String>> = candidates
        .iter()
        .zip(&verdicts)
        .filter(|(_, v)| v.is_none())
        .map(|(c, _)| c.clone())
        .collect();
    let report = RejectionReport {
        candidates: candidates.len(),
        kept: kept.len(),
        exact_match: count(RejectionRule::ExactMatch),
        jaccard: count(RejectionRule::Jaccard),
        confidence: count(RejectionRule::Confidence),
        jaccard_threshold,
        confidence_threshold,
    };
    Ok(FilterOutcome { kept, verdicts, report })
}
