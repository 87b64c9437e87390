//! Deterministic synthetic corpus in the CLINC150 JSON layout.
//!
//! Used for fixtures, smoke runs and benchmarks. Each intent owns a small
//! keyword set; utterances mix keywords with shared filler words. OOS
//! utterances draw from a separate word pool and sometimes borrow a single
//! intent keyword, so detection is not perfectly separable.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{parse_clinc, DatasetBundle};
use crate::error::{Error, Result};
use crate::numerics::Rng;

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ra", "tu", "ne", "so", "vi", "de", "pa", "gu", "fe", "zo", "ri", "ba", "ty",
];

const FILLERS: [&str; 24] = [
    "please", "can", "you", "i", "want", "to", "the", "my", "a", "tell", "me", "about", "need", "help", "with", "show",
    "check", "what", "is", "how", "do", "for", "now", "today",
];

const KEYWORDS_PER_INTENT: usize = 6;
const OOS_POOL: usize = 60;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticCorpus {
    pub num_intents: usize,
    pub train_per_intent: usize,
    pub val_per_intent: usize,
    pub test_per_intent: usize,
    pub oos_train: usize,
    pub oos_val: usize,
    pub oos_test: usize,
    pub seed: u64,
}

impl Default for SyntheticCorpus {
    fn default() -> Self {
        SyntheticCorpus {
            num_intents: 10,
            train_per_intent: 40,
            val_per_intent: 10,
            test_per_intent: 15,
            oos_train: 40,
            oos_val: 40,
            oos_test: 100,
            seed: 7,
        }
    }
}

fn pseudo_word(index: usize) -> String {
    // Three syllables give 4096 distinct words.
    let n = SYLLABLES.len();
    format!(
        "{}{}{}",
        SYLLABLES[index % n],
        SYLLABLES[(index / n) % n],
        SYLLABLES[(index / (n * n)) % n]
    )
}

impl SyntheticCorpus {
    fn keyword(&self, intent: usize, slot: usize) -> String {
        pseudo_word(intent * KEYWORDS_PER_INTENT + slot)
    }

    fn oos_word(&self, slot: usize) -> String {
        pseudo_word(self.num_intents * KEYWORDS_PER_INTENT + slot)
    }

    fn fillers(rng: &mut Rng, words: &mut Vec<String>) {
        for _ in 0..2 + rng.below(3) {
            words.push(FILLERS[rng.below(FILLERS.len())].to_string());
        }
    }

    fn ind_utterance(&self, intent: usize, rng: &mut Rng) -> String {
        let mut words = Vec::new();
        Self::fillers(rng, &mut words);
        for _ in 0..2 {
            words.push(self.keyword(intent, rng.below(KEYWORDS_PER_INTENT)));
        }
        if rng.uniform() < 0.25 {
            let other = rng.below(self.num_intents);
            words.push(self.keyword(other, rng.below(KEYWORDS_PER_INTENT)));
        }
        if rng.uniform() < 0.1 {
            words.push(self.oos_word(rng.below(OOS_POOL)));
        }
        rng.shuffle(&mut words);
        words.join(" ")
    }

    fn oos_utterance(&self, rng: &mut Rng) -> String {
        let mut words = Vec::new();
        Self::fillers(rng, &mut words);
        for _ in 0..2 {
            words.push(self.oos_word(rng.below(OOS_POOL)));
        }
        if rng.uniform() < 0.3 {
            let intent = rng.below(self.num_intents);
            words.push(self.keyword(intent, rng.below(KEYWORDS_PER_INTENT)));
        }
        rng.shuffle(&mut words);
        words.join(" ")
    }

    pub fn intent_name(&self, intent: usize) -> String {
        format!("intent_{intent:03}")
    }

    /// The corpus as a CLINC150-layout JSON value.
    pub fn to_json(&self) -> Value {
        let mut rng = Rng::new(self.seed);
        let mut ind = |per: usize| -> Vec<Value> {
            let mut out = Vec::new();
            for intent in 0..self.num_intents {
                for _ in 0..per {
                    out.push(json!([self.ind_utterance(intent, &mut rng), self.intent_name(intent)]));
                }
            }
            out
        };
        let train = ind(self.train_per_intent);
        let val = ind(self.val_per_intent);
        let test = ind(self.test_per_intent);
        let mut oos =
            |n: usize| -> Vec<Value> { (0..n).map(|_| json!([self.oos_utterance(&mut rng), "oos"])).collect() };
        let oos_train = oos(self.oos_train);
        let oos_val = oos(self.oos_val);
        let oos_test = oos(self.oos_test);
        json!({
            "train": train, "val": val, "test": test,
            "oos_train": oos_train, "oos_val": oos_val, "oos_test": oos_test,
        })
    }

    pub fn bundle(&self) -> Result<DatasetBundle> {
        parse_clinc(&self.to_json().to_string())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(&self.to_json())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
