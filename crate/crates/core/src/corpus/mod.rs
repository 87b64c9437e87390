//! CLINC150-style dataset ingestion, tokenization and vocabulary.

mod synthetic;
mod tokenize;
mod vocab;

use std::collections::BTreeSet;
use std::path::Path;

use serde_json::Value;

pub use synthetic::SyntheticCorpus;
pub use tokenize::tokenize;
pub use vocab::{Vocabulary, PAD_ID, PAD_TOKEN, UNK_ID, UNK_TOKEN};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_LEN: usize = 28;
pub const DEFAULT_MIN_FREQ: usize = 1;

/// The six split keys of the CLINC150 `data_full.json` layout, in order.
pub const SPLIT_KEYS: [&str; 6] = ["train", "val", "test", "oos_train", "oos_val", "oos_test"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub text: String,
    pub tokens: Vec<String>,
}

impl Utterance {
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        let tokens = tokenize(&text);
        Utterance { text, tokens }
    }
}

/// Intent id in `0..K`, or the out-of-scope marker. OOS is never class `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Intent(usize),
    Oos,
}

impl Label {
    pub fn intent(self) -> Option<usize> {
        match self {
            Label::Intent(k) => Some(k),
            Label::Oos => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub utterance: Utterance,
    pub label: Label,
}

/// All six splits plus the intent-name table (`label_names[k]` names id `k`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetBundle {
    pub train_ind: Vec<LabeledExample>,
    pub val_ind: Vec<LabeledExample>,
    pub test_ind: Vec<LabeledExample>,
    pub train_oos: Vec<LabeledExample>,
    pub val_oos: Vec<LabeledExample>,
    pub test_oos: Vec<LabeledExample>,
    pub label_names: Vec<String>,
}

impl DatasetBundle {
    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    /// Split sizes in `SPLIT_KEYS` order.
    pub fn sizes(&self) -> [usize; 6] {
        [
            self.train_ind.len(),
            self.val_ind.len(),
            self.test_ind.len(),
            self.train_oos.len(),
            self.val_oos.len(),
            self.test_oos.len(),
        ]
    }
}

/// Load a CLINC150 `data_full.json` file.
pub fn load_clinc(path: impl AsRef<Path>) -> Result<DatasetBundle> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_clinc(&text)
}

fn raw_pairs(root: &serde_json::Map<String, Value>, key: &str) -> Result<Vec<(String, String)>> {
    let value = root.get(key).ok_or_else(|| Error::ingestion(key, "missing key"))?;
    let items = value
        .as_array()
        .ok_or_else(|| Error::ingestion(key, "expected a list of [utterance, label] pairs"))?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| match item.as_array().map(Vec::as_slice) {
            Some([Value::String(text), Value::String(label)]) => Ok((text.clone(), label.clone())),
            _ => Err(Error::ingestion(
                key,
                format!("entry {i} is not an [utterance, label] string pair"),
            )),
        })
        .collect()
}

/// Parse the JSON text of a CLINC150-layout dataset.
pub fn parse_clinc(text: &str) -> Result<DatasetBundle> {
    let root: Value = serde_json::from_str(text)?;
    let root = root
        .as_object()
        .ok_or_else(|| Error::ingestion("<root>", "expected a JSON object"))?;

    let mut raw = Vec::with_capacity(SPLIT_KEYS.len());
    for key in SPLIT_KEYS {
        raw.push(raw_pairs(root, key)?);
    }
    for key in ["train", "oos_train"] {
        let idx = SPLIT_KEYS.iter().position(|k| *k == key).unwrap();
        if raw[idx].is_empty() {
            return Err(Error::ingestion(key, "training split is empty"));
        }
    }

    let label_names: Vec<String> = raw[0]
        .iter()
        .map(|(_, l)| l.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let ind = |key: &str, pairs: &[(String, String)]| -> Result<Vec<LabeledExample>> {
        pairs
            .iter()
            .map(|(text, label)| {
                let id = label_names
                    .binary_search(label)
                    .map_err(|_| Error::ingestion(key, format!("label {label:?} does not occur in train")))?;
                Ok(LabeledExample {
                    utterance: Utterance::new(text.as_str()),
                    label: Label::Intent(id),
                })
            })
            .collect()
    };
    let oos = |pairs: &[(String, String)]| -> Vec<LabeledExample> {
        pairs
            .iter()
            .map(|(text, _)| LabeledExample {
                utterance: Utterance::new(text.as_str()),
                label: Label::Oos,
            })
            .collect()
    };

    Ok(DatasetBundle {
        train_ind: ind("train", &raw[0])?,
        val_ind: ind("val", &raw[1])?,
        test_ind: ind("test", &raw[2])?,
        train_oos: oos(&raw[3]),
        val_oos: oos(&raw[4]),
        test_oos: oos(&raw[5]),
        label_names,
    })
}

/// A split encoded into fixed-length id rows, ready for batching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSplit {
    pub max_len: usize,
    /// Row-major `len() × max_len` ids.
    pub ids: Vec<usize>,
    pub lengths: Vec<usize>,
    pub labels: Vec<Label>,
}

impl EncodedSplit {
    pub fn empty(max_len: usize) -> Self {
        EncodedSplit {
            max_len,
            ids: Vec::new(),
            lengths: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn from_examples(examples: &[LabeledExample], vocab: &Vocabulary, max_len: usize) -> Self {
        let mut split = Self::empty(max_len);
        for ex in examples {
            split.push(&ex.utterance.tokens, ex.label, vocab);
        }
        split
    }

    /// Encode bare token sequences (e.g. generated pseudo-OOD) as OOS rows.
    pub fn from_token_lists<S: AsRef<str>>(seqs: &[Vec<S>], vocab: &Vocabulary, max_len: usize) -> Self {
        let mut split = Self::empty(max_len);
        for toks in seqs {
            split.push(toks, Label::Oos, vocab);
        }
        split
    }

    pub fn push<S: AsRef<str>>(&mut self, tokens: &[S], label: Label, vocab: &Vocabulary) {
        let (ids, len) = vocab.encode(tokens, self.max_len);
        self.ids.extend(ids);
        self.lengths.push(len);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.ids[i * self.max_len..(i + 1) * self.max_len]
    }

    /// Intent ids of every row; errors if any row is OOS.
    pub fn intents(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .map(|l| {
                l.intent()
                    .ok_or_else(|| Error::InvalidInput("OOS example where an intent label is required".into()))
            })
            .collect()
    }
}

/// The IND/OOS splits of a bundle encoded with one vocabulary.
#[derive(Debug, Clone)]
pub struct EncodedBundle {
    pub vocab: Vocabulary,
    pub num_classes: usize,
    pub train_ind: EncodedSplit,
    pub val_ind: EncodedSplit,
    pub test_ind: EncodedSplit,
    pub train_oos: EncodedSplit,
    pub val_oos: EncodedSplit,
    pub test_oos: EncodedSplit,
}

impl EncodedBundle {
    /// Build the vocabulary from `train_ind` only and encode every split.
    pub fn new(bundle: &DatasetBundle, min_freq: usize, max_len: usize) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        let vocab = Vocabulary::build(&bundle.train_ind, min_freq);
        let enc = |ex: &[LabeledExample]| EncodedSplit::from_examples(ex, &vocab, max_len);
        Ok(EncodedBundle {
            num_classes: bundle.num_classes(),
            train_ind: enc(&bundle.train_ind),
            val_ind: enc(&bundle.val_ind),
            test_ind: enc(&bundle.test_ind),
            train_oos: enc(&bundle.train_oos),
            val_oos: enc(&bundle.val_oos),
            test_oos: enc(&bundle.test_oos),
            vocab,
        })
    }
}
