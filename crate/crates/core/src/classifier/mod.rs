//! The K-way in-domain intent classifier and its training loop.
//!
//! Two architectures share one embedding front end:
//!
//! * `cnn`: convolutions of several widths over token positions, relu,
//!   max-over-time pooling, dropout and an affine head.
//! * `mean-pool-mlp`: length-masked mean of the embeddings, one relu hidden
//!   layer, dropout and an affine head. Much faster; used for smoke runs.

mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use train::{
    combined_loss, ind_accuracy, train, BatchSchedule, CombinedLoss, EpochRecord, TrainConfig, TrainLog, TrainOutcome,
};

use crate::corpus::{EncodedSplit, PAD_ID};
use crate::error::{Error, Result};
use crate::numerics::layers::{
    max_over_time, max_over_time_backward, mean_over_time, mean_over_time_backward, relu_backward, relu_forward,
    Affine, Conv1d, Conv1dCache, Dropout, Embedding,
};
use crate::numerics::{ParamStore, Real, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "cnn")]
    Cnn,
    #[serde(rename = "mean-pool-mlp")]
    MeanPoolMlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub arch: Arch,
    pub embed_dim: usize,
    pub conv_widths: Vec<usize>,
    pub conv_filters: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            arch: Arch::Cnn,
            embed_dim: 100,
            conv_widths: vec![3, 4, 5],
            conv_filters: 100,
            hidden_dim: 256,
            dropout: 0.5,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        match self.arch {
            Arch::Cnn if self.conv_widths.is_empty() || self.conv_widths.contains(&0) || self.conv_filters == 0 => {
                bad("cnn needs positive conv widths and filters")
            }
            Arch::MeanPoolMlp if self.hidden_dim == 0 => bad("hidden_dim must be positive"),
            _ => Ok(()),
        }
    }

    /// Shortest sequence length the architecture accepts.
    fn min_len(&self) -> usize {
        match self.arch {
            Arch::Cnn => self.conv_widths.iter().copied().max().unwrap_or(1),
            Arch::MeanPoolMlp => 1,
        }
    }
}

#[derive(Debug, Clone)]
enum Body {
    Cnn { convs: Vec<Conv1d>, head: Affine },
    Mlp { hidden: Affine, head: Affine },
}

#[derive(Debug, Clone)]
struct ConvBranch<F> {
    cache: Conv1dCache<F>,
    activated: Tensor<F>,
    argmax: Vec<usize>,
}

#[derive(Debug, Clone)]
enum BodyCache<F> {
    Cnn {
        branches: Vec<ConvBranch<F>>,
        features: Tensor<F>,
    },
    Mlp {
        pooled: Tensor<F>,
        activated: Tensor<F>,
        features: Tensor<F>,
    },
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<F> {
    ids: Vec<usize>,
    lengths: Vec<usize>,
    batch: usize,
    len: usize,
    body: BodyCache<F>,
    dropout_mask: Option<Vec<F>>,
}

/// K-way classifier `P_θ(y | x)` over encoded token sequences.
#[derive(Debug, Clone)]
pub struct Classifier<F> {
    cfg: ClassifierConfig,
    vocab_size: usize,
    num_classes: usize,
    store: ParamStore<F>,
    embed: Embedding,
    body: Body,
}

const PREDICT_CHUNK: usize = 256;

impl<F: Real> Classifier<F> {
    pub fn new(cfg: &ClassifierConfig, vocab_size: usize, num_classes: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "classifier needs K >= 2 classes, got {num_classes}"
            )));
        }
        if vocab_size < 2 {
            return Err(Error::Config("vocabulary must contain PAD and UNK".into()));
        }
        let mut store = ParamStore::new();
        let embed = Embedding::new(&mut store, "embedding", vocab_size, cfg.embed_dim, rng);
        let body = match cfg.arch {
            Arch::Cnn => {
                let convs = cfg
                    .conv_widths
                    .iter()
                    .map(|&w| Conv1d::new(&mut store, &format!("conv{w}"), w, cfg.embed_dim, cfg.conv_filters, rng))
                    .collect::<Vec<_>>();
                let feat = cfg.conv_filters * convs.len();
                let head = Affine::new(&mut store, "head", feat, num_classes, rng);
                Body::Cnn { convs, head }
            }
            Arch::MeanPoolMlp => {
                let hidden = Affine::new(&mut store, "hidden", cfg.embed_dim, cfg.hidden_dim, rng);
                let head = Affine::new(&mut store, "head", cfg.hidden_dim, num_classes, rng);
                Body::Mlp { hidden, head }
            }
        };
        Ok(Classifier {
            cfg: cfg.clone(),
            vocab_size,
            num_classes,
            store,
            embed,
            body,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn store(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    /// Eval-mode forward pass using the model's own parameters.
    pub fn forward(&self, ids: &[usize], lengths: &[usize]) -> Result<Tensor<F>> {
        self.forward_with(&self.store, ids, lengths, None).map(|(l, _)| l)
    }

    /// Logits for `lengths.len()` row-major sequences in `ids`.
    pub fn logits_for(&self, ids: &[usize], lengths: &[usize]) -> Result<Tensor<F>> {
        self.forward(ids, lengths)
    }

    /// Eval-mode logits `[N, K]` for every row of a split. Chunks are scored
    /// in parallel; each chunk is independent so the result is deterministic.
    pub fn predict(&self, split: &EncodedSplit) -> Result<Tensor<F>> {
        let l = split.max_len;
        let chunks: Vec<Tensor<F>> = split
            .ids
            .par_chunks(PREDICT_CHUNK * l.max(1))
            .zip(split.lengths.par_chunks(PREDICT_CHUNK))
            .map(|(ids, lens)| self.forward(ids, lens))
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(split.len() * self.num_classes);
        for c in chunks {
            data.extend_from_slice(c.data());
        }
        Tensor::from_vec(&[split.len(), self.num_classes], data)
    }

    /// Forward pass with explicit parameters. Dropout is active iff a
    /// `dropout_rng` is supplied (train mode).
    pub fn forward_with(
        &self,
        store: &ParamStore<F>,
        ids: &[usize],
        lengths: &[usize],
        dropout_rng: Option<&mut Rng>,
    ) -> Result<(Tensor<F>, ForwardCache<F>)> {
        let batch = lengths.len();
        if batch == 0 {
            return Err(Error::InvalidInput("forward pass over an empty batch".into()));
        }
        if !ids.len().is_multiple_of(batch) {
            return Err(Error::Shape(format!(
                "{} ids do not split into {batch} rows",
                ids.len()
            )));
        }
        let raw_len = ids.len() / batch;
        let len = raw_len.max(self.cfg.min_len());
        let ids: Vec<usize> = if len == raw_len {
            ids.to_vec()
        } else {
            let mut padded = Vec::with_capacity(batch * len);
            for b in 0..batch {
                padded.extend_from_slice(&ids[b * raw_len..(b + 1) * raw_len]);
                padded.resize((b + 1) * len, PAD_ID);
            }
            padded
        };
        let lengths: Vec<usize> = lengths.iter().map(|&l| l.min(len)).collect();

        let embedded = self
            .embed
            .forward(store, &ids)?
            .reshape(&[batch, len, self.cfg.embed_dim])?;
        let dropout = Dropout { rate: self.cfg.dropout };

        let (logits, body, mask) = match &self.body {
            Body::Cnn { convs, head } => {
                let mut branches = Vec::with_capacity(convs.len());
                let mut pooled = Vec::with_capacity(convs.len());
                for conv in convs {
                    let (out, cache) = conv.forward(store, &embedded)?;
                    let activated = relu_forward(&out);
                    let (p, argmax) = max_over_time(&activated)?;
                    pooled.push(p);
                    branches.push(ConvBranch {
                        cache,
                        activated,
                        argmax,
                    });
                }
                let feat_dim = self.cfg.conv_filters * convs.len();
                let mut feat = vec![F::zero(); batch * feat_dim];
                for b in 0..batch {
                    for (i, p) in pooled.iter().enumerate() {
                        let f = self.cfg.conv_filters;
                        feat[b * feat_dim + i * f..b * feat_dim + (i + 1) * f].copy_from_slice(p.row(b));
                    }
                }
                let feat = Tensor::from_vec(&[batch, feat_dim], feat)?;
                let (features, mask) = match dropout_rng {
                    Some(rng) => {
                        let (y, m) = dropout.forward_train(&feat, rng);
                        (y, Some(m))
                    }
                    None => (feat, None),
                };
                let logits = head.forward(store, &features)?;
                (logits, BodyCache::Cnn { branches, features }, mask)
            }
            Body::Mlp { hidden, head } => {
                let pooled = mean_over_time(&embedded, &lengths)?;
                let activated = relu_forward(&hidden.forward(store, &pooled)?);
                let (features, mask) = match dropout_rng {
                    Some(rng) => {
                        let (y, m) = dropout.forward_train(&activated, rng);
                        (y, Some(m))
                    }
                    None => (activated.clone(), None),
                };
                let logits = head.forward(store, &features)?;
                (
                    logits,
                    BodyCache::Mlp {
                        pooled,
                        activated,
                        features,
                    },
                    mask,
                )
            }
        };
        logits.ensure_finite("classifier logits")?;
        Ok((
            logits,
            ForwardCache {
                ids,
                lengths,
                batch,
                len,
                body,
                dropout_mask: mask,
            },
        ))
    }

    /// Accumulate parameter gradients of a loss whose gradient with respect
    /// to the logits is `grad_logits`.
    pub fn backward_with(&self, store: &mut ParamStore<F>, cache: &ForwardCache<F>, grad_logits: &Tensor<F>) {
        let d = self.cfg.embed_dim;
        let grad_embedded = match (&self.body, &cache.body) {
            (Body::Cnn { convs, head }, BodyCache::Cnn { branches, features }) => {
                let mut g = head.backward(store, features, grad_logits);
                if let Some(mask) = &cache.dropout_mask {
                    g = Dropout::backward(mask, &g);
                }
                let f = self.cfg.conv_filters;
                let feat_dim = f * convs.len();
                let mut grad_emb = Tensor::zeros(&[cache.batch, cache.len, d]);
                for (i, (conv, br)) in convs.iter().zip(branches).enumerate() {
                    let mut gp = vec![F::zero(); cache.batch * f];
                    for b in 0..cache.batch {
                        gp[b * f..(b + 1) * f]
                            .copy_from_slice(&g.data()[b * feat_dim + i * f..b * feat_dim + (i + 1) * f]);
                    }
                    let gp = Tensor::from_vec(&[cache.batch, f], gp).expect("shape");
                    let out_len = br.activated.shape()[1];
                    let ga = max_over_time_backward(&br.argmax, &gp, out_len);
                    let go = relu_backward(&br.activated, &ga);
                    let ge = conv.backward(store, &br.cache, &go);
                    for (acc, v) in grad_emb.data_mut().iter_mut().zip(ge.data()) {
                        *acc += *v;
                    }
                }
                grad_emb
            }
            (
                Body::Mlp { hidden, head },
                BodyCache::Mlp {
                    pooled,
                    activated,
                    features,
                },
            ) => {
                let mut g = head.backward(store, features, grad_logits);
                if let Some(mask) = &cache.dropout_mask {
                    g = Dropout::backward(mask, &g);
                }
                let g = relu_backward(activated, &g);
                let g = hidden.backward(store, pooled, &g);
                mean_over_time_backward(&g, &cache.lengths, cache.len)
            }
            _ => unreachable!("cache built by the same architecture"),
        };
        self.embed.backward(store, &cache.ids, &grad_embedded);
    }

    /// Train-mode convenience wrappers over the model's own store.
    pub fn forward_train(
        &self,
        ids: &[usize],
        lengths: &[usize],
        rng: &mut Rng,
    ) -> Result<(Tensor<F>, ForwardCache<F>)> {
        self.forward_with(&self.store, ids, lengths, Some(rng))
    }

    pub fn backward(&mut self, cache: &ForwardCache<F>, grad_logits: &Tensor<F>) {
        let mut store = std::mem::take(&mut self.store);
        self.backward_with(&mut store, cache, grad_logits);
        self.store = store;
    }

    /// Same architecture and parameters at another precision.
    pub fn cast<G: Real>(&self) -> Classifier<G> {
        Classifier {
            cfg: self.cfg.clone(),
            vocab_size: self.vocab_size,
            num_classes: self.num_classes,
            store: self.store.cast(),
            embed: self.embed.clone(),
            body: self.body.clone(),
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
