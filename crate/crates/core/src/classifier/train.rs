use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{argmax, Classifier};
use crate::corpus::EncodedSplit;
use crate::error::{Error, Result};
use crate::numerics::loss::{cross_entropy_with_grad, neg_entropy_with_grad};
use crate::numerics::{Adam, AdamConfig, ParamStore, Real, Rng, Tensor};

// Stream labels for the independent PRNG streams of one run.
const STREAM_IND_ORDER: u64 = 1;
const STREAM_IND_DROPOUT: u64 = 2;
const STREAM_OOD_DROPOUT: u64 = 3;
const STREAM_OOD_ORDER: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// β: weight of the OOD entropy term. The plain objective is β = 1.
    pub entropy_weight: f64,
    pub seed: u64,
    /// Epochs without dev-accuracy improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 64,
            epochs: 30,
            entropy_weight: 1.0,
            seed: 0,
            patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.entropy_weight >= 0.0 && self.entropy_weight.is_finite()) {
            return Err(Error::Config("entropy_weight must be finite and >= 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }
}

/// Combined objective value and its gradients with respect to both logit
/// batches.
#[derive(Debug, Clone)]
pub struct CombinedLoss<F> {
    pub value: F,
    pub cross_entropy: F,
    /// Mean `-H` over the OOD batch (absent when the batch is empty).
    pub neg_entropy: Option<F>,
    pub grad_ind: Tensor<F>,
    pub grad_ood: Option<Tensor<F>>,
}

/// `mean CE(ind) + β · mean(-H(softmax(ood)))`. With no OOD rows the value
/// is exactly the cross-entropy.
pub fn combined_loss<F: Real>(
    logits_ind: &Tensor<F>,
    labels: &[usize],
    logits_ood: Option<&Tensor<F>>,
    beta: F,
) -> Result<CombinedLoss<F>> {
    let (ce, grad_ind) = cross_entropy_with_grad(logits_ind, labels)?;
    match logits_ood.filter(|t| t.rows() > 0) {
        None => Ok(CombinedLoss {
            value: ce,
            cross_entropy: ce,
            neg_entropy: None,
            grad_ind,
            grad_ood: None,
        }),
        Some(ood) => {
            if ood.cols() != logits_ind.cols() {
                return Err(Error::Shape("IND and OOD logits have different class counts".into()));
            }
            let (ne, mut g) = neg_entropy_with_grad(ood)?;
            g.data_mut().iter_mut().for_each(|v| *v *= beta);
            Ok(CombinedLoss {
                value: ce + beta * ne,
                cross_entropy: ce,
                neg_entropy: Some(ne),
                grad_ind,
                grad_ood: Some(g),
            })
        }
    }
}

/// Fraction of rows whose argmax logit equals the intent label.
pub fn ind_accuracy<F: Real>(model: &Classifier<F>, split: &EncodedSplit) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::InvalidInput(
            "accuracy of an empty example list is undefined".into(),
        ));
    }
    let labels = split.intents()?;
    let logits = model.predict(split)?;
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(logits.row(i)) == y)
        .count();
    Ok(correct as f64 / split.len() as f64)
}

/// One row of the training log (the Figure-style accuracy curves).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Train-mode accuracy accumulated over the epoch's minibatches.
    pub train_acc: f64,
    pub dev_acc: Option<f64>,
    /// Mean objective over the epoch's steps.
    pub loss: f64,
    /// Mean predictive entropy on the OOD minibatches.
    pub ood_entropy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    /// CSV with header `epoch,train_acc,dev_acc,loss,ood_entropy`; absent
    /// values are empty fields.
    pub fn to_csv(&self) -> Result<String> {
        if self.records.is_empty() {
            return Err(Error::InvalidInput("training log is empty".into()));
        }
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("epoch,train_acc,dev_acc,loss,ood_entropy\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.epoch,
                r.train_acc,
                opt(r.dev_acc),
                r.loss,
                opt(r.ood_entropy)
            );
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub log: TrainLog,
    /// Epoch (1-based) whose parameters were restored into the model.
    pub best_epoch: usize,
    pub best_dev_acc: Option<f64>,
    pub stopped_early: bool,
    /// SHA-256 over every IND minibatch index sequence, in order.
    pub ind_batch_digest: String,
}

/// Shuffled IND minibatch order, one permutation per epoch.
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    rng: Rng,
    n: usize,
    batch_size: usize,
}

impl BatchSchedule {
    pub fn new(seed: u64, n: usize, batch_size: usize) -> Self {
        BatchSchedule {
            rng: Rng::stream(seed, STREAM_IND_ORDER),
            n,
            batch_size,
        }
    }

    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        self.rng
            .permutation(self.n)
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Cycles through the OOD source in reshuffled passes.
struct OodCycler {
    rng: Rng,
    order: Vec<usize>,
    pos: usize,
}

impl OodCycler {
    fn new(seed: u64, n: usize) -> Self {
        let mut rng = Rng::stream(seed, STREAM_OOD_ORDER);
        let order = rng.permutation(n);
        OodCycler { rng, order, pos: 0 }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order = self.rng.permutation(self.order.len());
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn gather(split: &EncodedSplit, idx: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut ids = Vec::with_capacity(idx.len() * split.max_len);
    let mut lens = Vec::with_capacity(idx.len());
    for &i in idx {
        ids.extend_from_slice(split.row(i));
        lens.push(split.lengths[i]);
    }
    (ids, lens)
}

/// Train `model` on `train_ind` (+ `ood_source` through the entropy term).
///
/// Each step draws one IND minibatch and, if `ood_source` is nonempty, an
/// OOD minibatch of the same size. IND order, IND dropout, OOD order and OOD
/// dropout use separate PRNG streams, so the IND side of the run is the same
/// whether or not OOD data is present. On return the model holds the
/// parameters of the best dev-accuracy epoch (the last epoch when `dev` is
/// empty).
pub fn train<F: Real>(
    model: &mut Classifier<F>,
    train_ind: &EncodedSplit,
    dev: &EncodedSplit,
    ood_source: &EncodedSplit,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_ind.is_empty() {
        return Err(Error::InvalidInput("training split is empty".into()));
    }
    let labels = train_ind.intents()?;
    if let Some(&bad) = labels.iter().find(|&&y| y >= model.num_classes()) {
        return Err(Error::InvalidInput(format!("label {bad} out of range")));
    }
    let beta = F::lit(cfg.entropy_weight);
    let mut adam = Adam::new(model.store(), AdamConfig::with_lr(cfg.lr));
    let mut schedule = BatchSchedule::new(cfg.seed, train_ind.len(), cfg.batch_size);
    let mut ind_dropout = Rng::stream(cfg.seed, STREAM_IND_DROPOUT);
    let mut ood_dropout = Rng::stream(cfg.seed, STREAM_OOD_DROPOUT);
    let mut ood = (!ood_source.is_empty()).then(|| OodCycler::new(cfg.seed, ood_source.len()));
    let mut digest = Sha256::new();

    let mut log = TrainLog::default();
    let mut best: Option<(f64, usize, ParamStore<F>)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let mut correct = 0usize;
        let mut loss_sum = 0.0f64;
        let mut ent_sum = 0.0f64;
        let mut steps = 0usize;
        for (step, batch) in schedule.next_epoch().into_iter().enumerate() {
            for &i in &batch {
                digest.update((i as u64).to_le_bytes());
            }
            let (ids, lens) = gather(train_ind, &batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (logits, cache) = model.forward_train(&ids, &lens, &mut ind_dropout)?;
            correct += (0..logits.rows()).filter(|&r| argmax(logits.row(r)) == y[r]).count();

            let ood_pass = match ood.as_mut() {
                Some(cycler) => {
                    let oidx = cycler.next_batch(batch.len());
                    let (oids, olens) = gather(ood_source, &oidx);
                    Some(model.forward_train(&oids, &olens, &mut ood_dropout)?)
                }
                None => None,
            };
            let loss = combined_loss(&logits, &y, ood_pass.as_ref().map(|(l, _)| l), beta)?;
            if !loss.value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, step {step}: ce={} neg_entropy={:?}",
                    loss.cross_entropy, loss.neg_entropy
                )));
            }
            loss_sum += loss.value.as_f64();
            if let Some(ne) = loss.neg_entropy {
                ent_sum -= ne.as_f64();
            }
            steps += 1;

            model.store_mut().zero_grad();
            model.backward(&cache, &loss.grad_ind);
            if let (Some((_, ocache)), Some(g)) = (&ood_pass, &loss.grad_ood) {
                if cfg.entropy_weight > 0.0 {
                    model.backward(ocache, g);
                }
            }
            adam.step(model.store_mut());
        }

        let dev_acc = if dev.is_empty() {
            None
        } else {
            Some(ind_accuracy(model, dev)?)
        };
        let record = EpochRecord {
            epoch,
            train_acc: correct as f64 / train_ind.len() as f64,
            dev_acc,
            loss: loss_sum / steps as f64,
            ood_entropy: ood.is_some().then(|| ent_sum / steps as f64),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train_acc {:.4} dev_acc {:?} ood_entropy {:?}",
            record.loss,
            record.train_acc,
            record.dev_acc,
            record.ood_entropy
        );
        log.records.push(record);

        let score = dev_acc.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => dev_acc.is_none() || score > *b,
        };
        if improved {
            best = Some((score, epoch, model.store().clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_score, best_epoch, params) = best.expect("at least one epoch ran");
    model.store_mut().load_values(&params)?;
    model.store_mut().zero_grad();
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_dev_acc: best_score.is_finite().then_some(best_score),
        stopped_early,
        ind_batch_digest: digest.finalize().iter().map(|b| format!("{b:02x}")).collect(),
    })
}
