use serde::{Deserialize, Serialize};

use super::{DecoderKind, PogConfig};
use crate::classifier::argmax;
use crate::corpus::{EncodedSplit, PAD_ID};
use crate::error::{Error, Result};
use crate::numerics::layers::{
    mean_over_time, mean_over_time_backward, tanh_backward, tanh_forward, Affine, Embedding, GruCache, GruCell,
};
use crate::numerics::loss::cross_entropy_with_grad;
use crate::numerics::{Adam, AdamConfig, ParamId, ParamStore, Real, Rng, Tensor};

const STREAM_AE_ORDER: u64 = 11;

#[derive(Debug, Clone)]
enum Decoder {
    /// `h_t = tanh(z·W + b + P[t])`, logits `h_t·U + c`; positions independent.
    Positional {
        latent: Affine,
        positions: ParamId,
        out: Affine,
        hidden: usize,
    },
    /// `h_0 = tanh(z·W + b)`, `h_{t+1} = GRU(z, h_t)`, logits `h_{t+1}·U + c`.
    Gru {
        init: Affine,
        cell: GruCell,
        out: Affine,
        hidden: usize,
    },
}

/// Sequence autoencoder: embedding → masked mean → affine → tanh latent,
/// decoded into per-position vocabulary logits.
#[derive(Debug, Clone)]
pub struct Autoencoder<F> {
    store: ParamStore<F>,
    embed: Embedding,
    encoder: Affine,
    decoder: Decoder,
    max_len: usize,
    latent_dim: usize,
    vocab_size: usize,
}

#[derive(Debug, Clone)]
pub struct EncodeCache<F> {
    ids: Vec<usize>,
    lengths: Vec<usize>,
    pooled: Tensor<F>,
    latent: Tensor<F>,
}

#[derive(Debug, Clone)]
enum DecodeState<F> {
    Positional { hidden: Tensor<F> },
    Gru { h0: Tensor<F>, steps: Vec<GruCache<F>> },
}

/// Decoder activations for the selected `(row, position)` pairs.
#[derive(Debug, Clone)]
pub struct DecodeCache<F> {
    latent: Tensor<F>,
    selected: Vec<(usize, usize)>,
    selected_hidden: Tensor<F>,
    state: DecodeState<F>,
}

/// Reconstruction objective of one batch.
#[derive(Debug, Clone)]
pub struct Reconstruction<F> {
    pub loss: F,
    pub token_correct: usize,
    pub token_total: usize,
    pub grad_logits: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderLog {
    pub epoch_loss: Vec<f64>,
    pub final_loss: f64,
    /// Token-level reconstruction accuracy (non-PAD positions) on the
    /// training split after the last epoch.
    pub final_token_accuracy: f64,
}

/// Target positions of a row: every real token plus the first PAD, which
/// acts as the end marker.
fn target_positions(lengths: &[usize], max_len: usize) -> Vec<(usize, usize)> {
    let mut sel = Vec::new();
    for (b, &len) in lengths.iter().enumerate() {
        for t in 0..(len + 1).min(max_len) {
            sel.push((b, t));
        }
    }
    sel
}

impl<F: Real> Autoencoder<F> {
    pub fn new(cfg: &PogConfig, vocab_size: usize, max_len: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if max_len == 0 || vocab_size < 2 {
            return Err(Error::Config("autoencoder needs max_len >= 1 and a vocabulary".into()));
        }
        let mut store = ParamStore::new();
        let embed = Embedding::new(&mut store, "ae.embedding", vocab_size, cfg.embed_dim, rng);
        let encoder = Affine::new(&mut store, "ae.encoder", cfg.embed_dim, cfg.latent_dim, rng);
        let h = cfg.hidden_dim;
        let decoder = match cfg.decoder {
            DecoderKind::Positional => Decoder::Positional {
                latent: Affine::new(&mut store, "ae.dec_latent", cfg.latent_dim, h, rng),
                positions: store.add_uniform("ae.dec_positions", &[max_len, h], 0.1, rng),
                out: Affine::new(&mut store, "ae.dec_out", h, vocab_size, rng),
                hidden: h,
            },
            DecoderKind::Gru => Decoder::Gru {
                init: Affine::new(&mut store, "ae.dec_init", cfg.latent_dim, h, rng),
                cell: GruCell::new(&mut store, "ae.dec_gru", cfg.latent_dim, h, rng),
                out: Affine::new(&mut store, "ae.dec_out", h, vocab_size, rng),
                hidden: h,
            },
        };
        Ok(Autoencoder {
            store,
            embed,
            encoder,
            decoder,
            max_len,
            latent_dim: cfg.latent_dim,
            vocab_size,
        })
    }

    pub fn store(&self) -> &ParamStore<F> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn encode_with(
        &self,
        store: &ParamStore<F>,
        ids: &[usize],
        lengths: &[usize],
    ) -> Result<(Tensor<F>, EncodeCache<F>)> {
        let batch = lengths.len();
        if batch == 0 || ids.len() != batch * self.max_len {
            return Err(Error::Shape(format!(
                "encoder expects {} ids per row, got {} ids for {batch} rows",
                self.max_len,
                ids.len()
            )));
        }
        let emb = self
            .embed
            .forward(store, ids)?
            .reshape(&[batch, self.max_len, self.embed.dim])?;
        let pooled = mean_over_time(&emb, lengths)?;
        let latent = tanh_forward(&self.encoder.forward(store, &pooled)?);
        Ok((
            latent.clone(),
            EncodeCache {
                ids: ids.to_vec(),
                lengths: lengths.to_vec(),
                pooled,
                latent,
            },
        ))
    }

    pub fn encode_backward_with(&self, store: &mut ParamStore<F>, cache: &EncodeCache<F>, grad_latent: &Tensor<F>) {
        let g = tanh_backward(&cache.latent, grad_latent);
        let g = self.encoder.backward(store, &cache.pooled, &g);
        let g = mean_over_time_backward(&g, &cache.lengths, self.max_len);
        let g = g
            .reshape(&[cache.ids.len(), self.embed.dim])
            .expect("flat embedding grad");
        self.embed.backward(store, &cache.ids, &g);
    }

    /// Latent codes of every row of a split (eval mode, frozen parameters).
    pub fn encode_split(&self, split: &EncodedSplit) -> Result<Tensor<F>> {
        if split.is_empty() {
            return Ok(Tensor::zeros(&[0, self.latent_dim]));
        }
        self.encode_with(&self.store, &split.ids, &split.lengths)
            .map(|(z, _)| z)
    }

    /// Vocabulary logits `[selected.len(), V]` for the requested
    /// `(row, position)` pairs.
    pub fn decode_with(
        &self,
        store: &ParamStore<F>,
        latent: &Tensor<F>,
        selected: &[(usize, usize)],
    ) -> Result<(Tensor<F>, DecodeCache<F>)> {
        let batch = latent.rows();
        if latent.cols() != self.latent_dim {
            return Err(Error::Shape(format!("latent must have {} columns", self.latent_dim)));
        }
        if selected.iter().any(|&(b, t)| b >= batch || t >= self.max_len) {
            return Err(Error::Shape("decode position out of range".into()));
        }
        let (selected_hidden, state, out) = match &self.decoder {
            Decoder::Positional {
                latent: lat,
                positions,
                out,
                hidden,
            } => {
                let pre = lat.forward(store, latent)?;
                let pos = store.value(*positions).data();
                let mut h = vec![F::zero(); selected.len() * hidden];
                for (row, &(b, t)) in h.chunks_mut(*hidden).zip(selected) {
                    for j in 0..*hidden {
                        row[j] = (pre.data()[b * hidden + j] + pos[t * hidden + j]).tanh();
                    }
                }
                let h = Tensor::from_vec(&[selected.len(), *hidden], h)?;
                (h.clone(), DecodeState::Positional { hidden: h }, out)
            }
            Decoder::Gru {
                init,
                cell,
                out,
                hidden,
            } => {
                let h0 = tanh_forward(&init.forward(store, latent)?);
                let mut steps = Vec::with_capacity(self.max_len);
                let mut outputs = Vec::with_capacity(self.max_len);
                let mut h = h0.clone();
                let last = selected.iter().map(|&(_, t)| t + 1).max().unwrap_or(0);
                for _ in 0..last {
                    let (next, cache) = cell.forward(store, latent, &h)?;
                    steps.push(cache);
                    outputs.push(next.clone());
                    h = next;
                }
                let mut sel = vec![F::zero(); selected.len() * hidden];
                for (row, &(b, t)) in sel.chunks_mut(*hidden).zip(selected) {
                    row.copy_from_slice(outputs[t].row(b));
                }
                let sel = Tensor::from_vec(&[selected.len(), *hidden], sel)?;
                (sel, DecodeState::Gru { h0, steps }, out)
            }
        };
        let logits = out.forward(store, &selected_hidden)?;
        Ok((
            logits,
            DecodeCache {
                latent: latent.clone(),
                selected: selected.to_vec(),
                selected_hidden,
                state,
            },
        ))
    }

    /// Returns the gradient with respect to the latent codes.
    pub fn decode_backward_with(
        &self,
        store: &mut ParamStore<F>,
        cache: &DecodeCache<F>,
        grad_logits: &Tensor<F>,
    ) -> Tensor<F> {
        let batch = cache.latent.rows();
        match (&self.decoder, &cache.state) {
            (
                Decoder::Positional {
                    latent: lat,
                    positions,
                    out,
                    hidden,
                },
                DecodeState::Positional { hidden: h },
            ) => {
                let gh = out.backward(store, &cache.selected_hidden, grad_logits);
                let ga = tanh_backward(h, &gh);
                let mut gpre = vec![F::zero(); batch * hidden];
                {
                    let gpos = store.grad_mut(*positions).data_mut();
                    for (row, &(b, t)) in ga.data().chunks(*hidden).zip(&cache.selected) {
                        for j in 0..*hidden {
                            gpos[t * hidden + j] += row[j];
                            gpre[b * hidden + j] += row[j];
                        }
                    }
                }
                let gpre = Tensor::from_vec(&[batch, *hidden], gpre).expect("shape");
                lat.backward(store, &cache.latent, &gpre)
            }
            (
                Decoder::Gru {
                    init,
                    cell,
                    out,
                    hidden,
                },
                DecodeState::Gru { h0, steps },
            ) => {
                let gsel = out.backward(store, &cache.selected_hidden, grad_logits);
                let mut per_step = vec![vec![F::zero(); batch * hidden]; steps.len()];
                for (row, &(b, t)) in gsel.data().chunks(*hidden).zip(&cache.selected) {
                    for j in 0..*hidden {
                        per_step[t][b * hidden + j] += row[j];
                    }
                }
                let mut gz = Tensor::zeros(&[batch, self.latent_dim]);
                let mut carry = vec![F::zero(); batch * hidden];
                for t in (0..steps.len()).rev() {
                    let g: Vec<F> = per_step[t].iter().zip(&carry).map(|(a, b)| *a + *b).collect();
                    let g = Tensor::from_vec(&[batch, *hidden], g).expect("shape");
                    let (gx, gh) = cell.backward(store, &steps[t], &g);
                    for (acc, v) in gz.data_mut().iter_mut().zip(gx.data()) {
                        *acc += *v;
                    }
                    carry = gh.into_data();
                }
                let gcarry = Tensor::from_vec(&[batch, *hidden], carry).expect("shape");
                let g0 = tanh_backward(h0, &gcarry);
                let gi = init.backward(store, &cache.latent, &g0);
                for (acc, v) in gz.data_mut().iter_mut().zip(gi.data()) {
                    *acc += *v;
                }
                gz
            }
            _ => unreachable!("cache built by the same decoder"),
        }
    }

    /// Mean per-position cross-entropy of reconstructing `ids` (real tokens
    /// plus the first PAD as end marker) from `latent`.
    pub fn reconstruction_with(
        &self,
        store: &ParamStore<F>,
        latent: &Tensor<F>,
        ids: &[usize],
        lengths: &[usize],
    ) -> Result<(Reconstruction<F>, DecodeCache<F>)> {
        let selected = target_positions(lengths, self.max_len);
        let (logits, cache) = self.decode_with(store, latent, &selected)?;
        let targets: Vec<usize> = selected.iter().map(|&(b, t)| ids[b * self.max_len + t]).collect();
        let (loss, grad_logits) = cross_entropy_with_grad(&logits, &targets)?;
        let mut token_correct = 0;
        let mut token_total = 0;
        for (i, &(b, t)) in selected.iter().enumerate() {
            if t < lengths[b] {
                token_total += 1;
                if argmax(logits.row(i)) == targets[i] {
                    token_correct += 1;
                }
            }
        }
        Ok((
            Reconstruction {
                loss,
                token_correct,
                token_total,
                grad_logits,
            },
            cache,
        ))
    }

    /// Greedy per-position decode of latent codes into id sequences; each
    /// sequence ends at its first PAD.
    pub fn decode_argmax(&self, latent: &Tensor<F>) -> Result<Vec<Vec<usize>>> {
        let batch = latent.rows();
        let selected: Vec<(usize, usize)> = (0..batch)
            .flat_map(|b| (0..self.max_len).map(move |t| (b, t)))
            .collect();
        let (logits, _) = self.decode_with(&self.store, latent, &selected)?;
        Ok((0..batch)
            .map(|b| {
                (0..self.max_len)
                    .map(|t| argmax(logits.row(b * self.max_len + t)))
                    .take_while(|&id| id != PAD_ID)
                    .collect()
            })
            .collect())
    }

    /// Reconstruction accuracy over the real tokens of a split.
    pub fn token_accuracy(&self, split: &EncodedSplit) -> Result<f64> {
        let (z, _) = self.encode_with(&self.store, &split.ids, &split.lengths)?;
        let (rec, _) = self.reconstruction_with(&self.store, &z, &split.ids, &split.lengths)?;
        Ok(rec.token_correct as f64 / rec.token_total.max(1) as f64)
    }
}

/// Train the autoencoder on the IND training split.
pub fn train_autoencoder(
    train: &EncodedSplit,
    cfg: &PogConfig,
    vocab_size: usize,
) -> Result<(Autoencoder<f32>, AutoencoderLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("autoencoder training split is empty".into()));
    }
    let mut init_rng = Rng::stream(cfg.seed, super::STREAM_AE_INIT);
    let mut ae = Autoencoder::<f32>::new(cfg, vocab_size, train.max_len, &mut init_rng)?;
    let mut adam = Adam::new(ae.store(), AdamConfig::with_lr(cfg.ae_lr));
    let mut order_rng = Rng::stream(cfg.seed, STREAM_AE_ORDER);
    let mut epoch_loss = Vec::with_capacity(cfg.ae_epochs);
    for epoch in 1..=cfg.ae_epochs {
        let mut sum = 0.0;
        let mut steps = 0usize;
        for batch in order_rng.permutation(train.len()).chunks(cfg.ae_batch) {
            let mut ids = Vec::with_capacity(batch.len() * train.max_len);
            let mut lens = Vec::with_capacity(batch.len());
            for &i in batch {
                ids.extend_from_slice(train.row(i));
                lens.push(train.lengths[i]);
            }
            let mut store = std::mem::take(&mut ae.store);
            let (z, ecache) = ae.encode_with(&store, &ids, &lens)?;
            let (rec, dcache) = ae.reconstruction_with(&store, &z, &ids, &lens)?;
            if !rec.loss.is_finite() {
                return Err(Error::NonFinite(format!("autoencoder loss at epoch {epoch}")));
            }
            store.zero_grad();
            let gz = ae.decode_backward_with(&mut store, &dcache, &rec.grad_logits);
            ae.encode_backward_with(&mut store, &ecache, &gz);
            ae.store = store;
            adam.step(&mut ae.store);
            sum += rec.loss.as_f64();
            steps += 1;
        }
        let mean = sum / steps as f64;
        log::info!("autoencoder epoch {epoch}: reconstruction loss {mean:.4}");
        epoch_loss.push(mean);
    }
    let final_token_accuracy = ae.token_accuracy(train)?;
    let final_loss = *epoch_loss.last().unwrap_or(&f64::NAN);
    Ok((
        ae,
        AutoencoderLog {
            epoch_loss,
            final_loss,
            final_token_accuracy,
        },
    ))
}
