//! Pseudo-OOD generation.
//!
//! An autoencoder maps IND utterances to a continuous latent space. A
//! generator/discriminator pair learns to mimic that space while an auxiliary
//! intent classifier, trained from scratch alongside them, pushes generated
//! codes toward regions where no intent is confident. Generated codes are
//! decoded to token sequences and filtered against the IND training data.

mod adversarial;
mod autoencoder;
mod filter;
mod generate;

use serde::{Deserialize, Serialize};

pub use adversarial::{
    adversarial_train, aux_loss, discriminator_loss, generator_loss, AdversarialLog, AdversarialRecord, AuxClassifier,
    Discriminator, Gan, Generator, GeneratorLoss, Mlp, MlpCache,
};
pub use autoencoder::{train_autoencoder, Autoencoder, AutoencoderLog, DecodeCache, EncodeCache, Reconstruction};
pub use filter::{jaccard, post_filter, AuxScorer, ConfidenceScorer, FilterOutcome, RejectionReport, RejectionRule};
pub use generate::generate;

use crate::corpus::EncodedSplit;
use crate::error::{Error, Result};

const STREAM_AE_INIT: u64 = 10;
const STREAM_GAN_INIT: u64 = 12;
const STREAM_AUX_INIT: u64 = 13;
const STREAM_GAN_NOISE: u64 = 14;
const STREAM_GAN_REAL: u64 = 15;
const STREAM_GENERATE: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// Independent per-position softmax given the latent.
    #[default]
    Positional,
    /// Gated recurrent decoder fed the latent at every step.
    Gru,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PogConfig {
    /// d_z
    pub latent_dim: usize,
    /// d_n
    pub noise_dim: usize,
    pub embed_dim: usize,
    /// Decoder width.
    pub hidden_dim: usize,
    pub decoder: DecoderKind,
    pub ae_epochs: usize,
    pub ae_lr: f64,
    pub ae_batch: usize,
    /// Hidden width of the generator, discriminator and auxiliary classifier.
    pub gan_hidden: usize,
    pub adv_steps: usize,
    pub adv_batch: usize,
    pub adv_lr: f64,
    /// Adam first-moment decay of the adversarial networks.
    pub adv_beta1: f64,
    /// α: weight of the auxiliary-entropy term in the generator loss.
    pub entropy_weight: f64,
    pub jaccard_threshold: f64,
    pub confidence_threshold: f64,
    /// Candidates decoded before post-filtering.
    pub num_generate: usize,
    pub seed: u64,
}

impl Default for PogConfig {
    fn default() -> Self {
        PogConfig {
            latent_dim: 64,
            noise_dim: 32,
            embed_dim: 64,
            hidden_dim: 128,
            decoder: DecoderKind::Positional,
            ae_epochs: 30,
            ae_lr: 5e-3,
            ae_batch: 64,
            gan_hidden: 64,
            adv_steps: 500,
            adv_batch: 64,
            adv_lr: 2e-4,
            adv_beta1: 0.5,
            entropy_weight: 1.0,
            jaccard_threshold: 0.8,
            confidence_threshold: 0.9,
            num_generate: 1000,
            seed: 0,
        }
    }
}

impl PogConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.latent_dim == 0 || self.noise_dim == 0 {
            return bad("latent_dim and noise_dim must be positive");
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.gan_hidden == 0 {
            return bad("embed_dim, hidden_dim and gan_hidden must be positive");
        }
        if self.ae_batch == 0 || self.adv_batch == 0 {
            return bad("ae_batch and adv_batch must be positive");
        }
        if !(self.ae_lr > 0.0 && self.ae_lr.is_finite() && self.adv_lr > 0.0 && self.adv_lr.is_finite()) {
            return bad("ae_lr and adv_lr must be positive");
        }
        if !(0.0..1.0).contains(&self.adv_beta1) {
            return bad("adv_beta1 must lie in [0, 1)");
        }
        if !(self.entropy_weight >= 0.0 && self.entropy_weight.is_finite()) {
            return bad("entropy_weight must be finite and >= 0");
        }
        if !(0.0..=1.0).contains(&self.jaccard_threshold) || !(0.0..=1.0).contains(&self.confidence_threshold) {
            return bad("filter thresholds must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Every trained component of one generation run.
#[derive(Debug, Clone)]
pub struct PogEnsemble {
    pub autoencoder: Autoencoder<f32>,
    pub gan: Gan<f32>,
    pub autoencoder_log: AutoencoderLog,
    pub adversarial_log: AdversarialLog,
    pub seed: u64,
}

impl PogEnsemble {
    /// Train the autoencoder, then the adversarial networks on its frozen
    /// latent space.
    pub fn train(train_ind: &EncodedSplit, vocab_size: usize, num_classes: usize, cfg: &PogConfig) -> Result<Self> {
        let (autoencoder, autoencoder_log) = train_autoencoder(train_ind, cfg, vocab_size)?;
        let (gan, adversarial_log) = adversarial_train(&autoencoder, train_ind, num_classes, cfg)?;
        Ok(PogEnsemble {
            autoencoder,
            gan,
            autoencoder_log,
            adversarial_log,
            seed: cfg.seed,
        })
    }

    /// `n` decoded id sequences.
    pub fn generate(&self, n: usize) -> Result<Vec<Vec<usize>>> {
        generate(&self.gan.generator, &self.autoencoder, n, self.seed)
    }
}
