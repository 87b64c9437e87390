//! Out-of-domain (OOD) detection for intent classifiers.
//!
//! The crate covers the whole experimental pipeline:
//!
//! * [`corpus`]: CLINC150-style ingestion, tokenization and vocabulary.
//! * [`numerics`]: dense tensors, layers with hand-written backward passes,
//!   a finite-difference gradient checker and a portable seeded PRNG.
//! * [`classifier`]: the K-way intent classifier trained with cross-entropy on
//!   in-domain data plus an entropy-maximization term on OOD data.
//! * [`detector`]: max-softmax scoring and threshold decisions.
//! * [`metrics`]: AUROC, AUPR and FPR at fixed TPR.
//! * [`pog`]: pseudo-OOD generation with an autoencoder latent space, a
//!   latent GAN and a jointly trained auxiliary classifier.
//! * [`harness`]: end-to-end experiment runner used by the `ood` CLI.

pub mod classifier;
pub mod corpus;
pub mod detector;
mod error;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod pog;

pub use classifier::{Arch, Classifier, ClassifierConfig, TrainConfig, TrainLog};
pub use corpus::{DatasetBundle, Label, LabeledExample, Utterance, Vocabulary};
pub use detector::{Decision, ScoreSet, Threshold};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, ExperimentReport, Mode};
pub use metrics::MetricBlock;
pub use numerics::{ParamStore, Real, Rng, Tensor};
pub use pog::{PogConfig, PogEnsemble};
