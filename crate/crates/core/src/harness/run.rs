use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, Mode};
use crate::classifier::{ind_accuracy, train, Classifier, TrainLog};
use crate::corpus::{parse_clinc, EncodedBundle, EncodedSplit, Label};
use crate::detector::{score_split, select_threshold, ScoreSet};
use crate::error::{Error, Result};
use crate::metrics::{metric_block, MetricReport};
use crate::numerics::{Checkpoint, Rng};
use crate::pog::{post_filter, AdversarialLog, AutoencoderLog, AuxScorer, PogEnsemble, RejectionReport};

const STREAM_MODEL_INIT: u64 = 20;
/// Steps averaged for the reported final discriminator accuracy.
const D_ACCURACY_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub path: String,
    /// SHA-256 of the dataset file bytes.
    pub sha256: String,
    /// train, val, test IND then train, val, test OOS.
    pub sizes: [usize; 6],
    pub num_classes: usize,
    pub vocab_size: usize,
}

/// η chosen on the validation OOS scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub tpr_90: f64,
    pub tpr_95: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialSummary {
    pub initial_aux_accuracy: f64,
    pub initial_aux_entropy: f64,
    pub final_aux_entropy: f64,
    /// Mean over the last steps of the run.
    pub final_d_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PogReport {
    pub autoencoder: AutoencoderLog,
    pub adversarial_summary: AdversarialSummary,
    pub adversarial: AdversarialLog,
    pub rejections: RejectionReport,
    pub generated: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub mode: Mode,
    pub dataset: DatasetInfo,
    pub train_log: TrainLog,
    pub best_epoch: usize,
    pub best_dev_accuracy: Option<f64>,
    pub stopped_early: bool,
    /// SHA-256 of the IND minibatch sequence.
    pub ind_batch_digest: String,
    pub ind_test_accuracy: f64,
    /// Detection metrics on test IND vs test OOS; OOD-positive except
    /// `aupr_ind_positive`.
    pub metrics: MetricReport,
    pub thresholds: Thresholds,
    /// Set when post-filtering left no pseudo-OOD and training fell back to
    /// the baseline objective.
    pub fallback_to_baseline: bool,
    pub warnings: Vec<String>,
    pub pog: Option<PogReport>,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A finished run with every artifact rendered.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub curves_csv: String,
    pub scores_csv: String,
    pub checkpoint_json: String,
    pub vocab_tsv: String,
    pub pseudo_ood: Option<Vec<String>>,
}

impl ExperimentOutput {
    /// Write `report.json`, `curves.csv`, `scores.csv`, `checkpoint/` and,
    /// for generated pseudo-OOD, `pseudo_ood.txt` and `rejections.json`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let put = |name: &str, text: &str| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(path, e))
        };
        fs::create_dir_all(dir.join("checkpoint")).map_err(|e| Error::io(dir, e))?;
        put("report.json", &self.report.to_json()?)?;
        put("curves.csv", &self.curves_csv)?;
        put("scores.csv", &self.scores_csv)?;
        put("checkpoint/classifier.json", &self.checkpoint_json)?;
        put("checkpoint/vocab.tsv", &self.vocab_tsv)?;
        if let Some(pog) = &self.report.pog {
            let mut lines = self.pseudo_ood.clone().unwrap_or_default().join("\n");
            if !lines.is_empty() {
                lines.push('\n');
            }
            put("pseudo_ood.txt", &lines)?;
            put("rejections.json", &pog.rejections.to_json()?)?;
        }
        Ok(())
    }
}

/// Accuracy curves as CSV: `epoch,train_acc,dev_acc,loss,ood_entropy`.
pub fn emit_curves(log: &TrainLog) -> Result<String> {
    log.to_csv()
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct PogStage {
    report: PogReport,
    texts: Vec<String>,
    split: EncodedSplit,
}

fn pog_stage(data: &EncodedBundle, cfg: &ExperimentConfig) -> Result<PogStage> {
    let ensemble = PogEnsemble::train(&data.train_ind, data.vocab.len(), data.num_classes, &cfg.pog)?;
    let candidates: Vec<Vec<String>> = ensemble
        .generate(cfg.pog.num_generate)?
        .iter()
        .map(|ids| data.vocab.decode(ids))
        .collect();
    let train = &data.train_ind;
    let ind_train: Vec<Vec<String>> = (0..train.len())
        .map(|i| data.vocab.decode(&train.row(i)[..train.lengths[i]]))
        .collect();
    let scorer = AuxScorer {
        autoencoder: &ensemble.autoencoder,
        aux: &ensemble.gan.aux,
        vocab: &data.vocab,
    };
    let filtered = post_filter(
        &candidates,
        &ind_train,
        &scorer,
        cfg.pog.jaccard_threshold,
        cfg.pog.confidence_threshold,
    )?;
    let log = &ensemble.adversarial_log;
    let nan = f64::NAN;
    let adversarial_summary = AdversarialSummary {
        initial_aux_accuracy: log.initial_aux_accuracy,
        initial_aux_entropy: log.initial_aux_entropy().unwrap_or(nan),
        final_aux_entropy: log.final_aux_entropy().unwrap_or(nan),
        final_d_accuracy: log.final_d_accuracy(D_ACCURACY_WINDOW).unwrap_or(nan),
    };
    let mut split = EncodedSplit::empty(data.train_ind.max_len);
    for seq in &filtered.kept {
        split.push(seq, Label::Oos, &data.vocab);
    }
    Ok(PogStage {
        report: PogReport {
            autoencoder: ensemble.autoencoder_log.clone(),
            adversarial_summary,
            adversarial: ensemble.adversarial_log.clone(),
            generated: candidates.len(),
            kept: filtered.kept.len(),
            rejections: filtered.report,
        },
        texts: filtered.kept.iter().map(|s| s.join(" ")).collect(),
        split,
    })
}

/// Run one experiment without touching the output directory.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let start = Instant::now();
    config.validate()?;
    let cfg = config.resolved();
    let path = cfg.data.clone().expect("validated");
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::ingestion("<file>", format!("not UTF-8: {e}")))?;
    let bundle = parse_clinc(&text)?;
    let data = EncodedBundle::new(&bundle, cfg.min_freq, cfg.max_len)?;
    let dataset = DatasetInfo {
        path: path.display().to_string(),
        sha256: sha256_hex(text.as_bytes()),
        sizes: bundle.sizes(),
        num_classes: data.num_classes,
        vocab_size: data.vocab.len(),
    };
    log::info!(
        "{}: {} IND train utterances, {} intents, vocabulary {}",
        cfg.mode,
        data.train_ind.len(),
        data.num_classes,
        data.vocab.len()
    );

    let mut warnings = Vec::new();
    let mut fallback_to_baseline = false;
    let (ood_source, pog) = match cfg.mode {
        Mode::Baseline => (EncodedSplit::empty(cfg.max_len), None),
        Mode::EntropyOos => (data.train_oos.clone(), None),
        Mode::EntropyPog => {
            let stage = pog_stage(&data, &cfg)?;
            let source = if stage.split.is_empty() {
                let msg = "post-filter kept no pseudo-OOD; trained with the baseline objective".to_string();
                log::warn!("{msg}");
                warnings.push(msg);
                fallback_to_baseline = true;
                EncodedSplit::empty(cfg.max_len)
            } else {
                stage.split.clone()
            };
            (source, Some(stage))
        }
    };

    let mut model = Classifier::<f32>::new(
        &cfg.classifier,
        data.vocab.len(),
        data.num_classes,
        &mut Rng::stream(cfg.seed, STREAM_MODEL_INIT),
    )?;
    let outcome = train(&mut model, &data.train_ind, &data.val_ind, &ood_source, &cfg.train)?;
    let ind_test_accuracy = ind_accuracy(&model, &data.test_ind)?;
    let scores = ScoreSet::from_model(&model, &data.test_ind, &data.test_oos)?;
    let metrics = metric_block(&scores)?;
    let val_scores = score_split(&model, &data.val_oos)?;
    let thresholds = Thresholds {
        tpr_90: select_threshold(&val_scores, 0.90)?.value(),
        tpr_95: select_threshold(&val_scores, 0.95)?.value(),
    };
    log::info!(
        "{}: IND test accuracy {:.4}, AUROC {:.4}, FPR@95 {:.4}",
        cfg.mode,
        ind_test_accuracy,
        metrics.auroc,
        metrics.fpr_at_95tpr
    );

    let curves_csv = emit_curves(&outcome.log)?;
    let (pog_report, pseudo_ood) = match pog {
        Some(stage) => (Some(stage.report), Some(stage.texts)),
        None => (None, None),
    };
    let report = ExperimentReport {
        config: ExperimentConfig {
            output: None,
            ..cfg.clone()
        },
        mode: cfg.mode,
        dataset,
        train_log: outcome.log,
        best_epoch: outcome.best_epoch,
        best_dev_accuracy: outcome.best_dev_acc,
        stopped_early: outcome.stopped_early,
        ind_batch_digest: outcome.ind_batch_digest,
        ind_test_accuracy,
        metrics: metrics.report(),
        thresholds,
        fallback_to_baseline,
        warnings,
        pog: pog_report,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(ExperimentOutput {
        report,
        curves_csv,
        scores_csv: scores.to_csv(),
        checkpoint_json: Checkpoint::from_store(model.store()).to_json()?,
        vocab_tsv: data.vocab.to_tsv(),
        pseudo_ood,
    })
}

/// Run one experiment and write its artifacts to `config.output`.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let dir = config
        .output
        .clone()
        .ok_or_else(|| Error::Config("no output directory given".into()))?;
    let out = execute(config)?;
    out.write(&dir)?;
    Ok(out.report)
}
