//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria that need the CLINC150 `data_full.json` read it from the
//! `CLINC150_PATH` environment variable. Without it they print
//! `FAIL [blocked]` and, unless `ACCEPTANCE_STRICT=1`, do not fail the run.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::gradchecks::{self, TOL};
use common::{enumerated_ap, enumerated_fpr, pairwise_auroc, random_scores};
use ood_core::classifier::{combined_loss, Arch, Classifier, ClassifierConfig, TrainConfig};
use ood_core::corpus::{load_clinc, EncodedBundle, SyntheticCorpus, PAD_ID};
use ood_core::detector::score_logits;
use ood_core::harness::{execute, run, ExperimentReport};
use ood_core::metrics::{auroc, average_precision, fpr_at_tpr};
use ood_core::numerics::loss::cross_entropy_with_grad;
use ood_core::pog::{
    generate, post_filter, Autoencoder, AuxClassifier, AuxScorer, Discriminator, Generator, RejectionRule,
};
use ood_core::{ExperimentConfig, Mode, PogConfig, PogEnsemble, Real, Result, Rng, Tensor};

const CLINC_ENV: &str = "CLINC150_PATH";
const FULL_RUN_BUDGET: Duration = Duration::from_secs(45 * 60);

type Criterion<'a> = Box<dyn FnOnce() -> Outcome + 'a>;

enum Verdict {
    Pass,
    Fail(String),
    Blocked(String),
}

struct Outcome {
    verdict: Verdict,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            verdict: Verdict::Pass,
            details: Vec::new(),
        }
    }

    fn note(&mut self, line: impl Into<String>) {
        self.details.push(line.into());
    }

    /// Record a sub-check; the first failing one decides the verdict.
    fn require(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        self.note(format!("{} {what}", if ok { "ok  " } else { "FAIL" }));
        if !ok && matches!(self.verdict, Verdict::Pass) {
            self.verdict = Verdict::Fail(what);
        }
    }

    fn block(&mut self, why: impl Into<String>) {
        if !matches!(self.verdict, Verdict::Fail(_)) {
            self.verdict = Verdict::Blocked(why.into());
        }
    }
}

fn clinc_path() -> Option<PathBuf> {
    std::env::var_os(CLINC_ENV).map(PathBuf::from).filter(|p| p.is_file())
}

fn blocked_reason() -> String {
    format!("CLINC150 data_full.json unavailable (set {CLINC_ENV})")
}

fn check_budget(out: &mut Outcome, elapsed: Duration, budget: Duration) {
    out.require(
        elapsed < budget,
        format!("runtime {:.1}s < {:.0}s", elapsed.as_secs_f64(), budget.as_secs_f64()),
    );
}

fn metric_oracles() -> Outcome {
    let mut out = Outcome::new();
    let start = Instant::now();
    let mut rng = Rng::new(2718);
    let cases = 200;
    let (mut worst_auroc, mut ap_mismatch, mut fpr_mismatch) = (0.0f64, 0, 0);
    for _ in 0..cases {
        let pos = random_scores(&mut rng, 50);
        let neg = random_scores(&mut rng, 50);
        worst_auroc = worst_auroc.max((auroc(&pos, &neg).unwrap() - pairwise_auroc(&pos, &neg)).abs());
        ap_mismatch += usize::from(average_precision(&pos, &neg).unwrap() != enumerated_ap(&pos, &neg));
        for level in [0.9, 0.95] {
            fpr_mismatch += usize::from(fpr_at_tpr(&pos, &neg, level).unwrap() != enumerated_fpr(&pos, &neg, level));
        }
    }
    out.require(
        worst_auroc <= 1e-12,
        format!("{cases} instances: max |AUROC - pairwise| = {worst_auroc:.2e} <= 1e-12"),
    );
    out.require(
        ap_mismatch == 0,
        format!("AUPR equals enumeration exactly ({ap_mismatch} mismatches)"),
    );
    out.require(
        fpr_mismatch == 0,
        format!("FPR@90/95 equal enumeration exactly ({fpr_mismatch} mismatches)"),
    );
    check_budget(&mut out, start.elapsed(), Duration::from_secs(10));
    out
}

fn gradient_integrity() -> Outcome {
    let mut out = Outcome::new();
    let start = Instant::now();
    let seeds = 5;
    for (name, check) in gradchecks::ALL {
        let mut worst = 0.0f64;
        let mut error = None;
        for seed in 0..seeds {
            match check(seed) {
                Ok(r) => worst = worst.max(r.max_rel_err),
                Err(e) => error = Some(e.to_string()),
            }
        }
        match error {
            Some(e) => out.require(false, format!("{name}: {e}")),
            None => out.require(
                worst <= TOL,
                format!("{name}: max rel err {worst:.2e} <= {TOL:.0e} ({seeds} seeds)"),
            ),
        }
    }
    check_budget(&mut out, start.elapsed(), Duration::from_secs(120));
    out
}

fn clinc_config(mode: Mode, path: &Path) -> ExperimentConfig {
    ExperimentConfig {
        mode,
        data: Some(path.to_path_buf()),
        classifier: ClassifierConfig {
            arch: Arch::Cnn,
            ..ClassifierConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

/// The CLINC150 baseline run shared by criteria 3 to 5.
struct BaselineRun {
    report: ExperimentReport,
    elapsed: Duration,
}

fn baseline_run(path: &Path) -> Result<BaselineRun> {
    let start = Instant::now();
    let report = execute(&clinc_config(Mode::Baseline, path))?.report;
    Ok(BaselineRun {
        report,
        elapsed: start.elapsed(),
    })
}

fn ind_accuracy(base: Option<&Result<BaselineRun>>) -> Outcome {
    let mut out = Outcome::new();
    match base {
        None => out.block(blocked_reason()),
        Some(Err(e)) => out.require(false, format!("baseline run failed: {e}")),
        Some(Ok(b)) => {
            let dev = b.report.best_dev_accuracy.unwrap_or(0.0);
            let test = b.report.ind_test_accuracy;
            out.require(dev >= 0.90, format!("dev IND accuracy {dev:.4} >= 0.90 (target 0.93)"));
            out.require(
                test >= 0.90,
                format!("test IND accuracy {test:.4} >= 0.90 (target 0.93)"),
            );
            check_budget(&mut out, b.elapsed, FULL_RUN_BUDGET);
        }
    }
    out
}

fn msp_baseline(base: Option<&Result<BaselineRun>>) -> Outcome {
    let mut out = Outcome::new();
    match base {
        None => out.block(blocked_reason()),
        Some(Err(e)) => out.require(false, format!("baseline run failed: {e}")),
        Some(Ok(b)) => {
            let m = b.report.metrics.percent;
            let raw = b.report.metrics.raw;
            let within = |v: f64, lo: f64, hi: f64| (lo..=hi).contains(&v);
            out.require(within(m.auroc, 89.0, 96.0), format!("AUROC {:.2} in [89, 96]", m.auroc));
            out.require(
                within(m.aupr_ind_positive, 96.0, 99.5),
                format!("IND-positive AUPR {:.2} in [96, 99.5]", m.aupr_ind_positive),
            );
            out.require(
                within(m.fpr_at_95tpr, 30.0, 50.0),
                format!("FPR95 {:.2} in [30, 50]", m.fpr_at_95tpr),
            );
            out.require(
                within(m.fpr_at_90tpr, 14.0, 30.0),
                format!("FPR90 {:.2} in [14, 30]", m.fpr_at_90tpr),
            );
            out.require(raw.fpr_at_95tpr >= raw.fpr_at_90tpr, "FPR95 >= FPR90");
        }
    }
    out
}

fn entropy_effect(path: Option<&Path>, base: Option<&Result<BaselineRun>>) -> Outcome {
    let mut out = Outcome::new();
    let (Some(path), Some(base)) = (path, base) else {
        out.block(blocked_reason());
        return out;
    };
    let base = match base {
        Ok(b) => b,
        Err(e) => {
            out.require(false, format!("baseline run failed: {e}"));
            return out;
        }
    };
    let start = Instant::now();
    match execute(&clinc_config(Mode::EntropyOos, path)) {
        Err(e) => out.require(false, format!("entropy-oos run failed: {e}")),
        Ok(o) => {
            let r = o.report;
            let drop = (base.report.ind_test_accuracy - r.ind_test_accuracy) * 100.0;
            let gain = r.metrics.percent.auroc - base.report.metrics.percent.auroc;
            out.require(drop <= 1.5, format!("IND test accuracy drop {drop:.2} points <= 1.5"));
            out.require(gain >= 1.0, format!("AUROC improvement {gain:.2} points >= 1.0"));
            check_budget(&mut out, start.elapsed(), FULL_RUN_BUDGET);
        }
    }
    out
}

/// Generation properties of one trained ensemble: planted duplicates, aux
/// entropy and final discriminator accuracy.
fn pog_properties(out: &mut Outcome, label: &str, data: &EncodedBundle, cfg: &PogConfig) -> Result<()> {
    let ensemble = PogEnsemble::train(&data.train_ind, data.vocab.len(), data.num_classes, cfg)?;
    let train = &data.train_ind;
    let train_tokens: Vec<Vec<String>> = (0..train.len())
        .map(|i| data.vocab.decode(&train.row(i)[..train.lengths[i]]))
        .collect();
    let mut candidates: Vec<Vec<String>> = ensemble.generate(200)?.iter().map(|s| data.vocab.decode(s)).collect();
    let planted_from = candidates.len();
    let stride = (train_tokens.len() / 50).max(1);
    candidates.extend((0..50).map(|i| train_tokens[(i * stride) % train_tokens.len()].clone()));
    let scorer = AuxScorer {
        autoencoder: &ensemble.autoencoder,
        aux: &ensemble.gan.aux,
        vocab: &data.vocab,
    };
    let filtered = post_filter(
        &candidates,
        &train_tokens,
        &scorer,
        cfg.jaccard_threshold,
        cfg.confidence_threshold,
    )?;
    let caught = filtered.verdicts[planted_from..]
        .iter()
        .filter(|v| **v == Some(RejectionRule::ExactMatch))
        .count();
    out.require(
        caught == 50,
        format!("{label}: {caught}/50 planted IND duplicates rejected"),
    );

    let log = &ensemble.adversarial_log;
    let (h0, h1) = (
        log.initial_aux_entropy().unwrap_or(f64::NAN),
        log.final_aux_entropy().unwrap_or(f64::NAN),
    );
    out.require(
        h1 > h0,
        format!("{label}: aux entropy on generated latents {h0:.4} -> {h1:.4} increases"),
    );
    let d_final = log.final_d_accuracy(50).unwrap_or(f64::NAN);
    let d_first = log.records.first().map_or(f64::NAN, |r| r.d_accuracy);
    out.require(
        d_final <= 0.9,
        format!("{label}: final discriminator accuracy {d_final:.3} <= 0.9 (first step {d_first:.3})"),
    );
    Ok(())
}

fn pog_mode(path: Option<&Path>) -> Outcome {
    let mut out = Outcome::new();
    match path {
        None => {
            out.block(blocked_reason());
            out.note("supplementary: the same properties on the synthetic corpus with ae_epochs 100");
            let data = EncodedBundle::new(&SyntheticCorpus::default().bundle().unwrap(), 1, 28).unwrap();
            let cfg = PogConfig {
                ae_epochs: 100,
                ..PogConfig::default()
            };
            if let Err(e) = pog_properties(&mut out, "synthetic", &data, &cfg) {
                out.require(false, format!("synthetic run failed: {e}"));
            }
        }
        Some(path) => {
            let cfg = clinc_config(Mode::EntropyPog, path).resolved();
            match execute(&cfg) {
                Err(e) => out.require(false, format!("entropy-pog run on CLINC150 failed: {e}")),
                Ok(o) => {
                    let pog = o.report.pog.as_ref();
                    out.require(pog.is_some(), "entropy-pog run on CLINC150 completed");
                    if let Some(p) = pog {
                        out.note(format!("generated {}, kept {}", p.generated, p.kept));
                    }
                    let m = o.report.metrics.percent;
                    out.note(format!(
                        "AUROC {:.2}, AUPR(IND+) {:.2}, FPR90 {:.2} (reference 95.4 / 98.9 / 10.1, not required)",
                        m.auroc, m.aupr_ind_positive, m.fpr_at_90tpr
                    ));
                }
            }
            let loaded = load_clinc(path).and_then(|b| EncodedBundle::new(&b, cfg.min_freq, cfg.max_len));
            match loaded.and_then(|data| pog_properties(&mut out, "CLINC150", &data, &cfg.pog)) {
                Ok(()) => {}
                Err(e) => out.require(false, format!("CLINC150 generation failed: {e}")),
            }
        }
    }
    out
}

fn determinism() -> Outcome {
    let mut out = Outcome::new();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("synthetic.json");
    SyntheticCorpus::default().write(&data).unwrap();
    let strip = |text: Vec<u8>| -> Vec<u8> {
        String::from_utf8(text)
            .unwrap()
            .lines()
            .filter(|l| !l.contains("\"wall_clock_seconds\""))
            .collect::<Vec<_>>()
            .join("\n")
            .into_bytes()
    };
    for mode in Mode::ALL {
        let dirs: Vec<PathBuf> = (0..2).map(|i| tmp.path().join(format!("{mode}-{i}"))).collect();
        let mut ran = true;
        for dir in &dirs {
            let cfg = ExperimentConfig {
                mode,
                data: Some(data.clone()),
                output: Some(dir.clone()),
                seed: 11,
                classifier: ClassifierConfig {
                    arch: Arch::Cnn,
                    embed_dim: 32,
                    conv_filters: 16,
                    ..ClassifierConfig::default()
                },
                train: TrainConfig {
                    epochs: 4,
                    ..TrainConfig::default()
                },
                pog: PogConfig {
                    ae_epochs: 20,
                    adv_steps: 60,
                    num_generate: 200,
                    ..PogConfig::default()
                },
                ..ExperimentConfig::default()
            };
            if let Err(e) = run(&cfg) {
                out.require(false, format!("{mode}: run failed: {e}"));
                ran = false;
            }
        }
        if !ran {
            continue;
        }
        let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap_or_default();
        let same_report = strip(read(&dirs[0], "report.json")) == strip(read(&dirs[1], "report.json"));
        let same_curves = read(&dirs[0], "curves.csv") == read(&dirs[1], "curves.csv");
        let same_scores = read(&dirs[0], "scores.csv") == read(&dirs[1], "scores.csv");
        out.require(
            same_report && same_curves && same_scores,
            format!("{mode}: report (sans wall clock) {same_report}, curves {same_curves}, scores {same_scores}"),
        );
    }
    out
}

fn all_finite<F: Real>(t: &Tensor<F>) -> bool {
    t.data().iter().all(|v| v.as_f64().is_finite())
}

fn combined_loss_without_ood_is_cross_entropy<F: Real>(rng: &mut Rng) -> bool {
    let k = 7;
    let logits = Tensor::<F>::from_vec(&[5, k], (0..5 * k).map(|_| F::lit(rng.normal() * 3.0)).collect()).unwrap();
    let labels = [0, 6, 3, 3, 1];
    let (ce, grad) = cross_entropy_with_grad(&logits, &labels).unwrap();
    let empty = Tensor::<F>::zeros(&[0, k]);
    let matches = [Some(&empty), None].into_iter().all(|ood| {
        let l = combined_loss(&logits, &labels, ood, F::lit(1.0)).unwrap();
        l.value.as_f64().to_bits() == ce.as_f64().to_bits()
            && l.grad_ind
                .data()
                .iter()
                .zip(grad.data())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
            && l.grad_ood.is_none()
    });
    matches
}

fn degenerate_inputs() -> Outcome {
    let mut out = Outcome::new();
    let ks = [2usize, 3, 7, 150];
    let exact = ks.iter().all(|&k| {
        [0.0, -3.5, 1e4]
            .iter()
            .all(|&c| score_logits(&vec![c; k]) == 1.0 / k as f64 && score_logits(&vec![c as f32; k]) == 1.0 / k as f64)
    });
    out.require(
        exact,
        "equal logits give score exactly 1/K (K in 2, 3, 7, 150; f32 and f64)",
    );

    let mut rng = Rng::new(8);
    let bitwise = combined_loss_without_ood_is_cross_entropy::<f32>(&mut rng)
        && combined_loss_without_ood_is_cross_entropy::<f64>(&mut rng);
    out.require(
        bitwise,
        "empty OOD batch: loss and gradient equal cross-entropy bitwise (f32 and f64)",
    );

    let (v, max_len, k) = (30, 12, 5);
    let pad = vec![PAD_ID; 3 * max_len];
    let lengths = [0, 0, 0];
    for arch in [Arch::Cnn, Arch::MeanPoolMlp] {
        let model = Classifier::<f32>::new(
            &ClassifierConfig {
                arch,
                embed_dim: 8,
                conv_filters: 4,
                hidden_dim: 8,
                ..ClassifierConfig::default()
            },
            v,
            k,
            &mut Rng::new(1),
        )
        .unwrap();
        let logits = model.forward(&pad, &lengths).unwrap();
        let score = score_logits(logits.row(0));
        out.require(
            all_finite(&logits) && score.is_finite(),
            format!("all-PAD input through the {arch:?} classifier is finite"),
        );
    }
    let cfg = PogConfig {
        latent_dim: 8,
        noise_dim: 4,
        embed_dim: 8,
        hidden_dim: 8,
        gan_hidden: 8,
        ..PogConfig::default()
    };
    let mut rng = Rng::new(2);
    let ae = Autoencoder::<f32>::new(&cfg, v, max_len, &mut rng).unwrap();
    let g = Generator::<f32>::new(cfg.noise_dim, cfg.gan_hidden, cfg.latent_dim, &mut rng);
    let d = Discriminator::<f32>::new(cfg.latent_dim, cfg.gan_hidden, &mut rng);
    let c = AuxClassifier::<f32>::new(cfg.latent_dim, cfg.gan_hidden, k, &mut rng);
    let (z, _) = ae.encode_with(ae.store(), &pad, &lengths).unwrap();
    let decoded = ae.decode_argmax(&z).unwrap();
    let pog_ok = all_finite(&z)
        && decoded.len() == 3
        && all_finite(&d.forward(&z).unwrap())
        && all_finite(&c.forward(&z).unwrap())
        && generate(&g, &ae, 3, 0).map(|s| s.len() == 3).unwrap_or(false);
    out.require(
        pog_ok,
        "all-PAD input through autoencoder, discriminator, aux classifier and generator is finite",
    );
    out
}

fn main() -> ExitCode {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let path = clinc_path();
    let base = path.as_deref().map(baseline_run);

    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("metric oracle equivalence", Box::new(metric_oracles)),
        ("gradient integrity", Box::new(gradient_integrity)),
        (
            "IND accuracy, CNN baseline on CLINC150",
            Box::new(|| ind_accuracy(base.as_ref())),
        ),
        (
            "MSP baseline detection metrics",
            Box::new(|| msp_baseline(base.as_ref())),
        ),
        (
            "entropy regularisation effect",
            Box::new(|| entropy_effect(path.as_deref(), base.as_ref())),
        ),
        (
            "pseudo-OOD generation properties",
            Box::new(|| pog_mode(path.as_deref())),
        ),
        ("determinism", Box::new(determinism)),
        ("degenerate inputs", Box::new(degenerate_inputs)),
    ];

    let (mut failed, mut blocked) = (0, 0);
    for (i, (name, criterion)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = criterion();
        let secs = start.elapsed().as_secs_f64();
        let status = match &outcome.verdict {
            Verdict::Pass => "PASS".to_string(),
            Verdict::Fail(why) => {
                failed += 1;
                format!("FAIL ({why})")
            }
            Verdict::Blocked(why) => {
                blocked += 1;
                format!("FAIL [blocked] ({why})")
            }
        };
        println!("criterion {}: {status}: {name} [{secs:.1}s]", i + 1);
        for d in &outcome.details {
            println!("    {d}");
        }
    }
    println!("acceptance: {failed} failed, {blocked} blocked");
    if failed > 0 || (strict && blocked > 0) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
