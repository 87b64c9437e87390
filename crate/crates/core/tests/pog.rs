//! Pseudo-OOD generation: training sanity and filtering.

use ood_core::corpus::{EncodedBundle, EncodedSplit, SyntheticCorpus, Vocabulary, PAD_ID, UNK_ID};
use ood_core::numerics::{Rng, Tensor};
use ood_core::pog::{
    adversarial_train, generate, generator_loss, post_filter, train_autoencoder, AuxClassifier, AuxScorer, DecoderKind,
    Discriminator, Generator, PogConfig, RejectionRule,
};
use ood_core::Error;

fn normal(rng: &mut Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_vec(&[rows, cols], (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
}

fn toy_corpus() -> (Vec<Vec<String>>, Vocabulary, EncodedSplit) {
    let toks: Vec<Vec<String>> = [
        "book a table for two tonight",
        "what is my account balance",
        "play some jazz music",
        "set an alarm for six am",
        "how do i say hello in french",
        "transfer fifty dollars to savings",
        "what is the weather like tomorrow",
        "cancel my dinner reservation",
        "remind me to call mom",
        "find a flight to boston",
    ]
    .iter()
    .map(|s| s.split(' ').map(String::from).collect())
    .collect();
    let vocab = Vocabulary::from_token_streams(toks.iter().map(Vec::as_slice), 1);
    let split = EncodedSplit::from_token_lists(&toks, &vocab, 10);
    (toks, vocab, split)
}

fn synthetic() -> EncodedBundle {
    EncodedBundle::new(&SyntheticCorpus::default().bundle().unwrap(), 1, 28).unwrap()
}

#[test]
fn zero_alpha_leaves_aux_untouched() {
    let mut rng = Rng::new(40);
    let g = Generator::<f64>::new(3, 5, 4, &mut rng);
    let d = Discriminator::<f64>::new(4, 5, &mut rng);
    let c = AuxClassifier::<f64>::new(4, 5, 3, &mut rng);
    let (mut gs, mut ds, mut cs) = (g.store().clone(), d.store().clone(), c.store().clone());
    let noise = normal(&mut rng, 6, 3);
    let l = generator_loss(&g, &mut gs, &d, &mut ds, &c, &mut cs, &noise, 0.0).unwrap();
    assert_eq!(l.loss, l.adversarial);
    assert!(cs.iter().all(|p| p.grad.data().iter().all(|&v| v == 0.0)));
    assert!(gs.iter().any(|p| p.grad.data().iter().any(|&v| v != 0.0)));

    let l = generator_loss(&g, &mut gs, &d, &mut ds, &c, &mut cs, &noise, 1.0).unwrap();
    assert!(l.loss != l.adversarial);
    assert!(cs.iter().any(|p| p.grad.data().iter().any(|&v| v != 0.0)));
}

#[test]
fn autoencoder_memorizes_toy_corpus() {
    let (_, vocab, split) = toy_corpus();
    for decoder in [DecoderKind::Positional, DecoderKind::Gru] {
        let cfg = PogConfig {
            ae_epochs: 200,
            latent_dim: 16,
            embed_dim: 16,
            hidden_dim: 32,
            decoder,
            ..PogConfig::default()
        };
        let (ae, log) = train_autoencoder(&split, &cfg, vocab.len()).unwrap();
        assert!(log.final_token_accuracy >= 0.9, "{decoder:?}: {log:?}");
        assert_eq!(log.epoch_loss.len(), 200);
        assert_eq!(ae.latent_dim(), 16);
    }
}

#[test]
fn autoencoder_is_deterministic() {
    let (_, vocab, split) = toy_corpus();
    let cfg = PogConfig {
        ae_epochs: 5,
        ..PogConfig::default()
    };
    let (_, a) = train_autoencoder(&split, &cfg, vocab.len()).unwrap();
    let (_, b) = train_autoencoder(&split, &cfg, vocab.len()).unwrap();
    assert_eq!(a.final_loss, b.final_loss);
    assert_eq!(a, b);
}

#[test]
fn zero_latent_dim_is_a_config_error() {
    let (_, vocab, split) = toy_corpus();
    let cfg = PogConfig {
        latent_dim: 0,
        ..PogConfig::default()
    };
    assert!(matches!(
        train_autoencoder(&split, &cfg, vocab.len()),
        Err(Error::Config(_))
    ));
    assert!(train_autoencoder(&EncodedSplit::empty(10), &PogConfig::default(), vocab.len()).is_err());
}

/// The freshly initialised auxiliary classifier is no better than chance on
/// the real latents.
#[test]
fn aux_classifier_starts_from_scratch() {
    let data = synthetic();
    let k = data.num_classes as f64;
    let n = data.train_ind.len() as f64;
    let p = 1.0 / k;
    let band = 3.0 * (p * (1.0 - p) / n).sqrt();
    for seed in 0..4 {
        let cfg = PogConfig {
            ae_epochs: 20,
            adv_steps: 1,
            seed,
            ..PogConfig::default()
        };
        let (ae, _) = train_autoencoder(&data.train_ind, &cfg, data.vocab.len()).unwrap();
        let (_, log) = adversarial_train(&ae, &data.train_ind, data.num_classes, &cfg).unwrap();
        assert!(
            (log.initial_aux_accuracy - p).abs() <= band,
            "seed {seed}: accuracy {} outside {p} ± {band}",
            log.initial_aux_accuracy
        );
    }
}

#[test]
fn adversarial_toy_run() {
    let data = synthetic();
    for seed in 0..3 {
        let cfg = PogConfig {
            ae_epochs: 100,
            adv_steps: 500,
            seed,
            ..PogConfig::default()
        };
        let (ae, ae_log) = train_autoencoder(&data.train_ind, &cfg, data.vocab.len()).unwrap();
        assert!(ae_log.final_token_accuracy > 0.9, "{ae_log:?}");
        let (_, log) = adversarial_train(&ae, &data.train_ind, data.num_classes, &cfg).unwrap();
        assert_eq!(log.records.len(), 500);
        let d_acc = log.final_d_accuracy(50).unwrap();
        assert!((0.45..=0.75).contains(&d_acc), "seed {seed}: final D accuracy {d_acc}");
        let (h0, h1) = (log.initial_aux_entropy().unwrap(), log.final_aux_entropy().unwrap());
        assert!(h1 > h0, "seed {seed}: aux entropy {h0} -> {h1}");
        assert!(log.to_csv().lines().count() == 501);
    }
}

#[test]
fn adversarial_run_is_deterministic() {
    let (_, vocab, split) = toy_corpus();
    let mut split = split;
    split.labels = (0..split.len()).map(|i| ood_core::Label::Intent(i % 3)).collect();
    let cfg = PogConfig {
        ae_epochs: 3,
        adv_steps: 20,
        ..PogConfig::default()
    };
    let (ae, _) = train_autoencoder(&split, &cfg, vocab.len()).unwrap();
    let (g1, a) = adversarial_train(&ae, &split, 3, &cfg).unwrap();
    let (g2, b) = adversarial_train(&ae, &split, 3, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        generate(&g1.generator, &ae, 7, 1).unwrap(),
        generate(&g2.generator, &ae, 7, 1).unwrap()
    );
}

#[test]
fn generation_contract() {
    let (_, vocab, split) = toy_corpus();
    let mut split = split;
    split.labels = (0..split.len()).map(|i| ood_core::Label::Intent(i % 2)).collect();
    let cfg = PogConfig {
        ae_epochs: 10,
        adv_steps: 10,
        ..PogConfig::default()
    };
    let (mut ae, _) = train_autoencoder(&split, &cfg, vocab.len()).unwrap();
    let (gan, _) = adversarial_train(&ae, &split, 2, &cfg).unwrap();
    let seqs = generate(&gan.generator, &ae, 5, 3).unwrap();
    assert_eq!(seqs.len(), 5);
    for s in &seqs {
        assert!((1..=ae.max_len()).contains(&s.len()));
        assert!(s.iter().all(|&id| id < vocab.len() && id != PAD_ID));
    }
    assert_eq!(seqs, generate(&gan.generator, &ae, 5, 3).unwrap());
    assert!(generate(&gan.generator, &ae, 0, 3).unwrap().is_empty());

    // A decoder that always emits PAD first degenerates to a single UNK.
    let bias = ae.store().find("ae.dec_out.bias").unwrap();
    ae.store_mut().get_mut(bias).value.data_mut()[PAD_ID] = 1e4;
    let seqs = generate(&gan.generator, &ae, 4, 3).unwrap();
    assert_eq!(seqs, vec![vec![UNK_ID]; 4]);
}

#[test]
fn planted_duplicates_are_rejected() {
    let data = synthetic();
    let train: Vec<Vec<String>> = (0..data.train_ind.len())
        .map(|i| data.vocab.decode(&data.train_ind.row(i)[..data.train_ind.lengths[i]]))
        .collect();
    let cfg = PogConfig {
        ae_epochs: 20,
        adv_steps: 50,
        ..PogConfig::default()
    };
    let (ae, _) = train_autoencoder(&data.train_ind, &cfg, data.vocab.len()).unwrap();
    let (gan, _) = adversarial_train(&ae, &data.train_ind, data.num_classes, &cfg).unwrap();
    let mut candidates: Vec<Vec<String>> = generate(&gan.generator, &ae, 100, 0)
        .unwrap()
        .iter()
        .map(|s| data.vocab.decode(s))
        .collect();
    let planted: Vec<usize> = (0..50).map(|i| candidates.len() + i).collect();
    candidates.extend((0..50).map(|i| train[(i * 7) % train.len()].clone()));
    let scorer = AuxScorer {
        autoencoder: &ae,
        aux: &gan.aux,
        vocab: &data.vocab,
    };
    let out = post_filter(
        &candidates,
        &train,
        &scorer,
        cfg.jaccard_threshold,
        cfg.confidence_threshold,
    )
    .unwrap();
    for &i in &planted {
        assert_eq!(out.verdicts[i], Some(RejectionRule::ExactMatch));
    }
    assert!(out.report.exact_match >= 50);
    assert_eq!(out.report.kept + out.report.rejected(), 150);
    let again = post_filter(
        &out.kept,
        &train,
        &scorer,
        cfg.jaccard_threshold,
        cfg.confidence_threshold,
    )
    .unwrap();
    assert_eq!(again.kept, out.kept);
}

#[test]
fn gibberish_under_uniform_classifier_is_kept() {
    let (train, _, _) = toy_corpus();
    let k = 150.0;
    let uniform = |c: &[Vec<String>]| vec![1.0 / k; c.len()];
    let cand = vec!["zorp", "blick", "quanf"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    let out = post_filter(std::slice::from_ref(&cand), &train, &uniform, 0.8, 0.9).unwrap();
    assert_eq!(out.kept, vec![cand]);

    // Nine of ten tokens shared: Jaccard 9/11.
    let mut near = train[0].clone();
    near.extend(["x", "y", "z", "w"].map(String::from));
    let base: Vec<String> = near[..10].to_vec();
    let mut cand = base.clone();
    cand[9] = "other".into();
    let out = post_filter(&[cand], &[base], &uniform, 0.8, 0.9).unwrap();
    assert_eq!(out.verdicts, vec![Some(RejectionRule::Jaccard)]);
}
