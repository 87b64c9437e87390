use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Autoencoder, PogConfig, STREAM_AUX_INIT, STREAM_GAN_INIT, STREAM_GAN_NOISE, STREAM_GAN_REAL};
use crate::classifier::argmax;
use crate::corpus::EncodedSplit;
use crate::error::{Error, Result};
use crate::numerics::layers::{relu_backward, relu_forward, tanh_backward, tanh_forward, Affine};
use crate::numerics::loss::{bce_with_logits, cross_entropy_with_grad, neg_entropy_with_grad};
use crate::numerics::{Adam, AdamConfig, ParamStore, Real, Rng, Tensor};

/// Affine stack with relu between layers and an optional tanh output.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Affine>,
    tanh_out: bool,
}

#[derive(Debug, Clone)]
pub struct MlpCache<F> {
    /// Input of every layer.
    inputs: Vec<Tensor<F>>,
    output: Tensor<F>,
}

impl Mlp {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, dims: &[usize], tanh_out: bool, rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output dimensions");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Affine::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers, tanh_out }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn forward_with<F: Real>(&self, store: &ParamStore<F>, x: &Tensor<F>) -> Result<(Tensor<F>, MlpCache<F>)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(store, &h)?;
            inputs.push(h);
            h = if i + 1 < self.layers.len() {
                relu_forward(&pre)
            } else if self.tanh_out {
                tanh_forward(&pre)
            } else {
                pre
            };
        }
        Ok((h.clone(), MlpCache { inputs, output: h }))
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward_with<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        cache: &MlpCache<F>,
        grad_out: &Tensor<F>,
    ) -> Tensor<F> {
        let mut g = if self.tanh_out {
            tanh_backward(&cache.output, grad_out)
        } else {
            grad_out.clone()
        };
        for i in (0..self.layers.len()).rev() {
            let gx = self.layers[i].backward(store, &cache.inputs[i], &g);
            g = if i > 0 {
                relu_backward(&cache.inputs[i], &gx)
            } else {
                gx
            };
        }
        g
    }
}

macro_rules! network {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone)]
        pub struct $name<F> {
            store: ParamStore<F>,
            net: Mlp,
        }

        impl<F: Real> $name<F> {
            pub fn store(&self) -> &ParamStore<F> {
                &self.store
            }

            pub fn store_mut(&mut self) -> &mut ParamStore<F> {
                &mut self.store
            }

            pub fn net(&self) -> &Mlp {
                &self.net
            }

            /// Forward pass under the network's own parameters.
            pub fn forward(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
                self.net.forward_with(&self.store, x).map(|(y, _)| y)
            }
        }
    };
}

network!(
    /// Noise `ε ∈ R^{d_n}` → latent code in `(-1, 1)^{d_z}`.
    Generator
);
network!(
    /// Latent code → single real-vs-generated logit.
    Discriminator
);
network!(
    /// Latent code → K intent logits.
    AuxClassifier
);

impl<F: Real> Generator<F> {
    pub fn new(noise_dim: usize, hidden: usize, latent_dim: usize, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "generator", &[noise_dim, hidden, latent_dim], true, rng);
        Generator { store, net }
    }

    pub fn noise_dim(&self) -> usize {
        self.net.in_dim()
    }

    /// `n` standard-normal noise rows.
    pub fn sample_noise(&self, n: usize, rng: &mut Rng) -> Tensor<F> {
        let data = (0..n * self.noise_dim()).map(|_| F::lit(rng.normal())).collect();
        Tensor::from_vec(&[n, self.noise_dim()], data).expect("noise shape")
    }
}

impl<F: Real> Discriminator<F> {
    pub fn new(latent_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "discriminator", &[latent_dim, hidden, 1], false, rng);
        Discriminator { store, net }
    }
}

impl<F: Real> AuxClassifier<F> {
    pub fn new(latent_dim: usize, hidden: usize, num_classes: usize, rng: &mut Rng) -> Self {
        let mut store = ParamStore::new();
        let net = Mlp::new(&mut store, "aux", &[latent_dim, hidden, num_classes], false, rng);
        AuxClassifier { store, net }
    }

    /// Fraction of rows whose argmax matches the label.
    pub fn accuracy(&self, latents: &Tensor<F>, labels: &[usize]) -> Result<f64> {
        let logits = self.forward(latents)?;
        Ok(hits(&logits, labels) as f64 / labels.len().max(1) as f64)
    }
}

fn hits<F: Real>(logits: &Tensor<F>, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| argmax(logits.row(i)) == y)
        .count()
}

/// `−log D(real) − log(1 − D(fake))` as the sum of two batch means, with
/// the real-vs-fake accuracy at logit 0. Gradients accumulate into `store`.
pub fn discriminator_loss<F: Real>(
    d: &Discriminator<F>,
    store: &mut ParamStore<F>,
    real: &Tensor<F>,
    fake: &Tensor<F>,
) -> Result<(F, f64)> {
    let (lr, cr) = d.net.forward_with(store, real)?;
    let (lf, cf) = d.net.forward_with(store, fake)?;
    let (loss_r, gr) = bce_with_logits(&lr, true)?;
    let (loss_f, gf) = bce_with_logits(&lf, false)?;
    d.net.backward_with(store, &cr, &gr);
    d.net.backward_with(store, &cf, &gf);
    let correct =
        lr.data().iter().filter(|&&x| x > F::zero()).count() + lf.data().iter().filter(|&&x| x < F::zero()).count();
    Ok((loss_r + loss_f, correct as f64 / (lr.len() + lf.len()) as f64))
}

/// Mean cross-entropy of the auxiliary classifier on labelled latents, with
/// its accuracy. Gradients accumulate into `store`.
pub fn aux_loss<F: Real>(
    c: &AuxClassifier<F>,
    store: &mut ParamStore<F>,
    latents: &Tensor<F>,
    labels: &[usize],
) -> Result<(F, f64)> {
    let (logits, cache) = c.net.forward_with(store, latents)?;
    let (loss, grad) = cross_entropy_with_grad(&logits, labels)?;
    c.net.backward_with(store, &cache, &grad);
    Ok((loss, hits(&logits, labels) as f64 / labels.len() as f64))
}

#[derive(Debug, Clone)]
pub struct GeneratorLoss<F> {
    /// `adversarial + α·neg_entropy`
    pub loss: F,
    /// Non-saturating term `−log D(G(ε))`.
    pub adversarial: F,
    /// `−H(softmax(C(G(ε))))`, batch mean.
    pub neg_entropy: F,
    pub fake: Tensor<F>,
}

/// Generator objective. Gradients accumulate into all three stores; only the
/// generator's are meant to be applied. With `alpha == 0` the auxiliary
/// classifier is evaluated but never differentiated.
#[allow(clippy::too_many_arguments)]
pub fn generator_loss<F: Real>(
    g: &Generator<F>,
    g_store: &mut ParamStore<F>,
    d: &Discriminator<F>,
    d_store: &mut ParamStore<F>,
    c: &AuxClassifier<F>,
    c_store: &mut ParamStore<F>,
    noise: &Tensor<F>,
    alpha: f64,
) -> Result<GeneratorLoss<F>> {
    let (fake, gcache) = g.net.forward_with(g_store, noise)?;
    let (dl, dcache) = d.net.forward_with(d_store, &fake)?;
    let (adversarial, gd) = bce_with_logits(&dl, true)?;
    let mut grad_fake = d.net.backward_with(d_store, &dcache, &gd);
    let (cl, ccache) = c.net.forward_with(c_store, &fake)?;
    let (neg_entropy, gc) = neg_entropy_with_grad(&cl)?;
    let a = F::lit(alpha);
    if alpha != 0.0 {
        let gc = Tensor::from_vec(gc.shape(), gc.data().iter().map(|&v| v * a).collect())?;
        let gz = c.net.backward_with(c_store, &ccache, &gc);
        for (acc, v) in grad_fake.data_mut().iter_mut().zip(gz.data()) {
            *acc += *v;
        }
    }
    g.net.backward_with(g_store, &gcache, &grad_fake);
    Ok(GeneratorLoss {
        loss: adversarial + a * neg_entropy,
        adversarial,
        neg_entropy,
        fake,
    })
}

/// The three adversarial networks after training.
#[derive(Debug, Clone)]
pub struct Gan<F> {
    pub generator: Generator<F>,
    pub discriminator: Discriminator<F>,
    pub aux: AuxClassifier<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialRecord {
    pub step: usize,
    pub d_loss: f64,
    pub d_accuracy: f64,
    pub g_loss: f64,
    pub aux_loss: f64,
    pub aux_accuracy: f64,
    /// Mean entropy of the auxiliary classifier on generated latents.
    pub aux_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialLog {
    pub records: Vec<AdversarialRecord>,
    /// Accuracy of the freshly initialised auxiliary classifier on every
    /// real latent, before any update.
    pub initial_aux_accuracy: f64,
    pub num_real: usize,
    pub num_classes: usize,
}

impl AdversarialLog {
    /// Mean discriminator accuracy over the last `window` steps.
    pub fn final_d_accuracy(&self, window: usize) -> Option<f64> {
        let n = self.records.len();
        if n == 0 {
            return None;
        }
        let tail = &self.records[n - window.clamp(1, n)..];
        Some(tail.iter().map(|r| r.d_accuracy).sum::<f64>() / tail.len() as f64)
    }

    pub fn initial_aux_entropy(&self) -> Option<f64> {
        self.records.first().map(|r| r.aux_entropy)
    }

    pub fn final_aux_entropy(&self) -> Option<f64> {
        self.records.last().map(|r| r.aux_entropy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,d_loss,d_accuracy,g_loss,aux_loss,aux_accuracy,aux_entropy\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.step, r.d_loss, r.d_accuracy, r.g_loss, r.aux_loss, r.aux_accuracy, r.aux_entropy
            );
        }
        out
    }
}

fn gather(z: &Tensor<f32>, rows: &[usize]) -> Tensor<f32> {
    let mut data = Vec::with_capacity(rows.len() * z.cols());
    for &i in rows {
        data.extend_from_slice(z.row(i));
    }
    Tensor::from_vec(&[rows.len(), z.cols()], data).expect("gathered shape")
}

/// Alternating discriminator, auxiliary-classifier and generator steps over
/// the frozen encoder's latent codes of `train`.
pub fn adversarial_train(
    ae: &Autoencoder<f32>,
    train: &EncodedSplit,
    num_classes: usize,
    cfg: &PogConfig,
) -> Result<(Gan<f32>, AdversarialLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("adversarial training needs IND latents".into()));
    }
    if num_classes < 2 {
        return Err(Error::Config("auxiliary classifier needs at least two intents".into()));
    }
    let real = ae.encode_split(train)?;
    let labels = train.intents()?;
    if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::InvalidInput(format!("intent {y} outside {num_classes} classes")));
    }
    let dz = ae.latent_dim();
    let mut init_rng = Rng::stream(cfg.seed, STREAM_GAN_INIT);
    let mut g = Generator::<f32>::new(cfg.noise_dim, cfg.gan_hidden, dz, &mut init_rng);
    let mut d = Discriminator::<f32>::new(dz, cfg.gan_hidden, &mut init_rng);
    let mut c = AuxClassifier::<f32>::new(
        dz,
        cfg.gan_hidden,
        num_classes,
        &mut Rng::stream(cfg.seed, STREAM_AUX_INIT),
    );
    let initial_aux_accuracy = c.accuracy(&real, &labels)?;

    let adam_cfg = AdamConfig {
        beta1: cfg.adv_beta1,
        ..AdamConfig::with_lr(cfg.adv_lr)
    };
    let mut adam_g = Adam::new(&g.store, adam_cfg);
    let mut adam_d = Adam::new(&d.store, adam_cfg);
    let mut adam_c = Adam::new(&c.store, adam_cfg);
    let mut noise_rng = Rng::stream(cfg.seed, STREAM_GAN_NOISE);
    let mut real_rng = Rng::stream(cfg.seed, STREAM_GAN_REAL);
    let mut records = Vec::with_capacity(cfg.adv_steps);

    for step in 0..cfg.adv_steps {
        let rows: Vec<usize> = (0..cfg.adv_batch).map(|_| real_rng.below(real.rows())).collect();
        let real_batch = gather(&real, &rows);
        let batch_labels: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
        let noise = g.sample_noise(cfg.adv_batch, &mut noise_rng);

        let fake = g.forward(&noise)?;
        let mut gs = std::mem::take(&mut g.store);
        let mut ds = std::mem::take(&mut d.store);
        let mut cs = std::mem::take(&mut c.store);

        ds.zero_grad();
        let (d_loss, d_accuracy) = discriminator_loss(&d, &mut ds, &real_batch, &fake)?;
        adam_d.step(&mut ds);

        cs.zero_grad();
        let (a_loss, aux_accuracy) = aux_loss(&c, &mut cs, &real_batch, &batch_labels)?;
        adam_c.step(&mut cs);

        gs.zero_grad();
        let gl = generator_loss(&g, &mut gs, &d, &mut ds, &c, &mut cs, &noise, cfg.entropy_weight)?;
        adam_g.step(&mut gs);
        ds.zero_grad();
        cs.zero_grad();
        (g.store, d.store, c.store) = (gs, ds, cs);

        let record = AdversarialRecord {
            step,
            d_loss: d_loss.as_f64(),
            d_accuracy,
            g_loss: gl.loss.as_f64(),
            aux_loss: a_loss.as_f64(),
            aux_accuracy,
            aux_entropy: -gl.neg_entropy.as_f64(),
        };
        if ![record.d_loss, record.g_loss, record.aux_loss]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite(format!(
                "adversarial step {step}: d_loss {}, g_loss {}, aux_loss {}",
                record.d_loss, record.g_loss, record.aux_loss
            )));
        }
        if step % 100 == 0 || step + 1 == cfg.adv_steps {
            log::info!(
                "adversarial step {step}: D acc {:.3}, G loss {:.4}, aux entropy {:.4}",
                record.d_accuracy,
                record.g_loss,
                record.aux_entropy
            );
        }
        records.push(record);
    }
    Ok((
        Gan {
            generator: g,
            discriminator: d,
            aux: c,
        },
        AdversarialLog {
            records,
            initial_aux_accuracy,
            num_real: real.rows(),
            num_classes,
        },
    ))
}
