//! Finite-difference checks of every layer and composite loss at f64, one
//! function per check, each parameterised by a seed.

use ood_core::classifier::{combined_loss, Arch, Classifier, ClassifierConfig};
use ood_core::corpus::PAD_ID;
use ood_core::numerics::layers::{
    max_over_time, max_over_time_backward, mean_over_time, mean_over_time_backward, relu_backward, relu_forward,
    tanh_backward, tanh_forward, Affine, Conv1d, Dropout, Embedding, GruCell,
};
use ood_core::numerics::loss::{bce_with_logits, cross_entropy_with_grad, neg_entropy_with_grad};
use ood_core::numerics::{finite_diff_check, GradCheckReport, ParamId, ParamStore, Rng, Tensor, DEFAULT_EPS};
use ood_core::pog::{
    aux_loss, discriminator_loss, generator_loss, Autoencoder, AuxClassifier, DecoderKind, Discriminator, Generator,
    PogConfig,
};
use ood_core::Result;

pub const TOL: f64 = 1e-4;

pub type Check = fn(u64) -> Result<GradCheckReport>;

/// Every check with its name.
pub const ALL: [(&str, Check); 18] = [
    ("embedding", embedding),
    ("affine", affine),
    ("conv1d", conv1d),
    ("max_over_time", max_pooling),
    ("mean_over_time", mean_pooling),
    ("tanh∘dropout∘relu", activations_and_dropout),
    ("gru", gru_cell),
    ("ce+neg_entropy+bce", softmax_losses),
    ("classifier combined loss (cnn)", classifier_cnn),
    ("classifier combined loss (mean-pool-mlp)", classifier_mlp),
    ("autoencoder (positional)", autoencoder_positional),
    ("autoencoder (gru)", autoencoder_gru),
    ("discriminator", discriminator),
    ("aux classifier", aux_classifier),
    ("generator α=0", generator_alpha0),
    ("generator α=1", generator_alpha1),
    ("generator α=2.5", generator_alpha25),
    ("generator via discriminator params", generator_wrt_discriminator),
];

/// Random readout weights: the objective is `Σ w ⊙ output`.
fn readout(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn away_from_zero(rng: &mut Rng, store: &mut ParamStore<f64>, name: &str, shape: &[usize]) -> ParamId {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.uniform_range(0.05, 1.0);
            if rng.uniform() < 0.5 {
                -v
            } else {
                v
            }
        })
        .collect();
    store.add(name, Tensor::from_vec(shape, data).unwrap())
}

fn add_grad(store: &mut ParamStore<f64>, id: ParamId, g: &Tensor<f64>) {
    for (a, b) in store.grad_mut(id).data_mut().iter_mut().zip(g.data()) {
        *a += b;
    }
}

/// Zero-initialised biases park relu units fed constant inputs (all-PAD
/// windows, say) exactly on the kink; move them off before differencing.
fn randomize_biases(store: &mut ParamStore<f64>, rng: &mut Rng) {
    for p in store.iter_mut().filter(|p| p.name.ends_with(".bias")) {
        for v in p.value.data_mut() {
            *v = rng.uniform_range(-0.3, 0.3);
        }
    }
}

fn check(store: &mut ParamStore<f64>, f: impl FnMut(&mut ParamStore<f64>) -> Result<f64>) -> Result<GradCheckReport> {
    finite_diff_check(f, store, DEFAULT_EPS)
}

pub fn embedding(seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(seed);
    let (v, d) = (3 + rng.below(6), 1 + rng.below(4));
    let mut store = ParamStore::new();
    let emb = Embedding::new(&mut store, "e", v, d, &mut rng);
    let ids: Vec<usize> = (0..2 + rng.below(6)).map(|_| rng.below(v)).collect();
    let w = readout(&mut rng, ids.len() * d);
    check(&mut store, |s| {
        s.zero_grad();
        let y = emb.forward(s, &ids)?;
        emb.backward(s, &ids, &Tensor::from_vec(y.shape(), w.clone())?);
        Ok(dot(y.data(), &w))
    })
}

pub fn affine(seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(100 + seed);
    let (n, i, o) = (1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(5));
    let mut store = ParamStore::new();
    let layer = Affine::new(&mut store, "a", i, o, &mut rng);
    let x = store.add_uniform("x", &[n, i], 1.0, &mut rng);
    let w = readout(&mut rng, n * o);
    check(&mut store, |s| {
        s.zero_grad();
        let xin = s.value(x).clone();
        let y = layer.forward(s, &xin)?;
        let gx = layer.backward(s, &xin, &Tensor::from_vec(y.shape(), w.clone())?);
        add_grad(s, x, &gx);
        Ok(dot(y.data(), &w))
    })
}

pub fn conv1d(seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(200 + seed);
    let (b, d, width, f) = (1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3));
    let len = width + rng.below(3);
    let mut store = ParamStore::new();
    let conv = Conv1d::new(&mut store, "c", width, d, f, &mut rng);
    let x = store.add_uniform("x", &[b, len, d], 1.0, &mut rng);
    let w = readout(&mut rng, b * (len - width + 1) * f);
    check(&mut store, |s| {
        s.zero_grad();
        let xin = s.value(x).clone();
        let (y, cache) = conv.forward(s, &xin)?;
        let gx = conv.backward(s, &cache, &Tensor::from_vec(y.shape(), w.clone())?);
        add_grad(s, x, &gx);
        Ok(dot(y.data(), &w))
    })
}

pub fn max_pooling(seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(300 + seed);
    let (b, t, c) = (1 + rng.below(3), 1 + rng.below(5), 1 + rng.below(4));
    let mut store = ParamStore::new();
    let x = store.add_uniform("x", &[b, t, c], 1.0, &mut rng);
    let w = readout(&mut rng, b * c);
    check(&mut store, |s| {
        s.zero_grad();
        let (y, arg) = max_over_time(s.value(x))?;
        let gx = max_over_time_backward(&arg, &Tensor::from_vec(y.shape(), w.clone())?, t);
        add_grad(s, x, &gx);
        Ok(dot(y.data(), &w))
    })
}

pub fn mean_pooling(seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(400 + seed);
    let (b, l, d) = (1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(3));
    let lengths: Vec<usize> = (0..b).map(|_| rng.below(l + 1)).collect();
    let mut store = ParamStore::new();
    let x = store.add_uniform("x", &[b, l, d], 1.0, &mut rng);
    let w = readout(&mut rng, b * d);
    check(&mut store, |s| {
        s.zero_grad();
        let y = mean_over_time(s.value(x), &lengths)?;
        let gx = mean_over_time_backward(&Tensor::from_vec(y.shape(), w.clone())?, &lengths, l);
        add_grad(s, x, &gx);
        Ok(dot(y.data(), &w))
    })
}

pub fn activations_and_dropout(seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(500 + seed);
    let shape = [1 + rng.below(3), 1 + rng.below(5)];
    let mut store = ParamStore::new();
    let x = away_from_zero(&mut rng, &mut store, "x", &shape);
    let w = readout(&mut rng, shape[0] * shape[1]);
    let mask_rng = Rng::new(seed);
    check(&mut store, |s| {
        s.zero_grad();
        let a = tanh_forward(s.value(x));
        let (dr, mask) = Dropout { rate: 0.3 }.forward_train(&a, &mut mask_rng.clone());
        let r = relu_forward(&dr);
        let g = Tensor::from_vec(r.shape(), w.clone())?;
        let g = relu_backward(&r, &g);
        let g = Dropout::backward(&mask, &g);
        let g = tanh_backward(&a, &g);
        add_grad(s, x, &g);
        Ok(dot(r.data(), &w))
    })
}

pub fn gru_cell(seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(600 + seed);
    let (n, i, h) = (1 + rng.below(3), 1 + rng.below(4), 1 + rng.below(4));
    let mut store = ParamStore::new();
    let cell = GruCell::new(&mut store, "gru", i, h, &mut rng);
    // Non-zero biases exercise every term.
    for name in ["gru.b_input", "gru.b_hidden"] {
        let id = store.find(name).unwrap();
        for v in store.get_mut(id).value.data_mut() {
            *v = rng.uniform_range(-0.5, 0.5);
        }
    }
    let x = store.add_uniform("x", &[n, i], 1.0, &mut rng);
    let h0 = store.add_uniform("h0", &[n, h], 1.0, &mut rng);
    let w = readout(&mut rng, n * h);
    check(&mut store, |s| {
        s.zero_grad();
        let (xin, hin) = (s.value(x).clone(), s.value(h0).clone());
        // Two unrolled steps sharing parameters.
        let (h1, c1) = cell.forward(s, &xin, &hin)?;
        let (h2, c2) = cell.forward(s, &xin, &h1)?;
        let (gx2, gh1) = cell.backward(s, &c2, &Tensor::from_vec(h2.shape(), w.clone())?);
        let (gx1, gh0) = cell.backward(s, &c1, &gh1);
        add_grad(s, x, &gx2);
        add_grad(s, x, &gx1);
        add_grad(s, h0, &gh0);
        Ok(dot(h2.data(), &w))
    })
}

pub fn softmax_losses(seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(700 + seed);
    let (b, k) = (1 + rng.below(4), 2 + rng.below(5));
    let labels: Vec<usize> = (0..b).map(|_| rng.below(k)).collect();
    let mut store = ParamStore::new();
    let z = store.add_uniform("z", &[b, k], 3.0, &mut rng);
    check(&mut store, |s| {
        s.zero_grad();
        let zin = s.value(z).clone();
        let (ce, g1) = cross_entropy_with_grad(&zin, &labels)?;
        let (ne, g2) = neg_entropy_with_grad(&zin)?;
        let (bce, g3) = bce_with_logits(&zin, seed.is_multiple_of(2))?;
        add_grad(s, z, &g1);
        add_grad(s, z, &g2);
        add_grad(s, z, &g3);
        Ok(ce + ne + bce)
    })
}

fn random_batch(rng: &mut Rng, rows: usize, max_len: usize, vocab: usize) -> (Vec<usize>, Vec<usize>) {
    let mut ids = Vec::new();
    let mut lens = Vec::new();
    for _ in 0..rows {
        let len = rng.below(max_len + 1);
        for t in 0..max_len {
            ids.push(if t < len { 1 + rng.below(vocab - 1) } else { PAD_ID });
        }
        lens.push(len);
    }
    (ids, lens)
}

/// Full-model objective on a tiny configuration (V=20, d_e=8, K=3).
fn classifier(arch: Arch, seed: u64) -> Result<GradCheckReport> {
    let cfg = ClassifierConfig {
        arch,
        embed_dim: 8,
        conv_widths: vec![2, 3],
        conv_filters: 3,
        hidden_dim: 5,
        dropout: 0.25,
    };
    let model = Classifier::<f64>::new(&cfg, 20, 3, &mut Rng::new(seed))?;
    let mut rng = Rng::new(800 + seed);
    let (ids, lens) = random_batch(&mut rng, 3, 5, 20);
    let (oids, olens) = random_batch(&mut rng, 3, 5, 20);
    let labels: Vec<usize> = (0..3).map(|_| rng.below(3)).collect();
    let drop_a = Rng::new(seed + 1);
    let drop_b = Rng::new(seed + 2);
    let mut store = model.store().clone();
    randomize_biases(&mut store, &mut rng);
    check(&mut store, |s| {
        s.zero_grad();
        let (li, ci) = model.forward_with(s, &ids, &lens, Some(&mut drop_a.clone()))?;
        let (lo, co) = model.forward_with(s, &oids, &olens, Some(&mut drop_b.clone()))?;
        let loss = combined_loss(&li, &labels, Some(&lo), 0.7)?;
        model.backward_with(s, &ci, &loss.grad_ind);
        model.backward_with(s, &co, loss.grad_ood.as_ref().unwrap());
        Ok(loss.value)
    })
}

pub fn classifier_cnn(seed: u64) -> Result<GradCheckReport> {
    classifier(Arch::Cnn, seed)
}

pub fn classifier_mlp(seed: u64) -> Result<GradCheckReport> {
    classifier(Arch::MeanPoolMlp, seed)
}

/// d_z=4, d_n=3, K=3, V=10.
fn tiny_pog(decoder: DecoderKind) -> PogConfig {
    PogConfig {
        latent_dim: 4,
        noise_dim: 3,
        embed_dim: 5,
        hidden_dim: 6,
        gan_hidden: 5,
        decoder,
        ..PogConfig::default()
    }
}

fn autoencoder(decoder: DecoderKind, seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(1000 + seed);
    let (v, max_len) = (10, 4);
    let ae = Autoencoder::<f64>::new(&tiny_pog(decoder), v, max_len, &mut rng)?;
    let mut store = ae.store().clone();
    randomize_biases(&mut store, &mut rng);
    let (ids, lengths) = random_batch(&mut rng, 3, max_len, v);
    check(&mut store, |s| {
        s.zero_grad();
        let (z, ec) = ae.encode_with(s, &ids, &lengths)?;
        let (rec, dc) = ae.reconstruction_with(s, &z, &ids, &lengths)?;
        let gz = ae.decode_backward_with(s, &dc, &rec.grad_logits);
        ae.encode_backward_with(s, &ec, &gz);
        Ok(rec.loss)
    })
}

pub fn autoencoder_positional(seed: u64) -> Result<GradCheckReport> {
    autoencoder(DecoderKind::Positional, seed)
}

pub fn autoencoder_gru(seed: u64) -> Result<GradCheckReport> {
    autoencoder(DecoderKind::Gru, seed)
}

fn matrix(rng: &mut Rng, rows: usize, cols: usize, normal: bool) -> Tensor<f64> {
    let data = (0..rows * cols)
        .map(|_| {
            if normal {
                rng.normal()
            } else {
                rng.uniform_range(-0.9, 0.9)
            }
        })
        .collect();
    Tensor::from_vec(&[rows, cols], data).unwrap()
}

pub fn discriminator(seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(1100 + seed);
    let d = Discriminator::<f64>::new(4, 5, &mut rng);
    let mut store = d.store().clone();
    randomize_biases(&mut store, &mut rng);
    let (real, fake) = (matrix(&mut rng, 3, 4, false), matrix(&mut rng, 4, 4, false));
    check(&mut store, |s| {
        s.zero_grad();
        discriminator_loss(&d, s, &real, &fake).map(|(l, _)| l)
    })
}

pub fn aux_classifier(seed: u64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(1200 + seed);
    let c = AuxClassifier::<f64>::new(4, 5, 3, &mut rng);
    let mut store = c.store().clone();
    randomize_biases(&mut store, &mut rng);
    let z = matrix(&mut rng, 5, 4, false);
    let labels: Vec<usize> = (0..5).map(|_| rng.below(3)).collect();
    check(&mut store, |s| {
        s.zero_grad();
        aux_loss(&c, s, &z, &labels).map(|(l, _)| l)
    })
}

struct GanParts {
    g: Generator<f64>,
    d: Discriminator<f64>,
    c: AuxClassifier<f64>,
    gs: ParamStore<f64>,
    ds: ParamStore<f64>,
    cs: ParamStore<f64>,
    noise: Tensor<f64>,
}

fn gan_parts(seed: u64) -> GanParts {
    let mut rng = Rng::new(1300 + seed);
    let g = Generator::<f64>::new(3, 5, 4, &mut rng);
    let d = Discriminator::<f64>::new(4, 5, &mut rng);
    let c = AuxClassifier::<f64>::new(4, 5, 3, &mut rng);
    let (mut gs, mut ds, mut cs) = (g.store().clone(), d.store().clone(), c.store().clone());
    for s in [&mut gs, &mut ds, &mut cs] {
        randomize_biases(s, &mut rng);
    }
    let noise = matrix(&mut rng, 4, 3, true);
    GanParts {
        g,
        d,
        c,
        gs,
        ds,
        cs,
        noise,
    }
}

fn generator(alpha: f64, seed: u64) -> Result<GradCheckReport> {
    let GanParts {
        g,
        d,
        c,
        mut gs,
        ds,
        cs,
        noise,
    } = gan_parts(seed);
    check(&mut gs, |s| {
        s.zero_grad();
        let (mut d2, mut c2) = (ds.clone(), cs.clone());
        generator_loss(&g, s, &d, &mut d2, &c, &mut c2, &noise, alpha).map(|l| l.loss)
    })
}

pub fn generator_alpha0(seed: u64) -> Result<GradCheckReport> {
    generator(0.0, seed)
}

pub fn generator_alpha1(seed: u64) -> Result<GradCheckReport> {
    generator(1.0, seed)
}

pub fn generator_alpha25(seed: u64) -> Result<GradCheckReport> {
    generator(2.5, seed)
}

/// The generator objective differentiated through the discriminator's own
/// parameters, which exercises the backward pass the generator step relies on.
pub fn generator_wrt_discriminator(seed: u64) -> Result<GradCheckReport> {
    let GanParts {
        g,
        d,
        c,
        gs,
        mut ds,
        cs,
        noise,
    } = gan_parts(seed);
    check(&mut ds, |s| {
        s.zero_grad();
        let (mut g2, mut c2) = (gs.clone(), cs.clone());
        generator_loss(&g, &mut g2, &d, s, &c, &mut c2, &noise, 1.0).map(|l| l.loss)
    })
}
