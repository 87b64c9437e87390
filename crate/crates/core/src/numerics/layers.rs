//! Layers with analytic backward passes.
//!
//! Sequence tensors are `[batch, positions, features]`; flat tensors are
//! `[rows, features]`. `backward` functions accumulate into the parameter
//! gradients of the [`ParamStore`] and return the input gradient.

use super::kernels::{add_column_sums, gemm_nn, gemm_nt, gemm_tn_acc};
use super::{ParamId, ParamStore, Real, Rng, Tensor};
use crate::corpus::PAD_ID;
use crate::error::{Error, Result};

/// Half-width of the uniform embedding initialisation.
pub const EMBED_INIT: f64 = 0.08;

/// Fan-in scaled uniform bound, `sqrt(6 / fan_in)`.
pub fn fan_in_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

fn check_dims<F: Real>(x: &Tensor<F>, cols: usize, what: &str) -> Result<usize> {
    if x.cols() != cols {
        return Err(Error::Shape(format!(
            "{what}: expected last dimension {cols}, got shape {:?}",
            x.shape()
        )));
    }
    Ok(x.rows())
}

// ---------------------------------------------------------------------------
// Embedding
// ---------------------------------------------------------------------------

/// Lookup table `[vocab, dim]`. The PAD id always maps to the zero vector:
/// its row is never read and never receives gradient.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, vocab: usize, dim: usize, rng: &mut Rng) -> Self {
        let table = store.add_uniform(format!("{name}.table"), &[vocab, dim], EMBED_INIT, rng);
        let data = store.get_mut(table).value.data_mut();
        data[PAD_ID * dim..(PAD_ID + 1) * dim]
            .iter_mut()
            .for_each(|x| *x = F::zero());
        Embedding { table, vocab, dim }
    }

    /// `[ids.len(), dim]` rows.
    pub fn forward<F: Real>(&self, store: &ParamStore<F>, ids: &[usize]) -> Result<Tensor<F>> {
        let table = store.value(self.table).data();
        let d = self.dim;
        let mut out = vec![F::zero(); ids.len() * d];
        for (row, &id) in out.chunks_mut(d).zip(ids) {
            if id >= self.vocab {
                return Err(Error::InvalidInput(format!(
                    "token id {id} out of range for vocabulary of {}",
                    self.vocab
                )));
            }
            if id != PAD_ID {
                row.copy_from_slice(&table[id * d..(id + 1) * d]);
            }
        }
        Tensor::from_vec(&[ids.len(), d], out)
    }

    pub fn backward<F: Real>(&self, store: &mut ParamStore<F>, ids: &[usize], grad_out: &Tensor<F>) {
        let d = self.dim;
        let grad = store.grad_mut(self.table).data_mut();
        for (g, &id) in grad_out.data().chunks(d).zip(ids) {
            if id == PAD_ID {
                continue;
            }
            for (acc, &v) in grad[id * d..(id + 1) * d].iter_mut().zip(g) {
                *acc += v;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Affine
// ---------------------------------------------------------------------------

/// `y = x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Affine {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), &[in_dim, out_dim], fan_in_bound(in_dim), rng);
        let bias = store.add_zeros(format!("{name}.bias"), &[out_dim]);
        Affine {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<F: Real>(&self, store: &ParamStore<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
        let n = check_dims(x, self.in_dim, "affine input")?;
        let mut out = vec![F::zero(); n * self.out_dim];
        gemm_nn(
            x.data(),
            store.value(self.weight).data(),
            &mut out,
            n,
            self.in_dim,
            self.out_dim,
        );
        let b = store.value(self.bias).data();
        for row in out.chunks_mut(self.out_dim) {
            for (y, &bv) in row.iter_mut().zip(b) {
                *y += bv;
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = self.out_dim;
        Tensor::from_vec(&shape, out)
    }

    pub fn backward<F: Real>(&self, store: &mut ParamStore<F>, x: &Tensor<F>, grad_out: &Tensor<F>) -> Tensor<F> {
        let n = x.rows();
        let g = grad_out.data();
        gemm_tn_acc(
            x.data(),
            g,
            store.grad_mut(self.weight).data_mut(),
            n,
            self.in_dim,
            self.out_dim,
        );
        add_column_sums(g, store.grad_mut(self.bias).data_mut(), self.out_dim);
        let mut gx = vec![F::zero(); n * self.in_dim];
        gemm_nt(
            g,
            store.value(self.weight).data(),
            &mut gx,
            n,
            self.out_dim,
            self.in_dim,
        );
        Tensor::from_vec(x.shape(), gx).expect("same shape as input")
    }
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

pub fn tanh_forward<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let data = x.data().iter().map(|v| v.tanh()).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Backward through tanh given its output `y`.
pub fn tanh_backward<F: Real>(y: &Tensor<F>, grad_out: &Tensor<F>) -> Tensor<F> {
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| g * (F::one() - y * y))
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

pub fn relu_forward<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let data = x
        .data()
        .iter()
        .map(|&v| if v > F::zero() { v } else { F::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Backward through relu given its output `y`.
pub fn relu_backward<F: Real>(y: &Tensor<F>, grad_out: &Tensor<F>) -> Tensor<F> {
    let data = y
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > F::zero() { g } else { F::zero() })
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

pub(crate) fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    /// Returns the output and the per-element multiplier mask.
    pub fn forward_train<F: Real>(&self, x: &Tensor<F>, rng: &mut Rng) -> (Tensor<F>, Vec<F>) {
        if self.rate <= 0.0 {
            return (x.clone(), vec![F::one(); x.len()]);
        }
        let keep = F::lit(1.0 / (1.0 - self.rate));
        let mask: Vec<F> = (0..x.len())
            .map(|_| if rng.uniform() < self.rate { F::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        (Tensor::from_vec(x.shape(), data).expect("same shape"), mask)
    }

    pub fn backward<F: Real>(mask: &[F], grad_out: &Tensor<F>) -> Tensor<F> {
        let data = grad_out.data().iter().zip(mask).map(|(&g, &m)| g * m).collect();
        Tensor::from_vec(grad_out.shape(), data).expect("same shape")
    }
}

// ---------------------------------------------------------------------------
// Convolution over positions
// ---------------------------------------------------------------------------

/// 1-D convolution over token positions ("valid" padding): input
/// `[B, L, D]`, `filters` kernels of `width` positions, output
/// `[B, L - width + 1, filters]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub width: usize,
    pub in_dim: usize,
    pub filters: usize,
}

/// Unfolded input windows kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Conv1dCache<F> {
    cols: Vec<F>,
    batch: usize,
    len: usize,
    out_len: usize,
}

impl Conv1d {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        name: &str,
        width: usize,
        in_dim: usize,
        filters: usize,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = width * in_dim;
        let weight = store.add_uniform(format!("{name}.weight"), &[fan_in, filters], fan_in_bound(fan_in), rng);
        let bias = store.add_zeros(format!("{name}.bias"), &[filters]);
        Conv1d {
            weight,
            bias,
            width,
            in_dim,
            filters,
        }
    }

    pub fn forward<F: Real>(&self, store: &ParamStore<F>, x: &Tensor<F>) -> Result<(Tensor<F>, Conv1dCache<F>)> {
        let (batch, len, dim) = match x.shape() {
            &[b, l, d] => (b, l, d),
            s => return Err(Error::Shape(format!("conv input must be [B, L, D], got {s:?}"))),
        };
        if dim != self.in_dim {
            return Err(Error::Shape(format!("conv expects D={}, got {dim}", self.in_dim)));
        }
        if len < self.width {
            return Err(Error::Shape(format!(
                "sequence length {len} shorter than filter width {}",
                self.width
            )));
        }
        let out_len = len - self.width + 1;
        let win = self.width * dim;
        // A window of `width` consecutive positions is a contiguous slice.
        let mut cols = Vec::with_capacity(batch * out_len * win);
        for b in 0..batch {
            let seq = &x.data()[b * len * dim..(b + 1) * len * dim];
            for t in 0..out_len {
                cols.extend_from_slice(&seq[t * dim..t * dim + win]);
            }
        }
        let rows = batch * out_len;
        let mut out = vec![F::zero(); rows * self.filters];
        gemm_nn(
            &cols,
            store.value(self.weight).data(),
            &mut out,
            rows,
            win,
            self.filters,
        );
        let bias = store.value(self.bias).data();
        for row in out.chunks_mut(self.filters) {
            for (y, &bv) in row.iter_mut().zip(bias) {
                *y += bv;
            }
        }
        let out = Tensor::from_vec(&[batch, out_len, self.filters], out)?;
        Ok((
            out,
            Conv1dCache {
                cols,
                batch,
                len,
                out_len,
            },
        ))
    }

    pub fn backward<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        cache: &Conv1dCache<F>,
        grad_out: &Tensor<F>,
    ) -> Tensor<F> {
        let rows = cache.batch * cache.out_len;
        let win = self.width * self.in_dim;
        let g = grad_out.data();
        gemm_tn_acc(
            &cache.cols,
            g,
            store.grad_mut(self.weight).data_mut(),
            rows,
            win,
            self.filters,
        );
        add_column_sums(g, store.grad_mut(self.bias).data_mut(), self.filters);
        let mut gcols = vec![F::zero(); rows * win];
        gemm_nt(g, store.value(self.weight).data(), &mut gcols, rows, self.filters, win);
        let dim = self.in_dim;
        let mut gx = vec![F::zero(); cache.batch * cache.len * dim];
        for b in 0..cache.batch {
            let seq = &mut gx[b * cache.len * dim..(b + 1) * cache.len * dim];
            for t in 0..cache.out_len {
                let src = &gcols[(b * cache.out_len + t) * win..(b * cache.out_len + t + 1) * win];
                for (acc, &v) in seq[t * dim..t * dim + win].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        Tensor::from_vec(&[cache.batch, cache.len, dim], gx).expect("input shape")
    }
}

// ---------------------------------------------------------------------------
// Pooling over positions
// ---------------------------------------------------------------------------

/// Max over positions: `[B, T, C] -> [B, C]`, returning argmax positions.
/// Ties resolve to the earliest position.
pub fn max_over_time<F: Real>(x: &Tensor<F>) -> Result<(Tensor<F>, Vec<usize>)> {
    let (batch, len, ch) = match x.shape() {
        &[b, t, c] if t > 0 => (b, t, c),
        s => return Err(Error::Shape(format!("max pooling needs [B, T>0, C], got {s:?}"))),
    };
    let mut out = vec![F::zero(); batch * ch];
    let mut arg = vec![0usize; batch * ch];
    for b in 0..batch {
        let seq = &x.data()[b * len * ch..(b + 1) * len * ch];
        let o = &mut out[b * ch..(b + 1) * ch];
        let a = &mut arg[b * ch..(b + 1) * ch];
        o.copy_from_slice(&seq[..ch]);
        for t in 1..len {
            for c in 0..ch {
                let v = seq[t * ch + c];
                if v > o[c] {
                    o[c] = v;
                    a[c] = t;
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[batch, ch], out)?, arg))
}

pub fn max_over_time_backward<F: Real>(argmax: &[usize], grad_out: &Tensor<F>, len: usize) -> Tensor<F> {
    let (batch, ch) = (grad_out.rows(), grad_out.cols());
    let mut gx = vec![F::zero(); batch * len * ch];
    for b in 0..batch {
        for c in 0..ch {
            let t = argmax[b * ch + c];
            gx[(b * len + t) * ch + c] = grad_out.data()[b * ch + c];
        }
    }
    Tensor::from_vec(&[batch, len, ch], gx).expect("shape")
}

/// Masked mean over the first `lengths[b]` positions, divided by
/// `max(lengths[b], 1)` so an all-PAD row yields zeros.
pub fn mean_over_time<F: Real>(x: &Tensor<F>, lengths: &[usize]) -> Result<Tensor<F>> {
    let (batch, len, dim) = match x.shape() {
        &[b, l, d] => (b, l, d),
        s => return Err(Error::Shape(format!("mean pooling needs [B, L, D], got {s:?}"))),
    };
    if lengths.len() != batch {
        return Err(Error::Shape(format!("{} lengths for batch of {batch}", lengths.len())));
    }
    let mut out = vec![F::zero(); batch * dim];
    for b in 0..batch {
        let n = lengths[b].min(len);
        let o = &mut out[b * dim..(b + 1) * dim];
        for t in 0..n {
            for (acc, &v) in o
                .iter_mut()
                .zip(&x.data()[(b * len + t) * dim..(b * len + t + 1) * dim])
            {
                *acc += v;
            }
        }
        let inv = F::one() / F::lit(n.max(1) as f64);
        o.iter_mut().for_each(|v| *v *= inv);
    }
    Tensor::from_vec(&[batch, dim], out)
}

pub fn mean_over_time_backward<F: Real>(grad_out: &Tensor<F>, lengths: &[usize], len: usize) -> Tensor<F> {
    let (batch, dim) = (grad_out.rows(), grad_out.cols());
    let mut gx = vec![F::zero(); batch * len * dim];
    for b in 0..batch {
        let n = lengths[b].min(len);
        let inv = F::one() / F::lit(n.max(1) as f64);
        let g = &grad_out.data()[b * dim..(b + 1) * dim];
        for t in 0..n {
            for (dst, &v) in gx[(b * len + t) * dim..(b * len + t + 1) * dim].iter_mut().zip(g) {
                *dst = v * inv;
            }
        }
    }
    Tensor::from_vec(&[batch, len, dim], gx).expect("shape")
}

// ---------------------------------------------------------------------------
// Gated recurrent cell
// ---------------------------------------------------------------------------

/// Standard GRU cell (gate order reset, update, candidate):
///
/// ```text
/// r  = σ(x·Wr + br + h·Ur + cr)
/// z  = σ(x·Wz + bz + h·Uz + cz)
/// n  = tanh(x·Wn + bn + r ⊙ (h·Un + cn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub b_input: ParamId,
    pub b_hidden: ParamId,
    pub in_dim: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
pub struct GruCache<F> {
    x: Tensor<F>,
    h: Tensor<F>,
    r: Vec<F>,
    z: Vec<F>,
    n: Vec<F>,
    hn: Vec<F>,
}

impl GruCell {
    pub fn new<F: Real>(store: &mut ParamStore<F>, name: &str, in_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let w_input = store.add_uniform(
            format!("{name}.w_input"),
            &[in_dim, 3 * hidden],
            fan_in_bound(in_dim),
            rng,
        );
        let w_hidden = store.add_uniform(
            format!("{name}.w_hidden"),
            &[hidden, 3 * hidden],
            fan_in_bound(hidden),
            rng,
        );
        let b_input = store.add_zeros(format!("{name}.b_input"), &[3 * hidden]);
        let b_hidden = store.add_zeros(format!("{name}.b_hidden"), &[3 * hidden]);
        GruCell {
            w_input,
            w_hidden,
            b_input,
            b_hidden,
            in_dim,
            hidden,
        }
    }

    pub fn forward<F: Real>(
        &self,
        store: &ParamStore<F>,
        x: &Tensor<F>,
        h: &Tensor<F>,
    ) -> Result<(Tensor<F>, GruCache<F>)> {
        let n_rows = check_dims(x, self.in_dim, "gru input")?;
        if check_dims(h, self.hidden, "gru state")? != n_rows {
            return Err(Error::Shape("gru input and state row counts differ".into()));
        }
        let hd = self.hidden;
        let mut gx = vec![F::zero(); n_rows * 3 * hd];
        let mut gh = vec![F::zero(); n_rows * 3 * hd];
        gemm_nn(
            x.data(),
            store.value(self.w_input).data(),
            &mut gx,
            n_rows,
            self.in_dim,
            3 * hd,
        );
        gemm_nn(h.data(), store.value(self.w_hidden).data(), &mut gh, n_rows, hd, 3 * hd);
        let bx = store.value(self.b_input).data();
        let bh = store.value(self.b_hidden).data();
        let mut r = vec![F::zero(); n_rows * hd];
        let mut z = vec![F::zero(); n_rows * hd];
        let mut n = vec![F::zero(); n_rows * hd];
        let mut hn = vec![F::zero(); n_rows * hd];
        let mut out = vec![F::zero(); n_rows * hd];
        for i in 0..n_rows {
            let gxr = &gx[i * 3 * hd..(i + 1) * 3 * hd];
            let ghr = &gh[i * 3 * hd..(i + 1) * 3 * hd];
            for j in 0..hd {
                let k = i * hd + j;
                let rv = sigmoid(gxr[j] + bx[j] + ghr[j] + bh[j]);
                let zv = sigmoid(gxr[hd + j] + bx[hd + j] + ghr[hd + j] + bh[hd + j]);
                let hnv = ghr[2 * hd + j] + bh[2 * hd + j];
                let nv = (gxr[2 * hd + j] + bx[2 * hd + j] + rv * hnv).tanh();
                r[k] = rv;
                z[k] = zv;
                hn[k] = hnv;
                n[k] = nv;
                out[k] = (F::one() - zv) * nv + zv * h.data()[k];
            }
        }
        let out = Tensor::from_vec(&[n_rows, hd], out)?;
        Ok((
            out,
            GruCache {
                x: x.clone(),
                h: h.clone(),
                r,
                z,
                n,
                hn,
            },
        ))
    }

    /// Returns `(grad_x, grad_h)`.
    pub fn backward<F: Real>(
        &self,
        store: &mut ParamStore<F>,
        cache: &GruCache<F>,
        grad_out: &Tensor<F>,
    ) -> (Tensor<F>, Tensor<F>) {
        let hd = self.hidden;
        let n_rows = cache.x.rows();
        let mut dgx = vec![F::zero(); n_rows * 3 * hd];
        let mut dgh = vec![F::zero(); n_rows * 3 * hd];
        let mut dh = vec![F::zero(); n_rows * hd];
        for i in 0..n_rows {
            for j in 0..hd {
                let k = i * hd + j;
                let g = grad_out.data()[k];
                let (rv, zv, nv, hnv) = (cache.r[k], cache.z[k], cache.n[k], cache.hn[k]);
                let dn = g * (F::one() - zv);
                let dz = g * (cache.h.data()[k] - nv);
                dh[k] = g * zv;
                let dan = dn * (F::one() - nv * nv);
                let dr = dan * hnv;
                let dar = dr * rv * (F::one() - rv);
                let daz = dz * zv * (F::one() - zv);
                let row = i * 3 * hd;
                dgx[row + j] = dar;
                dgx[row + hd + j] = daz;
                dgx[row + 2 * hd + j] = dan;
                dgh[row + j] = dar;
                dgh[row + hd + j] = daz;
                dgh[row + 2 * hd + j] = dan * rv;
            }
        }
        gemm_tn_acc(
            cache.x.data(),
            &dgx,
            store.grad_mut(self.w_input).data_mut(),
            n_rows,
            self.in_dim,
            3 * hd,
        );
        gemm_tn_acc(
            cache.h.data(),
            &dgh,
            store.grad_mut(self.w_hidden).data_mut(),
            n_rows,
            hd,
            3 * hd,
        );
        add_column_sums(&dgx, store.grad_mut(self.b_input).data_mut(), 3 * hd);
        add_column_sums(&dgh, store.grad_mut(self.b_hidden).data_mut(), 3 * hd);
        let mut dx = vec![F::zero(); n_rows * self.in_dim];
        gemm_nt(
            &dgx,
            store.value(self.w_input).data(),
            &mut dx,
            n_rows,
            3 * hd,
            self.in_dim,
        );
        let mut dh_rec = vec![F::zero(); n_rows * hd];
        gemm_nt(&dgh, store.value(self.w_hidden).data(), &mut dh_rec, n_rows, 3 * hd, hd);
        for (a, b) in dh.iter_mut().zip(dh_rec) {
            *a += b;
        }
        (
            Tensor::from_vec(&[n_rows, self.in_dim], dx).expect("shape"),
            Tensor::from_vec(&[n_rows, hd], dh).expect("shape"),
        )
    }
}
