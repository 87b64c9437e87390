//! Softmax-family losses. All reductions are means over rows, summed in
//! row order.

use super::layers::sigmoid;
use super::{Real, Tensor};
use crate::error::{Error, Result};

fn log_sum_exp<F: Real>(row: &[F]) -> F {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let s: F = row.iter().map(|&z| (z - max).exp()).sum();
    max + s.ln()
}

fn softmax_row<F: Real>(row: &[F], out: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut s = F::zero();
    for (o, &z) in out.iter_mut().zip(row) {
        *o = (z - max).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

fn require_rows<F: Real>(logits: &Tensor<F>, what: &str) -> Result<(usize, usize)> {
    let k = logits.cols();
    if k == 0 || logits.shape().is_empty() {
        return Err(Error::Shape(format!("{what}: need at least one class column")));
    }
    logits.ensure_finite(what)?;
    Ok((logits.rows(), k))
}

/// Row-wise softmax, stabilised by subtracting the row maximum.
pub fn softmax<F: Real>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    let (_, k) = require_rows(logits, "softmax input")?;
    let mut out = vec![F::zero(); logits.len()];
    for (row, o) in logits.data().chunks(k).zip(out.chunks_mut(k)) {
        softmax_row(row, o);
    }
    Tensor::from_vec(logits.shape(), out)
}

/// Maximum softmax probability of one logit row, computed in `f64`.
/// Equal logits give exactly `1/K`.
pub fn max_softmax<F: Real>(row: &[F]) -> f64 {
    let max = row.iter().map(|z| z.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|z| (z.as_f64() - max).exp()).sum();
    1.0 / s
}

fn check_labels(labels: &[usize], rows: usize, k: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Shape(format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidInput(format!("label {bad} out of range for {k} classes")));
    }
    Ok(())
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy<F: Real>(logits: &Tensor<F>, labels: &[usize]) -> Result<F> {
    cross_entropy_with_grad(logits, labels).map(|(l, _)| l)
}

/// Cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy_with_grad<F: Real>(logits: &Tensor<F>, labels: &[usize]) -> Result<(F, Tensor<F>)> {
    let (rows, k) = require_rows(logits, "cross-entropy logits")?;
    check_labels(labels, rows, k)?;
    if rows == 0 {
        return Err(Error::InvalidInput("cross-entropy over an empty batch".into()));
    }
    let inv_b = F::one() / F::lit(rows as f64);
    let mut total = F::zero();
    let mut grad = vec![F::zero(); logits.len()];
    for ((row, g), &y) in logits.data().chunks(k).zip(grad.chunks_mut(k)).zip(labels) {
        total += log_sum_exp(row) - row[y];
        softmax_row(row, g);
        g[y] -= F::one();
        g.iter_mut().for_each(|v| *v *= inv_b);
    }
    Ok((total * inv_b, Tensor::from_vec(logits.shape(), grad)?))
}

/// Mean Shannon entropy (natural log) of probability rows, `0·ln 0 = 0`.
pub fn entropy<F: Real>(probs: &Tensor<F>) -> Result<F> {
    let (rows, k) = require_rows(probs, "entropy input")?;
    if rows == 0 {
        return Err(Error::InvalidInput("entropy over an empty batch".into()));
    }
    let tol = 1e-5;
    let mut total = F::zero();
    for (i, row) in probs.data().chunks(k).enumerate() {
        let sum: f64 = row.iter().map(|p| p.as_f64()).sum();
        if (sum - 1.0).abs() > tol || row.iter().any(|p| p.as_f64() < -tol) {
            return Err(Error::InvalidInput(format!(
                "row {i} is not a probability distribution"
            )));
        }
        for &p in row {
            if p > F::zero() {
                total -= p * p.ln();
            }
        }
    }
    Ok(total / F::lit(rows as f64))
}

/// Mean negative entropy `-H(softmax(z))` over rows, with its gradient.
///
/// `∂(-H)/∂z_j = p_j (ln p_j + H)`.
pub fn neg_entropy_with_grad<F: Real>(logits: &Tensor<F>) -> Result<(F, Tensor<F>)> {
    let (rows, k) = require_rows(logits, "entropy logits")?;
    if rows == 0 {
        return Err(Error::InvalidInput("entropy over an empty batch".into()));
    }
    let inv_b = F::one() / F::lit(rows as f64);
    let mut total = F::zero();
    let mut grad = vec![F::zero(); logits.len()];
    let mut logp = vec![F::zero(); k];
    for (row, g) in logits.data().chunks(k).zip(grad.chunks_mut(k)) {
        let lse = log_sum_exp(row);
        let mut h = F::zero();
        for (lp, &z) in logp.iter_mut().zip(row) {
            *lp = z - lse;
            h -= lp.exp() * *lp;
        }
        total -= h;
        for (gj, &lp) in g.iter_mut().zip(&logp) {
            *gj = lp.exp() * (lp + h) * inv_b;
        }
    }
    Ok((total * inv_b, Tensor::from_vec(logits.shape(), grad)?))
}

/// Mean binary cross-entropy of single logits against a constant target,
/// with the gradient. Uses `softplus` forms that cannot overflow.
pub fn bce_with_logits<F: Real>(logits: &Tensor<F>, target_real: bool) -> Result<(F, Tensor<F>)> {
    logits.ensure_finite("discriminator logits")?;
    let n = logits.len();
    if n == 0 {
        return Err(Error::InvalidInput("binary cross-entropy over an empty batch".into()));
    }
    let inv = F::one() / F::lit(n as f64);
    let softplus = |x: F| x.max(F::zero()) + (F::one() + (-x.abs()).exp()).ln();
    let mut total = F::zero();
    let mut grad = Vec::with_capacity(n);
    for &x in logits.data() {
        if target_real {
            total += softplus(-x);
            grad.push((sigmoid(x) - F::one()) * inv);
        } else {
            total += softplus(x);
            grad.push(sigmoid(x) * inv);
        }
    }
    Ok((total * inv, Tensor::from_vec(logits.shape(), grad)?))
}
