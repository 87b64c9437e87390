//! Dense matrix kernels on row-major slices.
//!
//! Work is split across rayon threads by output row only, so every output
//! element is reduced by one thread in a fixed order and results do not
//! depend on the thread count.

use rayon::prelude::*;

use super::Real;

const PAR_THRESHOLD: usize = 1 << 15;

fn row_chunk(rows: usize) -> usize {
    (rows / (4 * rayon::current_num_threads().max(1))).max(1)
}

/// `c[m×n] = a[m×k] · b[k×n]`.
pub(crate) fn gemm_nn<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 {
        return;
    }
    let row = |(a_row, c_row): (&[F], &mut [F])| {
        c_row.iter_mut().for_each(|x| *x = F::zero());
        for (p, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    };
    if k == 0 {
        c.iter_mut().for_each(|x| *x = F::zero());
    } else if m * k * n >= PAR_THRESHOLD {
        let chunk = row_chunk(m);
        a.par_chunks(k * chunk)
            .zip(c.par_chunks_mut(n * chunk))
            .for_each(|(ab, cb)| ab.chunks(k).zip(cb.chunks_mut(n)).for_each(row));
    } else {
        a.chunks(k).zip(c.chunks_mut(n)).for_each(row);
    }
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ`.
pub(crate) fn gemm_nt<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x = F::zero());
        return;
    }
    let row = |(a_row, c_row): (&[F], &mut [F])| {
        for (j, cv) in c_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = F::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                s += x * y;
            }
            *cv = s;
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        let chunk = row_chunk(m);
        a.par_chunks(k * chunk)
            .zip(c.par_chunks_mut(n * chunk))
            .for_each(|(ab, cb)| ab.chunks(k).zip(cb.chunks_mut(n)).for_each(row));
    } else {
        a.chunks(k).zip(c.chunks_mut(n)).for_each(row);
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`.
pub(crate) fn gemm_tn_acc<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    if n == 0 || k == 0 || m == 0 {
        return;
    }
    let at = transpose(a, m, k);
    let row = |(at_row, c_row): (&[F], &mut [F])| {
        for (i, &av) in at_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let b_row = &b[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD {
        let chunk = row_chunk(k);
        at.par_chunks(m * chunk)
            .zip(c.par_chunks_mut(n * chunk))
            .for_each(|(ab, cb)| ab.chunks(m).zip(cb.chunks_mut(n)).for_each(row));
    } else {
        at.chunks(m).zip(c.chunks_mut(n)).for_each(row);
    }
}

/// Sum of the rows of `a[m×n]` added into `out[n]`.
pub(crate) fn add_column_sums<F: Real>(a: &[F], out: &mut [F], n: usize) {
    for r in a.chunks(n) {
        for (o, &x) in out.iter_mut().zip(r) {
            *o += x;
        }
    }
}

pub(crate) fn transpose<F: Real>(a: &[F], m: usize, n: usize) -> Vec<F> {
    let mut t = vec![F::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}
