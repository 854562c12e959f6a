//! Low-level f64 kernels shared by the autodiff graph and the incremental
//! decode sessions.
//!
//! Every kernel reduces in a fixed index order, so the same computation
//! performed through different call paths (batched forward, row-at-a-time
//! session, re-encoding oracle) produces bit-identical results.

use rayon::prelude::*;

/// Below this many output cells a parallel matmul is not worth the overhead.
const PAR_MATMUL_CELLS: usize = 16 * 1024;

/// `out[j] += sum_p row[p] * b[p*n + j]` with `p` ascending.
///
/// `out` must be zeroed (or hold a partial sum to extend) by the caller.
pub fn matmul_row_acc(row: &[f64], b: &[f64], n: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), n);
    for (p, &a_p) in row.iter().enumerate() {
        let b_row = &b[p * n..(p + 1) * n];
        for j in 0..n {
            out[j] += a_p * b_row[j];
        }
    }
}

/// Dense row-major matmul: (m,k) x (k,n) -> (m,n).
///
/// Rows are independent, so parallelism never changes the reduction order.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    if m * k * n >= PAR_MATMUL_CELLS && m > 1 {
        out.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(o, row)| matmul_row_acc(row, b, n, o));
    } else {
        for (o, row) in out.chunks_mut(n).zip(a.chunks(k)) {
            matmul_row_acc(row, b, n, o);
        }
    }
    out
}

/// matmul with the second operand transposed: (m,k) x (n,k)^T -> (m,n).
pub fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut out = vec![0.0; m * n];
    let body = |o: &mut [f64], row: &[f64]| {
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += row[p] * b_row[p];
            }
            o[j] = s;
        }
    };
    if m * k * n >= PAR_MATMUL_CELLS && m > 1 {
        out.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(o, row)| body(o, row));
    } else {
        for (o, row) in out.chunks_mut(n).zip(a.chunks(k)) {
            body(o, row);
        }
    }
    out
}

/// matmul with the first operand transposed: (m,k)^T x (m,n) -> (k,n).
pub fn matmul_at(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let a_ip = a_row[p];
            let o = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                o[j] += a_ip * b_row[j];
            }
        }
    }
    out
}

/// Transpose a row-major (m,n) matrix into (n,m).
pub fn transpose(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = x[i * n + j];
        }
    }
    out
}

/// In-place softmax over `x[..valid]`; entries beyond `valid` are set to
/// exactly 0.0. Shift-invariant (subtracts the max of the valid prefix).
pub fn softmax_masked_row(x: &mut [f64], valid: usize) {
    debug_assert!(valid >= 1 && valid <= x.len());
    let mut max = f64::NEG_INFINITY;
    for &v in &x[..valid] {
        if v > max {
            max = v;
        }
    }
    let mut sum = 0.0;
    for v in &mut x[..valid] {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in &mut x[..valid] {
        *v /= sum;
    }
    for v in &mut x[valid..] {
        *v = 0.0;
    }
}

/// Layer normalization of a single row with scale `gamma` and shift `beta`.
/// Returns (normalized-then-affine row, x_hat, inv_std) so callers on the
/// training path can keep the stats for the backward rule.
pub fn layer_norm_row(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    let mut xhat = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * inv_std;
        out[i] = xhat[i] * gamma[i] + beta[i];
    }
    (out, xhat, inv_std)
}

/// Numerically stable logistic function, clamped into the open interval
/// (0,1): extreme finite inputs would otherwise round to exactly 0 or 1.
pub fn sigmoid(x: f64) -> f64 {
    let v = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    v.max(f64::MIN_POSITIVE).min(1.0 - f64::EPSILON / 2.0)
}

/// `log(sum(exp(row)))` computed shift-invariantly.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Argmax with ties broken toward the lowest index.
pub fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = row[0];
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}
