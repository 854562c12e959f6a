//! Gated fusion of per-source attention contexts.
//!
//! For two sources the fused context is a per-dimension convex combination
//!
//! ```text
//! A = w ⊙ A_1 + (1 − w) ⊙ A_2,   w = sigmoid(W [A_1 : A_2] + b)
//! ```
//!
//! with `W` of shape (2h, h) and `b` of length h, so the gate is an
//! h-vector, not a scalar. One source is passed through unchanged. For more
//! than two sources each source gets its own projection of
//! `[A_s : mean of the others]` and the per-dimension gates are normalized
//! with a softmax across sources; that generalization is experimental.

use crate::error::{Error, Result};
use crate::tensor::kernels;
use crate::tensor::{Graph, Tensor};

/// Gate parameters, by number of sources.
#[derive(Debug, Clone)]
pub enum Gate {
    /// One source: fusion is the identity.
    Identity,
    /// Two sources: `w` is (2h,h) row-major, `b` is (h).
    Pair { w: Vec<f64>, b: Vec<f64> },
    /// More than two sources: one (2h,h)+(h) pair per source.
    Multi { parts: Vec<(Vec<f64>, Vec<f64>)> },
}

/// Fuse per-source context vectors (each of length `h`) into one.
pub fn fuse_attention(contexts: &[&[f64]], gate: &Gate, h: usize) -> Result<Vec<f64>> {
    for c in contexts {
        if c.len() != h {
            return Err(Error::Shape {
                op: "fuse_attention",
                lhs: vec![c.len()],
                rhs: vec![h],
            });
        }
    }
    match gate {
        Gate::Identity => {
            if contexts.len() != 1 {
                return Err(Error::Shape {
                    op: "fuse_attention",
                    lhs: vec![contexts.len()],
                    rhs: vec![1],
                });
            }
            Ok(contexts[0].to_vec())
        }
        Gate::Pair { w, b } => {
            if contexts.len() != 2 {
                return Err(Error::Shape {
                    op: "fuse_attention",
                    lhs: vec![contexts.len()],
                    rhs: vec![2],
                });
            }
            if w.len() != 2 * h * h || b.len() != h {
                return Err(Error::Shape {
                    op: "fuse_attention",
                    lhs: vec![w.len(), b.len()],
                    rhs: vec![2 * h * h, h],
                });
            }
            Ok(fuse_pair_rows(contexts[0], contexts[1], w, b, h))
        }
        Gate::Multi { parts } => {
            let n = contexts.len();
            if n < 3 || parts.len() != n {
                return Err(Error::Shape {
                    op: "fuse_attention",
                    lhs: vec![contexts.len()],
                    rhs: vec![parts.len()],
                });
            }
            let views: Vec<(&[f64], &[f64])> =
                parts.iter().map(|(w, b)| (w.as_slice(), b.as_slice())).collect();
            Ok(fuse_multi_rows(contexts, &views, h))
        }
    }
}

/// Two-source gate on single rows. Kept in lockstep with the graph version
/// used in training: matmul accumulation first, bias added afterwards.
pub(crate) fn fuse_pair_rows(a1: &[f64], a2: &[f64], w: &[f64], b: &[f64], h: usize) -> Vec<f64> {
    let mut cat = Vec::with_capacity(2 * h);
    cat.extend_from_slice(a1);
    cat.extend_from_slice(a2);
    let mut logits = vec![0.0; h];
    kernels::matmul_row_acc(&cat, w, h, &mut logits);
    let mut out = vec![0.0; h];
    for d in 0..h {
        let g = kernels::sigmoid(logits[d] + b[d]);
        out[d] = g * a1[d] + (1.0 - g) * a2[d];
    }
    out
}

pub(crate) fn fuse_multi_rows(contexts: &[&[f64]], parts: &[(&[f64], &[f64])], h: usize) -> Vec<f64> {
    let n = contexts.len();
    let mut gate_logits = vec![0.0; n * h];
    for (s, (w, b)) in parts.iter().enumerate() {
        // pool = mean of the other sources
        let mut pool = vec![0.0; h];
        for (t, c) in contexts.iter().enumerate() {
            if t != s {
                for d in 0..h {
                    pool[d] += c[d];
                }
            }
        }
        let inv = 1.0 / (n - 1) as f64;
        for p in pool.iter_mut() {
            *p *= inv;
        }
        let mut cat = Vec::with_capacity(2 * h);
        cat.extend_from_slice(contexts[s]);
        cat.extend_from_slice(&pool);
        let row = &mut gate_logits[s * h..(s + 1) * h];
        kernels::matmul_row_acc(&cat, w, h, row);
        for d in 0..h {
            row[d] += b[d];
        }
    }
    // softmax across sources, per hidden dimension
    let mut out = vec![0.0; h];
    for d in 0..h {
        let mut col: Vec<f64> = (0..n).map(|s| gate_logits[s * h + d]).collect();
        kernels::softmax_masked_row(&mut col, n);
        for s in 0..n {
            out[d] += col[s] * contexts[s][d];
        }
    }
    out
}

/// Graph-path fusion over whole matrices of per-position contexts
/// (rows, h), used by the training forward.
pub(crate) fn fuse_graph(
    g: &mut Graph,
    contexts: &[Tensor],
    gate_w: &[Tensor],
    gate_b: &[Tensor],
    h: usize,
) -> Result<Tensor> {
    match contexts.len() {
        0 => Err(Error::contract("fusion of zero contexts")),
        1 => Ok(contexts[0].clone()),
        2 => {
            let cat = g.concat(&contexts[0], &contexts[1], 1)?;
            let lin = g.matmul(&cat, &gate_w[0])?;
            let lin = g.add_bias(&lin, &gate_b[0])?;
            let w = g.sigmoid(&lin);
            let ones = Tensor::filled(w.shape().to_vec(), 1.0);
            let w_comp = g.sub(&ones, &w)?;
            let a = g.mul(&w, &contexts[0])?;
            let b = g.mul(&w_comp, &contexts[1])?;
            g.add(&a, &b)
        }
        n => {
            let rows = contexts[0].shape()[0];
            // per-source gate logits from [A_s : mean(others)]
            let mut logits = Vec::with_capacity(n);
            for s in 0..n {
                let mut pool: Option<Tensor> = None;
                for (t, c) in contexts.iter().enumerate() {
                    if t == s {
                        continue;
                    }
                    pool = Some(match pool {
                        None => c.clone(),
                        Some(p) => g.add(&p, c)?,
                    });
                }
                let pool = g.scale(&pool.expect("n ≥ 3"), 1.0 / (n - 1) as f64);
                let cat = g.concat(&contexts[s], &pool, 1)?;
                let lin = g.matmul(&cat, &gate_w[s])?;
                let lin = g.add_bias(&lin, &gate_b[s])?;
                logits.push(g.reshape(&lin, vec![1, rows * h])?);
            }
            let logit_refs: Vec<&Tensor> = logits.iter().collect();
            let stacked = g.concat_many(&logit_refs, 0)?; // (n, rows*h)
            let weights = g.softmax(&stacked, 0)?;
            let mut fused: Option<Tensor> = None;
            for (s, c) in contexts.iter().enumerate() {
                let w_s = g.narrow(&weights, 0, s, 1)?;
                let w_s = g.reshape(&w_s, vec![rows, h])?;
                let term = g.mul(&w_s, c)?;
                fused = Some(match fused {
                    None => term,
                    Some(f) => g.add(&f, &term)?,
                });
            }
            Ok(fused.expect("n ≥ 3"))
        }
    }
}
