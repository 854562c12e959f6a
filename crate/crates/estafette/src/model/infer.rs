//! Row-at-a-time inference: incremental encoding, single-step decoding and
//! cached greedy decoding.
//!
//! Every reduction goes through the kernels in [`crate::tensor::kernels`],
//! so re-encoding a prefix from scratch is bit-identical to extending an
//! incremental session, and a cached greedy decode is bit-identical to
//! recomputing the decoder per step at constant visibility.

use crate::corpus::vocab::{TokenId, BOS};
use crate::error::{Error, Result};
use crate::model::fusion;
use crate::model::{FfnIds, LnIds, TransformerModel, LN_EPS};
use crate::tensor::kernels;

/// Final-layer encoder representations: one h-row per consumed token.
/// Under a causal encoder, rows are immutable once computed.
#[derive(Debug, Clone)]
pub struct EncoderStates {
    h: usize,
    data: Vec<f64>,
}

impl EncoderStates {
    pub fn empty(h: usize) -> Self {
        EncoderStates { h, data: Vec::new() }
    }

    pub fn rows(&self) -> usize {
        if self.h == 0 {
            0
        } else {
            self.data.len() / self.h
        }
    }

    pub fn hidden(&self) -> usize {
        self.h
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.h..(i + 1) * self.h]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Output of a greedy decode: emitted tokens (no BOS/EOS) and whether the
/// step budget cut generation short.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeOutput {
    pub tokens: Vec<TokenId>,
    pub truncated: bool,
}

// ── shared row helpers ──────────────────────────────────────────────

impl TransformerModel {
    fn ln_row(&self, x: &[f64], ln: &LnIds) -> Vec<f64> {
        kernels::layer_norm_row(x, self.store.value(ln.gamma), self.store.value(ln.beta), LN_EPS).0
    }

    /// `x @ W + b` for a single row; accumulation first, bias after, matching
    /// the graph path's matmul-then-add_bias order.
    fn linear_row(&self, x: &[f64], w: crate::model::ParamId, b: crate::model::ParamId) -> Vec<f64> {
        let wv = self.store.value(w);
        let bv = self.store.value(b);
        let n = bv.len();
        let mut out = vec![0.0; n];
        kernels::matmul_row_acc(x, wv, n, &mut out);
        for j in 0..n {
            out[j] += bv[j];
        }
        out
    }

    fn ffn_row(&self, x: &[f64], ffn: &FfnIds) -> Vec<f64> {
        let mut inner = self.linear_row(x, ffn.w1, ffn.b1);
        for v in inner.iter_mut() {
            *v = v.max(0.0);
        }
        self.linear_row(&inner, ffn.w2, ffn.b2)
    }

    fn embed_row(&self, table: crate::model::ParamId, vocab: usize, tok: TokenId, pos: usize) -> Result<Vec<f64>> {
        if tok >= vocab {
            return Err(Error::Index {
                what: "token id",
                index: tok,
                limit: vocab,
            });
        }
        if pos >= self.config.max_len {
            return Err(Error::contract(format!(
                "position {} exceeds max_len {}",
                pos, self.config.max_len
            )));
        }
        let h = self.config.hidden;
        let emb = &self.store.value(table)[tok * h..(tok + 1) * h];
        let scale = (h as f64).sqrt();
        let pos_row = self.position_row(pos);
        // same op order as the graph path: scale, then positional add
        Ok((0..h).map(|i| emb[i] * scale + pos_row[i]).collect())
    }
}

/// Multi-head attention of one query row over cached key/value rows.
/// `k_rows`/`v_rows` are (rows, h) flattened; only the first `visible` rows
/// participate. Returns the concatenated per-head context (h values).
fn attend_row(q: &[f64], k_rows: &[f64], v_rows: &[f64], visible: usize, heads: usize, h: usize) -> Vec<f64> {
    debug_assert!(visible >= 1);
    let dh = h / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = vec![0.0; h];
    let mut scores = vec![0.0; visible];
    for hd in 0..heads {
        let off = hd * dh;
        for (j, s) in scores.iter_mut().enumerate() {
            let k = &k_rows[j * h + off..j * h + off + dh];
            let mut dot = 0.0;
            for p in 0..dh {
                dot += q[off + p] * k[p];
            }
            *s = dot * scale;
        }
        kernels::softmax_masked_row(&mut scores, visible);
        let c = &mut ctx[off..off + dh];
        for (j, &p) in scores.iter().enumerate() {
            let v = &v_rows[j * h + off..j * h + off + dh];
            for d in 0..dh {
                c[d] += p * v[d];
            }
        }
    }
    ctx
}

// ── incremental encoder ─────────────────────────────────────────────

/// Incremental causal encoder: tokens are appended one at a time and
/// previously computed rows never change. Re-encoding the same prefix from
/// scratch yields bit-identical states.
pub struct EncoderSession<'m> {
    model: &'m TransformerModel,
    source_index: usize,
    kv: Vec<(Vec<f64>, Vec<f64>)>,
    states: Vec<f64>,
    len: usize,
}

impl<'m> EncoderSession<'m> {
    pub fn new(model: &'m TransformerModel, source_index: usize) -> Result<Self> {
        if !model.config.causal_encoder {
            return Err(Error::config(
                "incremental encoding requires a causal encoder; bidirectional states are not prefix-stable",
            ));
        }
        model.encoder_block(source_index)?;
        Ok(EncoderSession {
            model,
            source_index,
            kv: (0..model.config.layers).map(|_| (Vec::new(), Vec::new())).collect(),
            states: Vec::new(),
            len: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Append one source token and compute its encoder row.
    pub fn push(&mut self, tok: TokenId) -> Result<()> {
        let m = self.model;
        let cfg = &m.config;
        if self.len >= cfg.max_len {
            return Err(Error::contract(format!(
                "source length {} exceeds max_len {}",
                self.len + 1,
                cfg.max_len
            )));
        }
        let enc = m.encoder_block(self.source_index)?;
        let mut x = m.embed_row(enc.embed, cfg.src_vocab_size, tok, self.len)?;
        for (l, layer) in enc.layers.iter().enumerate() {
            let a = m.ln_row(&x, &layer.ln1);
            let q = m.linear_row(&a, layer.attn.wq, layer.attn.bq);
            let k = m.linear_row(&a, layer.attn.wk, layer.attn.bk);
            let v = m.linear_row(&a, layer.attn.wv, layer.attn.bv);
            self.kv[l].0.extend_from_slice(&k);
            self.kv[l].1.extend_from_slice(&v);
            let ctx = attend_row(&q, &self.kv[l].0, &self.kv[l].1, self.len + 1, cfg.heads, cfg.hidden);
            let attn_out = m.linear_row(&ctx, layer.attn.wo, layer.attn.bo);
            for (xi, ai) in x.iter_mut().zip(&attn_out) {
                *xi += ai;
            }
            let f = m.ln_row(&x, &layer.ln2);
            let ff = m.ffn_row(&f, &layer.ffn);
            for (xi, fi) in x.iter_mut().zip(&ff) {
                *xi += fi;
            }
        }
        let out = m.ln_row(&x, &enc.final_ln);
        self.states.extend_from_slice(&out);
        self.len += 1;
        Ok(())
    }

    /// Snapshot of the states computed so far.
    pub fn states(&self) -> EncoderStates {
        EncoderStates {
            h: self.model.config.hidden,
            data: self.states.clone(),
        }
    }
}

impl TransformerModel {
    /// Encode a full token sequence for one source slot.
    ///
    /// Causal encoders run the incremental session, so `encode(&x[..j])`
    /// equals the first j rows of `encode(&x)` exactly; bidirectional
    /// encoders attend over the whole sequence.
    pub fn encode(&self, tokens: &[TokenId], source_index: usize) -> Result<EncoderStates> {
        if tokens.len() > self.config.max_len {
            return Err(Error::contract(format!(
                "source length {} exceeds max_len {}",
                tokens.len(),
                self.config.max_len
            )));
        }
        if self.config.causal_encoder {
            let mut session = EncoderSession::new(self, source_index)?;
            for &t in tokens {
                session.push(t)?;
            }
            return Ok(session.states());
        }
        self.encode_bidirectional(tokens, source_index)
    }

    fn encode_bidirectional(&self, tokens: &[TokenId], source_index: usize) -> Result<EncoderStates> {
        let cfg = &self.config;
        let enc = self.encoder_block(source_index)?;
        let n = tokens.len();
        let h = cfg.hidden;
        let mut x: Vec<Vec<f64>> = tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| self.embed_row(enc.embed, cfg.src_vocab_size, t, i))
            .collect::<Result<_>>()?;
        for layer in &enc.layers {
            let mut k_flat = Vec::with_capacity(n * h);
            let mut v_flat = Vec::with_capacity(n * h);
            let mut q_rows = Vec::with_capacity(n);
            for xi in &x {
                let a = self.ln_row(xi, &layer.ln1);
                q_rows.push(self.linear_row(&a, layer.attn.wq, layer.attn.bq));
                k_flat.extend(self.linear_row(&a, layer.attn.wk, layer.attn.bk));
                v_flat.extend(self.linear_row(&a, layer.attn.wv, layer.attn.bv));
            }
            for (i, xi) in x.iter_mut().enumerate() {
                let ctx = attend_row(&q_rows[i], &k_flat, &v_flat, n, cfg.heads, h);
                let attn_out = self.linear_row(&ctx, layer.attn.wo, layer.attn.bo);
                for (v, a) in xi.iter_mut().zip(&attn_out) {
                    *v += a;
                }
            }
            for xi in x.iter_mut() {
                let f = self.ln_row(xi, &layer.ln2);
                let ff = self.ffn_row(&f, &layer.ffn);
                for (v, fi) in xi.iter_mut().zip(&ff) {
                    *v += fi;
                }
            }
        }
        let mut data = Vec::with_capacity(n * h);
        for xi in &x {
            data.extend(self.ln_row(xi, &enc.final_ln));
        }
        Ok(EncoderStates { h, data })
    }

    /// Next-token logits after `prefix`, attending over all encoder rows.
    ///
    /// `prefix` must begin with BOS, and every source must have at least one
    /// encoded row.
    pub fn decode_step(&self, encs: &[&EncoderStates], prefix: &[TokenId]) -> Result<Vec<f64>> {
        for e in encs {
            if e.rows() == 0 {
                return Err(Error::contract("decode_step with empty encoder states"));
            }
        }
        let vis: Vec<usize> = encs.iter().map(|e| e.rows()).collect();
        self.decode_step_with_visibility(encs, &vis, prefix)
    }

    /// Next-token logits with an explicit per-source visibility limit:
    /// cross-attention sees only the first `vis[s]` rows of source s, so the
    /// result is independent of any rows beyond that. A visibility of zero
    /// contributes a zero context (used for exhausted empty streams).
    pub fn decode_step_with_visibility(
        &self,
        encs: &[&EncoderStates],
        vis: &[usize],
        prefix: &[TokenId],
    ) -> Result<Vec<f64>> {
        let cfg = &self.config;
        if encs.len() != cfg.num_encoders || vis.len() != cfg.num_encoders {
            return Err(Error::contract(format!(
                "expected {} encoder state sets, got {} (visibility entries: {})",
                cfg.num_encoders,
                encs.len(),
                vis.len()
            )));
        }
        for (e, &v) in encs.iter().zip(vis) {
            if v > e.rows() {
                return Err(Error::Index {
                    what: "visibility limit",
                    index: v,
                    limit: e.rows(),
                });
            }
        }
        if prefix.is_empty() || prefix[0] != BOS {
            return Err(Error::contract("decoder prefix must begin with BOS"));
        }
        if prefix.len() > cfg.max_len {
            return Err(Error::contract(format!(
                "decoder prefix length {} exceeds max_len {}",
                prefix.len(),
                cfg.max_len
            )));
        }

        let h = cfg.hidden;
        let n = prefix.len();
        let dec = &self.decoder;

        // cross-attention keys/values over the visible encoder rows
        let mut cross_kv: Vec<Vec<(Vec<f64>, Vec<f64>)>> = Vec::with_capacity(cfg.layers);
        for layer in &dec.layers {
            let mut per_source = Vec::with_capacity(cfg.num_encoders);
            for (s, e) in encs.iter().enumerate() {
                let mut k = Vec::with_capacity(vis[s] * h);
                let mut v = Vec::with_capacity(vis[s] * h);
                for j in 0..vis[s] {
                    k.extend(self.linear_row(e.row(j), layer.cross_attn.wk, layer.cross_attn.bk));
                    v.extend(self.linear_row(e.row(j), layer.cross_attn.wv, layer.cross_attn.bv));
                }
                per_source.push((k, v));
            }
            cross_kv.push(per_source);
        }

        let mut x: Vec<Vec<f64>> = prefix
            .iter()
            .enumerate()
            .map(|(i, &t)| self.embed_row(dec.embed, cfg.tgt_vocab_size, t, i))
            .collect::<Result<_>>()?;

        for (l, layer) in dec.layers.iter().enumerate() {
            // causal self-attention
            let mut k_flat = Vec::with_capacity(n * h);
            let mut v_flat = Vec::with_capacity(n * h);
            let mut q_rows = Vec::with_capacity(n);
            for xi in &x {
                let a = self.ln_row(xi, &layer.ln1);
                q_rows.push(self.linear_row(&a, layer.self_attn.wq, layer.self_attn.bq));
                k_flat.extend(self.linear_row(&a, layer.self_attn.wk, layer.self_attn.bk));
                v_flat.extend(self.linear_row(&a, layer.self_attn.wv, layer.self_attn.bv));
            }
            for (i, xi) in x.iter_mut().enumerate() {
                let ctx = attend_row(&q_rows[i], &k_flat, &v_flat, i + 1, cfg.heads, h);
                let attn_out = self.linear_row(&ctx, layer.self_attn.wo, layer.self_attn.bo);
                for (v, a) in xi.iter_mut().zip(&attn_out) {
                    *v += a;
                }
            }
            // per-source cross-attention, then gate fusion
            for xi in x.iter_mut() {
                let fused = self.cross_fused_row(xi, layer, &cross_kv[l], vis)?;
                for (v, f) in xi.iter_mut().zip(&fused) {
                    *v += f;
                }
            }
            for xi in x.iter_mut() {
                let f = self.ln_row(xi, &layer.ln3);
                let ff = self.ffn_row(&f, &layer.ffn);
                for (v, fi) in xi.iter_mut().zip(&ff) {
                    *v += fi;
                }
            }
        }
        let last = self.ln_row(&x[n - 1], &dec.final_ln);
        Ok(self.linear_row(&last, dec.out_w, dec.out_b))
    }

    /// Cross-attention sublayer for one decoder row: independent per-source
    /// contexts fused through the layer's gate.
    fn cross_fused_row(
        &self,
        x: &[f64],
        layer: &crate::model::DecLayerIds,
        kv: &[(Vec<f64>, Vec<f64>)],
        vis: &[usize],
    ) -> Result<Vec<f64>> {
        let cfg = &self.config;
        let h = cfg.hidden;
        let c = self.ln_row(x, &layer.ln2);
        let q = self.linear_row(&c, layer.cross_attn.wq, layer.cross_attn.bq);
        let contexts: Vec<Vec<f64>> = (0..cfg.num_encoders)
            .map(|s| {
                if vis[s] == 0 {
                    vec![0.0; h]
                } else {
                    let ctx = attend_row(&q, &kv[s].0, &kv[s].1, vis[s], cfg.heads, h);
                    self.linear_row(&ctx, layer.cross_attn.wo, layer.cross_attn.bo)
                }
            })
            .collect();
        let refs: Vec<&[f64]> = contexts.iter().map(|c| c.as_slice()).collect();
        Ok(match &layer.gate {
            None => contexts[0].clone(),
            Some(gate) if cfg.num_encoders == 2 => {
                let (w, b) = gate.parts[0];
                fusion::fuse_pair_rows(refs[0], refs[1], self.store.value(w), self.store.value(b), h)
            }
            Some(gate) => {
                let parts: Vec<(&[f64], &[f64])> = gate
                    .parts
                    .iter()
                    .map(|&(w, b)| (self.store.value(w), self.store.value(b)))
                    .collect();
                fusion::fuse_multi_rows(&refs, &parts, h)
            }
        })
    }

    /// Greedy decoding over complete encoder states: repeated argmax of
    /// `decode_step` with ties broken toward the lowest token id, stopping at
    /// EOS or after `max_steps` emitted tokens (flagged as truncated).
    pub fn greedy_decode(&self, encs: &[&EncoderStates], max_steps: usize) -> Result<DecodeOutput> {
        if encs.len() != self.config.num_encoders {
            return Err(Error::contract(format!(
                "expected {} encoder state sets, got {}",
                self.config.num_encoders,
                encs.len()
            )));
        }
        if encs.iter().all(|e| e.rows() == 0) {
            return Ok(DecodeOutput {
                tokens: Vec::new(),
                truncated: false,
            });
        }
        let vis: Vec<usize> = encs.iter().map(|e| e.rows()).collect();
        let mut session = DecodeSession::new(self, encs, vis)?;
        session.greedy(max_steps)
    }
}

// ── cached decode session ───────────────────────────────────────────

/// Decoder with per-layer self-attention caches and precomputed
/// cross-attention keys/values, valid while visibility stays fixed.
pub struct DecodeSession<'m> {
    model: &'m TransformerModel,
    vis: Vec<usize>,
    cross_kv: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
    self_kv: Vec<(Vec<f64>, Vec<f64>)>,
    len: usize,
}

impl<'m> DecodeSession<'m> {
    pub fn new(model: &'m TransformerModel, encs: &[&EncoderStates], vis: Vec<usize>) -> Result<Self> {
        let cfg = &model.config;
        if encs.len() != cfg.num_encoders || vis.len() != cfg.num_encoders {
            return Err(Error::contract(format!(
                "expected {} encoder state sets, got {}",
                cfg.num_encoders,
                encs.len()
            )));
        }
        let h = cfg.hidden;
        let mut cross_kv = Vec::with_capacity(cfg.layers);
        for layer in &model.decoder.layers {
            let mut per_source = Vec::with_capacity(cfg.num_encoders);
            for (s, e) in encs.iter().enumerate() {
                if vis[s] > e.rows() {
                    return Err(Error::Index {
                        what: "visibility limit",
                        index: vis[s],
                        limit: e.rows(),
                    });
                }
                let mut k = Vec::with_capacity(vis[s] * h);
                let mut v = Vec::with_capacity(vis[s] * h);
                for j in 0..vis[s] {
                    k.extend(model.linear_row(e.row(j), layer.cross_attn.wk, layer.cross_attn.bk));
                    v.extend(model.linear_row(e.row(j), layer.cross_attn.wv, layer.cross_attn.bv));
                }
                per_source.push((k, v));
            }
            cross_kv.push(per_source);
        }
        Ok(DecodeSession {
            model,
            vis,
            cross_kv,
            self_kv: (0..cfg.layers).map(|_| (Vec::new(), Vec::new())).collect(),
            len: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Append one decoder token, returning the logits for the next position.
    pub fn push(&mut self, tok: TokenId) -> Result<Vec<f64>> {
        let m = self.model;
        let cfg = &m.config;
        if self.len >= cfg.max_len {
            return Err(Error::contract(format!(
                "decoder length {} exceeds max_len {}",
                self.len + 1,
                cfg.max_len
            )));
        }
        if self.len == 0 && tok != BOS {
            return Err(Error::contract("decoder prefix must begin with BOS"));
        }
        let dec = &m.decoder;
        let mut x = m.embed_row(dec.embed, cfg.tgt_vocab_size, tok, self.len)?;
        for (l, layer) in dec.layers.iter().enumerate() {
            let a = m.ln_row(&x, &layer.ln1);
            let q = m.linear_row(&a, layer.self_attn.wq, layer.self_attn.bq);
            let k = m.linear_row(&a, layer.self_attn.wk, layer.self_attn.bk);
            let v = m.linear_row(&a, layer.self_attn.wv, layer.self_attn.bv);
            self.self_kv[l].0.extend_from_slice(&k);
            self.self_kv[l].1.extend_from_slice(&v);
            let ctx = attend_row(&q, &self.self_kv[l].0, &self.self_kv[l].1, self.len + 1, cfg.heads, cfg.hidden);
            let attn_out = m.linear_row(&ctx, layer.self_attn.wo, layer.self_attn.bo);
            for (xi, ai) in x.iter_mut().zip(&attn_out) {
                *xi += ai;
            }
            let fused = m.cross_fused_row(&x, layer, &self.cross_kv[l], &self.vis)?;
            for (xi, fi) in x.iter_mut().zip(&fused) {
                *xi += fi;
            }
            let f = m.ln_row(&x, &layer.ln3);
            let ff = m.ffn_row(&f, &layer.ffn);
            for (xi, fi) in x.iter_mut().zip(&ff) {
                *xi += fi;
            }
        }
        self.len += 1;
        let last = m.ln_row(&x, &dec.final_ln);
        Ok(m.linear_row(&last, dec.out_w, dec.out_b))
    }

    /// Greedy loop: argmax with low-id tie-break until EOS or `max_steps`.
    pub fn greedy(&mut self, max_steps: usize) -> Result<DecodeOutput> {
        use crate::corpus::vocab::EOS;
        let mut tokens = Vec::new();
        let mut logits = self.push(BOS)?;
        loop {
            let tok = kernels::argmax_lowest(&logits);
            if tok == EOS {
                return Ok(DecodeOutput {
                    tokens,
                    truncated: false,
                });
            }
            tokens.push(tok);
            if tokens.len() >= max_steps || self.len >= self.model.config.max_len {
                return Ok(DecodeOutput {
                    tokens,
                    truncated: true,
                });
            }
            logits = self.push(tok)?;
        }
    }
}
