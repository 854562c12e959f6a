//! Batched teacher-forced forward pass on the autodiff graph.

use crate::corpus::batch::{Batch, Padded};
use crate::corpus::vocab::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::params::Bound;
use crate::model::{fusion, AttnIds, EncLayerIds, FfnIds, LnIds, TransformerModel, LN_EPS};
use crate::tensor::{Graph, Tensor};

impl TransformerModel {
    /// Teacher-forced mean cross-entropy of `batch`, differentiable end to
    /// end (gate parameters included). Returns the loss together with the
    /// parameter binding whose gradients the caller collects after
    /// `backward`.
    pub fn forward_loss(
        &self,
        g: &mut Graph,
        batch: &Batch,
        label_smoothing: f64,
    ) -> Result<(Tensor, Bound)> {
        let cfg = &self.config;
        if batch.sources.len() != cfg.num_encoders {
            return Err(Error::contract(format!(
                "batch has {} source sides, model expects {}",
                batch.sources.len(),
                cfg.num_encoders
            )));
        }
        let rows = batch.target.rows;
        if rows == 0 {
            return Err(Error::contract("empty batch"));
        }
        for side in &batch.sources {
            if side.rows != rows {
                return Err(Error::contract(format!(
                    "misaligned batch: {} source examples vs {} target examples",
                    side.rows, rows
                )));
            }
            if side.lens.iter().any(|&l| l == 0) {
                return Err(Error::contract("empty source sequence in batch"));
            }
            if side.cols > cfg.max_len {
                return Err(Error::contract(format!(
                    "source length {} exceeds max_len {}",
                    side.cols, cfg.max_len
                )));
            }
        }
        if batch.target.cols + 1 > cfg.max_len {
            return Err(Error::contract(format!(
                "target length {} exceeds max_len {}",
                batch.target.cols + 1,
                cfg.max_len
            )));
        }

        let bound = Bound::all(&self.store, g);

        let enc_states: Vec<Tensor> = (0..cfg.num_encoders)
            .map(|s| self.encode_batch(g, &bound, &batch.sources[s], s))
            .collect::<Result<_>>()?;

        let logits = self.decode_batch(g, &bound, &enc_states, batch)?;

        // per-example mean cross-entropy, averaged over the batch, so batch
        // loss decomposes exactly into the mean of singleton losses
        let l1 = batch.target.cols + 1;
        let mut total: Option<Tensor> = None;
        for b in 0..rows {
            let len = batch.target.lens[b];
            let mut positions = Vec::with_capacity(len + 1);
            let mut targets = Vec::with_capacity(len + 1);
            for i in 0..=len {
                positions.push(b * l1 + i);
                targets.push(if i < len { batch.target.seq(b)[i] } else { EOS });
            }
            let picked = g.gather_rows(&logits, &positions)?;
            let ce = g.cross_entropy_logits(&picked, &targets, label_smoothing)?;
            total = Some(match total {
                None => ce,
                Some(t) => g.add(&t, &ce)?,
            });
        }
        let loss = g.scale(&total.expect("rows ≥ 1"), 1.0 / rows as f64);
        Ok((loss, bound))
    }

    fn ln_graph(&self, g: &mut Graph, bound: &Bound, x: &Tensor, ln: &LnIds) -> Result<Tensor> {
        g.layer_norm(x, bound.get(ln.gamma), bound.get(ln.beta), LN_EPS)
    }

    fn linear_graph(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: &Tensor,
        w: super::ParamId,
        b: super::ParamId,
    ) -> Result<Tensor> {
        let prod = g.matmul(x, bound.get(w))?;
        g.add_bias(&prod, bound.get(b))
    }

    fn ffn_graph(&self, g: &mut Graph, bound: &Bound, x: &Tensor, ffn: &FfnIds) -> Result<Tensor> {
        let inner = self.linear_graph(g, bound, x, ffn.w1, ffn.b1)?;
        let inner = g.relu(&inner);
        self.linear_graph(g, bound, &inner, ffn.w2, ffn.b2)
    }

    /// Embedding + scale + positions + dropout for a padded id block.
    fn embed_batch(
        &self,
        g: &mut Graph,
        bound: &Bound,
        table: super::ParamId,
        side: &Padded,
    ) -> Result<Tensor> {
        let h = self.config.hidden;
        let emb = g.gather_rows(bound.get(table), &side.ids)?;
        let emb = g.scale(&emb, (h as f64).sqrt());
        let mut pos_data = Vec::with_capacity(side.rows * side.cols * h);
        for r in 0..side.rows * side.cols {
            pos_data.extend_from_slice(self.position_row(r % side.cols));
        }
        let pos = Tensor::new(vec![side.rows * side.cols, h], pos_data)?;
        let x = g.add(&emb, &pos)?;
        g.dropout(&x, self.config.dropout)
    }

    /// Multi-head attention over per-example blocks.
    ///
    /// `q` has `rows_q` rows per example, `k`/`v` have `rows_k`; `valid`
    /// gives the visible key prefix for every query row (batch-major).
    #[allow(clippy::too_many_arguments)]
    fn attention_batch(
        &self,
        g: &mut Graph,
        q: &Tensor,
        k: &Tensor,
        v: &Tensor,
        examples: usize,
        rows_q: usize,
        rows_k: usize,
        valid: &[usize],
    ) -> Result<Tensor> {
        let cfg = &self.config;
        let dh = cfg.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let mut per_example = Vec::with_capacity(examples);
        for b in 0..examples {
            let qb = g.narrow(q, 0, b * rows_q, rows_q)?;
            let kb = g.narrow(k, 0, b * rows_k, rows_k)?;
            let vb = g.narrow(v, 0, b * rows_k, rows_k)?;
            let valid_b = &valid[b * rows_q..(b + 1) * rows_q];
            let mut heads = Vec::with_capacity(cfg.heads);
            for hd in 0..cfg.heads {
                let qh = g.narrow(&qb, 1, hd * dh, dh)?;
                let kh = g.narrow(&kb, 1, hd * dh, dh)?;
                let vh = g.narrow(&vb, 1, hd * dh, dh)?;
                let kt = g.transpose(&kh)?;
                let scores = g.matmul(&qh, &kt)?;
                let scores = g.scale(&scores, scale);
                let probs = g.masked_softmax_rows(&scores, valid_b)?;
                heads.push(g.matmul(&probs, &vh)?);
            }
            let head_refs: Vec<&Tensor> = heads.iter().collect();
            per_example.push(g.concat_many(&head_refs, 1)?);
        }
        let refs: Vec<&Tensor> = per_example.iter().collect();
        g.concat_many(&refs, 0)
    }

    /// Self-attention sublayer (pre-LN, residual) over a padded block.
    #[allow(clippy::too_many_arguments)]
    fn self_attention_sublayer(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: &Tensor,
        ln: &LnIds,
        attn: &AttnIds,
        examples: usize,
        rows: usize,
        valid: &[usize],
    ) -> Result<Tensor> {
        let a = self.ln_graph(g, bound, x, ln)?;
        let q = self.linear_graph(g, bound, &a, attn.wq, attn.bq)?;
        let k = self.linear_graph(g, bound, &a, attn.wk, attn.bk)?;
        let v = self.linear_graph(g, bound, &a, attn.wv, attn.bv)?;
        let ctx = self.attention_batch(g, &q, &k, &v, examples, rows, rows, valid)?;
        let out = self.linear_graph(g, bound, &ctx, attn.wo, attn.bo)?;
        let out = g.dropout(&out, self.config.dropout)?;
        g.add(x, &out)
    }

    fn ffn_sublayer(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: &Tensor,
        ln: &LnIds,
        ffn: &FfnIds,
    ) -> Result<Tensor> {
        let f = self.ln_graph(g, bound, x, ln)?;
        let out = self.ffn_graph(g, bound, &f, ffn)?;
        let out = g.dropout(&out, self.config.dropout)?;
        g.add(x, &out)
    }

    /// Batched encoder for one source slot; returns (examples·cols, h).
    fn encode_batch(
        &self,
        g: &mut Graph,
        bound: &Bound,
        side: &Padded,
        source_index: usize,
    ) -> Result<Tensor> {
        let cfg = &self.config;
        let enc = self.encoder_block(source_index)?;
        for &id in &side.ids {
            if id >= cfg.src_vocab_size {
                return Err(Error::Index {
                    what: "source token id",
                    index: id,
                    limit: cfg.src_vocab_size,
                });
            }
        }
        let mut x = self.embed_batch(g, bound, enc.embed, side)?;
        // visible key prefix per query row: causal within the example's
        // real tokens; padding rows attend the real prefix (excluded from
        // the loss and never attended by real rows)
        let valid: Vec<usize> = (0..side.rows * side.cols)
            .map(|r| {
                let (b, i) = (r / side.cols, r % side.cols);
                if cfg.causal_encoder {
                    (i + 1).min(side.lens[b])
                } else {
                    side.lens[b]
                }
            })
            .collect();
        let layers: &Vec<EncLayerIds> = &enc.layers;
        for layer in layers {
            x = self.self_attention_sublayer(
                g, bound, &x, &layer.ln1, &layer.attn, side.rows, side.cols, &valid,
            )?;
            x = self.ffn_sublayer(g, bound, &x, &layer.ln2, &layer.ffn)?;
        }
        self.ln_graph(g, bound, &x, &enc.final_ln)
    }

    /// Batched decoder over BOS-framed inputs; returns logits
    /// (examples·(target cols+1), tgt_vocab).
    fn decode_batch(
        &self,
        g: &mut Graph,
        bound: &Bound,
        enc_states: &[Tensor],
        batch: &Batch,
    ) -> Result<Tensor> {
        let cfg = &self.config;
        let dec = &self.decoder;
        let rows = batch.target.rows;
        let l1 = batch.target.cols + 1;

        for &id in &batch.target.ids {
            if id >= cfg.tgt_vocab_size {
                return Err(Error::Index {
                    what: "target token id",
                    index: id,
                    limit: cfg.tgt_vocab_size,
                });
            }
        }

        // decoder input: BOS then the target tokens, PAD-completed
        let mut dec_ids = vec![PAD; rows * l1];
        let mut dec_lens = Vec::with_capacity(rows);
        for b in 0..rows {
            dec_ids[b * l1] = BOS;
            let seq = batch.target.seq(b);
            dec_ids[b * l1 + 1..b * l1 + 1 + seq.len()].copy_from_slice(seq);
            dec_lens.push(seq.len() + 1);
        }
        let dec_side = Padded {
            ids: dec_ids,
            rows,
            cols: l1,
            lens: dec_lens,
        };

        let mut x = self.embed_batch(g, bound, dec.embed, &dec_side)?;
        let self_valid: Vec<usize> = (0..rows * l1).map(|r| (r % l1) + 1).collect();

        for layer in &dec.layers {
            x = self.self_attention_sublayer(
                g, bound, &x, &layer.ln1, &layer.self_attn, rows, l1, &self_valid,
            )?;

            // independent per-source cross-attention, then gated fusion
            let c = self.ln_graph(g, bound, &x, &layer.ln2)?;
            let q = self.linear_graph(g, bound, &c, layer.cross_attn.wq, layer.cross_attn.bq)?;
            let mut contexts = Vec::with_capacity(cfg.num_encoders);
            for (s, enc) in enc_states.iter().enumerate() {
                let src = &batch.sources[s];
                let k = self.linear_graph(g, bound, enc, layer.cross_attn.wk, layer.cross_attn.bk)?;
                let v = self.linear_graph(g, bound, enc, layer.cross_attn.wv, layer.cross_attn.bv)?;
                let cross_valid: Vec<usize> =
                    (0..rows * l1).map(|r| src.lens[r / l1]).collect();
                let ctx =
                    self.attention_batch(g, &q, &k, &v, rows, l1, src.cols, &cross_valid)?;
                contexts.push(self.linear_graph(g, bound, &ctx, layer.cross_attn.wo, layer.cross_attn.bo)?);
            }
            let fused = match &layer.gate {
                None => contexts[0].clone(),
                Some(gate) => {
                    let ws: Vec<Tensor> =
                        gate.parts.iter().map(|&(w, _)| bound.get(w).clone()).collect();
                    let bs: Vec<Tensor> =
                        gate.parts.iter().map(|&(_, b)| bound.get(b).clone()).collect();
                    fusion::fuse_graph(g, &contexts, &ws, &bs, cfg.hidden)?
                }
            };
            let fused = g.dropout(&fused, cfg.dropout)?;
            x = g.add(&x, &fused)?;

            x = self.ffn_sublayer(g, bound, &x, &layer.ln3, &layer.ffn)?;
        }
        let x = self.ln_graph(g, bound, &x, &dec.final_ln)?;
        self.linear_graph(g, bound, &x, dec.out_w, dec.out_b)
    }
}
