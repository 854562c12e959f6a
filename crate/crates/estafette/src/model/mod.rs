//! Small encoder-decoder transformer with optional multi-encoder input and
//! gated attention fusion.
//!
//! One parameter layout serves two execution paths: a batched graph forward
//! for training (`forward_loss`) and a row-at-a-time kernel path for
//! inference (`encode`, `decode_step`, `greedy_decode`, incremental
//! sessions). Both share the kernels in [`crate::tensor::kernels`].

pub mod checkpoint;
pub mod config;
pub mod fusion;
mod forward;
mod infer;
pub mod params;

pub use config::ModelConfig;
pub use fusion::{fuse_attention, Gate};
pub use infer::{DecodeOutput, DecodeSession, EncoderSession, EncoderStates};
pub use params::{Bound, ParamId, ParamStore};

use crate::error::{Error, Result};

/// Epsilon inside layer-norm denominators.
pub(crate) const LN_EPS: f64 = 1e-5;

pub(crate) struct LnIds {
    pub gamma: ParamId,
    pub beta: ParamId,
}

pub(crate) struct AttnIds {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

pub(crate) struct FfnIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

pub(crate) struct EncLayerIds {
    pub ln1: LnIds,
    pub attn: AttnIds,
    pub ln2: LnIds,
    pub ffn: FfnIds,
}

pub(crate) struct EncoderIds {
    pub embed: ParamId,
    pub layers: Vec<EncLayerIds>,
    pub final_ln: LnIds,
}

/// Gate parameters of one decoder layer: a single (2h,h)+h pair for two
/// sources, or one pair per source beyond that.
pub(crate) struct GateIds {
    pub parts: Vec<(ParamId, ParamId)>,
}

pub(crate) struct DecLayerIds {
    pub ln1: LnIds,
    pub self_attn: AttnIds,
    pub ln2: LnIds,
    pub cross_attn: AttnIds,
    pub gate: Option<GateIds>,
    pub ln3: LnIds,
    pub ffn: FfnIds,
}

pub(crate) struct DecoderIds {
    pub embed: ParamId,
    pub layers: Vec<DecLayerIds>,
    pub final_ln: LnIds,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

/// Encoder-decoder transformer: hyperparameters plus named parameters.
///
/// Immutable models are safe to share across concurrent decode sessions;
/// training takes `&mut` access through the parameter store.
pub struct TransformerModel {
    config: ModelConfig,
    store: ParamStore,
    encoders: Vec<EncoderIds>,
    decoder: DecoderIds,
    pos: Vec<f64>,
}

impl TransformerModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed);
        let h = config.hidden;
        let ff = config.ff_size;

        let ln = |store: &mut ParamStore, name: &str| LnIds {
            gamma: store.ones(&format!("{name}.g"), vec![h]),
            beta: store.zeros(&format!("{name}.b"), vec![h]),
        };
        let attn = |store: &mut ParamStore, name: &str| AttnIds {
            wq: store.xavier(&format!("{name}.wq"), h, h),
            bq: store.zeros(&format!("{name}.bq"), vec![h]),
            wk: store.xavier(&format!("{name}.wk"), h, h),
            bk: store.zeros(&format!("{name}.bk"), vec![h]),
            wv: store.xavier(&format!("{name}.wv"), h, h),
            bv: store.zeros(&format!("{name}.bv"), vec![h]),
            wo: store.xavier(&format!("{name}.wo"), h, h),
            bo: store.zeros(&format!("{name}.bo"), vec![h]),
        };
        let ffn = |store: &mut ParamStore, name: &str| FfnIds {
            w1: store.xavier(&format!("{name}.w1"), h, ff),
            b1: store.zeros(&format!("{name}.b1"), vec![ff]),
            w2: store.xavier(&format!("{name}.w2"), ff, h),
            b2: store.zeros(&format!("{name}.b2"), vec![h]),
        };

        let mut encoders = Vec::new();
        for e in 0..config.encoder_blocks() {
            let embed = store.xavier(&format!("enc{e}.embed"), config.src_vocab_size, h);
            let mut layers = Vec::new();
            for l in 0..config.layers {
                let base = format!("enc{e}.l{l}");
                layers.push(EncLayerIds {
                    ln1: ln(&mut store, &format!("{base}.ln1")),
                    attn: attn(&mut store, &format!("{base}.attn")),
                    ln2: ln(&mut store, &format!("{base}.ln2")),
                    ffn: ffn(&mut store, &format!("{base}.ffn")),
                });
            }
            let final_ln = ln(&mut store, &format!("enc{e}.final"));
            encoders.push(EncoderIds {
                embed,
                layers,
                final_ln,
            });
        }

        let embed = store.xavier("dec.embed", config.tgt_vocab_size, h);
        let mut layers = Vec::new();
        for l in 0..config.layers {
            let base = format!("dec.l{l}");
            let gate = if config.num_encoders >= 2 {
                let parts = if config.num_encoders == 2 {
                    vec![(
                        store.xavier(&format!("{base}.gate.w"), 2 * h, h),
                        store.zeros(&format!("{base}.gate.b"), vec![h]),
                    )]
                } else {
                    (0..config.num_encoders)
                        .map(|s| {
                            (
                                store.xavier(&format!("{base}.gate{s}.w"), 2 * h, h),
                                store.zeros(&format!("{base}.gate{s}.b"), vec![h]),
                            )
                        })
                        .collect()
                };
                Some(GateIds { parts })
            } else {
                None
            };
            layers.push(DecLayerIds {
                ln1: ln(&mut store, &format!("{base}.ln1")),
                self_attn: attn(&mut store, &format!("{base}.self")),
                ln2: ln(&mut store, &format!("{base}.ln2")),
                cross_attn: attn(&mut store, &format!("{base}.cross")),
                gate,
                ln3: ln(&mut store, &format!("{base}.ln3")),
                ffn: ffn(&mut store, &format!("{base}.ffn")),
            });
        }
        let final_ln = ln(&mut store, "dec.final");
        let out_w = store.xavier("out.w", h, config.tgt_vocab_size);
        let out_b = store.zeros("out.b", vec![config.tgt_vocab_size]);
        let decoder = DecoderIds {
            embed,
            layers,
            final_ln,
            out_w,
            out_b,
        };

        let pos = sinusoidal_positions(config.max_len, h);
        Ok(TransformerModel {
            config,
            store,
            encoders,
            decoder,
            pos,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Total number of learned scalars.
    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// Encoder parameter block serving `source_index`.
    pub(crate) fn encoder_block(&self, source_index: usize) -> Result<&EncoderIds> {
        if source_index >= self.config.num_encoders {
            return Err(Error::Index {
                what: "source index",
                index: source_index,
                limit: self.config.num_encoders,
            });
        }
        let block = if self.config.share_encoder_across_sources {
            0
        } else {
            source_index
        };
        Ok(&self.encoders[block])
    }

    pub(crate) fn position_row(&self, p: usize) -> &[f64] {
        let h = self.config.hidden;
        &self.pos[p * h..(p + 1) * h]
    }
}

/// Standard sinusoidal position table, (max_len, h) row-major.
fn sinusoidal_positions(max_len: usize, h: usize) -> Vec<f64> {
    let mut pos = vec![0.0; max_len * h];
    for p in 0..max_len {
        for i in 0..h {
            let exponent = 2.0 * (i / 2) as f64 / h as f64;
            let angle = p as f64 / 10000f64.powf(exponent);
            pos[p * h + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pos
}
