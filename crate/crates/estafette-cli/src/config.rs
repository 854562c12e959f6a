//! Config-file schemas and checkpoint loading helpers.
//!
//! Precedence everywhere: command-line flags override config-file values,
//! which override built-in defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use estafette::corpus::Vocab;
use estafette::model::{ModelConfig, TransformerModel};
use estafette::pipeline::StageMode;
use estafette::train::TrainConfig;

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub layers: Option<usize>,
    pub heads: Option<usize>,
    pub hidden: Option<usize>,
    pub ff_size: Option<usize>,
    pub dropout: Option<f64>,
    pub max_len: Option<usize>,
    pub causal_encoder: Option<bool>,
    pub share_encoder_across_sources: Option<bool>,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub peak_lr: Option<f64>,
    pub warmup_steps: Option<usize>,
    pub batch_size: Option<usize>,
    pub label_smoothing: Option<f64>,
    pub eval_every: Option<usize>,
    pub patience: Option<usize>,
    pub avg_last: Option<usize>,
    pub max_steps: Option<usize>,
    pub seed: Option<u64>,
    pub grad_clip: Option<f64>,
}

/// `estafette train` config file: a `[model]` and a `[train]` table.
#[derive(Debug, Default, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
}

impl TrainFile {
    pub fn load(path: Option<&Path>) -> Result<TrainFile> {
        match path {
            None => Ok(TrainFile::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text)
                    .map_err(|e| estafette::Error::config(format!("{}: {e}", p.display())).into())
            }
        }
    }

    /// Fill a model config from defaults, then the file, given vocabulary
    /// sizes and the number of encoder sources.
    pub fn model_config(&self, num_encoders: usize, src_vocab: usize, tgt_vocab: usize) -> ModelConfig {
        let s = &self.model;
        ModelConfig {
            num_encoders,
            layers: s.layers.unwrap_or(2),
            heads: s.heads.unwrap_or(4),
            hidden: s.hidden.unwrap_or(64),
            ff_size: s.ff_size.unwrap_or(256),
            src_vocab_size: src_vocab,
            tgt_vocab_size: tgt_vocab,
            dropout: s.dropout.unwrap_or(0.1),
            max_len: s.max_len.unwrap_or(64),
            causal_encoder: s.causal_encoder.unwrap_or(true),
            share_encoder_across_sources: s.share_encoder_across_sources.unwrap_or(true),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let s = &self.train;
        let d = TrainConfig::default();
        TrainConfig {
            peak_lr: s.peak_lr.unwrap_or(d.peak_lr),
            warmup_steps: s.warmup_steps.unwrap_or(d.warmup_steps),
            batch_size: s.batch_size.unwrap_or(d.batch_size),
            label_smoothing: s.label_smoothing.unwrap_or(d.label_smoothing),
            eval_every: s.eval_every.unwrap_or(d.eval_every),
            patience: s.patience.unwrap_or(d.patience),
            avg_last: s.avg_last.unwrap_or(d.avg_last),
            max_steps: s.max_steps.unwrap_or(d.max_steps),
            seed: s.seed.unwrap_or(d.seed),
            grad_clip: s.grad_clip.or(d.grad_clip),
            ..d
        }
    }
}

/// `estafette pipeline-translate` description file: checkpoint paths per
/// stage, per-stage k values or `"full"`, pivots in list order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineFile {
    pub s2p: Vec<PathBuf>,
    pub p2t: PathBuf,
    pub k_s2p: Option<StageMode>,
    pub k_p2t: Option<StageMode>,
}

impl PipelineFile {
    pub fn load(path: &Path) -> Result<PipelineFile> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading pipeline description {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| estafette::Error::config(format!("{}: {e}", path.display())).into())
    }
}

/// `estafette grid` description file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub direct: Option<PathBuf>,
    pub configs: Vec<GridEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub label: String,
    pub s2p: Vec<PathBuf>,
    pub p2t: PathBuf,
}

impl GridFile {
    pub fn load(path: &Path) -> Result<GridFile> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading grid description {}", path.display()))?;
        toml::from_str(&text)
            .map_err(|e| estafette::Error::config(format!("{}: {e}", path.display())).into())
    }
}

pub struct LoadedModel {
    pub model: TransformerModel,
    pub src_vocab: Vocab,
    pub tgt_vocab: Vocab,
}

/// Load a checkpoint, naming the pipeline stage in any error.
pub fn load_stage(path: &Path, stage: &str) -> Result<LoadedModel> {
    let (model, mut src_vocab, mut tgt_vocab) = TransformerModel::load_checkpoint(path)
        .map_err(|e| {
            estafette::Error::config(format!(
                "stage `{stage}`: cannot load checkpoint {}: {e}",
                path.display()
            ))
        })?;
    src_vocab.rebuild_index();
    tgt_vocab.rebuild_index();
    Ok(LoadedModel {
        model,
        src_vocab,
        tgt_vocab,
    })
}

/// Verify that each source→pivot target vocabulary equals the
/// pivot→target source vocabulary, token list for token list.
pub fn check_vocab_chain(s2p: &[LoadedModel], p2t: &LoadedModel) -> Result<()> {
    for (i, stage) in s2p.iter().enumerate() {
        if stage.tgt_vocab.tokens() != p2t.src_vocab.tokens() {
            bail!(estafette::Error::config(format!(
                "vocabulary chain mismatch at pivot {i}: source→pivot target vocabulary does not \
                 equal the pivot→target source vocabulary"
            )));
        }
    }
    Ok(())
}
