//! `estafette train`: train one model (direct, source→pivot or
//! (multi-)pivot→target) from a corpus directory.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;

use estafette::corpus::{build_vocab, ParallelCorpus};
use estafette::model::TransformerModel;
use estafette::train::{curve_to_csv, train, StopReason, TrainData};

use crate::config::TrainFile;
use crate::manifest::{default_out_dir, RunManifest};

#[derive(Parser)]
pub struct Args {
    /// Corpus directory holding train.tsv and dev.tsv
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated source language columns (multiple for multi-source)
    #[arg(long, value_delimiter = ',', default_value = "source")]
    pub source_langs: Vec<String>,
    /// Target language column
    #[arg(long, default_value = "target")]
    pub target_lang: String,
    /// Config file with [model] and [train] tables
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint output path
    #[arg(long, default_value_os_t = default_out_dir().join("model.ckpt"))]
    pub out: PathBuf,
    /// Also write the training curve CSV here
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Parameter initialization seed
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,

    // [train] overrides
    /// Training seed (batch shuffling and dropout)
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub peak_lr: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub label_smoothing: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub avg_last: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub grad_clip: Option<f64>,

    // [model] overrides
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub ff_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Bidirectional encoder (full-sentence only; the default is causal)
    #[arg(long)]
    pub bidirectional_encoder: bool,
    /// One encoder parameter set per source instead of a shared one
    #[arg(long)]
    pub separate_encoders: bool,
}

pub fn run(args: Args) -> Result<()> {
    let file = TrainFile::load(args.config.as_deref())?;

    let train_path = args.corpus.join("train.tsv");
    let dev_path = args.corpus.join("dev.tsv");
    let train_corpus = ParallelCorpus::load_tsv(&train_path, "train")
        .with_context(|| format!("loading {}", train_path.display()))?;
    let dev_corpus = ParallelCorpus::load_tsv(&dev_path, "dev")
        .with_context(|| format!("loading {}", dev_path.display()))?;

    let source_refs: Vec<&str> = args.source_langs.iter().map(|s| s.as_str()).collect();
    let src_vocab = build_vocab(&train_corpus, &source_refs)?;
    let tgt_vocab = build_vocab(&train_corpus, &[args.target_lang.as_str()])?;

    let mut mc = file.model_config(args.source_langs.len(), src_vocab.len(), tgt_vocab.len());
    if let Some(v) = args.layers {
        mc.layers = v;
    }
    if let Some(v) = args.heads {
        mc.heads = v;
    }
    if let Some(v) = args.hidden {
        mc.hidden = v;
    }
    if let Some(v) = args.ff_size {
        mc.ff_size = v;
    }
    if let Some(v) = args.dropout {
        mc.dropout = v;
    }
    if let Some(v) = args.max_len {
        mc.max_len = v;
    }
    if args.bidirectional_encoder {
        mc.causal_encoder = false;
    }
    if args.separate_encoders {
        mc.share_encoder_across_sources = false;
    }

    let mut tc = file.train_config();
    if let Some(v) = args.seed {
        tc.seed = v;
    }
    if let Some(v) = args.peak_lr {
        tc.peak_lr = v;
    }
    if let Some(v) = args.warmup_steps {
        tc.warmup_steps = v;
    }
    if let Some(v) = args.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = args.label_smoothing {
        tc.label_smoothing = v;
    }
    if let Some(v) = args.eval_every {
        tc.eval_every = v;
    }
    if let Some(v) = args.patience {
        tc.patience = v;
    }
    if let Some(v) = args.avg_last {
        tc.avg_last = v;
    }
    if let Some(v) = args.max_steps {
        tc.max_steps = v;
    }
    if let Some(v) = args.grad_clip {
        tc.grad_clip = Some(v);
    }

    let data = TrainData {
        train: train_corpus.encode_sides(&source_refs, &args.target_lang, &src_vocab, &tgt_vocab)?,
        dev: dev_corpus.encode_sides(&source_refs, &args.target_lang, &src_vocab, &tgt_vocab)?,
        num_sources: args.source_langs.len(),
    };

    let mut model = TransformerModel::new(mc.clone(), args.model_seed)?;
    let outcome = train(&mut model, &data, &tc)?;

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    model.save_checkpoint(&args.out, &src_vocab, &tgt_vocab)?;

    let mut m = RunManifest::new(
        "train",
        Some(tc.seed),
        serde_json::json!({
            "model": mc,
            "train": tc,
            "model_seed": args.model_seed,
            "source_langs": args.source_langs,
            "target_lang": args.target_lang,
        }),
    );
    m.add_input(&train_path)?;
    m.add_input(&dev_path)?;
    if let Some(cfg) = &args.config {
        m.add_input(cfg)?;
    }
    m.add_output(&args.out)?;
    if let Some(curve_path) = &args.curve {
        fs::write(curve_path, curve_to_csv(&outcome.curve))?;
        m.add_output(curve_path)?;
    }
    m.write(&args.out.with_extension("manifest.json"))?;

    let reason = match outcome.stopped {
        StopReason::EarlyStopped => "dev BLEU stagnated",
        StopReason::MaxSteps => "max steps reached",
    };
    println!(
        "trained {} steps ({reason}); best dev BLEU {:.2}; checkpoint {}",
        outcome.steps,
        outcome.best_dev_bleu,
        args.out.display()
    );
    Ok(())
}
