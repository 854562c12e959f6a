//! `estafette translate`: single-model translation of newline-delimited
//! sentences, full-sentence or wait-k.

use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Parser;

use estafette::waitk::simultaneous_greedy_decode;

use crate::commands::{print_sentence, read_stdin_sentences};
use crate::config::load_stage;
use crate::manifest::RunManifest;

#[derive(Parser)]
pub struct Args {
    /// Model checkpoint
    #[arg(long)]
    pub model: PathBuf,
    /// Wait-k value for simultaneous decoding
    #[arg(long, conflicts_with = "full")]
    pub k: Option<usize>,
    /// Full-sentence decoding (the default)
    #[arg(long)]
    pub full: bool,
    /// Cap on emitted tokens per sentence (default: model max_len − 1)
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Write a run manifest here
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<()> {
    let loaded = load_stage(&args.model, "translate")?;
    if loaded.model.config().num_encoders != 1 {
        bail!(estafette::Error::config(
            "translate serves single-encoder models; use pipeline-translate for chained setups",
        ));
    }
    let max_steps = args
        .max_steps
        .unwrap_or(loaded.model.config().max_len - 1);

    let sentences = read_stdin_sentences()?;
    for tokens in &sentences {
        let ids = loaded.src_vocab.encode(tokens);
        let out = match args.k {
            Some(k) => simultaneous_greedy_decode(&loaded.model, ids, k, max_steps)?.0,
            None => {
                let enc = loaded.model.encode(&ids, 0)?;
                loaded.model.greedy_decode(&[&enc], max_steps)?
            }
        };
        print_sentence(&loaded.tgt_vocab.decode(&out.tokens))?;
    }

    if let Some(path) = &args.manifest {
        let mut m = RunManifest::new(
            "translate",
            None,
            serde_json::json!({
                "model": args.model.display().to_string(),
                "k": args.k,
                "max_steps": max_steps,
                "sentences": sentences.len(),
            }),
        );
        m.add_input(&args.model)?;
        m.write(path)?;
    }
    Ok(())
}
