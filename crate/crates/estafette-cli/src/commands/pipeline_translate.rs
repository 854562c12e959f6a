//! `estafette pipeline-translate`: chained (multi-)pivot translation of
//! newline-delimited sentences, with an optional tick-by-tick trace.

use std::path::PathBuf;

use anyhow::Result;
use clap::Parser;

use estafette::pipeline::{Pipeline, StageMode, TraceKind};

use crate::commands::{print_sentence, read_stdin_sentences};
use crate::config::{check_vocab_chain, load_stage, PipelineFile};
use crate::manifest::RunManifest;

#[derive(Parser)]
pub struct Args {
    /// Pipeline description (TOML): stage checkpoints and k values
    #[arg(long)]
    pub pipeline: PathBuf,
    /// Override the source→pivot stage mode (`full` or a k value)
    #[arg(long)]
    pub k_s2p: Option<StageMode>,
    /// Override the pivot→target stage mode (`full` or a k value)
    #[arg(long)]
    pub k_p2t: Option<StageMode>,
    /// Emit the tick-by-tick action trace on stderr
    #[arg(long)]
    pub trace: bool,
    /// Write a run manifest here
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<()> {
    let file = PipelineFile::load(&args.pipeline)?;
    let k_s2p = args.k_s2p.or(file.k_s2p).unwrap_or(StageMode::Full);
    let k_p2t = args.k_p2t.or(file.k_p2t).unwrap_or(StageMode::Full);

    let s2p = file
        .s2p
        .iter()
        .enumerate()
        .map(|(i, p)| load_stage(p, &format!("s2p[{i}]")))
        .collect::<Result<Vec<_>>>()?;
    let p2t = load_stage(&file.p2t, "p2t")?;
    check_vocab_chain(&s2p, &p2t)?;

    let pipeline = Pipeline::new(
        s2p.iter().map(|m| &m.model).collect(),
        &p2t.model,
        k_s2p,
        k_p2t,
    )?;
    if let Ok(k) = pipeline.effective_wait_k() {
        if args.trace {
            eprintln!("# effective wait-k: {k}");
        }
    }

    let src_vocab = &s2p[0].src_vocab;
    let sentences = read_stdin_sentences()?;
    for (n, tokens) in sentences.iter().enumerate() {
        let ids = src_vocab.encode(tokens);
        let run = pipeline.run(&ids)?;
        if args.trace {
            for ev in &run.trace {
                let line = match &ev.event {
                    TraceKind::SourceRead { token } => {
                        format!("read source '{}'", src_vocab.token(*token))
                    }
                    TraceKind::PivotWrite { pivot, token } => {
                        format!("pivot {pivot} writes '{}'", p2t.src_vocab.token(*token))
                    }
                    TraceKind::PivotFeed { pivot, token } => {
                        format!("feed pivot {pivot} '{}'", p2t.src_vocab.token(*token))
                    }
                    TraceKind::PivotEnd { pivot } => format!("pivot {pivot} stream ends"),
                    TraceKind::TargetWrite { token } => {
                        format!("target writes '{}'", p2t.tgt_vocab.token(*token))
                    }
                };
                eprintln!("# sentence {n} tick {}: {line}", ev.tick);
            }
        }
        print_sentence(&p2t.tgt_vocab.decode(&run.target))?;
    }

    if let Some(path) = &args.manifest {
        let mut m = RunManifest::new(
            "pipeline-translate",
            None,
            serde_json::json!({
                "pipeline": args.pipeline.display().to_string(),
                "k_s2p": k_s2p.to_string(),
                "k_p2t": k_p2t.to_string(),
                "sentences": sentences.len(),
            }),
        );
        m.add_input(&args.pipeline)?;
        for p in &file.s2p {
            m.add_input(p)?;
        }
        m.add_input(&file.p2t)?;
        m.write(path)?;
    }
    Ok(())
}
