//! `estafette evaluate`: corpus BLEU of a hypothesis file against a
//! reference file (one whitespace-tokenized sentence per line).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Parser;

use estafette::eval::bleu;

#[derive(Parser)]
pub struct Args {
    /// Hypothesis file
    #[arg(long)]
    pub hyp: PathBuf,
    /// Reference file
    #[arg(long, name = "ref")]
    pub reference: PathBuf,
    /// Disable add-one smoothing of zero n-gram counts (n ≥ 2)
    #[arg(long)]
    pub no_smoothing: bool,
    /// Print the full report as JSON
    #[arg(long)]
    pub json: bool,
}

fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(|t| t.to_string()).collect())
        .collect())
}

pub fn run(args: Args) -> Result<()> {
    let hyps = read_sentences(&args.hyp)?;
    let refs = read_sentences(&args.reference)?;
    let report = bleu(&hyps, &refs, !args.no_smoothing)?;
    if args.json {
        println!(
            "{}",
            serde_json::json!({
                "bleu": report.bleu,
                "precisions": report.precisions,
                "brevity_penalty": report.brevity_penalty,
                "hyp_tokens": report.hyp_tokens,
                "ref_tokens": report.ref_tokens,
            })
        );
    } else {
        println!(
            "BLEU = {:.2}  (precisions {:.1}/{:.1}/{:.1}/{:.1}, BP {:.3}, hyp {} tokens, ref {} tokens)",
            report.bleu,
            100.0 * report.precisions[0],
            100.0 * report.precisions[1],
            100.0 * report.precisions[2],
            100.0 * report.precisions[3],
            report.brevity_penalty,
            report.hyp_tokens,
            report.ref_tokens,
        );
    }
    Ok(())
}
