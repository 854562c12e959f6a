//! `estafette gen-corpus`: deterministic synthetic N-way corpus generation,
//! cached on disk under the spec hash.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;

use estafette::corpus::synth::{generate_synthetic_nway, SynthSpec};

use crate::manifest::{default_out_dir, RunManifest};

#[derive(Parser)]
pub struct Args {
    /// Synthetic corpus spec (TOML)
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory; the corpus lands in <out>/<spec-hash>/
    #[arg(long, default_value_os_t = default_out_dir())]
    pub out: PathBuf,
    /// Override the spec's random seed
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn run(args: Args) -> Result<()> {
    let text = fs::read_to_string(&args.spec)
        .with_context(|| format!("reading spec {}", args.spec.display()))?;
    let mut spec: SynthSpec = toml::from_str(&text)
        .map_err(|e| estafette::Error::config(format!("{}: {e}", args.spec.display())))?;
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }

    let dir = args.out.join(spec.content_hash());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

    let corpus = generate_synthetic_nway(&spec)?;
    let mut m = RunManifest::new(
        "gen-corpus",
        Some(spec.seed),
        serde_json::to_value(&spec)?,
    );
    m.add_input(&args.spec)?;

    let resolved = dir.join("spec.toml");
    fs::write(&resolved, toml::to_string_pretty(&spec)?)?;
    m.add_output(&resolved)?;
    for (name, split) in [
        ("train.tsv", &corpus.train),
        ("dev.tsv", &corpus.dev),
        ("test.tsv", &corpus.test),
    ] {
        let path = dir.join(name);
        split.save_tsv(&path)?;
        m.add_output(&path)?;
    }
    m.write(&dir.join("manifest.json"))?;

    println!("{}", dir.display());
    Ok(())
}
