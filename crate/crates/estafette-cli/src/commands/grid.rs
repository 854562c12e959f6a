//! `estafette grid`: the wait-k grid over pivot configurations, emitting
//! the results CSV and markdown report.

use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Parser;

use estafette::corpus::ParallelCorpus;
use estafette::eval::grid::{run_grid, GridData, GridModels, PivotConfig};
use estafette::eval::report::emit_report;

use crate::config::{check_vocab_chain, load_stage, GridFile, LoadedModel};
use crate::manifest::{default_out_dir, RunManifest};

#[derive(Parser)]
pub struct Args {
    /// Grid description (TOML): direct checkpoint and pivot configurations
    #[arg(long)]
    pub models: PathBuf,
    /// Test corpus TSV
    #[arg(long)]
    pub test: PathBuf,
    /// Comma-separated wait-k values
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,6,8")]
    pub k: Vec<usize>,
    /// Also evaluate full-sentence references per configuration
    #[arg(long)]
    pub include_full: bool,
    /// Source language column in the test TSV
    #[arg(long, default_value = "source")]
    pub source_lang: String,
    /// Target language column in the test TSV
    #[arg(long, default_value = "target")]
    pub target_lang: String,
    /// Output directory for grid.csv and report.md
    #[arg(long, default_value_os_t = default_out_dir())]
    pub out: PathBuf,
}

struct LoadedConfig {
    label: String,
    s2p: Vec<LoadedModel>,
    p2t: LoadedModel,
}

pub fn run(args: Args) -> Result<()> {
    let file = GridFile::load(&args.models)?;
    if file.configs.is_empty() {
        bail!(estafette::Error::config("grid needs at least one pivot configuration"));
    }

    let direct = file
        .direct
        .as_ref()
        .map(|p| load_stage(p, "direct"))
        .transpose()?;
    let mut configs = Vec::with_capacity(file.configs.len());
    for entry in &file.configs {
        let s2p = entry
            .s2p
            .iter()
            .enumerate()
            .map(|(i, p)| load_stage(p, &format!("{}.s2p[{i}]", entry.label)))
            .collect::<Result<Vec<_>>>()?;
        let p2t = load_stage(&entry.p2t, &format!("{}.p2t", entry.label))?;
        check_vocab_chain(&s2p, &p2t)?;
        configs.push(LoadedConfig {
            label: entry.label.clone(),
            s2p,
            p2t,
        });
    }

    // comparability: all configurations must share the source-side and
    // target-side vocabularies (and match the direct model's, if present)
    let src_ref = &configs[0].s2p[0].src_vocab;
    let tgt_ref = &configs[0].p2t.tgt_vocab;
    for c in &configs {
        for (i, s) in c.s2p.iter().enumerate() {
            if s.src_vocab.tokens() != src_ref.tokens() {
                bail!(estafette::Error::config(format!(
                    "configuration `{}` s2p[{i}] uses a different source vocabulary",
                    c.label
                )));
            }
        }
        if c.p2t.tgt_vocab.tokens() != tgt_ref.tokens() {
            bail!(estafette::Error::config(format!(
                "configuration `{}` uses a different target vocabulary",
                c.label
            )));
        }
    }
    if let Some(d) = &direct {
        if d.src_vocab.tokens() != src_ref.tokens() || d.tgt_vocab.tokens() != tgt_ref.tokens() {
            bail!(estafette::Error::config(
                "direct model vocabularies differ from the pivot configurations",
            ));
        }
    }

    let test = ParallelCorpus::load_tsv(&args.test, "test")?;
    let src_idx = test.lang_index(&args.source_lang)?;
    let tgt_idx = test.lang_index(&args.target_lang)?;
    let sentences = (0..test.len())
        .map(|i| {
            let ex = test.example(i);
            (src_ref.encode(&ex[src_idx]), tgt_ref.encode(&ex[tgt_idx]))
        })
        .collect();
    let data = GridData { sentences };

    let models = GridModels {
        direct: direct.as_ref().map(|d| &d.model),
        configs: configs
            .iter()
            .map(|c| PivotConfig {
                label: c.label.clone(),
                s2p: c.s2p.iter().map(|m| &m.model).collect(),
                p2t: &c.p2t.model,
            })
            .collect(),
    };

    let output = run_grid(&models, &data, &args.k, args.include_full)?;

    fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("grid.csv");
    let md_path = args.out.join("report.md");
    emit_report(&output, &csv_path, &md_path)?;

    let mut m = RunManifest::new(
        "grid",
        None,
        serde_json::json!({
            "k": args.k,
            "include_full": args.include_full,
            "configs": file.configs.iter().map(|c| c.label.clone()).collect::<Vec<_>>(),
            "test": args.test.display().to_string(),
        }),
    );
    m.add_input(&args.models)?;
    m.add_input(&args.test)?;
    m.add_output(&csv_path)?;
    m.add_output(&md_path)?;
    m.write(&args.out.join("grid.manifest.json"))?;

    let cells = args.k.len() * args.k.len();
    println!(
        "evaluated {} configuration(s) x {cells} wait-k cells over {} sentences -> {}",
        output.results.len(),
        data.sentences.len(),
        csv_path.display()
    );
    Ok(())
}
