//! `estafette report`: render a grid CSV as the markdown report.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Parser;

use estafette::eval::report::{grid_to_markdown, parse_grid_csv};

use crate::manifest::{default_out_dir, RunManifest};

#[derive(Parser)]
pub struct Args {
    /// Grid CSV produced by `estafette grid`
    #[arg(long)]
    pub grid: PathBuf,
    /// Markdown output path
    #[arg(long, default_value_os_t = default_out_dir().join("report.md"))]
    pub out: PathBuf,
}

pub fn run(args: Args) -> Result<()> {
    let text = fs::read_to_string(&args.grid)
        .with_context(|| format!("reading {}", args.grid.display()))?;
    let output = parse_grid_csv(&text)?;
    fs::write(&args.out, grid_to_markdown(&output))?;

    let mut m = RunManifest::new("report", None, serde_json::json!({}));
    m.add_input(&args.grid)?;
    m.add_output(&args.out)?;
    m.write(&args.out.with_extension("manifest.json"))?;

    println!("{}", args.out.display());
    Ok(())
}
