//! Grid result serialization: the `config,k_s2p,k_p2t,bleu,al` CSV schema
//! (with `full` as the full-sentence sentinel and `-` for an absent stage)
//! and a markdown report with per-row maxima highlighted.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::grid::{DirectRow, GridCell, GridOutput, GridResult};

fn al_field(cell: &GridCell) -> String {
    cell.al.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per cell: pipeline cells, then the full/full reference, then the
/// direct rows (whose s2p column is `-`).
pub fn grid_to_csv(out: &GridOutput) -> String {
    let mut csv = String::from("config,k_s2p,k_p2t,bleu,al\n");
    for r in &out.results {
        for (i, &k1) in r.s2p_ks.iter().enumerate() {
            for (j, &k2) in r.p2t_ks.iter().enumerate() {
                let cell = &r.cells[i * r.p2t_ks.len() + j];
                let _ = writeln!(csv, "{},{},{},{},{}", r.label, k1, k2, cell.bleu, al_field(cell));
            }
        }
        if let Some(cell) = &r.full {
            let _ = writeln!(csv, "{},full,full,{},{}", r.label, cell.bleu, al_field(cell));
        }
    }
    if let Some(direct) = &out.direct {
        for (k, cell) in direct.ks.iter().zip(&direct.cells) {
            let _ = writeln!(csv, "direct,-,{},{},{}", k, cell.bleu, al_field(cell));
        }
        if let Some(cell) = &direct.full {
            let _ = writeln!(csv, "direct,-,full,{},{}", cell.bleu, al_field(cell));
        }
    }
    csv
}

fn parse_cell(bleu: &str, al: &str, line: usize) -> Result<GridCell> {
    let bleu: f64 = bleu.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad bleu value `{bleu}`"),
    })?;
    let al = if al.is_empty() {
        None
    } else {
        Some(al.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad al value `{al}`"),
        })?)
    };
    Ok(GridCell { bleu, al })
}

/// Inverse of [`grid_to_csv`]: reconstructs the grid exactly.
pub fn parse_grid_csv(text: &str) -> Result<GridOutput> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == "config,k_s2p,k_p2t,bleu,al" => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("bad grid CSV header: {:?}", other.map(|(_, h)| h)),
            })
        }
    }
    let mut results: Vec<GridResult> = Vec::new();
    let mut direct: Option<DirectRow> = None;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("{} fields, expected 5", fields.len()),
            });
        }
        let (config, k1, k2, bleu, al) = (fields[0], fields[1], fields[2], fields[3], fields[4]);
        let cell = parse_cell(bleu, al, line_no)?;
        if config == "direct" {
            let row = direct.get_or_insert_with(|| DirectRow {
                ks: Vec::new(),
                cells: Vec::new(),
                full: None,
            });
            if k2 == "full" {
                row.full = Some(cell);
            } else {
                let k: usize = k2.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad k value `{k2}`"),
                })?;
                row.ks.push(k);
                row.cells.push(cell);
            }
            continue;
        }
        if results.last().map(|r| r.label.as_str()) != Some(config) {
            results.push(GridResult {
                label: config.to_string(),
                s2p_ks: Vec::new(),
                p2t_ks: Vec::new(),
                cells: Vec::new(),
                full: None,
            });
        }
        let r = results.last_mut().expect("just ensured");
        if k1 == "full" && k2 == "full" {
            r.full = Some(cell);
            continue;
        }
        let k1: usize = k1.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad k value `{k1}`"),
        })?;
        let k2: usize = k2.parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad k value `{k2}`"),
        })?;
        if !r.s2p_ks.contains(&k1) {
            r.s2p_ks.push(k1);
        }
        if !r.p2t_ks.contains(&k2) {
            r.p2t_ks.push(k2);
        }
        r.cells.push(cell);
    }
    Ok(GridOutput { direct, results })
}

fn bold_max_row(values: &[f64]) -> Vec<String> {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| {
            if (v - max).abs() < 1e-12 {
                format!("**{v:.1}**")
            } else {
                format!("{v:.1}")
            }
        })
        .collect()
}

/// Markdown tables shaped like a wait-k results grid: one block per pivot
/// configuration (S2P-k rows × P2T-k columns, per-row maxima bolded) plus a
/// direct-model row.
pub fn grid_to_markdown(out: &GridOutput) -> String {
    let mut md = String::from("# Wait-k grid results\n");
    if let Some(direct) = &out.direct {
        md.push_str("\n## Direct\n\n| k |");
        for k in &direct.ks {
            let _ = write!(md, " {k} |");
        }
        if direct.full.is_some() {
            md.push_str(" full |");
        }
        md.push_str("\n|---|");
        md.push_str(&"---|".repeat(direct.ks.len() + usize::from(direct.full.is_some())));
        md.push('\n');
        let mut values: Vec<f64> = direct.cells.iter().map(|c| c.bleu).collect();
        if let Some(f) = &direct.full {
            values.push(f.bleu);
        }
        md.push_str("| BLEU |");
        for v in bold_max_row(&values) {
            let _ = write!(md, " {v} |");
        }
        md.push('\n');
    }
    for r in &out.results {
        let _ = write!(md, "\n## {}\n\n| S2P-k \\ P2T-k |", r.label);
        for k in &r.p2t_ks {
            let _ = write!(md, " {k} |");
        }
        md.push_str("\n|---|");
        md.push_str(&"---|".repeat(r.p2t_ks.len()));
        md.push('\n');
        for (i, &k1) in r.s2p_ks.iter().enumerate() {
            let row: Vec<f64> = (0..r.p2t_ks.len())
                .map(|j| r.cells[i * r.p2t_ks.len() + j].bleu)
                .collect();
            let _ = write!(md, "| **{k1}** |");
            for v in bold_max_row(&row) {
                let _ = write!(md, " {v} |");
            }
            md.push('\n');
        }
        if let Some(f) = &r.full {
            let _ = writeln!(md, "\nFull-sentence pipeline: {:.1} BLEU", f.bleu);
        }
    }
    md
}

/// Write the CSV and markdown reports.
pub fn emit_report(out: &GridOutput, csv_path: &Path, md_path: &Path) -> Result<()> {
    std::fs::write(csv_path, grid_to_csv(out))?;
    std::fs::write(md_path, grid_to_markdown(out))?;
    Ok(())
}
