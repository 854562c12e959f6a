//! The wait-k grid harness: every (k_s2p, k_p2t) combination per pivot
//! configuration, plus the direct-model row and full-sentence reference
//! cells.

use rayon::prelude::*;

use crate::corpus::vocab::TokenId;
use crate::error::{Error, Result};
use crate::eval::bleu::bleu;
use crate::eval::lagging::average_lagging;
use crate::model::TransformerModel;
use crate::pipeline::{Pipeline, StageMode, TraceKind};
use crate::waitk::{simultaneous_greedy_decode, Action, ActionLog};

/// Test sentences: source token ids paired with reference target ids.
pub struct GridData {
    pub sentences: Vec<(Vec<TokenId>, Vec<TokenId>)>,
}

/// One pivot configuration under evaluation.
pub struct PivotConfig<'m> {
    pub label: String,
    pub s2p: Vec<&'m TransformerModel>,
    pub p2t: &'m TransformerModel,
}

/// Everything the grid compares: pivot configurations and, optionally, the
/// direct source→target model.
pub struct GridModels<'m> {
    pub direct: Option<&'m TransformerModel>,
    pub configs: Vec<PivotConfig<'m>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub bleu: f64,
    /// Mean average lagging; absent when no sentence produced output.
    pub al: Option<f64>,
}

/// BLEU/latency matrix of one pivot configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub label: String,
    pub s2p_ks: Vec<usize>,
    pub p2t_ks: Vec<usize>,
    /// Row-major: `cells[i * p2t_ks.len() + j]` is (s2p_ks[i], p2t_ks[j]).
    pub cells: Vec<GridCell>,
    /// Full-sentence pipeline reference.
    pub full: Option<GridCell>,
}

impl GridResult {
    pub fn cell(&self, k_s2p: usize, k_p2t: usize) -> Option<&GridCell> {
        let i = self.s2p_ks.iter().position(|&k| k == k_s2p)?;
        let j = self.p2t_ks.iter().position(|&k| k == k_p2t)?;
        self.cells.get(i * self.p2t_ks.len() + j)
    }
}

/// The direct model evaluated per k, plus its full-sentence reference.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectRow {
    pub ks: Vec<usize>,
    pub cells: Vec<GridCell>,
    pub full: Option<GridCell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridOutput {
    pub direct: Option<DirectRow>,
    pub results: Vec<GridResult>,
}

fn mean_al(per_sentence: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = per_sentence.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

fn log_from_trace(run: &crate::pipeline::PipelineRun) -> ActionLog {
    let mut log = ActionLog::new();
    for ev in &run.trace {
        match ev.event {
            TraceKind::SourceRead { .. } => log.push(Action::Read),
            TraceKind::TargetWrite { .. } => log.push(Action::Write),
            _ => {}
        }
    }
    log
}

fn offline_log(src_len: usize, tgt_len: usize) -> ActionLog {
    let mut log = ActionLog::new();
    for _ in 0..src_len {
        log.push(Action::Read);
    }
    for _ in 0..tgt_len {
        log.push(Action::Write);
    }
    log
}

fn score(
    hyps_and_logs: Vec<(Vec<TokenId>, Option<ActionLog>)>,
    data: &GridData,
) -> Result<GridCell> {
    let hyps: Vec<Vec<TokenId>> = hyps_and_logs.iter().map(|(h, _)| h.clone()).collect();
    let refs: Vec<Vec<TokenId>> = data.sentences.iter().map(|(_, r)| r.clone()).collect();
    let report = bleu(&hyps, &refs, true)?;
    let als: Vec<Option<f64>> = hyps_and_logs
        .iter()
        .zip(&data.sentences)
        .map(|((hyp, log), (src, _))| {
            let log = log.as_ref()?;
            if src.is_empty() || hyp.is_empty() {
                return None;
            }
            average_lagging(log, src.len(), hyp.len()).ok()
        })
        .collect();
    Ok(GridCell {
        bleu: report.bleu,
        al: mean_al(&als),
    })
}

fn eval_pipeline_cell(
    config: &PivotConfig,
    data: &GridData,
    mode_s2p: StageMode,
    mode_p2t: StageMode,
) -> Result<GridCell> {
    let pipeline = Pipeline::new(config.s2p.clone(), config.p2t, mode_s2p, mode_p2t)?;
    let outputs: Vec<(Vec<TokenId>, Option<ActionLog>)> = data
        .sentences
        .par_iter()
        .map(|(src, _)| {
            let run = pipeline.run(src)?;
            let log = match (mode_s2p, mode_p2t) {
                (StageMode::Full, StageMode::Full) => offline_log(src.len(), run.target.len()),
                _ => log_from_trace(&run),
            };
            Ok((run.target, Some(log)))
        })
        .collect::<Result<_>>()?;
    score(outputs, data)
}

fn eval_direct_cell(
    model: &TransformerModel,
    data: &GridData,
    mode: StageMode,
) -> Result<GridCell> {
    let max_steps = model.config().max_len - 1;
    let outputs: Vec<(Vec<TokenId>, Option<ActionLog>)> = data
        .sentences
        .par_iter()
        .map(|(src, _)| match mode {
            StageMode::WaitK(k) => {
                let (out, log) = simultaneous_greedy_decode(model, src.iter().copied(), k, max_steps)?;
                Ok((out.tokens, Some(log)))
            }
            StageMode::Full => {
                let enc = model.encode(src, 0)?;
                let out = model.greedy_decode(&[&enc], max_steps)?;
                let log = offline_log(src.len(), out.tokens.len());
                Ok((out.tokens, Some(log)))
            }
        })
        .collect::<Result<_>>()?;
    score(outputs, data)
}

/// Evaluate every configuration over `ks` × `ks` (plus the direct row and
/// full-sentence references when requested).
pub fn run_grid(
    models: &GridModels,
    data: &GridData,
    ks: &[usize],
    include_full: bool,
) -> Result<GridOutput> {
    if ks.is_empty() {
        return Err(Error::config("grid needs at least one k value"));
    }
    if data.sentences.is_empty() {
        return Err(Error::contract("grid over an empty test set"));
    }
    let mut results = Vec::with_capacity(models.configs.len());
    for config in &models.configs {
        let mut cells = Vec::with_capacity(ks.len() * ks.len());
        for &k1 in ks {
            for &k2 in ks {
                cells.push(eval_pipeline_cell(
                    config,
                    data,
                    StageMode::WaitK(k1),
                    StageMode::WaitK(k2),
                )?);
            }
        }
        let full = if include_full {
            Some(eval_pipeline_cell(config, data, StageMode::Full, StageMode::Full)?)
        } else {
            None
        };
        results.push(GridResult {
            label: config.label.clone(),
            s2p_ks: ks.to_vec(),
            p2t_ks: ks.to_vec(),
            cells,
            full,
        });
    }
    let direct = match models.direct {
        None => None,
        Some(model) => {
            let mut cells = Vec::with_capacity(ks.len());
            for &k in ks {
                cells.push(eval_direct_cell(model, data, StageMode::WaitK(k))?);
            }
            let full = if include_full {
                Some(eval_direct_cell(model, data, StageMode::Full)?)
            } else {
                None
            };
            Some(DirectRow {
                ks: ks.to_vec(),
                cells,
                full,
            })
        }
    };
    Ok(GridOutput { direct, results })
}
