//! Pivot-language pipelines: source→pivot models feeding a (multi-)pivot→
//! target model, in full-sentence or simultaneous mode.
//!
//! The simultaneous scheduler advances in ticks. Each tick:
//!
//! 1. one previously queued token per pivot moves into the pivot→target
//!    model (all live pivots move together, keeping its encoders fed at
//!    equal counts);
//! 2. one source token is READ and fed to every source→pivot session;
//! 3. tokens those sessions WRITE are queued for delivery;
//! 4. the pivot→target session WRITEs whatever its schedule permits.
//!
//! Queued delivery means a pivot token written at tick t reaches the
//! downstream model at tick t+1, so the first target token appears only
//! after at least k_s2p + k_p2t source READs (or source exhaustion).
//! Source→pivot stages run their own policy unmodified: the pipeline adds
//! scheduling, never alters stage outputs.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::TokenId;
use crate::error::{Error, Result};
use crate::model::TransformerModel;
use crate::waitk::{ActionLog, MultiWaitKSession, WaitKSession};

/// Decoding mode of one pipeline stage. In config files this is either the
/// string `"full"` or an integer k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "StageModeRepr", into = "String")]
pub enum StageMode {
    /// Full-sentence greedy decoding.
    Full,
    /// Simultaneous wait-k decoding.
    WaitK(usize),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StageModeRepr {
    K(usize),
    Name(String),
}

impl TryFrom<StageModeRepr> for StageMode {
    type Error = Error;

    fn try_from(repr: StageModeRepr) -> Result<StageMode> {
        match repr {
            StageModeRepr::K(0) => Err(Error::config("wait-k stage requires k ≥ 1")),
            StageModeRepr::K(k) => Ok(StageMode::WaitK(k)),
            StageModeRepr::Name(s) => s.parse(),
        }
    }
}

impl From<StageMode> for String {
    fn from(mode: StageMode) -> String {
        mode.to_string()
    }
}

impl StageMode {
    pub fn as_waitk(&self) -> Option<usize> {
        match self {
            StageMode::WaitK(k) => Some(*k),
            StageMode::Full => None,
        }
    }
}

impl std::fmt::Display for StageMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StageMode::Full => write!(f, "full"),
            StageMode::WaitK(k) => write!(f, "{k}"),
        }
    }
}

impl std::str::FromStr for StageMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<StageMode> {
        if s.eq_ignore_ascii_case("full") {
            return Ok(StageMode::Full);
        }
        let k: usize = s
            .parse()
            .map_err(|_| Error::config(format!("stage mode `{s}` is neither `full` nor a k value")))?;
        if k == 0 {
            return Err(Error::config("wait-k stage requires k ≥ 1"));
        }
        Ok(StageMode::WaitK(k))
    }
}

/// A composed translation pipeline over borrowed models.
pub struct Pipeline<'m> {
    pub s2p: Vec<&'m TransformerModel>,
    pub p2t: &'m TransformerModel,
    pub k_s2p: StageMode,
    pub k_p2t: StageMode,
    /// Per-stage cap on emitted tokens.
    pub max_steps: usize,
}

/// One pipeline execution: the streamed output plus the latency record.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub source: Vec<TokenId>,
    pub pivots: Vec<Vec<TokenId>>,
    pub target: Vec<TokenId>,
    pub s2p_logs: Vec<ActionLog>,
    pub p2t_logs: Vec<ActionLog>,
    pub effective_k: Option<usize>,
    pub truncated: bool,
    pub trace: Vec<TraceEvent>,
}

/// Tick-stamped scheduler event for `--trace` output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub tick: usize,
    pub event: TraceKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TraceKind {
    SourceRead { token: TokenId },
    PivotWrite { pivot: usize, token: TokenId },
    PivotFeed { pivot: usize, token: TokenId },
    PivotEnd { pivot: usize },
    TargetWrite { token: TokenId },
}

impl<'m> Pipeline<'m> {
    pub fn new(
        s2p: Vec<&'m TransformerModel>,
        p2t: &'m TransformerModel,
        k_s2p: StageMode,
        k_p2t: StageMode,
    ) -> Result<Self> {
        if s2p.is_empty() {
            return Err(Error::config("pipeline needs at least one source→pivot model"));
        }
        if p2t.config().num_encoders != s2p.len() {
            return Err(Error::config(format!(
                "pivot→target model expects {} sources but {} source→pivot models are configured",
                p2t.config().num_encoders,
                s2p.len()
            )));
        }
        for (i, m) in s2p.iter().enumerate() {
            if m.config().num_encoders != 1 {
                return Err(Error::config(format!(
                    "source→pivot model {i} must be single-encoder"
                )));
            }
            if m.config().tgt_vocab_size != p2t.config().src_vocab_size {
                return Err(Error::config(format!(
                    "vocabulary chain mismatch at pivot {i}: source→pivot target vocabulary has \
                     {} entries, pivot→target source vocabulary has {}",
                    m.config().tgt_vocab_size,
                    p2t.config().src_vocab_size
                )));
            }
        }
        let simultaneous = matches!(k_s2p, StageMode::WaitK(_)) || matches!(k_p2t, StageMode::WaitK(_));
        if simultaneous {
            for (i, m) in s2p.iter().enumerate() {
                if !m.config().causal_encoder {
                    return Err(Error::config(format!(
                        "simultaneous pipeline requires causal encoders (source→pivot model {i})"
                    )));
                }
            }
            if !p2t.config().causal_encoder {
                return Err(Error::config(
                    "simultaneous pipeline requires a causal encoder in the pivot→target model",
                ));
            }
        }
        let max_steps = s2p
            .iter()
            .map(|m| m.config().max_len)
            .chain(std::iter::once(p2t.config().max_len))
            .min()
            .unwrap_or(1)
            .saturating_sub(1);
        Ok(Pipeline {
            s2p,
            p2t,
            k_s2p,
            k_p2t,
            max_steps,
        })
    }

    /// Total source-token latency of a fully simultaneous pipeline: the sum
    /// of the per-stage wait-k values.
    pub fn effective_wait_k(&self) -> Result<usize> {
        match (self.k_s2p, self.k_p2t) {
            (StageMode::WaitK(a), StageMode::WaitK(b)) => Ok(a + b),
            _ => Err(Error::contract(
                "effective wait-k is defined only when both stages are simultaneous",
            )),
        }
    }

    /// Run in the configured mode.
    pub fn run(&self, source: &[TokenId]) -> Result<PipelineRun> {
        match (self.k_s2p, self.k_p2t) {
            (StageMode::Full, StageMode::Full) => self.full_sentence(source),
            (StageMode::WaitK(_), StageMode::WaitK(_)) => self.simultaneous(source),
            _ => Err(Error::config(
                "mixed full-sentence and wait-k stages are not supported",
            )),
        }
    }

    /// Chain full-sentence greedy decodes: each source→pivot model decodes
    /// the whole source, then the pivot→target model decodes from all N
    /// pivot sequences.
    pub fn full_sentence(&self, source: &[TokenId]) -> Result<PipelineRun> {
        let mut pivots = Vec::with_capacity(self.s2p.len());
        let mut truncated = false;
        for model in &self.s2p {
            let enc = model.encode(source, 0)?;
            let out = model.greedy_decode(&[&enc], self.max_steps)?;
            truncated |= out.truncated;
            pivots.push(out.tokens);
        }
        let states: Vec<_> = pivots
            .iter()
            .enumerate()
            .map(|(s, p)| self.p2t.encode(p, s))
            .collect::<Result<Vec<_>>>()?;
        let state_refs: Vec<_> = states.iter().collect();
        let out = self.p2t.greedy_decode(&state_refs, self.max_steps)?;
        truncated |= out.truncated;
        Ok(PipelineRun {
            source: source.to_vec(),
            pivots,
            target: out.tokens,
            s2p_logs: Vec::new(),
            p2t_logs: Vec::new(),
            effective_k: None,
            truncated,
            trace: Vec::new(),
        })
    }

    /// Lockstep simultaneous run (see module docs for tick semantics).
    pub fn simultaneous(&self, source: &[TokenId]) -> Result<PipelineRun> {
        let k1 = self
            .k_s2p
            .as_waitk()
            .ok_or_else(|| Error::config("simultaneous pipeline requires wait-k stages"))?;
        let k2 = self
            .k_p2t
            .as_waitk()
            .ok_or_else(|| Error::config("simultaneous pipeline requires wait-k stages"))?;
        let n = self.s2p.len();

        let mut a_sessions: Vec<WaitKSession> = self
            .s2p
            .iter()
            .map(|m| WaitKSession::new(m, k1, self.max_steps))
            .collect::<Result<_>>()?;
        let mut b_session = MultiWaitKSession::new(self.p2t, n, k2, self.max_steps)?;

        let mut queues: Vec<VecDeque<TokenId>> = vec![VecDeque::new(); n];
        let mut pivots: Vec<Vec<TokenId>> = vec![Vec::new(); n];
        let mut a_finished = vec![false; n];
        let mut b_stream_closed = vec![false; n];
        let mut target = Vec::new();
        let mut trace = Vec::new();
        let mut src_iter = source.iter().copied();
        let mut src_exhausted = false;

        let mut tick = 0usize;
        while !b_session.is_done() {
            tick += 1;

            // 1. deliver queued pivot tokens, one per live pivot, in lockstep
            let all_ready = (0..n).all(|s| !queues[s].is_empty() || a_finished[s]);
            if all_ready {
                for s in 0..n {
                    if let Some(tok) = queues[s].pop_front() {
                        b_session.feed(s, tok)?;
                        trace.push(TraceEvent {
                            tick,
                            event: TraceKind::PivotFeed { pivot: s, token: tok },
                        });
                    } else if a_finished[s] && !b_stream_closed[s] {
                        b_session.finish_stream(s);
                        b_stream_closed[s] = true;
                        trace.push(TraceEvent {
                            tick,
                            event: TraceKind::PivotEnd { pivot: s },
                        });
                    }
                }
            }

            // 2. read one source token into every source→pivot session
            if !src_exhausted {
                match src_iter.next() {
                    Some(tok) => {
                        trace.push(TraceEvent {
                            tick,
                            event: TraceKind::SourceRead { token: tok },
                        });
                        for a in a_sessions.iter_mut() {
                            a.feed(tok)?;
                        }
                    }
                    None => {
                        src_exhausted = true;
                        for a in a_sessions.iter_mut() {
                            a.finish_input();
                        }
                    }
                }
            }

            // 3. collect stage-one writes into the delivery queues
            for (s, a) in a_sessions.iter_mut().enumerate() {
                if a_finished[s] {
                    continue;
                }
                for tok in a.ready_writes()? {
                    queues[s].push_back(tok);
                    pivots[s].push(tok);
                    trace.push(TraceEvent {
                        tick,
                        event: TraceKind::PivotWrite { pivot: s, token: tok },
                    });
                }
                if a.is_done() {
                    a_finished[s] = true;
                }
            }

            // 4. stage-two writes
            for tok in b_session.ready_writes()? {
                target.push(tok);
                trace.push(TraceEvent {
                    tick,
                    event: TraceKind::TargetWrite { token: tok },
                });
            }

            let drained = b_stream_closed.iter().all(|&c| c);
            if drained && !b_session.is_done() {
                // all streams closed: the session drains in one call
                for tok in b_session.ready_writes()? {
                    target.push(tok);
                    trace.push(TraceEvent {
                        tick,
                        event: TraceKind::TargetWrite { token: tok },
                    });
                }
                break;
            }
        }

        let truncated = a_sessions.iter().any(|a| a.truncated()) || b_session.truncated();
        Ok(PipelineRun {
            source: source.to_vec(),
            pivots,
            target,
            s2p_logs: a_sessions.into_iter().map(|a| a.into_log()).collect(),
            p2t_logs: b_session.into_logs(),
            effective_k: Some(k1 + k2),
            truncated,
            trace,
        })
    }
}
