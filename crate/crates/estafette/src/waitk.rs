//! The wait-k simultaneous decoding policy.
//!
//! The policy first READs k source tokens, then alternates one WRITE per
//! READ, so the i-th target token is produced from the first
//! min(k + i − 1, source length) source tokens. Once the source is
//! exhausted the decoder writes greedily to completion with no further
//! READs. Encoders must be causal: incremental encoder states have to be
//! stable as tokens stream in.

use crate::corpus::vocab::{TokenId, BOS, EOS};
use crate::error::{Error, Result};
use crate::model::{DecodeOutput, EncoderSession, TransformerModel};
use crate::tensor::kernels;

/// The fixed policy: k plus the source length when it is already known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WaitKSchedule {
    pub k: usize,
    pub src_len: Option<usize>,
}

impl WaitKSchedule {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::contract("wait-k requires k ≥ 1"));
        }
        Ok(WaitKSchedule { k, src_len: None })
    }
}

/// Number of source tokens visible to the i-th decoding step (1-based):
/// min(k + i − 1, src_len).
pub fn visible_prefix(k: usize, i: usize, src_len: usize) -> Result<usize> {
    if k == 0 || i == 0 {
        return Err(Error::contract(format!(
            "visible_prefix requires k ≥ 1 and i ≥ 1 (got k={k}, i={i})"
        )));
    }
    Ok((k + i - 1).min(src_len))
}

/// One event of a simultaneous run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    /// Consume one source token.
    Read,
    /// Emit one target token (EOS is not logged; it ends the run).
    Write,
}

/// Ordered READ/WRITE trace; the event index is the timestamp.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActionLog {
    actions: Vec<Action>,
}

impl ActionLog {
    pub fn new() -> Self {
        ActionLog::default()
    }

    pub fn push(&mut self, a: Action) {
        self.actions.push(a);
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn reads(&self) -> usize {
        self.actions.iter().filter(|a| matches!(a, Action::Read)).count()
    }

    pub fn writes(&self) -> usize {
        self.actions.iter().filter(|a| matches!(a, Action::Write)).count()
    }

    /// Number of READs preceding each WRITE, in write order.
    pub fn reads_before_writes(&self) -> Vec<usize> {
        let mut reads = 0;
        let mut out = Vec::new();
        for a in &self.actions {
            match a {
                Action::Read => reads += 1,
                Action::Write => out.push(reads),
            }
        }
        out
    }

    /// Compact `RRWRW…` rendering.
    pub fn to_compact_string(&self) -> String {
        self.actions
            .iter()
            .map(|a| match a {
                Action::Read => 'R',
                Action::Write => 'W',
            })
            .collect()
    }
}

fn argmax(logits: &[f64]) -> TokenId {
    kernels::argmax_lowest(logits)
}

/// Single-source wait-k decoding session, driven token by token so a
/// pipeline scheduler can interleave it with other stages.
pub struct WaitKSession<'m> {
    model: &'m TransformerModel,
    k: usize,
    max_steps: usize,
    encoder: EncoderSession<'m>,
    input_done: bool,
    prefix: Vec<TokenId>,
    emitted: usize,
    done: bool,
    truncated: bool,
    log: ActionLog,
}

impl<'m> WaitKSession<'m> {
    pub fn new(model: &'m TransformerModel, k: usize, max_steps: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::contract("wait-k requires k ≥ 1"));
        }
        if model.config().num_encoders != 1 {
            return Err(Error::contract(
                "single-source wait-k session on a multi-encoder model",
            ));
        }
        // EncoderSession::new rejects bidirectional encoders
        let encoder = EncoderSession::new(model, 0)?;
        Ok(WaitKSession {
            model,
            k,
            max_steps,
            encoder,
            input_done: false,
            prefix: vec![BOS],
            emitted: 0,
            done: false,
            truncated: false,
            log: ActionLog::new(),
        })
    }

    /// READ one source token.
    pub fn feed(&mut self, tok: TokenId) -> Result<()> {
        if self.input_done {
            return Err(Error::contract("feed after end of stream"));
        }
        self.encoder.push(tok)?;
        self.log.push(Action::Read);
        Ok(())
    }

    /// Signal the end marker of the source stream.
    pub fn finish_input(&mut self) {
        self.input_done = true;
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn write_permitted(&self) -> bool {
        if self.done {
            return false;
        }
        let next_write = self.emitted + 1;
        let need = self.k + next_write - 1;
        self.encoder.len() >= need || self.input_done
    }

    /// Emit every target token the schedule currently permits.
    pub fn ready_writes(&mut self) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        while self.write_permitted() {
            if self.encoder.len() == 0 {
                // empty source: nothing to translate
                self.done = true;
                break;
            }
            let states = self.encoder.states();
            let vis = self.encoder.len();
            let logits =
                self.model
                    .decode_step_with_visibility(&[&states], &[vis], &self.prefix)?;
            let tok = argmax(&logits);
            if tok == EOS {
                self.done = true;
                break;
            }
            out.push(tok);
            self.emitted += 1;
            self.log.push(Action::Write);
            if self.emitted >= self.max_steps || self.prefix.len() + 1 > self.model.config().max_len
            {
                self.done = true;
                self.truncated = true;
                break;
            }
            self.prefix.push(tok);
        }
        Ok(out)
    }

    pub fn into_log(self) -> ActionLog {
        self.log
    }

    pub fn log(&self) -> &ActionLog {
        &self.log
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }
}

/// Multi-source wait-k session: WRITE i is permitted once every
/// non-exhausted stream has delivered min(k + i − 1, its length) tokens;
/// exhausted streams stop constraining.
pub struct MultiWaitKSession<'m> {
    model: &'m TransformerModel,
    k: usize,
    max_steps: usize,
    encoders: Vec<EncoderSession<'m>>,
    stream_done: Vec<bool>,
    prefix: Vec<TokenId>,
    emitted: usize,
    done: bool,
    truncated: bool,
    logs: Vec<ActionLog>,
}

impl<'m> MultiWaitKSession<'m> {
    pub fn new(model: &'m TransformerModel, num_streams: usize, k: usize, max_steps: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::contract("wait-k requires k ≥ 1"));
        }
        if model.config().num_encoders != num_streams {
            return Err(Error::contract(format!(
                "model has {} encoders but {} streams were supplied",
                model.config().num_encoders,
                num_streams
            )));
        }
        let encoders = (0..num_streams)
            .map(|s| EncoderSession::new(model, s))
            .collect::<Result<_>>()?;
        Ok(MultiWaitKSession {
            model,
            k,
            max_steps,
            encoders,
            stream_done: vec![false; num_streams],
            prefix: vec![BOS],
            emitted: 0,
            done: false,
            truncated: false,
            logs: vec![ActionLog::new(); num_streams],
        })
    }

    pub fn feed(&mut self, stream: usize, tok: TokenId) -> Result<()> {
        if self.stream_done[stream] {
            return Err(Error::contract(format!("feed on finished stream {stream}")));
        }
        self.encoders[stream].push(tok)?;
        self.logs[stream].push(Action::Read);
        Ok(())
    }

    pub fn finish_stream(&mut self, stream: usize) {
        self.stream_done[stream] = true;
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn write_permitted(&self) -> bool {
        if self.done {
            return false;
        }
        let need = self.k + self.emitted;
        self.encoders
            .iter()
            .zip(&self.stream_done)
            .all(|(enc, &done)| enc.len() >= need || done)
    }

    pub fn ready_writes(&mut self) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        while self.write_permitted() {
            if self.encoders.iter().all(|e| e.len() == 0) {
                self.done = true;
                break;
            }
            let states: Vec<_> = self.encoders.iter().map(|e| e.states()).collect();
            let state_refs: Vec<_> = states.iter().collect();
            let vis: Vec<usize> = self.encoders.iter().map(|e| e.len()).collect();
            let logits = self
                .model
                .decode_step_with_visibility(&state_refs, &vis, &self.prefix)?;
            let tok = argmax(&logits);
            if tok == EOS {
                self.done = true;
                break;
            }
            out.push(tok);
            self.emitted += 1;
            for log in &mut self.logs {
                log.push(Action::Write);
            }
            if self.emitted >= self.max_steps || self.prefix.len() + 1 > self.model.config().max_len
            {
                self.done = true;
                self.truncated = true;
                break;
            }
            self.prefix.push(tok);
        }
        Ok(out)
    }

    pub fn logs(&self) -> &[ActionLog] {
        &self.logs
    }

    pub fn into_logs(self) -> Vec<ActionLog> {
        self.logs
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }
}

/// Wait-k greedy decoding of one source stream.
pub fn simultaneous_greedy_decode<I>(
    model: &TransformerModel,
    source: I,
    k: usize,
    max_steps: usize,
) -> Result<(DecodeOutput, ActionLog)>
where
    I: IntoIterator<Item = TokenId>,
{
    let mut session = WaitKSession::new(model, k, max_steps)?;
    let mut tokens = Vec::new();
    for tok in source {
        session.feed(tok)?;
        tokens.extend(session.ready_writes()?);
        if session.is_done() {
            break;
        }
    }
    session.finish_input();
    if !session.is_done() {
        tokens.extend(session.ready_writes()?);
    }
    let truncated = session.truncated();
    Ok((
        DecodeOutput { tokens, truncated },
        session.into_log(),
    ))
}

/// Wait-k greedy decoding over several same-rate streams: every READ event
/// consumes one token from each non-exhausted stream.
pub fn multi_source_simultaneous_decode<I>(
    model: &TransformerModel,
    sources: Vec<I>,
    k: usize,
    max_steps: usize,
) -> Result<(DecodeOutput, Vec<ActionLog>)>
where
    I: IntoIterator<Item = TokenId>,
{
    let n = sources.len();
    let mut session = MultiWaitKSession::new(model, n, k, max_steps)?;
    let mut iters: Vec<_> = sources.into_iter().map(|s| s.into_iter()).collect();
    let mut live = vec![true; n];
    let mut tokens = Vec::new();
    while live.iter().any(|&l| l) && !session.is_done() {
        for (s, iter) in iters.iter_mut().enumerate() {
            if !live[s] {
                continue;
            }
            match iter.next() {
                Some(tok) => session.feed(s, tok)?,
                None => {
                    live[s] = false;
                    session.finish_stream(s);
                }
            }
        }
        tokens.extend(session.ready_writes()?);
    }
    for (s, &l) in live.iter().enumerate() {
        if l {
            session.finish_stream(s);
        }
    }
    if !session.is_done() {
        tokens.extend(session.ready_writes()?);
    }
    let truncated = session.truncated();
    Ok((
        DecodeOutput { tokens, truncated },
        session.into_logs(),
    ))
}
