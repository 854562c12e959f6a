//! Optimization loop with dev-BLEU early stopping and checkpoint averaging.
//!
//! The model trains with an adaptive-moment optimizer under a warmup +
//! inverse-square-root learning-rate schedule. Every `eval_every` batches
//! the dev set is greedy-decoded, its BLEU recorded and the parameters
//! snapshotted; training stops once dev BLEU has not exceeded its running
//! maximum for `patience` consecutive evaluations (ties do not count as
//! growth) or at `max_steps`. The final model is the arithmetic mean of the
//! last `avg_last` snapshots.

use serde::{Deserialize, Serialize};

use crate::corpus::batch::BatchIterator;
use crate::corpus::vocab::TokenId;
use crate::error::{Error, Result};
use crate::eval::bleu::bleu;
use crate::model::TransformerModel;
use crate::tensor::Graph;

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.98
}
fn default_adam_eps() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub label_smoothing: f64,
    /// Evaluate the dev set (and snapshot) every this many batches.
    pub eval_every: usize,
    /// Stop after this many consecutive evaluations without a new maximum.
    pub patience: usize,
    /// Number of trailing checkpoints averaged into the final model.
    pub avg_last: usize,
    pub max_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub grad_clip: Option<f64>,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 2e-3,
            warmup_steps: 200,
            batch_size: 64,
            label_smoothing: 0.1,
            eval_every: 200,
            patience: 10,
            avg_last: 10,
            max_steps: 20_000,
            seed: 1,
            grad_clip: None,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_adam_eps(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 || self.avg_last < 1 || self.eval_every < 1 {
            return Err(Error::config(
                "patience, avg_last and eval_every must all be ≥ 1",
            ));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch size must be ≥ 1"));
        }
        if self.warmup_steps < 1 {
            return Err(Error::config("warmup_steps must be ≥ 1"));
        }
        if self.peak_lr < 0.0 || !self.peak_lr.is_finite() {
            return Err(Error::config("peak_lr must be finite and ≥ 0"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config("label smoothing outside [0,1)"));
        }
        Ok(())
    }

    /// Warmup then inverse-square-root decay.
    pub fn learning_rate(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        let w = self.warmup_steps as f64;
        self.peak_lr * (s / w).min((w / s).sqrt())
    }
}

/// Encoded training/dev examples, each ordered (sources.., target).
pub struct TrainData {
    pub train: Vec<Vec<Vec<TokenId>>>,
    pub dev: Vec<Vec<Vec<TokenId>>>,
    pub num_sources: usize,
}

/// Parameter snapshot taken at an evaluation point.
#[derive(Debug, Clone)]
pub struct TrainCheckpoint {
    pub step: usize,
    pub dev_bleu: f64,
    pub params: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Dev BLEU stagnated for `patience` consecutive evaluations.
    EarlyStopped,
    MaxSteps,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub dev_bleu: Option<f64>,
}

pub struct TrainOutcome {
    pub checkpoints: Vec<TrainCheckpoint>,
    pub curve: Vec<CurvePoint>,
    pub stopped: StopReason,
    pub best_dev_bleu: f64,
    pub steps: usize,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
}

impl Adam {
    fn new(model: &TransformerModel) -> Adam {
        let shapes: Vec<usize> = model
            .store()
            .ids()
            .map(|id| model.store().value(id).len())
            .collect();
        Adam {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut TransformerModel, cfg: &TrainConfig, lr: f64) {
        self.t += 1;
        let (b1, b2, eps) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let ids: Vec<_> = model.store().ids().collect();
        for id in ids {
            let grad = model.store().grad(id).to_vec();
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            let value = model.store_mut().value_mut(id);
            for j in 0..value.len() {
                m[j] = b1 * m[j] + (1.0 - b1) * grad[j];
                v[j] = b2 * v[j] + (1.0 - b2) * grad[j] * grad[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                value[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

fn clip_global_norm(model: &mut TransformerModel, max_norm: f64) {
    let ids: Vec<_> = model.store().ids().collect();
    let mut sq = 0.0;
    for &id in &ids {
        for &g in model.store().grad(id) {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for &id in &ids {
            for g in model.store_mut().grad_mut(id) {
                *g *= scale;
            }
        }
    }
}

/// Greedy-decode the dev set and score it with smoothed corpus BLEU.
pub fn dev_bleu(model: &TransformerModel, dev: &[Vec<Vec<TokenId>>], num_sources: usize) -> Result<f64> {
    let max_steps = model.config().max_len - 1;
    let mut hyps = Vec::with_capacity(dev.len());
    let mut refs = Vec::with_capacity(dev.len());
    for ex in dev {
        let states: Vec<_> = (0..num_sources)
            .map(|s| model.encode(&ex[s], s))
            .collect::<Result<Vec<_>>>()?;
        let state_refs: Vec<_> = states.iter().collect();
        let out = model.greedy_decode(&state_refs, max_steps)?;
        hyps.push(out.tokens);
        refs.push(ex[num_sources].clone());
    }
    Ok(bleu(&hyps, &refs, true)?.bleu)
}

/// Train `model` in place. On return the parameters hold the average of the
/// last `avg_last` checkpoints.
pub fn train(
    model: &mut TransformerModel,
    data: &TrainData,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::contract("training on an empty corpus"));
    }
    let mut adam = Adam::new(model);
    let mut checkpoints: Vec<TrainCheckpoint> = Vec::new();
    let mut curve = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut stagnant = 0usize;
    let mut step = 0usize;
    let mut epoch = 0u64;
    let stopped;

    'outer: loop {
        let batches = BatchIterator::new(
            &data.train,
            data.num_sources,
            config.batch_size,
            config.seed.wrapping_add(epoch),
        )?;
        for batch in batches {
            step += 1;
            let lr = config.learning_rate(step);
            let dropout_seed = config
                .seed
                .wrapping_mul(0x9e3779b97f4a7c15)
                .wrapping_add(step as u64);
            let mut g = Graph::training(dropout_seed);
            let (loss, bound) = model.forward_loss(&mut g, &batch, config.label_smoothing)?;
            let loss_v = loss.item()?;
            if !loss_v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    batch_hash: batch.content_hash(),
                });
            }
            g.backward(&loss)?;
            model.store_mut().zero_grads();
            bound.collect_grads(model.store_mut(), &g);
            if let Some(c) = config.grad_clip {
                clip_global_norm(model, c);
            }
            adam.step(model, config, lr);
            curve.push(CurvePoint {
                step,
                loss: loss_v,
                dev_bleu: None,
            });

            if step % config.eval_every == 0 {
                let score = dev_bleu(model, &data.dev, data.num_sources)?;
                curve.last_mut().expect("just pushed").dev_bleu = Some(score);
                checkpoints.push(TrainCheckpoint {
                    step,
                    dev_bleu: score,
                    params: model.store().snapshot(),
                });
                if score > best {
                    best = score;
                    stagnant = 0;
                } else {
                    stagnant += 1;
                    if stagnant >= config.patience {
                        stopped = StopReason::EarlyStopped;
                        break 'outer;
                    }
                }
            }
            if step >= config.max_steps {
                stopped = StopReason::MaxSteps;
                break 'outer;
            }
        }
        epoch += 1;
    }

    // inference model: mean of the trailing snapshots (or the current
    // parameters when no evaluation ever ran)
    if !checkpoints.is_empty() {
        let take = config.avg_last.min(checkpoints.len());
        let tail = &checkpoints[checkpoints.len() - take..];
        let averaged = average_checkpoints(tail)?;
        model.store_mut().restore(&averaged)?;
    }

    Ok(TrainOutcome {
        checkpoints,
        curve,
        stopped,
        best_dev_bleu: best,
        steps: step,
    })
}

/// Arithmetic per-coordinate mean of checkpoint parameters.
pub fn average_checkpoints(checkpoints: &[TrainCheckpoint]) -> Result<Vec<Vec<f64>>> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::contract("averaging zero checkpoints"))?;
    let mut sums: Vec<Vec<f64>> = first.params.clone();
    for cp in &checkpoints[1..] {
        if cp.params.len() != sums.len() {
            return Err(Error::contract(format!(
                "checkpoint at step {} has {} arrays, expected {}",
                cp.step,
                cp.params.len(),
                sums.len()
            )));
        }
        for (sum, arr) in sums.iter_mut().zip(&cp.params) {
            if sum.len() != arr.len() {
                return Err(Error::contract(format!(
                    "checkpoint at step {} has a mismatched array length ({} vs {})",
                    cp.step,
                    arr.len(),
                    sum.len()
                )));
            }
            for (s, &v) in sum.iter_mut().zip(arr) {
                *s += v;
            }
        }
    }
    let n = checkpoints.len() as f64;
    for arr in sums.iter_mut() {
        for v in arr.iter_mut() {
            *v /= n;
        }
    }
    Ok(sums)
}

/// Render the training curve as `step,loss,dev_bleu` CSV.
pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("step,loss,dev_bleu\n");
    for p in curve {
        match p.dev_bleu {
            Some(b) => out.push_str(&format!("{},{},{}\n", p.step, p.loss, b)),
            None => out.push_str(&format!("{},{},\n", p.step, p.loss)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let cfg = TrainConfig {
            peak_lr: 1.0,
            warmup_steps: 100,
            ..TrainConfig::default()
        };
        assert!((cfg.learning_rate(50) - 0.5).abs() < 1e-12);
        assert!((cfg.learning_rate(100) - 1.0).abs() < 1e-12);
        assert!((cfg.learning_rate(400) - 0.5).abs() < 1e-12);
        assert!(cfg.learning_rate(399) > cfg.learning_rate(400));
    }

    #[test]
    fn averaging_is_idempotent_and_symmetric() {
        let params = vec![vec![1.0, -2.0, 3.5], vec![0.25]];
        let cp = |p: &Vec<Vec<f64>>| TrainCheckpoint {
            step: 0,
            dev_bleu: 0.0,
            params: p.clone(),
        };
        let same = average_checkpoints(&[cp(&params), cp(&params), cp(&params)]).unwrap();
        assert_eq!(same, params);

        let neg: Vec<Vec<f64>> = params.iter().map(|a| a.iter().map(|v| -v).collect()).collect();
        let zeros = average_checkpoints(&[cp(&params), cp(&neg)]).unwrap();
        assert!(zeros.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn averaging_matches_per_coordinate_oracle() {
        let mk = |seed: u64| -> Vec<Vec<f64>> {
            vec![
                (0..7)
                    .map(|i| ((seed.wrapping_mul(31).wrapping_add(i)) % 1000) as f64 / 99.0 - 5.0)
                    .collect(),
                (0..3).map(|i| (seed + i) as f64 * 0.125).collect(),
            ]
        };
        let cps: Vec<TrainCheckpoint> = (0..3)
            .map(|s| TrainCheckpoint {
                step: s as usize,
                dev_bleu: 0.0,
                params: mk(s),
            })
            .collect();
        let avg = average_checkpoints(&cps).unwrap();
        for (a, arrays) in avg.iter().enumerate() {
            for (j, &v) in arrays.iter().enumerate() {
                let oracle = (cps[0].params[a][j] + cps[1].params[a][j] + cps[2].params[a][j]) / 3.0;
                assert!((v - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn averaging_rejects_shape_mismatch() {
        let a = TrainCheckpoint {
            step: 0,
            dev_bleu: 0.0,
            params: vec![vec![1.0, 2.0]],
        };
        let b = TrainCheckpoint {
            step: 1,
            dev_bleu: 0.0,
            params: vec![vec![1.0]],
        };
        assert!(average_checkpoints(&[a, b]).is_err());
    }

    #[test]
    fn curve_csv_shape() {
        let curve = vec![
            CurvePoint { step: 1, loss: 2.5, dev_bleu: None },
            CurvePoint { step: 2, loss: 2.0, dev_bleu: Some(31.5) },
        ];
        let csv = curve_to_csv(&curve);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,loss,dev_bleu");
        assert_eq!(lines[1], "1,2.5,");
        assert_eq!(lines[2], "2,2,31.5");
    }
}
