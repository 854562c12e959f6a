//! Training protocol: memorization feasibility, early-stopping semantics,
//! determinism and the checkpoint lifecycle.

mod common;

use estafette::corpus::synth::{generate_synthetic_nway, SourceTransform, SynthSpec};
use estafette::corpus::{build_vocab, ParallelCorpus};
use estafette::model::{ModelConfig, TransformerModel};
use estafette::train::{train, StopReason, TrainConfig, TrainData};

fn memorization_corpus() -> (ParallelCorpus, SynthSpec) {
    let spec = SynthSpec {
        base_vocab: 12,
        min_len: 3,
        max_len: 6,
        train: 32,
        dev: 1,
        test: 1,
        seed: 2024,
        confusion: SynthSpec::chained_pair_confusion(6),
        source_transform: SourceTransform::default(),
        pivot_lag: 2,
    };
    let corpus = generate_synthetic_nway(&spec).unwrap();
    (corpus.train, spec)
}

fn direct_data(corpus: &ParallelCorpus) -> (TrainData, usize, usize) {
    let src_vocab = build_vocab(corpus, &["source"]).unwrap();
    let tgt_vocab = build_vocab(corpus, &["target"]).unwrap();
    let encoded = corpus
        .encode_sides(&["source"], "target", &src_vocab, &tgt_vocab)
        .unwrap();
    (
        TrainData {
            train: encoded.clone(),
            dev: encoded,
            num_sources: 1,
        },
        src_vocab.len(),
        tgt_vocab.len(),
    )
}

fn model_config(src_vocab: usize, tgt_vocab: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        num_encoders: 1,
        layers: 2,
        heads: 4,
        hidden,
        ff_size: hidden * 4,
        src_vocab_size: src_vocab,
        tgt_vocab_size: tgt_vocab,
        dropout: 0.0,
        max_len: 32,
        causal_encoder: true,
        share_encoder_across_sources: true,
    }
}

/// A 32-sentence corpus used as both train and dev is memorized to
/// dev BLEU 100 well inside 3000 steps.
#[test]
fn memorization_run_reaches_bleu_100() {
    let (corpus, _) = memorization_corpus();
    let (data, src_v, tgt_v) = direct_data(&corpus);
    let mut model = TransformerModel::new(model_config(src_v, tgt_v, 64), 11).unwrap();
    let config = TrainConfig {
        peak_lr: 2e-3,
        warmup_steps: 50,
        batch_size: 8,
        label_smoothing: 0.1,
        eval_every: 50,
        patience: 6,
        avg_last: 2,
        max_steps: 3000,
        seed: 7,
        grad_clip: Some(1.0),
        ..TrainConfig::default()
    };
    let outcome = train(&mut model, &data, &config).unwrap();

    let perfect = outcome
        .checkpoints
        .iter()
        .find(|c| c.dev_bleu >= 99.999)
        .unwrap_or_else(|| panic!("no checkpoint reached BLEU 100; best {}", outcome.best_dev_bleu));
    assert!(
        perfect.step < 3000,
        "BLEU 100 must arrive before step 3000 (got {})",
        perfect.step
    );

    // loss is strictly below the uniform baseline ln(V) after 100 steps
    let baseline = (tgt_v as f64).ln();
    for p in outcome.curve.iter().filter(|p| p.step > 100) {
        assert!(
            p.loss < baseline,
            "loss {} at step {} is not below ln(V)={baseline}",
            p.loss,
            p.step
        );
    }
}

/// Frozen parameters (zero learning rate) keep dev BLEU constant, so the
/// run stops after exactly `patience` evaluations past the first.
#[test]
fn frozen_model_stops_after_exactly_patience_evaluations() {
    let (corpus, _) = memorization_corpus();
    let (data, src_v, tgt_v) = direct_data(&corpus);
    let mut model = TransformerModel::new(model_config(src_v, tgt_v, 16), 3).unwrap();
    let config = TrainConfig {
        peak_lr: 0.0,
        warmup_steps: 1,
        batch_size: 8,
        eval_every: 5,
        patience: 3,
        avg_last: 1,
        max_steps: 10_000,
        seed: 9,
        ..TrainConfig::default()
    };
    let outcome = train(&mut model, &data, &config).unwrap();
    assert_eq!(outcome.stopped, StopReason::EarlyStopped);
    assert_eq!(
        outcome.checkpoints.len(),
        config.patience + 1,
        "first evaluation plus exactly `patience` stagnant ones"
    );
    assert_eq!(outcome.steps, (config.patience + 1) * config.eval_every);
}

/// Ties with the running maximum do not reset patience: a strictly
/// non-growing score sequence stops on schedule even when some scores equal
/// the maximum.
#[test]
fn equal_to_max_does_not_count_as_growth() {
    // indirect check through the frozen run: every evaluation ties the
    // maximum and patience still runs out
    let (corpus, _) = memorization_corpus();
    let (data, src_v, tgt_v) = direct_data(&corpus);
    let mut model = TransformerModel::new(model_config(src_v, tgt_v, 16), 4).unwrap();
    let config = TrainConfig {
        peak_lr: 0.0,
        warmup_steps: 1,
        batch_size: 32,
        eval_every: 1,
        patience: 5,
        avg_last: 1,
        max_steps: 10_000,
        seed: 10,
        ..TrainConfig::default()
    };
    let outcome = train(&mut model, &data, &config).unwrap();
    let scores: Vec<f64> = outcome.checkpoints.iter().map(|c| c.dev_bleu).collect();
    assert!(scores.windows(2).all(|w| w[0] == w[1]), "frozen scores tie");
    assert_eq!(outcome.checkpoints.len(), config.patience + 1);
}

#[test]
fn identical_config_and_seed_reproduce_the_run_exactly() {
    let (corpus, _) = memorization_corpus();
    let (data, src_v, tgt_v) = direct_data(&corpus);
    let config = TrainConfig {
        peak_lr: 1e-3,
        warmup_steps: 20,
        batch_size: 8,
        eval_every: 25,
        patience: 50,
        avg_last: 2,
        max_steps: 60,
        seed: 21,
        ..TrainConfig::default()
    };
    let run = |model_seed: u64| {
        let mut model = TransformerModel::new(model_config(src_v, tgt_v, 16), model_seed).unwrap();
        let outcome = train(&mut model, &data, &config).unwrap();
        let params: Vec<Vec<f64>> = model.store().snapshot();
        (outcome, params)
    };
    let (a, pa) = run(5);
    let (b, pb) = run(5);
    assert_eq!(a.curve, b.curve, "training curves must be bit-identical");
    assert_eq!(pa, pb, "final parameters must be bit-identical");
    let (_, pc) = run(6);
    assert_ne!(pa, pc, "a different init seed must change the outcome");
}
