//! Pipeline contracts: chaining equalities, lockstep latency, stage
//! isolation, exhaustion semantics and determinism.

mod common;

use common::{copy_shared_params, tiny_config, token_seq};
use estafette::corpus::vocab::EOS;
use estafette::model::{ModelConfig, TransformerModel};
use estafette::pipeline::{Pipeline, StageMode, TraceKind};
use estafette::waitk::{multi_source_simultaneous_decode, simultaneous_greedy_decode};
use estafette::Error;

fn s2p_config(n: usize) -> ModelConfig {
    let mut cfg = tiny_config(1, 16, true);
    cfg.src_vocab_size = 23;
    cfg.tgt_vocab_size = 21; // pivot vocabulary
    let _ = n;
    cfg
}

fn p2t_config(n: usize) -> ModelConfig {
    let mut cfg = tiny_config(n, 16, true);
    cfg.src_vocab_size = 21; // pivot vocabulary
    cfg.tgt_vocab_size = 19;
    cfg
}

fn discourage_eos(model: &mut TransformerModel) {
    let out_b = model.store().id_of("out.b").unwrap();
    model.store_mut().value_mut(out_b)[EOS] = -25.0;
}

#[test]
fn single_pivot_full_sentence_is_classical_chaining() {
    let mut s2p = TransformerModel::new(s2p_config(1), 3).unwrap();
    discourage_eos(&mut s2p);
    let p2t = TransformerModel::new(p2t_config(1), 4).unwrap();
    let pipe = Pipeline::new(vec![&s2p], &p2t, StageMode::Full, StageMode::Full).unwrap();

    let source = token_seq(8, 6, 23);
    let run = pipe.run(&source).unwrap();

    let enc = s2p.encode(&source, 0).unwrap();
    let pivot = s2p.greedy_decode(&[&enc], pipe.max_steps).unwrap();
    assert_eq!(run.pivots[0], pivot.tokens);
    let enc2 = p2t.encode(&pivot.tokens, 0).unwrap();
    let target = p2t.greedy_decode(&[&enc2], pipe.max_steps).unwrap();
    assert_eq!(run.target, target.tokens);
    assert!(!run.pivots[0].is_empty(), "fixture should produce a pivot");
}

#[test]
fn duplicate_pivot_pipeline_matches_single_pivot_result() {
    let mut s2p = TransformerModel::new(s2p_config(1), 5).unwrap();
    discourage_eos(&mut s2p);
    let dual_p2t = TransformerModel::new(p2t_config(2), 6).unwrap();
    let mut single_p2t = TransformerModel::new(p2t_config(1), 7).unwrap();
    copy_shared_params(&dual_p2t, &mut single_p2t);

    let source = token_seq(9, 5, 23);
    let dual = Pipeline::new(vec![&s2p, &s2p], &dual_p2t, StageMode::Full, StageMode::Full)
        .unwrap()
        .run(&source)
        .unwrap();
    let single = Pipeline::new(vec![&s2p], &single_p2t, StageMode::Full, StageMode::Full)
        .unwrap()
        .run(&source)
        .unwrap();
    assert_eq!(dual.pivots[0], dual.pivots[1]);
    assert_eq!(dual.target, single.target);
}

#[test]
fn empty_source_flows_through_without_error() {
    let s2p = TransformerModel::new(s2p_config(1), 3).unwrap();
    let p2t = TransformerModel::new(p2t_config(1), 4).unwrap();
    for (a, b) in [
        (StageMode::Full, StageMode::Full),
        (StageMode::WaitK(2), StageMode::WaitK(2)),
    ] {
        let run = Pipeline::new(vec![&s2p], &p2t, a, b).unwrap().run(&[]).unwrap();
        assert!(run.pivots[0].is_empty());
        assert!(run.target.is_empty());
    }
}

#[test]
fn first_target_write_waits_for_effective_k_reads() {
    let mut s2p_a = TransformerModel::new(s2p_config(1), 11).unwrap();
    let mut s2p_b = TransformerModel::new(s2p_config(1), 12).unwrap();
    let mut p2t = TransformerModel::new(p2t_config(2), 13).unwrap();
    discourage_eos(&mut s2p_a);
    discourage_eos(&mut s2p_b);
    discourage_eos(&mut p2t);

    let source = token_seq(21, 12, 23);
    for (k1, k2) in [(2usize, 6usize), (4, 4), (6, 2), (1, 1)] {
        let pipe = Pipeline::new(
            vec![&s2p_a, &s2p_b],
            &p2t,
            StageMode::WaitK(k1),
            StageMode::WaitK(k2),
        )
        .unwrap();
        assert_eq!(pipe.effective_wait_k().unwrap(), k1 + k2);
        let run = pipe.run(&source).unwrap();
        assert!(!run.target.is_empty(), "({k1},{k2}) produced no target tokens");

        let mut reads = 0;
        let mut reads_before_first_write = None;
        for ev in &run.trace {
            match ev.event {
                TraceKind::SourceRead { .. } => reads += 1,
                TraceKind::TargetWrite { .. } => {
                    reads_before_first_write.get_or_insert(reads);
                }
                _ => {}
            }
        }
        let observed = reads_before_first_write.expect("target was written");
        let bound = (k1 + k2).min(source.len());
        assert!(
            observed >= bound,
            "({k1},{k2}): first target write after {observed} reads, bound {bound}"
        );
    }
}

#[test]
fn saturated_ks_reduce_to_full_sentence_pipeline() {
    let mut s2p = TransformerModel::new(s2p_config(1), 31).unwrap();
    discourage_eos(&mut s2p);
    let mut p2t = TransformerModel::new(p2t_config(1), 32).unwrap();
    discourage_eos(&mut p2t);

    let source = token_seq(33, 6, 23);
    let full = Pipeline::new(vec![&s2p], &p2t, StageMode::Full, StageMode::Full)
        .unwrap()
        .run(&source)
        .unwrap();
    let simultaneous = Pipeline::new(vec![&s2p], &p2t, StageMode::WaitK(40), StageMode::WaitK(40))
        .unwrap()
        .run(&source)
        .unwrap();
    assert_eq!(full.pivots, simultaneous.pivots);
    assert_eq!(full.target, simultaneous.target);
}

#[test]
fn stage_outputs_match_isolated_waitk_runs() {
    let mut s2p_a = TransformerModel::new(s2p_config(1), 41).unwrap();
    let mut s2p_b = TransformerModel::new(s2p_config(1), 42).unwrap();
    let mut p2t = TransformerModel::new(p2t_config(2), 43).unwrap();
    discourage_eos(&mut s2p_a);
    discourage_eos(&mut s2p_b);
    discourage_eos(&mut p2t);

    let source = token_seq(50, 9, 23);
    let (k1, k2) = (2usize, 3usize);
    let pipe = Pipeline::new(
        vec![&s2p_a, &s2p_b],
        &p2t,
        StageMode::WaitK(k1),
        StageMode::WaitK(k2),
    )
    .unwrap();
    let run = pipe.run(&source).unwrap();

    // stage isolation: pivots are what the s2p models produce on their own
    let (iso_a, _) =
        simultaneous_greedy_decode(&s2p_a, source.iter().copied(), k1, pipe.max_steps).unwrap();
    let (iso_b, _) =
        simultaneous_greedy_decode(&s2p_b, source.iter().copied(), k1, pipe.max_steps).unwrap();
    assert_eq!(run.pivots[0], iso_a.tokens);
    assert_eq!(run.pivots[1], iso_b.tokens);

    // exhaustion semantics: feeding the final pivot sequences through the
    // multi-source policy reproduces the pipeline's target exactly
    let (oracle, _) = multi_source_simultaneous_decode(
        &p2t,
        vec![run.pivots[0].iter().copied(), run.pivots[1].iter().copied()],
        k2,
        pipe.max_steps,
    )
    .unwrap();
    assert_eq!(run.target, oracle.tokens);
}

#[test]
fn unequal_pivot_lengths_complete_cleanly() {
    // one s2p rigged to emit EOS immediately: its pivot is empty and the
    // other stream alone gates the target
    let mut eos_rig = TransformerModel::new(s2p_config(1), 51).unwrap();
    {
        let out_w = eos_rig.store().id_of("out.w").unwrap();
        eos_rig.store_mut().value_mut(out_w).iter_mut().for_each(|v| *v = 0.0);
        let out_b = eos_rig.store().id_of("out.b").unwrap();
        let b = eos_rig.store_mut().value_mut(out_b);
        b.iter_mut().for_each(|v| *v = 0.0);
        b[EOS] = 10.0;
    }
    let mut s2p_b = TransformerModel::new(s2p_config(1), 52).unwrap();
    discourage_eos(&mut s2p_b);
    let mut p2t = TransformerModel::new(p2t_config(2), 53).unwrap();
    discourage_eos(&mut p2t);

    let source = token_seq(60, 7, 23);
    let run = Pipeline::new(
        vec![&eos_rig, &s2p_b],
        &p2t,
        StageMode::WaitK(2),
        StageMode::WaitK(2),
    )
    .unwrap()
    .run(&source)
    .unwrap();
    assert!(run.pivots[0].is_empty());
    assert!(!run.pivots[1].is_empty());
    assert!(!run.target.is_empty(), "pipeline must finish despite an empty pivot");
}

#[test]
fn identical_runs_are_identical() {
    let mut s2p = TransformerModel::new(s2p_config(1), 61).unwrap();
    discourage_eos(&mut s2p);
    let mut p2t = TransformerModel::new(p2t_config(1), 62).unwrap();
    discourage_eos(&mut p2t);
    let source = token_seq(70, 8, 23);
    let pipe = Pipeline::new(vec![&s2p], &p2t, StageMode::WaitK(2), StageMode::WaitK(3)).unwrap();
    let a = pipe.run(&source).unwrap();
    let b = pipe.run(&source).unwrap();
    assert_eq!(a.target, b.target);
    assert_eq!(a.pivots, b.pivots);
    assert_eq!(a.trace, b.trace);
}

#[test]
fn configuration_errors_are_rejected() {
    let s2p = TransformerModel::new(s2p_config(1), 71).unwrap();
    let p2t = TransformerModel::new(p2t_config(1), 72).unwrap();

    // effective wait-k undefined with a full-sentence stage
    let pipe = Pipeline::new(vec![&s2p], &p2t, StageMode::Full, StageMode::WaitK(2)).unwrap();
    assert!(matches!(pipe.effective_wait_k(), Err(Error::Contract(_))));
    // mixed modes cannot run
    assert!(matches!(pipe.run(&[5, 6]), Err(Error::Config(_))));

    // vocabulary chain mismatch
    let mut bad_cfg = p2t_config(1);
    bad_cfg.src_vocab_size = 99;
    let bad_p2t = TransformerModel::new(bad_cfg, 73).unwrap();
    assert!(matches!(
        Pipeline::new(vec![&s2p], &bad_p2t, StageMode::Full, StageMode::Full),
        Err(Error::Config(_))
    ));

    // bidirectional encoder in a simultaneous stage
    let mut bidi_cfg = p2t_config(1);
    bidi_cfg.causal_encoder = false;
    let bidi_p2t = TransformerModel::new(bidi_cfg, 74).unwrap();
    assert!(matches!(
        Pipeline::new(vec![&s2p], &bidi_p2t, StageMode::WaitK(2), StageMode::WaitK(2)),
        Err(Error::Config(_))
    ));
}
