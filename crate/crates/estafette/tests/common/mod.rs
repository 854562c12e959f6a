//! Shared fixtures for integration tests.

use estafette::corpus::batch::{Batch, Padded};
use estafette::corpus::vocab::TokenId;
use estafette::model::{ModelConfig, TransformerModel};
use estafette::tensor::check::grad_rel_err;
use estafette::Graph;

pub fn tiny_config(num_encoders: usize, hidden: usize, causal: bool) -> ModelConfig {
    ModelConfig {
        num_encoders,
        layers: 2,
        heads: 2,
        hidden,
        ff_size: hidden * 2,
        src_vocab_size: 23,
        tgt_vocab_size: 19,
        dropout: 0.0,
        max_len: 48,
        causal_encoder: causal,
        share_encoder_across_sources: true,
    }
}

/// Deterministic pseudo-random token in [4, limit).
pub fn tok(seed: u64, i: usize, limit: usize) -> TokenId {
    let r = seed
        .wrapping_add(i as u64 + 1)
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    4 + ((r >> 33) as usize) % (limit - 4)
}

pub fn token_seq(seed: u64, len: usize, limit: usize) -> Vec<TokenId> {
    (0..len).map(|i| tok(seed, i, limit)).collect()
}

pub fn batch_of(sources: Vec<Vec<Vec<TokenId>>>, targets: Vec<Vec<TokenId>>) -> Batch {
    Batch {
        sources: sources.iter().map(|s| Padded::from_seqs(s)).collect(),
        target: Padded::from_seqs(&targets),
    }
}

/// Copy parameters by name from `src` into `dst` wherever names coincide.
pub fn copy_shared_params(src: &TransformerModel, dst: &mut TransformerModel) {
    let names: Vec<String> = src
        .store()
        .ids()
        .map(|id| src.store().name(id).to_string())
        .collect();
    for name in names {
        if let (Some(sid), Some(did)) = (src.store().id_of(&name), dst.store().id_of(&name)) {
            let value = src.store().value(sid).to_vec();
            dst.store_mut().value_mut(did).copy_from_slice(&value);
        }
    }
}

fn loss_value(model: &TransformerModel, batch: &Batch) -> f64 {
    let mut g = Graph::inference();
    let (loss, _) = model.forward_loss(&mut g, batch, 0.1).unwrap();
    loss.item().unwrap()
}

/// Analytic vs central finite-difference gradients for `count` sampled
/// parameter coordinates of `model` on `batch`. Returns the worst relative
/// error (relative for large values, absolute near zero).
pub fn fd_param_check(model: &mut TransformerModel, batch: &Batch, count: usize, seed: u64) -> f64 {
    let analytic: Vec<Vec<f64>> = {
        let mut g = Graph::training(0);
        let (loss, bound) = model.forward_loss(&mut g, batch, 0.1).unwrap();
        g.backward(&loss).unwrap();
        model.store_mut().zero_grads();
        bound.collect_grads(model.store_mut(), &g);
        model
            .store()
            .ids()
            .map(|id| model.store().grad(id).to_vec())
            .collect()
    };

    let ids: Vec<_> = model.store().ids().collect();
    let mut worst = 0.0f64;
    let mut state = seed;
    let mut next = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 17) as usize
    };
    let h = 1e-4;
    for _ in 0..count {
        let pid = ids[next() % ids.len()];
        let len = model.store().value(pid).len();
        let coord = next() % len;
        let orig = model.store().value(pid)[coord];

        model.store_mut().value_mut(pid)[coord] = orig + h;
        let fp = loss_value(model, batch);
        model.store_mut().value_mut(pid)[coord] = orig - h;
        let fm = loss_value(model, batch);
        model.store_mut().value_mut(pid)[coord] = orig;

        let numeric = (fp - fm) / (2.0 * h);
        worst = worst.max(grad_rel_err(analytic[pid.index()][coord], numeric));
    }
    worst
}
