//! Corpus-level BLEU: modified n-gram precision (n ≤ 4), geometric mean,
//! brevity penalty, 0–100 scale.
//!
//! Optional smoothing add-one-smooths zero match counts for n ≥ 2; at desk
//! scale hypotheses are short and unsmoothed 4-gram misses would zero
//! entire corpus scores.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// Corpus BLEU on the 0–100 scale.
    pub bleu: f64,
    /// Modified n-gram precisions for n = 1..=4 (after smoothing, if any).
    pub precisions: [f64; MAX_ORDER],
    /// exp(1 − ref/hyp) when the hypothesis side is shorter, else 1.
    pub brevity_penalty: f64,
    pub hyp_tokens: usize,
    pub ref_tokens: usize,
}

fn ngram_counts<T: Eq + Hash + Clone>(tokens: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU of aligned hypothesis/reference token sequences.
pub fn bleu<T: Eq + Hash + Clone>(
    hypotheses: &[Vec<T>],
    references: &[Vec<T>],
    smoothing: bool,
) -> Result<BleuReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::contract(format!(
            "{} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::contract("BLEU of an empty corpus"));
    }

    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut hyp_tokens = 0;
    let mut ref_tokens = 0;
    for (hyp, reference) in hypotheses.iter().zip(references) {
        hyp_tokens += hyp.len();
        ref_tokens += reference.len();
        for n in 1..=MAX_ORDER {
            let hyp_counts = ngram_counts(hyp, n);
            if hyp_counts.is_empty() {
                continue;
            }
            let ref_counts = ngram_counts(reference, n);
            for (gram, &count) in &hyp_counts {
                totals[n - 1] += count;
                if let Some(&rc) = ref_counts.get(gram) {
                    matches[n - 1] += count.min(rc);
                }
            }
        }
    }

    let brevity_penalty = if hyp_tokens == 0 {
        0.0
    } else if hyp_tokens < ref_tokens {
        (1.0 - ref_tokens as f64 / hyp_tokens as f64).exp()
    } else {
        1.0
    };

    let mut precisions = [0.0; MAX_ORDER];
    let mut log_sum = 0.0;
    let mut zeroed = false;
    for n in 1..=MAX_ORDER {
        let (mut m, mut t) = (matches[n - 1], totals[n - 1]);
        if smoothing && n >= 2 && m == 0 {
            m += 1;
            t += 1;
        }
        let p = if t == 0 { 0.0 } else { m as f64 / t as f64 };
        precisions[n - 1] = p;
        if p <= 0.0 {
            zeroed = true;
        } else {
            log_sum += p.ln();
        }
    }

    let bleu = if zeroed || hyp_tokens == 0 {
        0.0
    } else {
        100.0 * brevity_penalty * (log_sum / MAX_ORDER as f64).exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_tokens,
        ref_tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(|t| t.to_string()).collect()
    }

    #[test]
    fn perfect_match_scores_100() {
        let sents = vec![toks("a b c d e"), toks("x y"), toks("p q r s")];
        let report = bleu(&sents, &sents, false).unwrap();
        assert!((report.bleu - 100.0).abs() < 1e-12);
        assert_eq!(report.brevity_penalty, 1.0);
    }

    #[test]
    fn zero_unigram_overlap_scores_0() {
        let hyp = vec![toks("a b c")];
        let reference = vec![toks("x y z")];
        let report = bleu(&hyp, &reference, false).unwrap();
        assert_eq!(report.bleu, 0.0);
    }

    #[test]
    fn hand_computed_short_hypothesis() {
        let hyp = vec![toks("the cat sat")];
        let reference = vec![toks("the cat sat down")];

        let unsmoothed = bleu(&hyp, &reference, false).unwrap();
        assert_eq!(unsmoothed.precisions[0], 1.0);
        assert_eq!(unsmoothed.precisions[1], 1.0);
        assert_eq!(unsmoothed.precisions[2], 1.0);
        assert_eq!(unsmoothed.precisions[3], 0.0, "no 4-grams in a 3-token hypothesis");
        assert_eq!(unsmoothed.bleu, 0.0);

        let smoothed = bleu(&hyp, &reference, true).unwrap();
        let bp = (1.0f64 - 4.0 / 3.0).exp();
        assert!((smoothed.brevity_penalty - bp).abs() < 1e-12);
        // all four precisions are 1 after add-one smoothing of the empty n=4
        let expect = 100.0 * bp;
        assert!((smoothed.bleu - expect).abs() < 1e-9, "{} vs {expect}", smoothed.bleu);
    }

    #[test]
    fn invariant_under_token_relabeling() {
        let hyp = vec![vec![4usize, 7, 7, 9], vec![5, 5, 6]];
        let reference = vec![vec![4usize, 7, 9, 9], vec![5, 6, 6]];
        let a = bleu(&hyp, &reference, true).unwrap();
        let relabel = |v: &Vec<usize>| v.iter().map(|&t| t * 31 + 5).collect::<Vec<usize>>();
        let hyp2: Vec<_> = hyp.iter().map(relabel).collect();
        let ref2: Vec<_> = reference.iter().map(relabel).collect();
        let b = bleu(&hyp2, &ref2, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn not_symmetric_in_hypothesis_and_reference() {
        let a = vec![toks("a b")];
        let b = vec![toks("a b c d")];
        let ab = bleu(&a, &b, true).unwrap();
        let ba = bleu(&b, &a, true).unwrap();
        assert!(
            (ab.bleu - ba.bleu).abs() > 1.0,
            "swapping sides should change the score ({} vs {})",
            ab.bleu,
            ba.bleu
        );
    }

    #[test]
    fn count_mismatch_is_contract_error() {
        let a = vec![toks("a")];
        let b: Vec<Vec<String>> = vec![];
        assert!(bleu(&a, &b, false).is_err());
    }

    #[test]
    fn empty_hypotheses_score_zero() {
        let hyp = vec![Vec::<String>::new()];
        let reference = vec![toks("a b")];
        let report = bleu(&hyp, &reference, true).unwrap();
        assert_eq!(report.bleu, 0.0);
    }
}
