//! Synthetic N-way corpus with controllable, complementary pivot lossiness.
//!
//! Target sentences are uniform random token sequences. The source is a
//! deterministic invertible transform of the target (token remap plus local
//! pair swaps), so direct translation is exactly solvable. Each pivot is a
//! lossy projection of the target: confusable token groups collapse to one
//! representative, and an optional lag prefixes the pivot with filler
//! tokens, shifting content rightward so the pivot-to-target direction
//! needs lookahead.
//!
//! The confusion partitions must be complementary — no two tokens may be
//! merged in every pivot at once — which makes the target exactly
//! recoverable from all pivots jointly while every single pivot loses
//! information. The brute-force recovery oracles here certify that on
//! generated data before any learned model is trusted.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};

/// Surface form of the lag filler token in pivot sentences.
pub const FILLER: &str = "hold";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTransform {
    /// Apply a seed-derived token permutation.
    pub remap: bool,
    /// Swap adjacent disjoint pairs when their remapped indices sum odd.
    pub swap_adjacent: bool,
}

impl Default for SourceTransform {
    fn default() -> Self {
        SourceTransform {
            remap: true,
            swap_adjacent: true,
        }
    }
}

fn default_lag() -> usize {
    0
}

/// Generation parameters for a synthetic N-way corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Content vocabulary size (reserved ids are not counted here).
    pub base_vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
    /// Per pivot: groups of token indices that collapse to one representative.
    pub confusion: Vec<Vec<Vec<usize>>>,
    #[serde(default)]
    pub source_transform: SourceTransform,
    /// Number of filler tokens prefixed to every pivot sentence. Content is
    /// shifted right by this amount, so translating out of a pivot needs
    /// that much lookahead.
    #[serde(default = "default_lag")]
    pub pivot_lag: usize,
}

impl SynthSpec {
    pub fn num_pivots(&self) -> usize {
        self.confusion.len()
    }

    /// Language slot names: source, pivot_a.., target.
    pub fn languages(&self) -> Vec<String> {
        let mut langs = vec!["source".to_string()];
        for p in 0..self.num_pivots() {
            langs.push(pivot_lang_name(p));
        }
        langs.push("target".to_string());
        langs
    }

    /// Hash of the canonical spec serialization; keys on-disk corpus caches.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = toml::to_string(self).expect("spec serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Two pivots with interleaved confusion pairs over the first
    /// `confused` token indices: pivot a merges (0,1),(2,3),…, pivot b
    /// merges (1,2),(3,4),…. The chain guarantees complementarity.
    pub fn chained_pair_confusion(confused: usize) -> Vec<Vec<Vec<usize>>> {
        let a = (0..confused.saturating_sub(1))
            .step_by(2)
            .map(|i| vec![i, i + 1])
            .collect();
        let b = (1..confused.saturating_sub(1))
            .step_by(2)
            .map(|i| vec![i, i + 1])
            .collect();
        vec![a, b]
    }
}

pub fn pivot_lang_name(index: usize) -> String {
    if index < 26 {
        format!("pivot_{}", (b'a' + index as u8) as char)
    } else {
        format!("pivot_{index}")
    }
}

/// Deterministic maps realizing one spec: source transform, per-pivot
/// collapse, and the joint inverse used by the recovery oracles.
pub struct SynthTransforms {
    base_vocab: usize,
    remap: Vec<usize>,
    remap_inv: Vec<usize>,
    swap: bool,
    /// per pivot: token index -> representative index
    collapse: Vec<Vec<usize>>,
    /// representative tuple across pivots -> unique token index
    joint: BTreeMap<Vec<usize>, usize>,
    lag: usize,
}

impl SynthTransforms {
    pub fn new(spec: &SynthSpec) -> Result<SynthTransforms> {
        if spec.base_vocab == 0 {
            return Err(Error::config("base_vocab must be positive"));
        }
        if spec.min_len == 0 || spec.min_len > spec.max_len {
            return Err(Error::config(format!(
                "invalid sentence length range [{}, {}]",
                spec.min_len, spec.max_len
            )));
        }
        if spec.confusion.is_empty() {
            return Err(Error::config("at least one pivot confusion partition is required"));
        }

        let v = spec.base_vocab;
        let mut collapse = Vec::with_capacity(spec.confusion.len());
        for (p, groups) in spec.confusion.iter().enumerate() {
            let mut map: Vec<usize> = (0..v).collect();
            let mut seen = vec![false; v];
            for group in groups {
                if group.is_empty() {
                    return Err(Error::config(format!("pivot {p}: empty confusion group")));
                }
                let rep = *group.iter().min().expect("nonempty group");
                for &tok in group {
                    if tok >= v {
                        return Err(Error::config(format!(
                            "pivot {p}: token index {tok} outside base vocabulary {v}"
                        )));
                    }
                    if seen[tok] {
                        return Err(Error::config(format!(
                            "pivot {p}: token index {tok} appears in two groups"
                        )));
                    }
                    seen[tok] = true;
                    map[tok] = rep;
                }
            }
            collapse.push(map);
        }

        // complementarity: the tuple of representatives must identify the token
        let mut joint = BTreeMap::new();
        for tok in 0..v {
            let tuple: Vec<usize> = collapse.iter().map(|m| m[tok]).collect();
            if let Some(&other) = joint.get(&tuple) {
                let other: usize = other;
                return Err(Error::config(format!(
                    "confusion partitions are not complementary: tokens {other} and {tok} \
                     collapse identically in every pivot, so the target is not jointly recoverable"
                )));
            }
            joint.insert(tuple, tok);
        }

        let mut remap: Vec<usize> = (0..v).collect();
        if spec.source_transform.remap {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x5245_4d41_5030));
            for i in (1..v).rev() {
                let j = rng.gen_range(0..=i);
                remap.swap(i, j);
            }
        }
        let mut remap_inv = vec![0; v];
        for (i, &r) in remap.iter().enumerate() {
            remap_inv[r] = i;
        }

        Ok(SynthTransforms {
            base_vocab: v,
            remap,
            remap_inv,
            swap: spec.source_transform.swap_adjacent,
            collapse,
            joint,
            lag: spec.pivot_lag,
        })
    }

    pub fn target_surface(idx: usize) -> String {
        format!("w{idx:02}")
    }

    pub fn source_surface(idx: usize) -> String {
        format!("s{idx:02}")
    }

    pub fn parse_target(token: &str) -> Option<usize> {
        token.strip_prefix('w').and_then(|s| s.parse().ok())
    }

    /// Source index sequence for a target index sequence: remap, then swap
    /// each disjoint adjacent pair whose index sum is odd (an involution).
    pub fn source_of_target(&self, target: &[usize]) -> Vec<usize> {
        let mut out: Vec<usize> = target.iter().map(|&t| self.remap[t]).collect();
        if self.swap {
            swap_pairs(&mut out);
        }
        out
    }

    /// Invert the source transform (exact).
    pub fn target_of_source(&self, source: &[usize]) -> Vec<usize> {
        let mut out = source.to_vec();
        if self.swap {
            swap_pairs(&mut out);
        }
        for v in out.iter_mut() {
            *v = self.remap_inv[*v];
        }
        out
    }

    /// Pivot surface sentence for a target index sequence: `lag` fillers,
    /// then per-token representatives.
    pub fn pivot_of_target(&self, pivot: usize, target: &[usize]) -> Vec<String> {
        let map = &self.collapse[pivot];
        let mut out = vec![FILLER.to_string(); self.lag];
        out.extend(target.iter().map(|&t| Self::target_surface(map[t])));
        out
    }

    pub fn source_sentence(&self, target: &[usize]) -> Vec<String> {
        self.source_of_target(target)
            .into_iter()
            .map(Self::source_surface)
            .collect()
    }

    pub fn target_sentence(target: &[usize]) -> Vec<String> {
        target.iter().map(|&t| Self::target_surface(t)).collect()
    }

    fn strip_lag<'a>(&self, pivot_sent: &'a [String]) -> Result<&'a [String]> {
        if pivot_sent.len() < self.lag
            || pivot_sent[..self.lag].iter().any(|t| t != FILLER)
        {
            return Err(Error::contract(format!(
                "pivot sentence does not start with {} filler tokens",
                self.lag
            )));
        }
        Ok(&pivot_sent[self.lag..])
    }

    /// Exact joint decode from all pivots. Complementarity makes the
    /// representative tuple at each position unambiguous.
    pub fn joint_recover(&self, pivots: &[&[String]]) -> Result<Vec<String>> {
        if pivots.len() != self.collapse.len() {
            return Err(Error::contract(format!(
                "{} pivot sentences for {} pivots",
                pivots.len(),
                self.collapse.len()
            )));
        }
        let stripped: Vec<&[String]> = pivots
            .iter()
            .map(|p| self.strip_lag(p))
            .collect::<Result<_>>()?;
        let n = stripped[0].len();
        if stripped.iter().any(|s| s.len() != n) {
            return Err(Error::contract("pivot sentences have different lengths"));
        }
        let mut out = Vec::with_capacity(n);
        for pos in 0..n {
            let tuple: Vec<usize> = stripped
                .iter()
                .map(|s| {
                    Self::parse_target(&s[pos]).ok_or_else(|| {
                        Error::contract(format!("unparseable pivot token `{}`", s[pos]))
                    })
                })
                .collect::<Result<_>>()?;
            let tok = self.joint.get(&tuple).ok_or_else(|| {
                Error::contract(format!("representative tuple {tuple:?} matches no token"))
            })?;
            out.push(Self::target_surface(*tok));
        }
        Ok(out)
    }

    /// Best-effort decode from one pivot alone: each representative maps to
    /// the lowest-index member of its group. Exact only for sentences free
    /// of confused tokens.
    pub fn single_recover(&self, pivot: usize, sent: &[String]) -> Result<Vec<String>> {
        let stripped = self.strip_lag(sent)?;
        let map = &self.collapse[pivot];
        stripped
            .iter()
            .map(|t| {
                let rep = Self::parse_target(t)
                    .ok_or_else(|| Error::contract(format!("unparseable pivot token `{t}`")))?;
                let guess = (0..self.base_vocab)
                    .find(|&i| map[i] == rep)
                    .unwrap_or(rep);
                Ok(Self::target_surface(guess))
            })
            .collect()
    }

    /// Does this target sentence contain a token that pivot `p` confuses
    /// (i.e. one sharing its group with another token)? If so, the pivot
    /// projection is non-injective on it and exact recovery cannot be
    /// guaranteed from that pivot alone.
    pub fn has_confused_token(&self, pivot: usize, target: &[usize]) -> bool {
        let map = &self.collapse[pivot];
        target.iter().any(|&t| {
            let rep = map[t];
            (0..self.base_vocab).filter(|&i| map[i] == rep).count() > 1
        })
    }

    /// Whether the deterministic single-pivot guesser (lowest group member)
    /// actually misses on this sentence: true iff some token is a
    /// non-representative member of its group.
    pub fn single_recovery_misses(&self, pivot: usize, target: &[usize]) -> bool {
        let map = &self.collapse[pivot];
        target.iter().any(|&t| map[t] != t)
    }

    /// A different target sentence with the same projection under pivot
    /// `p`, when one exists (witnesses non-injectivity).
    pub fn confusable_variant(&self, pivot: usize, target: &[usize]) -> Option<Vec<usize>> {
        let map = &self.collapse[pivot];
        for (pos, &t) in target.iter().enumerate() {
            let rep = map[t];
            if let Some(other) = (0..self.base_vocab).find(|&i| i != t && map[i] == rep) {
                let mut alt = target.to_vec();
                alt[pos] = other;
                return Some(alt);
            }
        }
        None
    }
}

/// Involutive local reordering: disjoint pairs (0,1),(2,3),… swap when
/// their element sum is odd, which makes the rule self-inverse.
fn swap_pairs(xs: &mut [usize]) {
    let mut i = 0;
    while i + 1 < xs.len() {
        if (xs[i] + xs[i + 1]) % 2 == 1 {
            xs.swap(i, i + 1);
        }
        i += 2;
    }
}

/// The three generated splits plus the spec that produced them.
pub struct NWayCorpus {
    pub train: ParallelCorpus,
    pub dev: ParallelCorpus,
    pub test: ParallelCorpus,
}

/// Generate an N-way corpus: identical spec and seed give byte-identical
/// corpora.
pub fn generate_synthetic_nway(spec: &SynthSpec) -> Result<NWayCorpus> {
    let transforms = SynthTransforms::new(spec)?;
    let make = |split: &str, size: usize, salt: u64| -> Result<ParallelCorpus> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ salt);
        let mut corpus = ParallelCorpus::new(spec.languages(), split);
        for _ in 0..size {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let target_idx: Vec<usize> =
                (0..len).map(|_| rng.gen_range(0..spec.base_vocab)).collect();
            let mut example = Vec::with_capacity(spec.num_pivots() + 2);
            example.push(transforms.source_sentence(&target_idx));
            for p in 0..spec.num_pivots() {
                example.push(transforms.pivot_of_target(p, &target_idx));
            }
            example.push(SynthTransforms::target_sentence(&target_idx));
            corpus.push(example)?;
        }
        Ok(corpus)
    };
    Ok(NWayCorpus {
        train: make("train", spec.train, 0x7261_494e)?,
        dev: make("dev", spec.dev, 0xdeef_5eed)?,
        test: make("test", spec.test, 0x7e57_da7a)?,
    })
}
