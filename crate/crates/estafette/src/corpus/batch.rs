//! Aligned, padded batches and the epoch iterator.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::vocab::{TokenId, PAD};
use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};

/// One padded side of a batch: `rows` sequences padded to `cols` with PAD.
#[derive(Debug, Clone)]
pub struct Padded {
    pub ids: Vec<TokenId>,
    pub rows: usize,
    pub cols: usize,
    pub lens: Vec<usize>,
}

impl Padded {
    pub fn from_seqs(seqs: &[Vec<TokenId>]) -> Padded {
        let rows = seqs.len();
        let cols = seqs.iter().map(|s| s.len()).max().unwrap_or(0).max(1);
        let mut ids = vec![PAD; rows * cols];
        let mut lens = Vec::with_capacity(rows);
        for (r, s) in seqs.iter().enumerate() {
            ids[r * cols..r * cols + s.len()].copy_from_slice(s);
            lens.push(s.len());
        }
        Padded {
            ids,
            rows,
            cols,
            lens,
        }
    }

    pub fn seq(&self, r: usize) -> &[TokenId] {
        &self.ids[r * self.cols..r * self.cols + self.lens[r]]
    }
}

/// Aligned training batch: one padded block per encoder source plus the
/// target side (raw tokens; BOS/EOS framing is added by the model).
#[derive(Debug, Clone)]
pub struct Batch {
    pub sources: Vec<Padded>,
    pub target: Padded,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.target.rows
    }

    pub fn is_empty(&self) -> bool {
        self.target.rows == 0
    }

    /// Stable content hash for diagnostics (non-finite-loss reports).
    pub fn content_hash(&self) -> u64 {
        let mut acc: u64 = 0xcbf29ce484222325;
        let mut mix = |v: u64| {
            acc ^= v;
            acc = acc.wrapping_mul(0x100000001b3);
        };
        for side in self.sources.iter().chain(std::iter::once(&self.target)) {
            mix(side.rows as u64);
            for &id in &side.ids {
                mix(id as u64);
            }
        }
        acc
    }
}

/// Length-bucketed, seed-shuffled epoch batches over encoded examples.
///
/// `encoded` holds, per example, one id sequence per language slot in the
/// order (sources.., target). Examples are bucketed by target length so
/// batches stay dense, then batch order is shuffled by the seed. Every
/// example appears in exactly one batch per epoch.
pub struct BatchIterator {
    batches: Vec<Batch>,
    next: usize,
}

impl BatchIterator {
    pub fn new(
        encoded: &[Vec<Vec<TokenId>>],
        num_sources: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<BatchIterator> {
        if batch_size == 0 {
            return Err(Error::contract("batch size must be ≥ 1"));
        }
        if encoded.is_empty() {
            return Err(Error::contract("batch iterator over an empty corpus"));
        }
        for ex in encoded {
            if ex.len() != num_sources + 1 {
                return Err(Error::contract(format!(
                    "example has {} sides, expected {}",
                    ex.len(),
                    num_sources + 1
                )));
            }
        }
        let mut order: Vec<usize> = (0..encoded.len()).collect();
        // bucket by target length, stably, so same-length runs batch together
        order.sort_by_key(|&i| encoded[i][num_sources].len());
        let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shuffled = chunks;
        shuffled.shuffle(&mut rng);

        let batches = shuffled
            .into_iter()
            .map(|chunk| {
                let sources = (0..num_sources)
                    .map(|s| {
                        let seqs: Vec<Vec<TokenId>> =
                            chunk.iter().map(|&i| encoded[i][s].clone()).collect();
                        Padded::from_seqs(&seqs)
                    })
                    .collect();
                let seqs: Vec<Vec<TokenId>> =
                    chunk.iter().map(|&i| encoded[i][num_sources].clone()).collect();
                Batch {
                    sources,
                    target: Padded::from_seqs(&seqs),
                }
            })
            .collect();
        Ok(BatchIterator { batches, next: 0 })
    }

    /// Convenience constructor from a corpus plus per-side vocabularies.
    pub fn from_corpus(
        corpus: &ParallelCorpus,
        source_langs: &[&str],
        target_lang: &str,
        vocabs: (&crate::corpus::Vocab, &crate::corpus::Vocab),
        batch_size: usize,
        seed: u64,
    ) -> Result<BatchIterator> {
        let encoded = corpus.encode_sides(source_langs, target_lang, vocabs.0, vocabs.1)?;
        BatchIterator::new(&encoded, source_langs.len(), batch_size, seed)
    }

    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }
}

impl Iterator for BatchIterator {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let b = self.batches.get(self.next).cloned();
        self.next += 1;
        b
    }
}
