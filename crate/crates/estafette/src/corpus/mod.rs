//! N-way parallel corpora: synthetic generation, TSV ingestion,
//! vocabularies and batching.

pub mod batch;
pub mod synth;
pub mod vocab;

pub use batch::{Batch, BatchIterator, Padded};
pub use synth::{NWayCorpus, SynthSpec, SynthTransforms};
pub use vocab::{TokenId, Vocab, BOS, EOS, PAD, UNK};

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Aligned multilingual corpus: every example has one token sequence per
/// language slot.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpus {
    languages: Vec<String>,
    examples: Vec<Vec<Vec<String>>>,
    split: String,
}

impl ParallelCorpus {
    pub fn new(languages: Vec<String>, split: impl Into<String>) -> ParallelCorpus {
        ParallelCorpus {
            languages,
            examples: Vec::new(),
            split: split.into(),
        }
    }

    pub fn push(&mut self, example: Vec<Vec<String>>) -> Result<()> {
        if example.len() != self.languages.len() {
            return Err(Error::contract(format!(
                "example has {} sides, corpus has {} languages",
                example.len(),
                self.languages.len()
            )));
        }
        self.examples.push(example);
        Ok(())
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn split(&self) -> &str {
        &self.split
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn lang_index(&self, name: &str) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::config(format!("no language `{name}` in corpus {:?}", self.languages)))
    }

    pub fn example(&self, i: usize) -> &[Vec<String>] {
        &self.examples[i]
    }

    /// Token sequences of one language side, in corpus order.
    pub fn side(&self, name: &str) -> Result<Vec<&[String]>> {
        let idx = self.lang_index(name)?;
        Ok(self.examples.iter().map(|ex| ex[idx].as_slice()).collect())
    }

    /// Encode examples into id sequences ordered (sources.., target).
    pub fn encode_sides(
        &self,
        source_langs: &[&str],
        target_lang: &str,
        src_vocab: &Vocab,
        tgt_vocab: &Vocab,
    ) -> Result<Vec<Vec<Vec<TokenId>>>> {
        let src_idx: Vec<usize> = source_langs
            .iter()
            .map(|l| self.lang_index(l))
            .collect::<Result<_>>()?;
        let tgt_idx = self.lang_index(target_lang)?;
        Ok(self
            .examples
            .iter()
            .map(|ex| {
                let mut sides: Vec<Vec<TokenId>> = src_idx
                    .iter()
                    .map(|&s| ex[s].iter().map(|t| src_vocab.id(t)).collect())
                    .collect();
                sides.push(ex[tgt_idx].iter().map(|t| tgt_vocab.id(t)).collect());
                sides
            })
            .collect())
    }

    /// Restrict to the first `n` examples.
    pub fn truncated(&self, n: usize) -> ParallelCorpus {
        ParallelCorpus {
            languages: self.languages.clone(),
            examples: self.examples.iter().take(n).cloned().collect(),
            split: self.split.clone(),
        }
    }

    // ── TSV round trip ───────────────────────────────────────────────

    /// Parse a header-bearing TSV: one example per line, one tab-separated
    /// column per language, tokens whitespace-separated within a column.
    pub fn from_tsv_reader<R: Read>(reader: R, split: &str) -> Result<ParallelCorpus> {
        let mut lines = BufReader::new(reader).lines();
        let header = match lines.next() {
            Some(h) => h?,
            None => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "empty file: expected a header row of language names".into(),
                })
            }
        };
        let languages: Vec<String> = header.split('\t').map(|s| s.trim().to_string()).collect();
        if languages.iter().any(|l| l.is_empty()) {
            return Err(Error::Parse {
                line: 1,
                msg: format!("blank language name in header {header:?}"),
            });
        }
        let mut corpus = ParallelCorpus::new(languages.clone(), split);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let line_no = i + 2;
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != languages.len() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!(
                        "{} columns, expected {} (languages {:?})",
                        cols.len(),
                        languages.len(),
                        languages
                    ),
                });
            }
            let example = cols
                .iter()
                .map(|c| c.split_whitespace().map(|t| t.to_string()).collect())
                .collect();
            corpus.examples.push(example);
        }
        Ok(corpus)
    }

    pub fn load_tsv(path: impl AsRef<Path>, split: &str) -> Result<ParallelCorpus> {
        let file = File::open(path.as_ref())?;
        ParallelCorpus::from_tsv_reader(file, split)
    }

    pub fn to_tsv_writer<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.languages.join("\t"))?;
        for ex in &self.examples {
            let cols: Vec<String> = ex.iter().map(|toks| toks.join(" ")).collect();
            writeln!(w, "{}", cols.join("\t"))?;
        }
        Ok(())
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = File::create(path.as_ref())?;
        self.to_tsv_writer(&mut file)
    }
}

/// Build a vocabulary over one or more corpus sides jointly.
pub fn build_vocab(corpus: &ParallelCorpus, langs: &[&str]) -> Result<Vocab> {
    if langs.is_empty() {
        return Err(Error::contract("build_vocab needs at least one language side"));
    }
    let mut sides = Vec::new();
    for lang in langs {
        let side = corpus.side(lang)?;
        sides.push(
            side.into_iter()
                .flat_map(|toks| toks.iter().map(|t| t.as_str()))
                .collect::<Vec<_>>(),
        );
    }
    Ok(Vocab::build(sides))
}
