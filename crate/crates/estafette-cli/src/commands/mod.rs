pub mod evaluate;
pub mod gen_corpus;
pub mod grid;
pub mod pipeline_translate;
pub mod report;
pub mod train;
pub mod translate;

use std::io::{BufRead, Write};

use anyhow::Result;

/// Whitespace-tokenized lines from stdin.
pub fn read_stdin_sentences() -> Result<Vec<Vec<String>>> {
    let stdin = std::io::stdin();
    let mut sentences = Vec::new();
    for line in stdin.lock().lines() {
        let line = line?;
        sentences.push(line.split_whitespace().map(|t| t.to_string()).collect());
    }
    Ok(sentences)
}

pub fn print_sentence(tokens: &[String]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", tokens.join(" "))?;
    Ok(())
}
