//! Average lagging: how many source tokens the writer trails behind an
//! ideal simultaneous translator.

use crate::error::{Error, Result};
use crate::waitk::ActionLog;

/// Average lagging of one run.
///
/// With r_i the number of source tokens read before the i-th WRITE, this is
/// the mean of `r_i − (i−1)·src_len/tgt_len` over writes 1..=τ, where τ is
/// the first write made with the source fully consumed. A run that consumed
/// the whole source before its first write has no simultaneous phase, so
/// the mean runs over every write.
pub fn average_lagging(log: &ActionLog, src_len: usize, tgt_len: usize) -> Result<f64> {
    if src_len == 0 || tgt_len == 0 {
        return Err(Error::contract(format!(
            "average lagging needs nonempty source and target (src {src_len}, tgt {tgt_len})"
        )));
    }
    let reads_before = log.reads_before_writes();
    if reads_before.is_empty() {
        return Err(Error::contract("average lagging of a log without writes"));
    }
    let cutoff = if reads_before[0] >= src_len {
        reads_before.len()
    } else {
        reads_before
            .iter()
            .position(|&r| r >= src_len)
            .map(|p| p + 1)
            .unwrap_or(reads_before.len())
    };
    let rate = src_len as f64 / tgt_len as f64;
    let sum: f64 = reads_before[..cutoff]
        .iter()
        .enumerate()
        .map(|(idx, &r)| r as f64 - idx as f64 * rate)
        .sum();
    Ok(sum / cutoff as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waitk::Action;

    fn log_of(pattern: &str) -> ActionLog {
        let mut log = ActionLog::new();
        for c in pattern.chars() {
            log.push(match c {
                'R' => Action::Read,
                'W' => Action::Write,
                _ => panic!("bad pattern"),
            });
        }
        log
    }

    #[test]
    fn full_sentence_policy() {
        // read everything, then write n tokens: AL = n - (n-1)/2
        for n in [1usize, 3, 6, 10] {
            let pattern: String = "R".repeat(n) + &"W".repeat(n);
            let al = average_lagging(&log_of(&pattern), n, n).unwrap();
            let expect = n as f64 - (n as f64 - 1.0) / 2.0;
            assert!((al - expect).abs() < 1e-12, "n={n}: {al} vs {expect}");
        }
    }

    #[test]
    fn wait_one_strict_alternation() {
        for n in [2usize, 5, 9] {
            let pattern: String = std::iter::repeat("RW").take(n).collect();
            let al = average_lagging(&log_of(&pattern), n, n).unwrap();
            assert!((al - 1.0).abs() < 1e-12, "n={n}: {al}");
        }
    }

    #[test]
    fn wait_k_evaluates_to_k_mid_stream() {
        // wait-k with one write per read until exhaustion: r_i = min(k+i-1, n)
        let n = 10usize;
        for k in 1..=8 {
            let mut pattern = "R".repeat(k);
            for _ in 0..(n - k) {
                pattern.push('W');
                pattern.push('R');
            }
            pattern.push_str(&"W".repeat(k));
            let al = average_lagging(&log_of(&pattern), n, n).unwrap();
            assert!((al - k as f64).abs() < 1e-12, "k={k}: {al}");
        }
    }

    #[test]
    fn nondecreasing_in_k() {
        let n = 10usize;
        let mut last = f64::NEG_INFINITY;
        for k in 1..=8 {
            let mut pattern = "R".repeat(k);
            for _ in 0..(n - k) {
                pattern.push('W');
                pattern.push('R');
            }
            pattern.push_str(&"W".repeat(k));
            let al = average_lagging(&log_of(&pattern), n, n).unwrap();
            assert!(al >= last);
            last = al;
        }
    }

    #[test]
    fn degenerate_logs_are_rejected() {
        assert!(average_lagging(&log_of("RRR"), 3, 3).is_err());
        assert!(average_lagging(&log_of("RW"), 0, 1).is_err());
    }
}
