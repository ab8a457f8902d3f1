//! The synthetic explicit-reward oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{Sequence, Vocab, BOS_CHAR, EOS_CHAR};

pub const GOOD_BIGRAM_WEIGHT: f64 = 1.0;
pub const BAD_CHAR_PENALTY: f64 = 2.0;
pub const LENGTH_BONUS: f64 = 0.5;

/// Scores a response by its density of good bigrams, a penalty for bad
/// characters, and a bonus for landing in a length window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub good_bigrams: Vec<String>,
    pub bad_chars: Vec<char>,
    /// Inclusive `[min, max]` response length earning the bonus.
    pub length_window: (usize, usize),
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            good_bigrams: ["ab", "cd", "ef", "gh"].map(String::from).to_vec(),
            bad_chars: vec!['x', 'z'],
            length_window: (6, 24),
        }
    }
}

impl OracleSpec {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.length_window;
        if lo > hi {
            return Err(Error::InvalidConfig(format!(
                "length window [{lo}, {hi}] is empty"
            )));
        }
        for b in &self.good_bigrams {
            if b.chars().count() != 2 {
                return Err(Error::InvalidConfig(format!("{b:?} is not a bigram")));
            }
            if b.chars().any(|c| self.bad_chars.contains(&c)) {
                return Err(Error::InvalidConfig(format!(
                    "bigram {b:?} uses a penalized character"
                )));
            }
        }
        Ok(())
    }

    /// Scores response text. EOS (and any BOS) characters are not counted.
    pub fn score_text(&self, response: &str) -> f64 {
        let chars: Vec<char> = response
            .chars()
            .filter(|&c| c != EOS_CHAR && c != BOS_CHAR)
            .collect();
        if chars.is_empty() {
            return 0.0;
        }
        let good = chars
            .windows(2)
            .filter(|w| {
                self.good_bigrams.iter().any(|b| {
                    let mut it = b.chars();
                    it.next() == Some(w[0]) && it.next() == Some(w[1])
                })
            })
            .count() as f64;
        let bad = chars.iter().filter(|c| self.bad_chars.contains(c)).count() as f64;
        let len = chars.len();
        let (lo, hi) = self.length_window;
        let bonus = if (lo..=hi).contains(&len) {
            LENGTH_BONUS
        } else {
            0.0
        };
        (GOOD_BIGRAM_WEIGHT * good - BAD_CHAR_PENALTY * bad) / len.max(1) as f64 + bonus
    }

    /// Scores a token sequence.
    pub fn score(&self, vocab: &Vocab, response: &Sequence) -> Result<f64> {
        Ok(self.score_text(&vocab.decode(response)?))
    }
}

/// Free-function form of [`OracleSpec::score`].
pub fn oracle_score(spec: &OracleSpec, vocab: &Vocab, response: &Sequence) -> Result<f64> {
    spec.score(vocab, response)
}
