//! The synthetic character-level task: prompts, a ground-truth response
//! generator, and the corpus used to train reference models.
//!
//! Prompts are a few letters followed by `|`. Responses come from a
//! first-order Markov chain over characters with an end-of-sequence hazard.
//! The chain favors the neutral character `o` (so greedy decoding of a
//! faithful model is bland), follows good bigrams with moderate probability
//! and emits penalized characters occasionally. Ending is only possible once
//! the response has [`TaskSpec::min_len`] characters, and is much more likely
//! right after `o`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::{self, stream};
use crate::train::SftExample;
use crate::vocab::{Sequence, Vocab, EOS};

pub const SEPARATOR: char = '|';

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    /// Letters used in prompts and responses.
    pub letters: String,
    pub neutral: char,
    pub bad_chars: String,
    /// `(first, second)` pairs the chain follows with `p_partner`.
    pub partners: Vec<(char, char)>,
    pub prompt_len: (usize, usize),
    /// Probability that a response opens by repeating the last prompt letter.
    pub p_echo: f64,
    pub p_neutral: f64,
    pub p_partner: f64,
    /// Probability of each bad character.
    pub p_bad: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// End hazard right after the neutral character.
    pub p_end_after_neutral: f64,
    /// End hazard after any other character.
    pub p_end: f64,
    pub n_corpus: usize,
    pub n_train_prompts: usize,
    pub n_eval_prompts: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            letters: "abcdefgh".into(),
            neutral: 'o',
            bad_chars: "xz".into(),
            partners: vec![('a', 'b'), ('c', 'd'), ('e', 'f'), ('g', 'h')],
            prompt_len: (2, 4),
            p_echo: 0.35,
            p_neutral: 0.28,
            p_partner: 0.22,
            p_bad: 0.04,
            min_len: 4,
            max_len: 24,
            p_end_after_neutral: 0.3,
            p_end: 0.06,
            n_corpus: 2000,
            n_train_prompts: 1000,
            n_eval_prompts: 300,
        }
    }
}

/// A validated task with its vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    spec: TaskSpec,
    vocab: Vocab,
    letters: Vec<char>,
    bad: Vec<char>,
}

impl Task {
    pub fn new(spec: TaskSpec) -> Result<Self> {
        let letters: Vec<char> = spec.letters.chars().collect();
        let bad: Vec<char> = spec.bad_chars.chars().collect();
        if letters.is_empty() {
            return Err(Error::InvalidConfig(
                "task needs at least one letter".into(),
            ));
        }
        let (lo, hi) = spec.prompt_len;
        if lo == 0 || lo > hi {
            return Err(Error::InvalidConfig(format!(
                "bad prompt length range [{lo}, {hi}]"
            )));
        }
        if spec.min_len == 0 || spec.min_len > spec.max_len {
            return Err(Error::InvalidConfig("bad response length range".into()));
        }
        let fixed = spec.p_neutral + spec.p_partner + spec.p_bad * bad.len() as f64;
        if !(0.0..1.0).contains(&fixed) {
            return Err(Error::InvalidConfig(format!(
                "fixed transition mass {fixed} must lie in [0, 1)"
            )));
        }
        for p in [spec.p_end, spec.p_end_after_neutral, spec.p_echo] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "probability {p} outside [0, 1]"
                )));
            }
        }
        let mut alphabet = spec.letters.clone();
        alphabet.push(spec.neutral);
        alphabet.push_str(&spec.bad_chars);
        alphabet.push(SEPARATOR);
        let vocab = Vocab::build(&alphabet)?;
        Ok(Self {
            spec,
            vocab,
            letters,
            bad,
        })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn partner_of(&self, c: char) -> Option<char> {
        self.spec
            .partners
            .iter()
            .find(|(a, _)| *a == c)
            .map(|(_, b)| *b)
    }

    /// Ground-truth next-character distribution after `prev`, given the
    /// response so far has `len` characters. At `len == 0`, `prev` is the
    /// last prompt letter. Returned as `(char, p)` with
    /// EOS written as `None`.
    pub fn next_distribution(&self, prev: char, len: usize) -> Vec<(Option<char>, f64)> {
        let s = &self.spec;
        if len >= s.max_len {
            return vec![(None, 1.0)];
        }
        let end = if len < s.min_len {
            0.0
        } else if prev == s.neutral {
            s.p_end_after_neutral
        } else {
            s.p_end
        };
        let go = 1.0 - end;
        let partner = self.partner_of(prev);
        let others: Vec<char> = self
            .letters
            .iter()
            .copied()
            .filter(|&c| Some(c) != partner)
            .collect();
        let mut free = 1.0 - s.p_neutral - s.p_bad * self.bad.len() as f64;
        let mut out = vec![(None, end), (Some(s.neutral), go * s.p_neutral)];
        if let Some(p) = partner {
            out.push((Some(p), go * s.p_partner));
            free -= s.p_partner;
        }
        for &b in &self.bad {
            out.push((Some(b), go * s.p_bad));
        }
        for &c in &others {
            out.push((Some(c), go * free / others.len() as f64));
        }
        if len == 0 && self.letters.contains(&prev) {
            for (c, p) in out.iter_mut() {
                *p *= 1.0 - s.p_echo;
                if *c == Some(prev) {
                    *p += s.p_echo;
                }
            }
        }
        out
    }

    pub fn sample_prompt<R: Rng + ?Sized>(&self, rng: &mut R) -> Sequence {
        let (lo, hi) = self.spec.prompt_len;
        let n = rng.random_range(lo..=hi);
        let mut text: String = (0..n)
            .map(|_| self.letters[rng.random_range(0..self.letters.len())])
            .collect();
        text.push(SEPARATOR);
        self.vocab
            .encode(&text)
            .expect("prompt characters are in the vocabulary")
    }

    /// Draws a response (terminated by EOS) continuing `prompt`.
    pub fn sample_response<R: Rng + ?Sized>(&self, prompt: &Sequence, rng: &mut R) -> Sequence {
        let text = self.vocab.decode(prompt).unwrap_or_default();
        let mut prev = text
            .chars()
            .rev()
            .find(|&c| c != SEPARATOR)
            .unwrap_or(self.spec.neutral);
        let mut out = Sequence::default();
        loop {
            let dist = self.next_distribution(prev, out.len());
            let idx = WeightedIndex::new(dist.iter().map(|(_, p)| *p))
                .expect("transition weights are valid")
                .sample(rng);
            match dist[idx].0 {
                None => {
                    out.push(EOS);
                    return out;
                }
                Some(c) => {
                    out.push(
                        self.vocab
                            .id_of(c)
                            .expect("task characters are in the vocabulary"),
                    );
                    prev = c;
                }
            }
        }
    }

    fn prompts(&self, master: u64, tag: u64, n: usize) -> Vec<Sequence> {
        let mut rng = seeds::rng(seeds::derive_seed(master, tag, 0));
        (0..n).map(|_| self.sample_prompt(&mut rng)).collect()
    }

    /// Prompt/response pairs from the ground-truth generator.
    pub fn corpus(&self, master: u64) -> Vec<SftExample> {
        let mut rng = seeds::rng(seeds::derive_seed(master, stream::CORPUS, 0));
        (0..self.spec.n_corpus)
            .map(|_| {
                let prompt = self.sample_prompt(&mut rng);
                let response = self.sample_response(&prompt, &mut rng);
                SftExample { prompt, response }
            })
            .collect()
    }

    pub fn train_prompts(&self, master: u64) -> Vec<Sequence> {
        self.prompts(master, stream::TRAIN_PROMPTS, self.spec.n_train_prompts)
    }

    pub fn eval_prompts(&self, master: u64) -> Vec<Sequence> {
        self.prompts(master, stream::EVAL_PROMPTS, self.spec.n_eval_prompts)
    }
}
