//! Contrastive decoding between an aligned policy and its reference.
//!
//! At every step the candidate set is pruned to tokens whose aligned-policy
//! probability is at least `λ` times the step maximum. Surviving tokens are
//! scored by
//!
//! ```text
//! F(v) = (1 - α) · log(π_r(v) / π_ref(v)) + α · log π_r(v)
//! ```
//!
//! and pruned tokens get `-∞`. A CTRL-style repetition penalty is applied to
//! tokens already present in the response, then the scores are softmaxed.
//! With `α = 1` the contrast term vanishes and decoding reduces to standard
//! decoding of `π_r`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generate::decode_with;
use crate::model::LanguageModel;
use crate::numerics::softmax;
use crate::vocab::{Sequence, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Sample,
}

/// Decoding hyperparameters shared by standard and contrastive decoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    /// Weight of the plain log-probability term; `1` disables the contrast.
    pub alpha: f64,
    /// Pruning threshold relative to the step's most likely token.
    pub lambda: f64,
    pub repetition_penalty: f64,
    /// Maximum number of generated tokens, EOS included.
    pub max_len: usize,
    pub temperature: f64,
    pub mode: DecodeMode,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            lambda: 0.1,
            repetition_penalty: 1.2,
            max_len: 24,
            temperature: 1.0,
            mode: DecodeMode::Greedy,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    /// Plain greedy decoding: `α = 1`, no pruning, no penalty.
    pub fn greedy(max_len: usize) -> Self {
        Self {
            alpha: 1.0,
            lambda: 0.0,
            repetition_penalty: 1.0,
            max_len,
            temperature: 1.0,
            mode: DecodeMode::Greedy,
            seed: 0,
        }
    }

    /// Plain ancestral sampling at the given temperature.
    pub fn sampling(temperature: f64, max_len: usize) -> Self {
        Self {
            temperature,
            mode: DecodeMode::Sample,
            ..Self::greedy(max_len)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_max_len(mut self, max_len: usize) -> Self {
        self.max_len = max_len;
        self
    }

    pub fn with_penalty(mut self, penalty: f64) -> Self {
        self.repetition_penalty = penalty;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::InvalidTemperature(self.temperature));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if self.repetition_penalty.is_nan() || self.repetition_penalty < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "repetition penalty {} below 1",
                self.repetition_penalty
            )));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidConfig("max_len must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn ensure_same_vocab(a: &LanguageModel, b: &LanguageModel) -> Result<()> {
    if a.vocab() == b.vocab() {
        Ok(())
    } else {
        Err(Error::VocabMismatch)
    }
}

/// Ids whose probability is at least `lambda` times the maximum. Never empty
/// for a valid distribution, and always contains every argmax.
pub fn prune_vocab(probs: &[f64], lambda: f64) -> Vec<TokenId> {
    let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let threshold = lambda * max;
    probs
        .iter()
        .enumerate()
        .filter(|&(_, &p)| p >= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Contrastive scores before the repetition penalty.
pub fn cd_logits(
    pi_r: &LanguageModel,
    pi_ref: &LanguageModel,
    context: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<Vec<f64>> {
    ensure_same_vocab(pi_r, pi_ref)?;
    let lp_r = pi_r.logprobs(context)?;
    let lp_ref = pi_ref.logprobs(context)?;
    Ok(contrastive_scores(&lp_r, &lp_ref, cfg.alpha, cfg.lambda))
}

pub(crate) fn contrastive_scores(
    lp_r: &[f64],
    lp_ref: &[f64],
    alpha: f64,
    lambda: f64,
) -> Vec<f64> {
    let probs: Vec<f64> = lp_r.iter().map(|l| l.exp()).collect();
    let mut scores = vec![f64::NEG_INFINITY; lp_r.len()];
    for v in prune_vocab(&probs, lambda) {
        scores[v] = (1.0 - alpha) * (lp_r[v] - lp_ref[v]) + alpha * lp_r[v];
    }
    scores
}

/// Divides positive scores and multiplies non-positive ones by `penalty` for
/// every distinct token in `generated`. Infinite scores are left alone.
pub fn apply_repetition_penalty(scores: &[f64], generated: &[TokenId], penalty: f64) -> Vec<f64> {
    let mut out = scores.to_vec();
    apply_repetition_penalty_in_place(&mut out, generated, penalty);
    out
}

pub(crate) fn apply_repetition_penalty_in_place(
    scores: &mut [f64],
    generated: &[TokenId],
    penalty: f64,
) {
    if penalty == 1.0 {
        return;
    }
    let mut seen = vec![false; scores.len()];
    for &tok in generated {
        if tok < scores.len() && !seen[tok] {
            seen[tok] = true;
            let s = scores[tok];
            if s.is_finite() {
                scores[tok] = if s > 0.0 { s / penalty } else { s * penalty };
            }
        }
    }
}

/// Next-token distribution of contrastive decoding. `context` is the full
/// prompt ⧺ response prefix; `generated` is the response prefix alone (the
/// tokens subject to the repetition penalty).
pub fn cd_next_token_distribution(
    pi_r: &LanguageModel,
    pi_ref: &LanguageModel,
    context: &[TokenId],
    generated: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut scores = cd_logits(pi_r, pi_ref, context, cfg)?;
    apply_repetition_penalty_in_place(&mut scores, generated, cfg.repetition_penalty);
    Ok(softmax(&scores))
}

/// Generates a response by contrastive decoding. Greedy mode takes the most
/// probable token at each step (lowest id on ties); sample mode draws from
/// the temperature-scaled distribution with the configured seed.
pub fn cd_generate(
    pi_r: &LanguageModel,
    pi_ref: &LanguageModel,
    prompt: &Sequence,
    cfg: &DecodeConfig,
) -> Result<Sequence> {
    ensure_same_vocab(pi_r, pi_ref)?;
    pi_r.vocab().check(prompt)?;
    decode_with(prompt, cfg, |ctx| cd_logits(pi_r, pi_ref, ctx, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::sample_standard;
    use crate::model::{NGramParams, NeuralDims};
    use crate::vocab::{build_vocab, Vocab, BOS};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Unigram model over {BOS, EOS, a, b} with the given probabilities for
    /// a and b and (numerically) zero mass on the reserved tokens.
    fn two_token(pa: f64) -> LanguageModel {
        let vocab = build_vocab("ab").unwrap();
        let scale = 1e12;
        let mut p = NGramParams::new(1, 1e-300).unwrap();
        p.add_count(4, &[], 2, (pa * scale).round() as u64);
        p.add_count(4, &[], 3, ((1.0 - pa) * scale).round() as u64);
        LanguageModel::ngram(vocab, p).unwrap()
    }

    fn random_pair(seed: u64, chars: &str) -> (LanguageModel, LanguageModel) {
        let vocab: Vocab = build_vocab(chars).unwrap();
        let dims = NeuralDims::new(vocab.len(), 3, 5, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = LanguageModel::random(vocab.clone(), dims, 1.0, &mut rng).unwrap();
        let b = LanguageModel::random(vocab, dims, 1.0, &mut rng).unwrap();
        (a, b)
    }

    #[test]
    fn pruning_edge_cases() {
        let probs = [0.5, 0.3, 0.16, 0.04];
        assert_eq!(prune_vocab(&probs, 0.0), vec![0, 1, 2, 3]);
        assert_eq!(prune_vocab(&probs, 1.0), vec![0]);
        assert_eq!(prune_vocab(&probs, 0.1), vec![0, 1, 2]);
        assert_eq!(prune_vocab(&[0.4, 0.4, 0.2], 1.0), vec![0, 1]);
    }

    #[test]
    fn repetition_penalty_rule() {
        let s = [2.0, -0.6, f64::NEG_INFINITY, 0.5];
        assert_eq!(apply_repetition_penalty(&s, &[0, 1, 2], 1.0), s.to_vec());
        let out = apply_repetition_penalty(&s, &[0, 1, 2, 0], 1.2);
        assert!((out[0] - 2.0 / 1.2).abs() < 1e-15);
        assert!((out[1] + 0.72).abs() < 1e-15);
        assert_eq!(out[2], f64::NEG_INFINITY);
        assert_eq!(out[3], 0.5);
    }

    #[test]
    fn two_token_contrastive_example() {
        let r = two_token(0.8);
        let reference = two_token(0.6);
        let cfg = DecodeConfig::greedy(4).with_alpha(0.5);
        let scores = cd_logits(&r, &reference, &[], &cfg).unwrap();
        let gap = scores[2] - scores[3];
        let expected_gap = 0.5 * (8.0f64 / 3.0).ln() + 0.5 * 4f64.ln();
        assert!((gap - expected_gap).abs() < 1e-9);
        assert!((expected_gap - 1.183562).abs() < 1e-6);
        let p = cd_next_token_distribution(&r, &reference, &[], &[], &cfg).unwrap();
        assert!((p[2] - 0.7656).abs() < 1e-4, "{p:?}");
        assert!((p[3] - 0.2344).abs() < 1e-4);
    }

    #[test]
    fn alpha_one_recovers_the_aligned_policy() {
        let (r, reference) = random_pair(7, "abc");
        let cfg = DecodeConfig::greedy(5);
        let ctx = [2, 3, 4];
        let p = cd_next_token_distribution(&r, &reference, &ctx, &[], &cfg).unwrap();
        let lp = r.logprobs(&ctx).unwrap();
        for (a, b) in p.iter().zip(&lp) {
            assert!((a - b.exp()).abs() < 1e-12);
        }
        let s = cd_logits(&r, &reference, &ctx, &cfg).unwrap();
        assert_eq!(s, lp);
    }

    #[test]
    fn pruned_tokens_have_zero_probability() {
        let (r, reference) = random_pair(8, "abcd");
        let cfg = DecodeConfig::default().with_lambda(0.5);
        let ctx = [3];
        let lp = r.logprobs(&ctx).unwrap();
        let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let head = prune_vocab(&probs, 0.5);
        let p = cd_next_token_distribution(&r, &reference, &ctx, &[], &cfg).unwrap();
        for (v, &pv) in p.iter().enumerate() {
            assert_eq!(pv == 0.0, !head.contains(&v));
        }
    }

    #[test]
    fn reduces_to_standard_greedy() {
        let (r, reference) = random_pair(9, "abc");
        let prompt = Sequence::new(vec![2, 4]);
        let cfg = DecodeConfig::greedy(12);
        let cd = cd_generate(&r, &reference, &prompt, &cfg).unwrap();
        let std = sample_standard(&r, &prompt, &cfg).unwrap();
        assert_eq!(cd, std);
        // Holds with a penalty too, because both paths share the penalty.
        let cfg = cfg.with_penalty(1.2);
        assert_eq!(
            cd_generate(&r, &reference, &prompt, &cfg).unwrap(),
            sample_standard(&r, &prompt, &cfg).unwrap()
        );
    }

    #[test]
    fn generation_is_deterministic() {
        let (r, reference) = random_pair(10, "abc");
        let prompt = Sequence::new(vec![3]);
        for mode in [DecodeMode::Greedy, DecodeMode::Sample] {
            let cfg = DecodeConfig {
                mode,
                seed: 99,
                ..DecodeConfig::default()
            };
            let a = cd_generate(&r, &reference, &prompt, &cfg).unwrap();
            let b = cd_generate(&r, &reference, &prompt, &cfg).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn vocab_mismatch_is_reported() {
        let (r, _) = random_pair(11, "abc");
        let (other, _) = random_pair(11, "abd");
        let err = cd_logits(&r, &other, &[], &DecodeConfig::default()).unwrap_err();
        assert_eq!(err.to_string(), "vocab mismatch");
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            DecodeConfig::default().with_alpha(1.5),
            DecodeConfig::default().with_lambda(-0.1),
            DecodeConfig::default().with_penalty(0.9),
            DecodeConfig {
                max_len: 0,
                ..DecodeConfig::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        }
        let bad_t = DecodeConfig {
            temperature: -1.0,
            ..DecodeConfig::default()
        };
        assert!(matches!(
            bad_t.validate(),
            Err(Error::InvalidTemperature(_))
        ));
    }

    #[test]
    fn config_reads_from_toml_with_defaults() {
        let cfg: DecodeConfig = toml::from_str("alpha = 0.3\nmode = \"sample\"").unwrap();
        assert_eq!(cfg.alpha, 0.3);
        assert_eq!(cfg.mode, DecodeMode::Sample);
        assert_eq!(cfg.lambda, 0.1);
        assert_eq!(cfg.repetition_penalty, 1.2);
    }

    proptest! {
        #[test]
        fn head_is_never_empty(seed in 0u64..5000, lambda in 0.0f64..=1.0) {
            let (r, reference) = random_pair(seed, "abcd");
            let lp = r.logprobs(&[BOS, 2]).unwrap();
            let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
            let head = prune_vocab(&probs, lambda);
            prop_assert!(!head.is_empty());
            prop_assert!(head.contains(&crate::numerics::argmax(&probs)));
            let cfg = DecodeConfig::default().with_lambda(lambda).with_penalty(1.0);
            let p = cd_next_token_distribution(&r, &reference, &[BOS, 2], &[], &cfg).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (v, &pv) in p.iter().enumerate() {
                prop_assert_eq!(pv > 0.0, head.contains(&v));
            }
        }
    }
}
