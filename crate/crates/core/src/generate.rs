//! Standard (non-contrastive) decoding and the step loop shared with the
//! contrastive decoder.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::cd::{apply_repetition_penalty_in_place, DecodeConfig, DecodeMode};
use crate::error::{Error, Result};
use crate::model::LanguageModel;
use crate::numerics::{argmax, softmax};
use crate::seeds;
use crate::vocab::{Sequence, TokenId, EOS};

/// Runs the decoding loop. `scores` maps the current context (prompt followed
/// by the tokens generated so far) to unnormalized log-domain scores; the
/// repetition penalty, temperature and token choice are applied here.
pub(crate) fn decode_with<F>(
    prompt: &[TokenId],
    cfg: &DecodeConfig,
    mut scores: F,
) -> Result<Sequence>
where
    F: FnMut(&[TokenId]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut rng = seeds::rng(cfg.seed);
    let mut context = prompt.to_vec();
    let mut generated = Sequence::default();
    while generated.len() < cfg.max_len {
        let mut s = scores(&context)?;
        apply_repetition_penalty_in_place(&mut s, &generated, cfg.repetition_penalty);
        let next = match cfg.mode {
            DecodeMode::Sample if cfg.temperature > 0.0 => {
                for x in s.iter_mut() {
                    *x /= cfg.temperature;
                }
                let probs = softmax(&s);
                let dist = WeightedIndex::new(&probs)
                    .map_err(|e| Error::DegenerateSample(format!("sampling weights: {e}")))?;
                dist.sample(&mut rng)
            }
            _ => argmax(&softmax(&s)),
        };
        generated.push(next);
        context.push(next);
        if next == EOS {
            break;
        }
    }
    Ok(generated)
}

/// Decodes a response from `model` alone. `alpha` and `lambda` are ignored;
/// the repetition penalty, length cap, mode, temperature and seed apply.
/// Greedy mode ignores the seed.
pub fn sample_standard(
    model: &LanguageModel,
    prompt: &Sequence,
    cfg: &DecodeConfig,
) -> Result<Sequence> {
    model.vocab().check(prompt)?;
    decode_with(prompt, cfg, |ctx| model.logprobs(ctx))
}
