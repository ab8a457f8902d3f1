//! Best-of-n / worst-of-n preference pair construction.

use crate::cd::DecodeConfig;
use crate::error::{Error, Result};
use crate::generate::sample_standard;
use crate::model::LanguageModel;
use crate::seeds::{self, stream};
use crate::vocab::Sequence;

use super::PreferencePair;

/// A pair together with the oracle scores that ordered it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub pair: PreferencePair,
    pub score_chosen: f64,
    pub score_rejected: f64,
}

/// Samples `n_candidates` responses per prompt with standard decoding,
/// keeps the highest-scoring as chosen and the lowest-scoring as rejected
/// (earliest sample wins ties), and drops pairs whose responses coincide.
///
/// Candidate `j` of prompt `i` is decoded with a seed derived from
/// `cfg.seed`, `i` and `j`.
pub fn build_preference_pairs(
    model: &LanguageModel,
    prompts: &[Sequence],
    oracle: &dyn Fn(&Sequence) -> f64,
    n_candidates: usize,
    cfg: &DecodeConfig,
) -> Result<Vec<ScoredPair>> {
    if n_candidates < 2 {
        return Err(Error::NeedTwoCandidates);
    }
    cfg.validate()?;
    let mut out = Vec::with_capacity(prompts.len());
    for (i, prompt) in prompts.iter().enumerate() {
        let prompt_seed = seeds::derive_seed(cfg.seed, stream::PAIR_CANDIDATES, i as u64);
        let mut candidates = Vec::with_capacity(n_candidates);
        for j in 0..n_candidates {
            let seed = seeds::derive_seed(prompt_seed, stream::PAIR_CANDIDATES, j as u64);
            let response = sample_standard(model, prompt, &cfg.with_seed(seed))?;
            let score = oracle(&response);
            candidates.push((response, score));
        }
        if let Some(pair) = select(prompt, candidates) {
            out.push(pair);
        }
    }
    Ok(out)
}

/// Picks chosen/rejected from scored candidates; `None` if they coincide.
pub(crate) fn select(prompt: &Sequence, candidates: Vec<(Sequence, f64)>) -> Option<ScoredPair> {
    let mut best = 0;
    let mut worst = 0;
    for (j, (_, s)) in candidates.iter().enumerate() {
        if *s > candidates[best].1 {
            best = j;
        }
        if *s < candidates[worst].1 {
            worst = j;
        }
    }
    if candidates[best].0 == candidates[worst].0 {
        return None;
    }
    let score_chosen = candidates[best].1;
    let score_rejected = candidates[worst].1;
    let mut it = candidates
        .into_iter()
        .map(|(r, _)| Some(r))
        .collect::<Vec<_>>();
    let chosen = it[best].take().expect("chosen present");
    let rejected = it[worst]
        .take()
        .expect("distinct responses have distinct indices");
    Some(ScoredPair {
        pair: PreferencePair {
            prompt: prompt.clone(),
            chosen,
            rejected,
        },
        score_chosen,
        score_rejected,
    })
}
