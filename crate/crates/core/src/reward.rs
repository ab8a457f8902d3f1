//! Implicit rewards, exponential tilting and exhaustive enumeration oracles.
//!
//! The token-level implicit reward of an aligned policy `π_r` against its
//! reference `π_ref` is `β · (log π_r(v | c) − log π_ref(v | c))`; the
//! sequence-level reward is its sum over response positions. The partition
//! term that makes this an exact reward cancels in every pairwise quantity
//! and is never materialized.
//!
//! Tilting quantities use the unscaled log-ratio `r̂ = log π_r − log π_ref`:
//! `p_η(v) ∝ π_r(v) · exp(η · r̂(v))`, `Z(η) = Σ_v π_r(v) exp(η r̂(v))`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cd::ensure_same_vocab;
use crate::error::{Error, Result};
use crate::model::LanguageModel;
use crate::numerics::log_sum_exp;
use crate::vocab::{Sequence, TokenId, EOS};

/// Largest `V^max_len` the enumeration oracle accepts.
pub const ENUMERATION_LIMIT: f64 = 1e6;

/// One scored response: implicit reward, explicit (oracle) reward and length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub implicit: f64,
    pub explicit: f64,
    pub length: usize,
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "beta must be positive, got {beta}"
        )))
    }
}

pub fn token_implicit_reward(
    pi_r: &LanguageModel,
    pi_ref: &LanguageModel,
    context: &[TokenId],
    token: TokenId,
    beta: f64,
) -> Result<f64> {
    check_beta(beta)?;
    ensure_same_vocab(pi_r, pi_ref)?;
    pi_r.vocab().check(&[token])?;
    let lr = pi_r.logprobs(context)?;
    let lref = pi_ref.logprobs(context)?;
    Ok(beta * (lr[token] - lref[token]))
}

/// Sum of per-token implicit rewards over the response.
pub fn sequence_implicit_reward(
    pi_r: &LanguageModel,
    pi_ref: &LanguageModel,
    prompt: &[TokenId],
    response: &[TokenId],
    beta: f64,
) -> Result<f64> {
    check_beta(beta)?;
    ensure_same_vocab(pi_r, pi_ref)?;
    let lr = pi_r.response_logprobs(prompt, response)?;
    let lref = pi_ref.response_logprobs(prompt, response)?;
    Ok(beta * lr.iter().zip(&lref).map(|(a, b)| a - b).sum::<f64>())
}

/// `p(v) ∝ exp(base_logprobs[v] + eta · statistic[v])`.
pub fn exponential_tilt(base_logprobs: &[f64], statistic: &[f64], eta: f64) -> Vec<f64> {
    let logits: Vec<f64> = base_logprobs
        .iter()
        .zip(statistic)
        .map(|(l, s)| l + eta * s)
        .collect();
    let lz = log_sum_exp(&logits);
    logits.iter().map(|l| (l - lz).exp()).collect()
}

/// The single-step tilting family of one (model pair, context) instance.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltingInstance {
    /// `log π_r(v)`
    pub base: Vec<f64>,
    /// `r̂(v) = log π_r(v) − log π_ref(v)`
    pub reward: Vec<f64>,
}

impl TiltingInstance {
    pub fn new(pi_r: &LanguageModel, pi_ref: &LanguageModel, context: &[TokenId]) -> Result<Self> {
        ensure_same_vocab(pi_r, pi_ref)?;
        let base = pi_r.logprobs(context)?;
        let lref = pi_ref.logprobs(context)?;
        let reward = base.iter().zip(&lref).map(|(a, b)| a - b).collect();
        Ok(Self { base, reward })
    }

    /// `log Z(η)` by explicit summation over the vocabulary.
    pub fn log_partition(&self, eta: f64) -> f64 {
        let terms: Vec<f64> = self
            .base
            .iter()
            .zip(&self.reward)
            .map(|(l, r)| l + eta * r)
            .collect();
        log_sum_exp(&terms)
    }

    pub fn distribution(&self, eta: f64) -> Vec<f64> {
        exponential_tilt(&self.base, &self.reward, eta)
    }

    /// `(E_η[r̂], Var_η[r̂])`.
    pub fn moments(&self, eta: f64) -> (f64, f64) {
        let p = self.distribution(eta);
        let mean: f64 = p.iter().zip(&self.reward).map(|(p, r)| p * r).sum();
        let var: f64 = p
            .iter()
            .zip(&self.reward)
            .map(|(p, r)| p * (r - mean) * (r - mean))
            .sum();
        (mean, var)
    }
}

/// The tilted next-token distribution `p_η ∝ π_r · exp(η r̂)`.
pub fn tilted_distribution(
    pi_r: &LanguageModel,
    pi_ref: &LanguageModel,
    context: &[TokenId],
    eta: f64,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidConfig(format!("eta {eta} outside [0, 1]")));
    }
    let inst = TiltingInstance::new(pi_r, pi_ref, context)?;
    if eta == 0.0 {
        return Ok(inst.base.iter().map(|l| l.exp()).collect());
    }
    Ok(inst.distribution(eta))
}

/// `log Z`, `E[r̂]` and `Var[r̂]` along a grid of `η` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiltingReport {
    pub eta_grid: Vec<f64>,
    pub log_partition: Vec<f64>,
    pub expectation: Vec<f64>,
    pub variance: Vec<f64>,
}

impl TiltingReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["eta", "log_partition", "expectation", "variance"])?;
        for i in 0..self.eta_grid.len() {
            w.write_record([
                self.eta_grid[i].to_string(),
                self.log_partition[i].to_string(),
                self.expectation[i].to_string(),
                self.variance[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Smallest second difference of `log Z` along the grid (`+∞` for grids
    /// with fewer than three points).
    pub fn min_second_difference(&self) -> f64 {
        self.log_partition
            .windows(3)
            .zip(self.eta_grid.windows(3))
            .map(|(z, e)| {
                let (h1, h2) = (e[1] - e[0], e[2] - e[1]);
                // Divided second difference, scaled back to unit spacing.
                ((z[2] - z[1]) / h2 - (z[1] - z[0]) / h1) * h1.min(h2)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn tilting_report(
    pi_r: &LanguageModel,
    pi_ref: &LanguageModel,
    context: &[TokenId],
    eta_grid: &[f64],
) -> Result<TiltingReport> {
    if eta_grid.is_empty() {
        return Err(Error::InvalidGrid("empty eta grid".into()));
    }
    if eta_grid.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::InvalidGrid("eta values must lie in [0, 1]".into()));
    }
    if eta_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(
            "eta grid must be strictly increasing".into(),
        ));
    }
    let inst = TiltingInstance::new(pi_r, pi_ref, context)?;
    let mut report = TiltingReport {
        eta_grid: eta_grid.to_vec(),
        log_partition: Vec::with_capacity(eta_grid.len()),
        expectation: Vec::with_capacity(eta_grid.len()),
        variance: Vec::with_capacity(eta_grid.len()),
    };
    for &eta in eta_grid {
        let (mean, var) = inst.moments(eta);
        report.log_partition.push(inst.log_partition(eta));
        report.expectation.push(mean);
        report.variance.push(var);
    }
    Ok(report)
}

/// Sequence-level policy evaluated by the enumeration oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SequencePolicy {
    /// Ancestral sampling from `π_r`.
    Standard,
    /// Contrastive decoding, evaluated directly from its definition.
    Contrastive {
        alpha: f64,
        lambda: f64,
        repetition_penalty: f64,
    },
}

impl SequencePolicy {
    pub fn contrastive(alpha: f64, lambda: f64) -> Self {
        Self::Contrastive {
            alpha,
            lambda,
            repetition_penalty: 1.0,
        }
    }
}

/// Next-token distribution of `policy`, written out independently of the
/// decoder in [`crate::cd`] so it can serve as a cross-check.
pub fn oracle_step_distribution(
    pi_r: &LanguageModel,
    pi_ref: &LanguageModel,
    context: &[TokenId],
    generated: &[TokenId],
    policy: SequencePolicy,
) -> Result<Vec<f64>> {
    let lr = pi_r.logprobs(context)?;
    match policy {
        SequencePolicy::Standard => Ok(lr.iter().map(|l| l.exp()).collect()),
        SequencePolicy::Contrastive {
            alpha,
            lambda,
            repetition_penalty,
        } => {
            let lref = pi_ref.logprobs(context)?;
            let top = lr.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp();
            let mut weights = Vec::with_capacity(lr.len());
            for v in 0..lr.len() {
                if lr[v].exp() < lambda * top {
                    weights.push(None);
                    continue;
                }
                let mut f = (1.0 - alpha) * (lr[v] - lref[v]) + alpha * lr[v];
                if generated.contains(&v) {
                    f = if f > 0.0 {
                        f / repetition_penalty
                    } else {
                        f * repetition_penalty
                    };
                }
                weights.push(Some(f));
            }
            let max = weights
                .iter()
                .flatten()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max);
            let unnorm: Vec<f64> = weights
                .iter()
                .map(|w| w.map_or(0.0, |f| (f - max).exp()))
                .collect();
            let z: f64 = unnorm.iter().sum();
            Ok(unnorm.into_iter().map(|u| u / z).collect())
        }
    }
}

/// One complete outcome of the enumeration: a response that ended with EOS
/// or reached `max_len`, its probability and its implicit reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub response: Sequence,
    pub probability: f64,
    pub implicit_reward: f64,
}

/// Every response the policy can produce from `prompt` within `max_len`
/// tokens, with its probability and implicit reward.
pub fn enumerate_outcomes(
    pi_r: &LanguageModel,
    pi_ref: &LanguageModel,
    prompt: &[TokenId],
    policy: SequencePolicy,
    max_len: usize,
    beta: f64,
) -> Result<Vec<Outcome>> {
    check_beta(beta)?;
    ensure_same_vocab(pi_r, pi_ref)?;
    let v = pi_r.vocab_size() as f64;
    let states = v.powi(max_len as i32);
    if states > ENUMERATION_LIMIT {
        return Err(Error::StateSpaceTooLarge {
            states,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut out = Vec::new();
    let mut response = Vec::with_capacity(max_len);
    walk(
        pi_r,
        pi_ref,
        prompt,
        policy,
        max_len,
        beta,
        &mut response,
        1.0,
        0.0,
        &mut out,
    )?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn walk(
    pi_r: &LanguageModel,
    pi_ref: &LanguageModel,
    prompt: &[TokenId],
    policy: SequencePolicy,
    max_len: usize,
    beta: f64,
    response: &mut Vec<TokenId>,
    prob: f64,
    reward: f64,
    out: &mut Vec<Outcome>,
) -> Result<()> {
    if response.len() == max_len || response.last() == Some(&EOS) {
        out.push(Outcome {
            response: Sequence::new(response.clone()),
            probability: prob,
            implicit_reward: reward,
        });
        return Ok(());
    }
    let mut context = prompt.to_vec();
    context.extend_from_slice(response);
    let step = oracle_step_distribution(pi_r, pi_ref, &context, response, policy)?;
    let lr = pi_r.logprobs(&context)?;
    let lref = pi_ref.logprobs(&context)?;
    for (tok, &p) in step.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        response.push(tok);
        walk(
            pi_r,
            pi_ref,
            prompt,
            policy,
            max_len,
            beta,
            response,
            prob * p,
            reward + beta * (lr[tok] - lref[tok]),
            out,
        )?;
        response.pop();
    }
    Ok(())
}

/// Exact `E[r̂(x, y)]` for `y` drawn from `policy`, by exhaustive enumeration.
pub fn enumerate_expected_reward(
    pi_r: &LanguageModel,
    pi_ref: &LanguageModel,
    prompt: &[TokenId],
    policy: SequencePolicy,
    max_len: usize,
    beta: f64,
) -> Result<f64> {
    let outcomes = enumerate_outcomes(pi_r, pi_ref, prompt, policy, max_len, beta)?;
    Ok(outcomes
        .iter()
        .map(|o| o.probability * o.implicit_reward)
        .sum())
}

/// The greedy path under `policy`: at each step the most probable token,
/// lowest id on ties, until EOS or `max_len`.
pub fn oracle_greedy_path(
    pi_r: &LanguageModel,
    pi_ref: &LanguageModel,
    prompt: &[TokenId],
    policy: SequencePolicy,
    max_len: usize,
) -> Result<Sequence> {
    let mut response: Vec<TokenId> = Vec::new();
    while response.len() < max_len {
        let mut context = prompt.to_vec();
        context.extend_from_slice(&response);
        let step = oracle_step_distribution(pi_r, pi_ref, &context, &response, policy)?;
        let mut best = 0;
        for (i, &p) in step.iter().enumerate() {
            if p > step[best] {
                best = i;
            }
        }
        response.push(best);
        if best == EOS {
            break;
        }
    }
    Ok(Sequence::new(response))
}
