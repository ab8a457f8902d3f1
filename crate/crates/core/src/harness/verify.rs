//! Numerical property suite: tilting identities, contrastive-decoding
//! reductions, gradient checks and agreement with the enumeration oracle.
//!
//! Every check runs on small random model pairs drawn from a seed, so a
//! failure is reproducible from the seed alone.

use rand::Rng;

use crate::cd::{cd_generate, cd_next_token_distribution, DecodeConfig};
use crate::error::Result;
use crate::generate::sample_standard;
use crate::model::{LanguageModel, NeuralDims};
use crate::reward::{
    enumerate_expected_reward, exponential_tilt, oracle_greedy_path, oracle_step_distribution,
    SequencePolicy, TiltingInstance,
};
use crate::seeds::{self, stream};
use crate::train::{dpo_loss_and_grad, grad_check, Objective, PreferencePair, SftExample};
use crate::vocab::{build_vocab, Sequence, TokenId, EOS};

/// Step of the central difference of `log Z(η)`.
pub const TILT_STEP: f64 = 1e-5;

/// The η grid `0, 0.1, …, 1`.
pub fn unit_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// A pair of random neural models over a five-token vocabulary and a
/// context to condition on.
#[derive(Debug, Clone)]
pub struct Instance {
    pub pi_r: LanguageModel,
    pub pi_ref: LanguageModel,
    pub context: Vec<TokenId>,
}

pub fn random_instance(seed: u64) -> Instance {
    let vocab = build_vocab("abc").expect("fixed alphabet");
    let dims = NeuralDims::new(vocab.len(), 3, 6, 2);
    let mut rng = seeds::rng(seed);
    let scale = rng.random_range(0.5..2.5);
    let pi_r = LanguageModel::random(vocab.clone(), dims, scale, &mut rng).expect("valid dims");
    let pi_ref = LanguageModel::random(vocab, dims, scale, &mut rng).expect("valid dims");
    let n = rng.random_range(0..=3);
    let context = (0..n).map(|_| rng.random_range(2..5)).collect();
    Instance {
        pi_r,
        pi_ref,
        context,
    }
}

fn instance(seed: u64, i: u64) -> Instance {
    random_instance(seeds::derive_seed(seed, stream::VERIFY, i))
}

/// Largest `|(log Z(η+h) − log Z(η−h)) / 2h − E_η[r̂]|` over `n` instances
/// at random η.
pub fn tilting_identity_error(n: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..n as u64 {
        let inst = instance(seed, i);
        let t = TiltingInstance::new(&inst.pi_r, &inst.pi_ref, &inst.context)?;
        let eta = seeds::rng(seeds::derive_seed(seed, stream::VERIFY, 1 << 32 | i))
            .random_range(0.0..1.0);
        let fd = (t.log_partition(eta + TILT_STEP) - t.log_partition(eta - TILT_STEP))
            / (2.0 * TILT_STEP);
        worst = worst.max((fd - t.moments(eta).0).abs());
    }
    Ok(worst)
}

/// Over `n` instances on the unit grid: the smallest second difference of
/// `log Z`, and the largest rise of `E[r̂]` as α = 1 − η increases.
pub fn tilting_shape(n: usize, seed: u64) -> Result<(f64, f64)> {
    let grid = unit_grid();
    let (mut min_second, mut max_rise) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..n as u64 {
        let inst = instance(seed, i);
        let t = TiltingInstance::new(&inst.pi_r, &inst.pi_ref, &inst.context)?;
        let log_z: Vec<f64> = grid.iter().map(|&e| t.log_partition(e)).collect();
        for w in log_z.windows(3) {
            min_second = min_second.min(w[0] - 2.0 * w[1] + w[2]);
        }
        let by_alpha: Vec<f64> = grid.iter().map(|&a| t.moments(1.0 - a).0).collect();
        for w in by_alpha.windows(2) {
            max_rise = max_rise.max(w[1] - w[0]);
        }
    }
    Ok((min_second, max_rise))
}

/// Deviations of the unpruned, unpenalized contrastive distribution at each
/// α of the unit grid from reference distributions, maximized over `n`
/// instances. Returns `(vs π_r at α = 1, vs the tilt of π_r by r̂ at
/// η = 1 − α, vs the tilt of π_r by −log π_ref at η = 1 − α)`.
pub fn cd_tilting_errors(n: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let (mut at_one, mut by_reward, mut by_surprisal) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..n as u64 {
        let inst = instance(seed, i);
        let lr = inst.pi_r.logprobs(&inst.context)?;
        let lref = inst.pi_ref.logprobs(&inst.context)?;
        let reward: Vec<f64> = lr.iter().zip(&lref).map(|(a, b)| a - b).collect();
        let surprisal: Vec<f64> = lref.iter().map(|l| -l).collect();
        for alpha in unit_grid() {
            let cfg = DecodeConfig::default()
                .with_alpha(alpha)
                .with_lambda(0.0)
                .with_penalty(1.0);
            let cd =
                cd_next_token_distribution(&inst.pi_r, &inst.pi_ref, &inst.context, &[], &cfg)?;
            let dev = |other: &[f64]| {
                cd.iter()
                    .zip(other)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            };
            if alpha == 1.0 {
                let pr: Vec<f64> = lr.iter().map(|l| l.exp()).collect();
                at_one = at_one.max(dev(&pr));
            }
            by_reward = by_reward.max(dev(&exponential_tilt(&lr, &reward, 1.0 - alpha)));
            by_surprisal = by_surprisal.max(dev(&exponential_tilt(&lr, &surprisal, 1.0 - alpha)));
        }
    }
    Ok((at_one, by_reward, by_surprisal))
}

/// Number of prompts (out of `n`) on which greedy contrastive decoding with
/// α = 1, λ = 0 differs from greedy standard decoding under the same
/// repetition penalty.
pub fn greedy_reduction_mismatches(n: usize, seed: u64) -> Result<usize> {
    let mut bad = 0;
    for i in 0..n as u64 {
        let inst = instance(seed, i);
        let prompt = Sequence::new(inst.context.clone());
        for penalty in [1.0, 1.2] {
            let cfg = DecodeConfig::greedy(6)
                .with_alpha(1.0)
                .with_lambda(0.0)
                .with_penalty(penalty);
            if cd_generate(&inst.pi_r, &inst.pi_ref, &prompt, &cfg)?
                != sample_standard(&inst.pi_r, &prompt, &cfg)?
            {
                bad += 1;
            }
        }
    }
    Ok(bad)
}

fn random_seq<R: Rng>(rng: &mut R, min: usize, max: usize) -> Sequence {
    let len = rng.random_range(min..=max);
    Sequence::new((0..len).map(|_| rng.random_range(1..5)).collect())
}

fn sft_examples(seed: u64) -> Vec<SftExample> {
    let mut rng = seeds::rng(seed);
    (0..4)
        .map(|_| SftExample {
            prompt: random_seq(&mut rng, 0, 4),
            response: random_seq(&mut rng, 1, 5),
        })
        .collect()
}

fn preference_pairs(seed: u64) -> Vec<PreferencePair> {
    let mut rng = seeds::rng(seed);
    (0..4)
        .map(|_| PreferencePair {
            prompt: random_seq(&mut rng, 0, 3),
            chosen: random_seq(&mut rng, 1, 4),
            rejected: random_seq(&mut rng, 1, 4),
        })
        .collect()
}

/// Largest finite-difference relative error of the SFT and DPO gradients
/// over `n` instances each.
pub fn gradient_errors(n: usize, seed: u64) -> Result<(f64, f64)> {
    let (mut sft, mut dpo) = (0.0f64, 0.0f64);
    for i in 0..n as u64 {
        let inst = instance(seed, i);
        let s = seeds::derive_seed(seed, stream::VERIFY, 2 << 32 | i);
        let batch = sft_examples(s);
        sft = sft.max(grad_check(&Objective::Sft(&batch), &inst.pi_r, s)?);
        let pairs = preference_pairs(s);
        let obj = Objective::Dpo {
            pairs: &pairs,
            reference: &inst.pi_ref,
            beta: 0.5,
        };
        dpo = dpo.max(grad_check(&obj, &inst.pi_r, s)?);
    }
    Ok((sft, dpo))
}

/// Largest `|L_DPO − ln 2|` with the policy equal to its reference.
pub fn dpo_anchor_error(n: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..n as u64 {
        let inst = instance(seed, i);
        let pairs = preference_pairs(seeds::derive_seed(seed, stream::VERIFY, 3 << 32 | i));
        let (loss, _) = dpo_loss_and_grad(&inst.pi_r, &inst.pi_r, &pairs, 0.5)?;
        worst = worst.max((loss - std::f64::consts::LN_2).abs());
    }
    Ok(worst)
}

fn prefixes(vocab: usize, max_len: usize) -> Vec<Vec<TokenId>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 1..max_len {
        let mut next = Vec::new();
        for p in &frontier {
            for t in 0..vocab {
                if t == EOS {
                    continue;
                }
                let mut q: Vec<TokenId> = p.clone();
                q.push(t);
                next.push(q);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Agreement of the decoder with the enumeration oracle over `n` instances
/// with `max_len` 3 at default λ and repetition penalty. Returns the number
/// of greedy paths that differ and the largest per-step probability
/// difference over every prefix.
pub fn enumeration_agreement(n: usize, seed: u64, alpha: f64) -> Result<(usize, f64)> {
    let base = DecodeConfig::default().with_alpha(alpha).with_max_len(3);
    let policy = SequencePolicy::Contrastive {
        alpha,
        lambda: base.lambda,
        repetition_penalty: base.repetition_penalty,
    };
    let (mut paths, mut worst) = (0, 0.0f64);
    for i in 0..n as u64 {
        let inst = instance(seed, i);
        let prompt = Sequence::new(inst.context.clone());
        let ours = cd_generate(&inst.pi_r, &inst.pi_ref, &prompt, &base)?;
        let oracle = oracle_greedy_path(&inst.pi_r, &inst.pi_ref, &inst.context, policy, 3)?;
        if ours != oracle {
            paths += 1;
        }
        for gen in prefixes(inst.pi_r.vocab_size(), 3) {
            let mut ctx = inst.context.clone();
            ctx.extend_from_slice(&gen);
            let a = cd_next_token_distribution(&inst.pi_r, &inst.pi_ref, &ctx, &gen, &base)?;
            let b = oracle_step_distribution(&inst.pi_r, &inst.pi_ref, &ctx, &gen, policy)?;
            for (x, y) in a.iter().zip(&b) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    Ok((paths, worst))
}

/// Exact expected sequence implicit reward under contrastive decoding at
/// `alpha` (default λ and penalty) and under standard sampling, with
/// `max_len` 3, for each of `n` instances.
pub fn expected_reward_pairs(n: usize, seed: u64, alpha: f64) -> Result<Vec<(f64, f64)>> {
    let d = DecodeConfig::default();
    let policy = SequencePolicy::Contrastive {
        alpha,
        lambda: d.lambda,
        repetition_penalty: d.repetition_penalty,
    };
    (0..n as u64)
        .map(|i| {
            let inst = instance(seed, i);
            let cd =
                enumerate_expected_reward(&inst.pi_r, &inst.pi_ref, &inst.context, policy, 3, 1.0)?;
            let std = enumerate_expected_reward(
                &inst.pi_r,
                &inst.pi_ref,
                &inst.context,
                SequencePolicy::Standard,
                3,
                1.0,
            )?;
            Ok((cd, std))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        name,
        passed,
        detail,
    }
}

/// Runs every property and reports each one.
pub fn run_property_suite(seed: u64) -> Result<Vec<Check>> {
    let mut out = Vec::new();

    let e = tilting_identity_error(200, seed)?;
    out.push(check(
        "tilting identity",
        e < 1e-6,
        format!("max |dlogZ/deta - E| = {e:.3e} (< 1e-6)"),
    ));

    let (second, rise) = tilting_shape(100, seed)?;
    out.push(check(
        "log-partition convexity",
        second >= -1e-9,
        format!("min second difference = {second:.3e} (>= -1e-9)"),
    ));
    out.push(check(
        "tilted expectation monotone in alpha",
        rise <= 1e-12,
        format!("max rise of E as alpha grows = {rise:.3e} (<= 1e-12)"),
    ));

    let (at_one, _, surprisal) = cd_tilting_errors(200, seed)?;
    out.push(check(
        "contrastive decoding at alpha = 1 is the aligned policy",
        at_one < 1e-12,
        format!("max deviation = {at_one:.3e} (< 1e-12)"),
    ));
    out.push(check(
        "contrastive decoding tilts the aligned policy by reference surprisal",
        surprisal < 1e-12,
        format!("max deviation = {surprisal:.3e} (< 1e-12)"),
    ));
    let bad = greedy_reduction_mismatches(50, seed)?;
    out.push(check(
        "greedy contrastive decoding at alpha = 1, lambda = 0 is greedy standard decoding",
        bad == 0,
        format!("{bad} mismatching prompts of 100"),
    ));

    let (sft, dpo) = gradient_errors(20, seed)?;
    out.push(check(
        "SFT gradient",
        sft < 1e-4,
        format!("max relative error = {sft:.3e} (< 1e-4)"),
    ));
    out.push(check(
        "DPO gradient",
        dpo < 1e-4,
        format!("max relative error = {dpo:.3e} (< 1e-4)"),
    ));
    let anchor = dpo_anchor_error(20, seed)?;
    out.push(check(
        "DPO loss at the reference is ln 2",
        anchor <= 1e-9,
        format!("max |L - ln 2| = {anchor:.3e} (<= 1e-9)"),
    ));

    let (paths, worst) = enumeration_agreement(30, seed, 0.3)?;
    out.push(check(
        "decoder agrees with the enumeration oracle",
        paths == 0 && worst == 0.0,
        format!("{paths} differing greedy paths, max step difference {worst:.3e}"),
    ));
    Ok(out)
}
