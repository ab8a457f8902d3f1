//! Central finite-difference gradient checking.

use rand::seq::index::sample;

use crate::error::Result;
use crate::model::{LanguageModel, ParamGrad};
use crate::seeds;

use super::grad::{dpo_batch, dpo_loss, sft_batch, sft_loss, ReferencedPair};
use super::{check_beta, PreferencePair, SftExample};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Models with at most this many parameters are checked on every coordinate.
pub const FULL_SWEEP_LIMIT: usize = 5_000;
/// Coordinates sampled from larger models.
pub const SUBSAMPLE: usize = 2_000;

/// The objective whose gradient is being checked.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    Sft(&'a [SftExample]),
    Dpo {
        pairs: &'a [PreferencePair],
        reference: &'a LanguageModel,
        beta: f64,
    },
}

impl Objective<'_> {
    fn evaluate(&self, model: &LanguageModel, with_grad: bool) -> Result<(f64, Option<ParamGrad>)> {
        match *self {
            Objective::Sft(batch) => {
                let refs: Vec<&SftExample> = batch.iter().collect();
                if with_grad {
                    let (l, g) = sft_batch(model, &refs)?;
                    Ok((l, Some(g)))
                } else {
                    Ok((sft_loss(model, &refs)?, None))
                }
            }
            Objective::Dpo {
                pairs,
                reference,
                beta,
            } => {
                check_beta(beta)?;
                let items = pairs
                    .iter()
                    .map(|p| ReferencedPair::new(p, reference))
                    .collect::<Result<Vec<_>>>()?;
                if with_grad {
                    let (l, g) = dpo_batch(model, &items, beta)?;
                    Ok((l, Some(g)))
                } else {
                    Ok((dpo_loss(model, &items, beta)?, None))
                }
            }
        }
    }

    pub fn loss(&self, model: &LanguageModel) -> Result<f64> {
        Ok(self.evaluate(model, false)?.0)
    }

    pub fn loss_and_grad(&self, model: &LanguageModel) -> Result<(f64, ParamGrad)> {
        let (l, g) = self.evaluate(model, true)?;
        Ok((l, g.expect("gradient requested")))
    }
}

/// Denominator floor of [`relative_error`] per unit of loss. Central
/// differences at [`FD_STEP`] carry roundoff near `1e-11 · |L|`, so
/// coordinates much smaller than the floor cannot be compared relatively.
pub const ERROR_FLOOR: f64 = 1e-6;

/// `|fd − g| / max(ERROR_FLOOR · max(1, |loss|), |fd| + |g|)`.
pub fn relative_error(fd: f64, analytic: f64, loss: f64) -> f64 {
    let floor = ERROR_FLOOR * loss.abs().max(1.0);
    (fd - analytic).abs() / (fd.abs() + analytic.abs()).max(floor)
}

/// Coordinates to check: all of them for small models, a seeded subsample
/// otherwise.
fn coordinates(n: usize, seed: u64) -> Vec<usize> {
    if n <= FULL_SWEEP_LIMIT {
        (0..n).collect()
    } else {
        let mut idx = sample(&mut seeds::rng(seed), n, SUBSAMPLE).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Maximum relative error between `analytic` and central differences of the
/// objective at `model`.
pub fn compare_with_finite_differences(
    objective: &Objective<'_>,
    model: &LanguageModel,
    analytic: &ParamGrad,
    seed: u64,
) -> Result<f64> {
    let params = model.neural_params().ok_or_else(|| {
        crate::error::Error::Unsupported("gradient check requires a neural model".into())
    })?;
    let base = objective.loss(model)?;
    let mut worst: f64 = 0.0;
    for i in coordinates(params.len(), seed) {
        let mut plus = params.clone();
        plus.values_mut()[i] += FD_STEP;
        let mut minus = params.clone();
        minus.values_mut()[i] -= FD_STEP;
        let lp = objective.loss(&model.with_params(plus)?)?;
        let lm = objective.loss(&model.with_params(minus)?)?;
        let fd = (lp - lm) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(fd, analytic.values()[i], base));
    }
    Ok(worst)
}

/// Maximum relative error of the analytic gradient of `objective` at `model`.
pub fn grad_check(objective: &Objective<'_>, model: &LanguageModel, seed: u64) -> Result<f64> {
    let (_, grad) = objective.loss_and_grad(model)?;
    compare_with_finite_differences(objective, model, &grad, seed)
}
