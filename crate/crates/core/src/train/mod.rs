//! Supervised fine-tuning and DPO on neural models.
//!
//! Training is plain mini-batch gradient descent with a fixed learning rate.
//! Examples are reshuffled every epoch from a seeded generator, so a run is
//! a deterministic function of its inputs and [`TrainConfig`].

mod check;
mod grad;
mod pairs;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cd::ensure_same_vocab;
use crate::error::{Error, Result};
use crate::model::LanguageModel;
use crate::seeds::{self, stream};
use crate::vocab::Sequence;

pub use check::{
    compare_with_finite_differences, grad_check, relative_error, Objective, ERROR_FLOOR, FD_STEP,
};
pub use grad::{dpo_loss_and_grad, sft_loss_and_grad};
pub use pairs::{build_preference_pairs, ScoredPair};

use grad::{dpo_batch, sft_batch, ReferencedPair};

/// One supervised example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftExample {
    pub prompt: Sequence,
    pub response: Sequence,
}

/// A prompt with a preferred and a dispreferred response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferencePair {
    pub prompt: Sequence,
    pub chosen: Sequence,
    pub rejected: Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Preference sharpness; used by DPO only.
    #[serde(default = "default_beta")]
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_beta() -> f64 {
    0.1
}

impl TrainConfig {
    /// SFT defaults.
    pub fn sft() -> Self {
        Self {
            beta: default_beta(),
            learning_rate: 0.05,
            epochs: 30,
            batch_size: 16,
            seed: 0,
        }
    }

    /// DPO defaults with the given `beta`.
    pub fn dpo(beta: f64) -> Self {
        Self {
            beta,
            learning_rate: 0.01,
            epochs: 30,
            batch_size: 16,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        Ok(())
    }
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "beta must be positive, got {beta}"
        )))
    }
}

/// What to train on.
#[derive(Debug, Clone, Copy)]
pub enum TrainData<'a> {
    Sft(&'a [SftExample]),
    /// DPO against a frozen reference; the reference's log-probabilities are
    /// computed once before the first update.
    Dpo {
        pairs: &'a [PreferencePair],
        reference: &'a LanguageModel,
    },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: LanguageModel,
    /// Mean pre-update batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss of the very first batch, before any update.
    pub first_step_loss: Option<f64>,
}

/// Mini-batch gradient descent for `cfg.epochs` epochs.
pub fn train(
    model: &LanguageModel,
    data: TrainData<'_>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.neural_params().is_none() {
        return Err(Error::Unsupported(
            "only neural models can be trained".into(),
        ));
    }
    let n = match data {
        TrainData::Sft(examples) => examples.len(),
        TrainData::Dpo { pairs, .. } => pairs.len(),
    };
    let mut outcome = TrainOutcome {
        model: model.clone(),
        epoch_losses: Vec::with_capacity(cfg.epochs),
        first_step_loss: None,
    };
    if cfg.epochs == 0 {
        return Ok(outcome);
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    // The reference is only read through these precomputed values, so no
    // later update can reach it.
    let referenced: Vec<ReferencedPair<'_>> = match data {
        TrainData::Dpo { pairs, reference } => {
            ensure_same_vocab(model, reference)?;
            pairs
                .iter()
                .map(|p| ReferencedPair::new(p, reference))
                .collect::<Result<_>>()?
        }
        TrainData::Sft(_) => Vec::new(),
    };
    let mut rng = seeds::rng(seeds::derive_seed(cfg.seed, stream::TRAIN_SHUFFLE, 0));
    let mut order: Vec<usize> = (0..n).collect();
    let mut params = model.neural_params().expect("checked above").clone();
    let mut current = model.clone();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = match data {
                TrainData::Sft(examples) => {
                    let batch: Vec<&SftExample> = chunk.iter().map(|&i| &examples[i]).collect();
                    sft_batch(&current, &batch)?
                }
                TrainData::Dpo { .. } => {
                    let batch: Vec<ReferencedPair<'_>> =
                        chunk.iter().map(|&i| referenced[i]).collect();
                    dpo_batch(&current, &batch, cfg.beta)?
                }
            };
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::TrainingDiverged { epoch, step });
            }
            outcome.first_step_loss.get_or_insert(loss);
            weighted += loss * chunk.len() as f64;
            params.sub_scaled(&grad, cfg.learning_rate)?;
            if !params.is_finite() {
                return Err(Error::TrainingDiverged { epoch, step });
            }
            current = current.with_params(params.clone())?;
            debug!("epoch {epoch} step {step} loss {loss:.6}");
        }
        let mean = weighted / n as f64;
        info!("epoch {epoch}: loss {mean:.6}");
        outcome.epoch_losses.push(mean);
    }
    outcome.model = current;
    Ok(outcome)
}
