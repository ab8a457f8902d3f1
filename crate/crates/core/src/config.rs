//! Experiment configuration, read from TOML.
//!
//! Every section has defaults, so an empty file is a valid configuration.
//! Paths are resolved relative to the current directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cd::{DecodeConfig, DecodeMode};
use crate::error::{Error, Result};
use crate::harness::OracleSpec;
use crate::model::NeuralDims;
use crate::task::TaskSpec;
use crate::train::TrainConfig;

/// Neural dimensions minus the vocabulary size, which comes from the task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub embed: usize,
    pub hidden: usize,
    pub context: usize,
    /// Standard deviation of the random initialization.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_init_scale() -> f64 {
    0.1
}

impl ModelShape {
    pub fn weak() -> Self {
        Self {
            embed: 16,
            hidden: 32,
            context: 4,
            init_scale: default_init_scale(),
        }
    }

    pub fn strong() -> Self {
        Self {
            embed: 32,
            hidden: 128,
            context: 8,
            init_scale: default_init_scale(),
        }
    }

    pub fn dims(&self, vocab: usize) -> NeuralDims {
        NeuralDims::new(vocab, self.embed, self.hidden, self.context)
    }
}

/// Existing checkpoints to use instead of training them in the run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelPaths {
    pub weak_ref: Option<PathBuf>,
    pub weak_aligned: Option<PathBuf>,
    pub strong_ref: Option<PathBuf>,
    /// JSONL prompt file replacing the generated training prompts.
    pub prompts: Option<PathBuf>,
}

/// Weak-model preference alignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    pub n_candidates: usize,
    /// Decoding used to draw candidates.
    pub candidate_decode: DecodeConfig,
    pub train: TrainConfig,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            n_candidates: 5,
            candidate_decode: standard_sampling(),
            train: TrainConfig {
                beta: 0.1,
                learning_rate: 0.1,
                epochs: 20,
                batch_size: 16,
                seed: 0,
            },
        }
    }
}

/// Temperature-1 ancestral sampling with no repetition penalty.
pub fn standard_sampling() -> DecodeConfig {
    DecodeConfig {
        alpha: 1.0,
        lambda: 0.0,
        repetition_penalty: 1.0,
        max_len: 24,
        temperature: 1.0,
        mode: DecodeMode::Sample,
        seed: 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Weak and strong reference models are the same model.
    pub self_alignment: bool,
    pub task: TaskSpec,
    pub oracle: OracleSpec,
    pub models: ModelPaths,
    pub weak: ModelShape,
    pub strong: ModelShape,
    /// Training of both reference models on the task corpus.
    pub base_train: TrainConfig,
    pub align: AlignConfig,
    /// Stage I contrastive decoding.
    pub decode: DecodeConfig,
    pub stage1_train: TrainConfig,
    /// Decoding of the rejected responses in Stage II.
    pub rejected_decode: DecodeConfig,
    pub rejected_per_prompt: usize,
    pub stage2_train: TrainConfig,
    /// Decoding used to evaluate trained models.
    pub eval_decode: DecodeConfig,
    /// β used when reporting implicit rewards of the weak pair.
    pub reward_beta: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output_dir: PathBuf::from("runs/default"),
            self_alignment: false,
            task: TaskSpec::default(),
            oracle: OracleSpec::default(),
            models: ModelPaths::default(),
            weak: ModelShape::weak(),
            strong: ModelShape::strong(),
            base_train: TrainConfig {
                beta: 0.1,
                learning_rate: 0.2,
                epochs: 30,
                batch_size: 16,
                seed: 0,
            },
            align: AlignConfig::default(),
            decode: DecodeConfig::default(),
            stage1_train: TrainConfig {
                beta: 0.1,
                learning_rate: 0.05,
                epochs: 1,
                batch_size: 16,
                seed: 0,
            },
            rejected_decode: standard_sampling(),
            rejected_per_prompt: 3,
            stage2_train: TrainConfig {
                beta: 0.5,
                learning_rate: 0.03,
                epochs: 3,
                batch_size: 16,
                seed: 0,
            },
            eval_decode: standard_sampling(),
            reward_beta: 0.1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.oracle.validate()?;
        for d in [
            &self.align.candidate_decode,
            &self.decode,
            &self.rejected_decode,
            &self.eval_decode,
        ] {
            d.validate()?;
        }
        for t in [
            &self.base_train,
            &self.align.train,
            &self.stage1_train,
            &self.stage2_train,
        ] {
            t.validate()?;
        }
        if self.align.n_candidates < 2 {
            return Err(Error::NeedTwoCandidates);
        }
        if self.rejected_per_prompt == 0 {
            return Err(Error::InvalidConfig(
                "rejected_per_prompt must be at least 1".into(),
            ));
        }
        if self.reward_beta <= 0.0 || !self.reward_beta.is_finite() {
            return Err(Error::InvalidConfig("reward_beta must be positive".into()));
        }
        if self.self_alignment
            && self.models.weak_ref.is_some()
            && self.models.weak_ref != self.models.strong_ref
        {
            return Err(Error::InvalidConfig(
                "self_alignment requires weak_ref and strong_ref to be the same checkpoint".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the configuration with `output_dir` cleared, so two runs
    /// that differ only in where they write share a hash.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c)?;
        Ok(hex::encode(Sha256::digest(json.as_bytes())))
    }

    /// The shape the weak reference model has in this run.
    pub fn weak_shape(&self) -> ModelShape {
        if self.self_alignment {
            self.strong
        } else {
            self.weak
        }
    }
}
