//! The two-stage weak-to-strong pipeline.
//!
//! Stage I (ConG-S) fine-tunes the strong reference model on contrastive
//! generations of the weak pair. Stage II (ConG) runs DPO from the Stage I
//! model, pairing each contrastive generation against the Stage I model's
//! own sample. The Weak-SFT baseline fine-tunes the strong reference on
//! standard-decoded generations of the aligned weak model instead.
//!
//! [`run_full_pipeline`] writes this layout under the output directory:
//!
//! ```text
//! inputs/       weak_ref.json, strong_ref.json (when trained in the run)
//! checkpoints/  weak_aligned.json, strong_sft.json, strong_final.json
//! baselines/    weak_sft.json
//! datasets/     weak_preferences.jsonl, d_sft.jsonl, d_dpo.jsonl, d_weak_sft.jsonl
//! config.toml   comparison.csv   manifest.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cd::{cd_generate, DecodeConfig};
use crate::checkpoint;
use crate::config::{AlignConfig, ExperimentConfig, ModelShape};
use crate::error::{Error, Result};
use crate::generate::sample_standard;
use crate::harness::compare::{compare_methods, ComparisonRow, WeakPair};
use crate::harness::oracle::OracleSpec;
use crate::model::LanguageModel;
use crate::numerics::mean;
use crate::records::{load_jsonl, save_jsonl, GenerationRecord, PreferenceRecord, PromptRecord};
use crate::reward::sequence_implicit_reward;
use crate::seeds::{self, stream};
use crate::task::Task;
use crate::train::{
    build_preference_pairs, train, PreferencePair, SftExample, TrainConfig, TrainData,
};
use crate::vocab::{Sequence, Vocab};

/// Largest tolerated fraction of dropped generations.
pub const MAX_DROP_FRACTION: f64 = 0.1;

/// Training stages, used to derive shuffling seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    WeakBase,
    StrongBase,
    Align,
    /// Stage I and the Weak-SFT baseline share a seed so that identical
    /// datasets give identical models.
    Supervised,
    Preference,
}

impl Stage {
    fn index(self) -> u64 {
        match self {
            Stage::WeakBase => 0,
            Stage::StrongBase => 1,
            Stage::Align => 2,
            Stage::Supervised => 3,
            Stage::Preference => 4,
        }
    }
}

/// `cfg` with its seed mixed with the run's master seed and the stage.
pub fn stage_train_config(cfg: &TrainConfig, master: u64, stage: Stage) -> TrainConfig {
    cfg.with_seed(seeds::derive_seed(
        master ^ cfg.seed,
        stream::TRAIN_SHUFFLE,
        stage.index(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Weak,
    Strong,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Weak => "weak",
            Role::Strong => "strong",
        }
    }
}

/// Trains a reference model of the given shape on the task corpus.
pub fn train_base(
    task: &Task,
    shape: &ModelShape,
    cfg: &TrainConfig,
    master: u64,
    role: Role,
) -> Result<LanguageModel> {
    let (init_stream, stage) = match role {
        Role::Weak => (stream::INIT_WEAK, Stage::WeakBase),
        Role::Strong => (stream::INIT_STRONG, Stage::StrongBase),
    };
    let vocab = task.vocab().clone();
    let mut rng = seeds::rng(seeds::derive_seed(master, init_stream, 0));
    let init = LanguageModel::random(
        vocab.clone(),
        shape.dims(vocab.len()),
        shape.init_scale,
        &mut rng,
    )?;
    let corpus = task.corpus(master);
    let out = train(
        &init,
        TrainData::Sft(&corpus),
        &stage_train_config(cfg, master, stage),
    )?;
    info!(
        "{} base model: final epoch loss {:.4}",
        role.name(),
        out.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(out.model)
}

#[derive(Debug, Clone)]
pub struct AlignOutput {
    pub model: LanguageModel,
    pub records: Vec<PreferenceRecord>,
    pub first_step_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// DPO-aligns the weak reference on best-versus-worst pairs of its own
/// candidates, ranked by the oracle.
pub fn align_weak(
    weak_ref: &LanguageModel,
    prompts: &[Sequence],
    oracle: &OracleSpec,
    cfg: &AlignConfig,
    master: u64,
) -> Result<AlignOutput> {
    let vocab = weak_ref.vocab();
    let score = |s: &Sequence| oracle.score(vocab, s).unwrap_or(f64::NEG_INFINITY);
    let decode =
        cfg.candidate_decode
            .with_seed(seeds::derive_seed(master, stream::PAIR_CANDIDATES, 0));
    let scored = build_preference_pairs(weak_ref, prompts, &score, cfg.n_candidates, &decode)?;
    if scored.is_empty() {
        return Err(Error::NoUsablePairs);
    }
    let pairs: Vec<PreferencePair> = scored.iter().map(|s| s.pair.clone()).collect();
    let train_cfg = stage_train_config(&cfg.train, master, Stage::Align);
    let out = train(
        weak_ref,
        TrainData::Dpo {
            pairs: &pairs,
            reference: weak_ref,
        },
        &train_cfg,
    )?;
    let records = scored
        .iter()
        .map(|s| {
            Ok(PreferenceRecord {
                prompt: vocab.decode(&s.pair.prompt)?,
                chosen: vocab.decode(&s.pair.chosen)?,
                rejected: vocab.decode(&s.pair.rejected)?,
                score_chosen: s.score_chosen,
                score_rejected: s.score_rejected,
            })
        })
        .collect::<Result<_>>()?;
    info!("aligned weak model on {} pairs", pairs.len());
    Ok(AlignOutput {
        model: out.model,
        records,
        first_step_loss: out.first_step_loss.unwrap_or(f64::NAN),
        epoch_losses: out.epoch_losses,
    })
}

/// Weak-model generations used as supervised targets.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub examples: Vec<SftExample>,
    pub records: Vec<GenerationRecord>,
    pub dropped: usize,
}

impl GeneratedDataset {
    pub fn mean_implicit_reward(&self) -> f64 {
        mean(
            &self
                .records
                .iter()
                .map(|r| r.implicit_reward)
                .collect::<Vec<_>>(),
        )
    }

    pub fn mean_explicit_reward(&self) -> f64 {
        mean(
            &self
                .records
                .iter()
                .map(|r| r.explicit_reward)
                .collect::<Vec<_>>(),
        )
    }
}

/// How the weak side decodes a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeakDecoding {
    /// Contrastive decoding between the aligned weak model and its reference.
    Contrastive,
    /// The aligned weak model alone.
    Standard,
}

/// One response per prompt from the weak side. Responses with no content
/// are dropped with a warning; more than [`MAX_DROP_FRACTION`] drops is an
/// error. Prompt `i` is decoded with a seed derived from `master` and `i`
/// for both decodings, so at α = 1 and λ = 0 they coincide.
pub fn generate_dataset(
    weak: WeakPair<'_>,
    prompts: &[Sequence],
    decode: &DecodeConfig,
    decoding: WeakDecoding,
    oracle: &OracleSpec,
    master: u64,
) -> Result<GeneratedDataset> {
    let vocab = weak.aligned.vocab();
    let (alpha, lambda) = match decoding {
        WeakDecoding::Contrastive => (decode.alpha, decode.lambda),
        WeakDecoding::Standard => (1.0, 0.0),
    };
    let mut examples = Vec::with_capacity(prompts.len());
    let mut records = Vec::with_capacity(prompts.len());
    let mut dropped = 0;
    for (i, prompt) in prompts.iter().enumerate() {
        let cfg = decode.with_seed(seeds::derive_seed(
            master,
            stream::WEAK_GENERATION,
            i as u64,
        ));
        let response = match decoding {
            WeakDecoding::Contrastive => cd_generate(weak.aligned, weak.reference, prompt, &cfg)?,
            WeakDecoding::Standard => sample_standard(weak.aligned, prompt, &cfg)?,
        };
        if response.content_len() == 0 {
            warn!("dropping empty generation for prompt {i}");
            dropped += 1;
            continue;
        }
        records.push(GenerationRecord {
            prompt: vocab.decode(prompt)?,
            response: vocab.decode(&response)?,
            alpha,
            lambda,
            implicit_reward: sequence_implicit_reward(
                weak.aligned,
                weak.reference,
                prompt,
                &response,
                weak.beta,
            )?,
            explicit_reward: oracle.score(vocab, &response)?,
            length: response.content_len(),
        });
        examples.push(SftExample {
            prompt: prompt.clone(),
            response,
        });
    }
    if dropped as f64 > MAX_DROP_FRACTION * prompts.len() as f64 {
        return Err(Error::TooManyDrops {
            dropped,
            total: prompts.len(),
        });
    }
    Ok(GeneratedDataset {
        examples,
        records,
        dropped,
    })
}

/// A strong model fine-tuned on a generated dataset.
#[derive(Debug, Clone)]
pub struct SupervisedOutput {
    pub model: LanguageModel,
    pub dataset: GeneratedDataset,
    pub epoch_losses: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn supervised(
    weak: WeakPair<'_>,
    strong_ref: &LanguageModel,
    prompts: &[Sequence],
    decode: &DecodeConfig,
    decoding: WeakDecoding,
    train_cfg: &TrainConfig,
    oracle: &OracleSpec,
    master: u64,
) -> Result<SupervisedOutput> {
    let dataset = generate_dataset(weak, prompts, decode, decoding, oracle, master)?;
    let cfg = stage_train_config(train_cfg, master, Stage::Supervised);
    let out = train(strong_ref, TrainData::Sft(&dataset.examples), &cfg)?;
    Ok(SupervisedOutput {
        model: out.model,
        dataset,
        epoch_losses: out.epoch_losses,
    })
}

/// Stage I: SFT of the strong reference on contrastive generations.
#[allow(clippy::too_many_arguments)]
pub fn stage1_cong_s(
    weak: WeakPair<'_>,
    strong_ref: &LanguageModel,
    prompts: &[Sequence],
    decode: &DecodeConfig,
    train_cfg: &TrainConfig,
    oracle: &OracleSpec,
    master: u64,
) -> Result<SupervisedOutput> {
    let out = supervised(
        weak,
        strong_ref,
        prompts,
        decode,
        WeakDecoding::Contrastive,
        train_cfg,
        oracle,
        master,
    )?;
    info!(
        "stage I: {} examples, mean implicit reward {:.4}",
        out.dataset.examples.len(),
        out.dataset.mean_implicit_reward()
    );
    Ok(out)
}

/// The Weak-SFT baseline: SFT of the strong reference on standard-decoded
/// generations of the aligned weak model, with `decode`'s penalty, length
/// cap, mode and temperature.
#[allow(clippy::too_many_arguments)]
pub fn weak_sft_baseline(
    weak: WeakPair<'_>,
    strong_ref: &LanguageModel,
    prompts: &[Sequence],
    decode: &DecodeConfig,
    train_cfg: &TrainConfig,
    oracle: &OracleSpec,
    master: u64,
) -> Result<SupervisedOutput> {
    let out = supervised(
        weak,
        strong_ref,
        prompts,
        decode,
        WeakDecoding::Standard,
        train_cfg,
        oracle,
        master,
    )?;
    info!("weak-SFT baseline: {} examples", out.dataset.examples.len());
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    pub model: LanguageModel,
    pub pairs: Vec<PreferencePair>,
    /// Scores are implicit rewards under the weak pair.
    pub records: Vec<PreferenceRecord>,
    /// Pairs dropped because the sample equaled the chosen response.
    pub dropped: usize,
    /// Mean of `r̂(y_w) − r̂(y_l)` over the pairs.
    pub reward_gap: f64,
    pub first_step_loss: f64,
    pub epoch_losses: Vec<f64>,
}

/// Stage II: DPO from `strong_sft` (also the frozen reference), preferring
/// each Stage I response over `per_prompt` samples of `strong_sft`.
pub fn stage2_cong(
    strong_sft: &LanguageModel,
    d_sft: &[SftExample],
    weak: WeakPair<'_>,
    rejected_decode: &DecodeConfig,
    per_prompt: usize,
    train_cfg: &TrainConfig,
    master: u64,
) -> Result<Stage2Output> {
    let vocab = strong_sft.vocab();
    let mut pairs = Vec::with_capacity(d_sft.len() * per_prompt);
    let mut records = Vec::with_capacity(pairs.capacity());
    let mut dropped = 0;
    for (i, ex) in d_sft.iter().enumerate() {
        for j in 0..per_prompt {
            let index = (i * per_prompt + j) as u64;
            let cfg =
                rejected_decode.with_seed(seeds::derive_seed(master, stream::REJECTED, index));
            let rejected = sample_standard(strong_sft, &ex.prompt, &cfg)?;
            if rejected == ex.response {
                dropped += 1;
                continue;
            }
            let reward = |y: &Sequence| {
                sequence_implicit_reward(weak.aligned, weak.reference, &ex.prompt, y, weak.beta)
            };
            records.push(PreferenceRecord {
                prompt: vocab.decode(&ex.prompt)?,
                chosen: vocab.decode(&ex.response)?,
                rejected: vocab.decode(&rejected)?,
                score_chosen: reward(&ex.response)?,
                score_rejected: reward(&rejected)?,
            });
            pairs.push(PreferencePair {
                prompt: ex.prompt.clone(),
                chosen: ex.response.clone(),
                rejected,
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::NoUsablePairs);
    }
    let reward_gap = mean(
        &records
            .iter()
            .map(|r| r.score_chosen - r.score_rejected)
            .collect::<Vec<_>>(),
    );
    let cfg = stage_train_config(train_cfg, master, Stage::Preference);
    let out = train(
        strong_sft,
        TrainData::Dpo {
            pairs: &pairs,
            reference: strong_sft,
        },
        &cfg,
    )?;
    info!(
        "stage II: {} pairs ({dropped} dropped), reward gap {reward_gap:.4}",
        pairs.len()
    );
    Ok(Stage2Output {
        model: out.model,
        pairs,
        records,
        dropped,
        reward_gap,
        first_step_loss: out.first_step_loss.unwrap_or(f64::NAN),
        epoch_losses: out.epoch_losses,
    })
}

/// A file written or read by a run, with its SHA-256.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    /// Relative to the output directory for files the run wrote; as given
    /// in the configuration for external inputs.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetrics {
    pub size: usize,
    pub dropped: usize,
    pub mean_implicit_reward: f64,
    pub mean_explicit_reward: f64,
    pub final_train_loss: f64,
}

impl DatasetMetrics {
    fn of(out: &SupervisedOutput) -> Self {
        Self {
            size: out.dataset.examples.len(),
            dropped: out.dataset.dropped,
            mean_implicit_reward: out.dataset.mean_implicit_reward(),
            mean_explicit_reward: out.dataset.mean_explicit_reward(),
            final_train_loss: last(&out.epoch_losses),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceMetrics {
    pub pairs: usize,
    pub dropped: usize,
    pub reward_gap: f64,
    pub first_step_loss: f64,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    /// Absent when the aligned weak model was supplied.
    pub weak_alignment: Option<PreferenceMetrics>,
    pub stage1: DatasetMetrics,
    pub stage2: PreferenceMetrics,
    pub weak_sft: DatasetMetrics,
    pub comparison: Vec<ComparisonRow>,
    /// Pairwise oracle win rates keyed `"<model>_vs_<model>"`.
    pub win_rates: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub config_hash: String,
    pub self_alignment: bool,
    /// The master seed and the derived training seeds.
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<Artifact>,
    /// The aligned weak model, the Stage I model and the final model.
    pub checkpoints: Vec<Artifact>,
    pub baselines: Vec<Artifact>,
    pub datasets: Vec<Artifact>,
    pub reports: Vec<Artifact>,
    pub metrics: RunMetrics,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn comparison_row(&self, model: &str) -> Option<&ComparisonRow> {
        self.metrics.comparison.iter().find(|r| r.model == model)
    }
}

fn last(xs: &[f64]) -> f64 {
    xs.last().copied().unwrap_or(f64::NAN)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Tracks files written below the output directory.
struct Outputs {
    root: PathBuf,
}

impl Outputs {
    fn artifact(&self, name: &str, rel: &str) -> Result<Artifact> {
        Ok(Artifact {
            name: name.to_string(),
            path: rel.to_string(),
            sha256: file_sha256(&self.root.join(rel))?,
        })
    }

    fn model(&self, name: &str, rel: &str, model: &LanguageModel) -> Result<Artifact> {
        checkpoint::save(model, &self.root.join(rel))?;
        self.artifact(name, rel)
    }

    fn jsonl<T: Serialize>(&self, name: &str, rel: &str, records: &[T]) -> Result<Artifact> {
        save_jsonl(&self.root.join(rel), records)?;
        self.artifact(name, rel)
    }
}

fn external(name: &str, path: &Path) -> Result<Artifact> {
    Ok(Artifact {
        name: name.to_string(),
        path: path.display().to_string(),
        sha256: file_sha256(path)?,
    })
}

/// Reads a prompt file, one `{"prompt": ...}` record per line.
pub fn load_prompts(path: &Path, vocab: &Vocab) -> Result<Vec<Sequence>> {
    load_jsonl::<PromptRecord>(path)?
        .iter()
        .map(|r| vocab.encode(&r.prompt))
        .collect()
}

/// Names used in the comparison table.
pub mod names {
    pub const STRONG_REF: &str = "strong_ref";
    pub const WEAK_SFT: &str = "weak_sft";
    pub const CONG_S: &str = "cong_s";
    pub const CONG: &str = "cong";
}

/// Runs weak alignment (unless supplied), Stage I, Stage II, the Weak-SFT
/// baseline and the comparison, writing every artifact and the manifest.
/// A failing stage aborts with its name; files from earlier stages remain.
pub fn run_full_pipeline(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let task = Task::new(cfg.task.clone())?;
    let master = cfg.seed;
    let out = Outputs {
        root: cfg.output_dir.clone(),
    };
    std::fs::create_dir_all(&out.root).map_err(|source| Error::File {
        path: out.root.display().to_string(),
        source,
    })?;
    let mut portable = cfg.clone();
    portable.output_dir = PathBuf::new();
    std::fs::write(out.root.join("config.toml"), portable.to_toml()?)?;
    let mut reports = vec![out.artifact("config", "config.toml")?];

    let mut inputs = Vec::new();
    let strong_ref = match &cfg.models.strong_ref {
        Some(p) => {
            inputs.push(external("strong_ref", p)?);
            checkpoint::load(p).map_err(|e| e.in_stage("load strong_ref"))?
        }
        None => {
            let m = train_base(&task, &cfg.strong, &cfg.base_train, master, Role::Strong)
                .map_err(|e| e.in_stage("train strong_ref"))?;
            inputs.push(out.model("strong_ref", "inputs/strong_ref.json", &m)?);
            m
        }
    };
    let weak_ref = if cfg.self_alignment {
        let mut a = inputs[0].clone();
        a.name = "weak_ref".into();
        inputs.insert(0, a);
        strong_ref.clone()
    } else {
        match &cfg.models.weak_ref {
            Some(p) => {
                inputs.insert(0, external("weak_ref", p)?);
                checkpoint::load(p).map_err(|e| e.in_stage("load weak_ref"))?
            }
            None => {
                let m = train_base(&task, &cfg.weak, &cfg.base_train, master, Role::Weak)
                    .map_err(|e| e.in_stage("train weak_ref"))?;
                inputs.insert(0, out.model("weak_ref", "inputs/weak_ref.json", &m)?);
                m
            }
        }
    };
    if weak_ref.vocab() != strong_ref.vocab() {
        return Err(Error::VocabMismatch.in_stage("load models"));
    }
    let prompts = match &cfg.models.prompts {
        Some(p) => {
            inputs.push(external("prompts", p)?);
            load_prompts(p, strong_ref.vocab()).map_err(|e| e.in_stage("load prompts"))?
        }
        None => task.train_prompts(master),
    };
    let eval_prompts = task.eval_prompts(master);

    let mut datasets = Vec::new();
    let mut checkpoints = Vec::new();
    let (weak_r, weak_alignment) = match &cfg.models.weak_aligned {
        Some(p) => {
            let m = checkpoint::load(p).map_err(|e| e.in_stage("load weak_aligned"))?;
            checkpoints.push(external("weak_aligned", p)?);
            (m, None)
        }
        None => {
            let a = align_weak(&weak_ref, &prompts, &cfg.oracle, &cfg.align, master)
                .map_err(|e| e.in_stage("align weak"))?;
            datasets.push(out.jsonl(
                "weak_preferences",
                "datasets/weak_preferences.jsonl",
                &a.records,
            )?);
            checkpoints.push(out.model(
                "weak_aligned",
                "checkpoints/weak_aligned.json",
                &a.model,
            )?);
            let metrics = PreferenceMetrics {
                pairs: a.records.len(),
                dropped: prompts.len() - a.records.len(),
                reward_gap: mean(
                    &a.records
                        .iter()
                        .map(|r| r.score_chosen - r.score_rejected)
                        .collect::<Vec<_>>(),
                ),
                first_step_loss: a.first_step_loss,
                final_train_loss: last(&a.epoch_losses),
            };
            (a.model, Some(metrics))
        }
    };
    let weak = WeakPair {
        aligned: &weak_r,
        reference: &weak_ref,
        beta: cfg.reward_beta,
    };

    let s1 = stage1_cong_s(
        weak,
        &strong_ref,
        &prompts,
        &cfg.decode,
        &cfg.stage1_train,
        &cfg.oracle,
        master,
    )
    .map_err(|e| e.in_stage("stage I"))?;
    datasets.push(out.jsonl("d_sft", "datasets/d_sft.jsonl", &s1.dataset.records)?);
    checkpoints.push(out.model("strong_sft", "checkpoints/strong_sft.json", &s1.model)?);

    let s2 = stage2_cong(
        &s1.model,
        &s1.dataset.examples,
        weak,
        &cfg.rejected_decode,
        cfg.rejected_per_prompt,
        &cfg.stage2_train,
        master,
    )
    .map_err(|e| e.in_stage("stage II"))?;
    datasets.push(out.jsonl("d_dpo", "datasets/d_dpo.jsonl", &s2.records)?);
    checkpoints.push(out.model("strong_final", "checkpoints/strong_final.json", &s2.model)?);

    let base = weak_sft_baseline(
        weak,
        &strong_ref,
        &prompts,
        &cfg.decode,
        &cfg.stage1_train,
        &cfg.oracle,
        master,
    )
    .map_err(|e| e.in_stage("weak-SFT baseline"))?;
    datasets.push(out.jsonl(
        "d_weak_sft",
        "datasets/d_weak_sft.jsonl",
        &base.dataset.records,
    )?);
    let baselines = vec![out.model("weak_sft", "baselines/weak_sft.json", &base.model)?];

    let models = [
        (names::STRONG_REF, &strong_ref),
        (names::WEAK_SFT, &base.model),
        (names::CONG_S, &s1.model),
        (names::CONG, &s2.model),
    ];
    let cmp = compare_methods(
        &models,
        names::WEAK_SFT,
        &eval_prompts,
        &cfg.oracle,
        Some(weak),
        &cfg.eval_decode,
        master,
    )
    .map_err(|e| e.in_stage("evaluation"))?;
    cmp.save_csv(&out.root.join("comparison.csv"))?;
    reports.push(out.artifact("comparison", "comparison.csv")?);
    let mut win_rates = BTreeMap::new();
    for (a, b) in [
        (names::CONG, names::WEAK_SFT),
        (names::CONG, names::CONG_S),
        (names::CONG_S, names::WEAK_SFT),
        (names::CONG, names::STRONG_REF),
        (names::WEAK_SFT, names::STRONG_REF),
    ] {
        win_rates.insert(format!("{a}_vs_{b}"), cmp.win_rate(a, b)?);
    }
    for r in &cmp.rows {
        info!(
            "{:>10}: oracle {:.4}, win vs {} {:.3}",
            r.model,
            r.mean_oracle,
            names::WEAK_SFT,
            r.win_rate_vs_baseline
        );
    }

    let mut seed_table = BTreeMap::new();
    seed_table.insert("master".to_string(), master);
    for (name, t, stage) in [
        ("base_train", &cfg.base_train, Stage::StrongBase),
        ("align_train", &cfg.align.train, Stage::Align),
        ("stage1_train", &cfg.stage1_train, Stage::Supervised),
        ("stage2_train", &cfg.stage2_train, Stage::Preference),
    ] {
        seed_table.insert(name.to_string(), stage_train_config(t, master, stage).seed);
    }

    let manifest = RunManifest {
        format_version: 1,
        config_hash: cfg.hash()?,
        self_alignment: cfg.self_alignment,
        seeds: seed_table,
        inputs,
        checkpoints,
        baselines,
        datasets,
        reports,
        metrics: RunMetrics {
            weak_alignment,
            stage1: DatasetMetrics::of(&s1),
            stage2: PreferenceMetrics {
                pairs: s2.pairs.len(),
                dropped: s2.dropped,
                reward_gap: s2.reward_gap,
                first_step_loss: s2.first_step_loss,
                final_train_loss: last(&s2.epoch_losses),
            },
            weak_sft: DatasetMetrics::of(&base),
            comparison: cmp.rows,
            win_rates,
        },
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(out.root.join("manifest.json"), text)?;
    Ok(manifest)
}
