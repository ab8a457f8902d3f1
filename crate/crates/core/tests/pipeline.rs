use std::path::Path;

use cong::checkpoint;
use cong::config::{ExperimentConfig, ModelShape};
use cong::harness::{OracleSpec, WeakPair};
use cong::pipeline::{
    align_weak, file_sha256, run_full_pipeline, stage1_cong_s, stage2_cong, train_base, Role,
    RunManifest,
};
use cong::records::{load_jsonl, GenerationRecord, PreferenceRecord};
use cong::task::Task;
use cong::train::{SftExample, TrainConfig};
use cong::{DecodeConfig, Error};

fn small(dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: 11,
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.task.n_corpus = 300;
    cfg.task.n_train_prompts = 60;
    cfg.task.n_eval_prompts = 30;
    cfg.weak = ModelShape {
        embed: 8,
        hidden: 12,
        context: 3,
        init_scale: 0.1,
    };
    cfg.strong = ModelShape {
        embed: 8,
        hidden: 24,
        context: 4,
        init_scale: 0.1,
    };
    cfg.base_train.epochs = 5;
    cfg.align.train.epochs = 3;
    cfg.stage1_train.epochs = 2;
    cfg.stage2_train.epochs = 2;
    cfg
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    std::fs::read(dir.join(rel)).unwrap()
}

#[test]
fn manifest_lists_three_checkpoints_with_matching_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_full_pipeline(&small(dir.path())).unwrap();
    let names: Vec<&str> = m.checkpoints.iter().map(|a| a.name.as_str()).collect();
    assert_eq!(names, ["weak_aligned", "strong_sft", "strong_final"]);
    let inputs: Vec<&str> = m.inputs.iter().map(|a| a.name.as_str()).collect();
    assert_eq!(inputs, ["weak_ref", "strong_ref"]);
    assert_eq!(m.baselines.len(), 1);
    for a in m
        .inputs
        .iter()
        .chain(&m.checkpoints)
        .chain(&m.baselines)
        .chain(&m.datasets)
    {
        assert_eq!(
            file_sha256(&dir.path().join(&a.path)).unwrap(),
            a.sha256,
            "{}",
            a.name
        );
    }
    assert_eq!(m.format_version, 1);
    assert_eq!(m.config_hash, small(dir.path()).hash().unwrap());
    assert_eq!(
        RunManifest::load(&dir.path().join("manifest.json")).unwrap(),
        m
    );
    assert_eq!(m.metrics.comparison.len(), 4);
}

#[test]
fn stage_two_starts_at_ln2_and_keeps_chosen_responses_from_stage_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let m = run_full_pipeline(&cfg).unwrap();
    assert!((m.metrics.stage2.first_step_loss - std::f64::consts::LN_2).abs() <= 1e-9);

    let d_sft: Vec<GenerationRecord> =
        load_jsonl(&dir.path().join("datasets/d_sft.jsonl")).unwrap();
    let d_dpo: Vec<PreferenceRecord> =
        load_jsonl(&dir.path().join("datasets/d_dpo.jsonl")).unwrap();
    assert!(!d_dpo.is_empty());
    for p in &d_dpo {
        assert!(
            d_sft
                .iter()
                .any(|g| g.prompt == p.prompt && g.response == p.chosen),
            "chosen response not in the Stage I dataset: {p:?}"
        );
        assert_ne!(p.chosen, p.rejected);
    }
    assert_eq!(
        d_dpo.len() + m.metrics.stage2.dropped,
        d_sft.len() * cfg.rejected_per_prompt
    );
    let gap = d_dpo
        .iter()
        .map(|p| p.score_chosen - p.score_rejected)
        .sum::<f64>()
        / d_dpo.len() as f64;
    assert!((gap - m.metrics.stage2.reward_gap).abs() < 1e-12);
}

#[test]
fn unpruned_unpenalized_alpha_one_matches_the_baseline_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.decode = cfg
        .decode
        .with_alpha(1.0)
        .with_lambda(0.0)
        .with_penalty(1.0);
    let m = run_full_pipeline(&cfg).unwrap();
    assert_eq!(
        read(dir.path(), "datasets/d_sft.jsonl"),
        read(dir.path(), "datasets/d_weak_sft.jsonl")
    );
    // Same data and the same shuffle give the same model.
    assert_eq!(
        read(dir.path(), "checkpoints/strong_sft.json"),
        read(dir.path(), "baselines/weak_sft.json")
    );
    assert_eq!(m.metrics.stage1.size, m.metrics.weak_sft.size);
}

#[test]
fn identical_configs_reproduce_every_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let m = run_full_pipeline(&cfg).unwrap();
    let files: Vec<String> = std::iter::once("manifest.json".to_string())
        .chain(
            m.checkpoints
                .iter()
                .chain(&m.baselines)
                .chain(&m.datasets)
                .map(|a| a.path.clone()),
        )
        .collect();
    let before: Vec<Vec<u8>> = files.iter().map(|f| read(dir.path(), f)).collect();
    assert_eq!(run_full_pipeline(&cfg).unwrap(), m);
    for (f, b) in files.iter().zip(&before) {
        assert_eq!(&read(dir.path(), f), b, "{f}");
    }
}

#[test]
fn self_alignment_uses_one_reference() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.self_alignment = true;
    let m = run_full_pipeline(&cfg).unwrap();
    assert!(m.self_alignment);
    assert_eq!(m.inputs[0].name, "weak_ref");
    assert_eq!(m.inputs[0].sha256, m.inputs[1].sha256);
    let weak_ref = checkpoint::load(&dir.path().join(&m.inputs[0].path)).unwrap();
    let aligned = checkpoint::load(&dir.path().join("checkpoints/weak_aligned.json")).unwrap();
    assert_eq!(
        weak_ref.neural_params().unwrap().len(),
        aligned.neural_params().unwrap().len()
    );

    let mut bad = small(dir.path());
    bad.self_alignment = true;
    bad.models.weak_ref = Some("a.json".into());
    bad.models.strong_ref = Some("b.json".into());
    assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
}

#[test]
fn supplied_aligned_model_skips_weak_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let first = run_full_pipeline(&small(&dir.path().join("a"))).unwrap();
    let mut cfg = small(&dir.path().join("b"));
    cfg.models.weak_ref = Some(dir.path().join("a/inputs/weak_ref.json"));
    cfg.models.weak_aligned = Some(dir.path().join("a/checkpoints/weak_aligned.json"));
    let m = run_full_pipeline(&cfg).unwrap();
    assert!(m.metrics.weak_alignment.is_none());
    assert!(m.datasets.iter().all(|a| a.name != "weak_preferences"));
    assert_eq!(m.checkpoints[0].sha256, first.checkpoints[0].sha256);
    // Same weak pair and seed: Stage I data is unchanged.
    assert_eq!(
        read(&dir.path().join("a"), "datasets/d_sft.jsonl"),
        read(&dir.path().join("b"), "datasets/d_sft.jsonl")
    );
}

#[test]
fn failing_stage_is_named_and_earlier_files_remain() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("bogus.json");
    std::fs::write(&bogus, "{}").unwrap();
    let mut cfg = small(&dir.path().join("run"));
    cfg.models.weak_aligned = Some(bogus);
    match run_full_pipeline(&cfg) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "load weak_aligned"),
        other => panic!("expected a stage error, got {other:?}"),
    }
    assert!(dir.path().join("run/config.toml").exists());
    assert!(dir.path().join("run/inputs/strong_ref.json").exists());
    assert!(!dir.path().join("run/manifest.json").exists());
}

fn trained_pair(cfg: &ExperimentConfig) -> (Task, cong::LanguageModel, cong::LanguageModel) {
    let task = Task::new(cfg.task.clone()).unwrap();
    let weak_ref = train_base(&task, &cfg.weak, &cfg.base_train, cfg.seed, Role::Weak).unwrap();
    let strong_ref =
        train_base(&task, &cfg.strong, &cfg.base_train, cfg.seed, Role::Strong).unwrap();
    (task, weak_ref, strong_ref)
}

#[test]
fn zero_epoch_alignment_returns_the_reference() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.align.train.epochs = 0;
    let (task, weak_ref, _) = trained_pair(&cfg);
    let out = align_weak(
        &weak_ref,
        &task.train_prompts(cfg.seed),
        &cfg.oracle,
        &cfg.align,
        cfg.seed,
    )
    .unwrap();
    assert_eq!(
        checkpoint::to_json(&out.model).unwrap(),
        checkpoint::to_json(&weak_ref).unwrap()
    );
}

#[test]
fn stage_two_leaves_its_reference_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let (task, weak_ref, strong_ref) = trained_pair(&cfg);
    let prompts = task.train_prompts(cfg.seed);
    let weak = WeakPair {
        aligned: &weak_ref,
        reference: &weak_ref,
        beta: 0.1,
    };
    let s1 = stage1_cong_s(
        weak,
        &strong_ref,
        &prompts,
        &cfg.decode,
        &cfg.stage1_train,
        &cfg.oracle,
        cfg.seed,
    )
    .unwrap();
    assert_eq!(
        s1.dataset.examples.len() + s1.dataset.dropped,
        prompts.len()
    );
    let before = checkpoint::to_json(&s1.model).unwrap();
    let s2 = stage2_cong(
        &s1.model,
        &s1.dataset.examples,
        weak,
        &cfg.rejected_decode,
        1,
        &cfg.stage2_train,
        cfg.seed,
    )
    .unwrap();
    assert_eq!(checkpoint::to_json(&s1.model).unwrap(), before);
    assert_ne!(checkpoint::to_json(&s2.model).unwrap(), before);
    // Identical weak models give zero implicit reward everywhere.
    assert!(s2
        .records
        .iter()
        .all(|r| r.score_chosen == 0.0 && r.score_rejected == 0.0));
}

#[test]
fn several_rejected_samples_per_prompt() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let (task, weak_ref, strong_ref) = trained_pair(&cfg);
    let prompts = task.train_prompts(cfg.seed);
    let weak = WeakPair {
        aligned: &weak_ref,
        reference: &weak_ref,
        beta: 0.1,
    };
    let s1 = stage1_cong_s(
        weak,
        &strong_ref,
        &prompts,
        &cfg.decode,
        &cfg.stage1_train,
        &cfg.oracle,
        cfg.seed,
    )
    .unwrap();
    let s2 = stage2_cong(
        &s1.model,
        &s1.dataset.examples,
        weak,
        &cfg.rejected_decode,
        3,
        &cfg.stage2_train,
        cfg.seed,
    )
    .unwrap();
    assert_eq!(s2.pairs.len() + s2.dropped, 3 * s1.dataset.examples.len());
}

#[test]
fn rejected_equal_to_chosen_everywhere_leaves_no_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let (task, weak_ref, strong_ref) = trained_pair(&cfg);
    let greedy = DecodeConfig::greedy(12)
        .with_alpha(1.0)
        .with_lambda(0.0)
        .with_penalty(1.0);
    let d_sft: Vec<SftExample> = task
        .train_prompts(cfg.seed)
        .into_iter()
        .take(10)
        .map(|prompt| SftExample {
            response: cong::sample_standard(&strong_ref, &prompt, &greedy).unwrap(),
            prompt,
        })
        .collect();
    let weak = WeakPair {
        aligned: &weak_ref,
        reference: &weak_ref,
        beta: 0.1,
    };
    let err = stage2_cong(
        &strong_ref,
        &d_sft,
        weak,
        &greedy,
        1,
        &TrainConfig::dpo(0.5),
        cfg.seed,
    )
    .unwrap_err();
    assert!(matches!(err, Error::NoUsablePairs));
}

#[test]
fn oracle_defaults_validate() {
    OracleSpec::default().validate().unwrap();
}
