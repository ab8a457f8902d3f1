use std::path::Path;
use std::process::{Command, Output};

fn cong(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cong"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path) -> std::path::PathBuf {
    let text = format!(
        r#"
seed = 7
output_dir = "{}"

[task]
n_corpus = 200
n_train_prompts = 40
n_eval_prompts = 20

[weak]
embed = 8
hidden = 8
context = 3

[strong]
embed = 8
hidden = 16
context = 4

[base_train]
learning_rate = 0.2
epochs = 2
batch_size = 16

[align]
n_candidates = 3

[align.train]
learning_rate = 0.1
epochs = 2
batch_size = 16

[stage1_train]
learning_rate = 0.05
epochs = 1
batch_size = 16

[stage2_train]
beta = 0.5
learning_rate = 0.03
epochs = 2
batch_size = 16
"#,
        dir.join("run").display()
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn verify_passes_and_reports_each_check() {
    let o = cong(&["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let out = stdout(&o);
    assert!(out.lines().count() >= 7);
    assert!(out.lines().all(|l| l.starts_with("PASS ")), "{out}");
}

#[test]
fn step_by_step_commands_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let weak = dir.path().join("weak.json");
    let aligned = dir.path().join("aligned.json");

    let o = cong(&[
        "train-base",
        "--role",
        "weak",
        "--config",
        s(&cfg),
        "--out",
        s(&weak),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let o = cong(&["train-base", "--role", "strong", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("run/inputs/strong_ref.json").exists());

    // align-weak picks up the trained reference through the config.
    let text = std::fs::read_to_string(&cfg).unwrap();
    let text = text.replacen(
        "[task]",
        &format!("[models]\nweak_ref = \"{}\"\n\n[task]", s(&weak)),
        1,
    );
    std::fs::write(&cfg, text).unwrap();
    let o = cong(&["align-weak", "--config", s(&cfg), "--out", s(&aligned)]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(aligned.exists());
    assert!(dir
        .path()
        .join("run/datasets/weak_preferences.jsonl")
        .exists());

    let prompts = dir.path().join("prompts.jsonl");
    std::fs::write(&prompts, "{\"prompt\":\"ab|\"}\n{\"prompt\":\"cde|\"}\n").unwrap();
    let gens = dir.path().join("gen/cd.jsonl");
    let o = cong(&[
        "cd-gen",
        "--alpha",
        "0.4",
        "--lambda",
        "0.1",
        "--prompts",
        s(&prompts),
        "--out",
        s(&gens),
        "--config",
        s(&cfg),
        "--aligned",
        s(&aligned),
        "--reference",
        s(&weak),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let lines = std::fs::read_to_string(&gens).unwrap();
    assert_eq!(lines.lines().count(), 2);
    for l in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["alpha"], 0.4);
        assert_eq!(v["lambda"], 0.1);
        assert!(v["implicit_reward"].as_f64().unwrap().is_finite());
    }

    let sweep = dir.path().join("sweep");
    let o = cong(&[
        "sweep-alpha",
        "--grid",
        "0,0.5,1",
        "--out",
        s(&sweep),
        "--config",
        s(&cfg),
        "--aligned",
        s(&aligned),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let table = std::fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(sweep.join("win_rates.csv").exists());

    let eval = dir.path().join("eval");
    let models = format!("aligned={},weak={}", s(&aligned), s(&weak));
    let o = cong(&[
        "eval",
        "compare",
        "--models",
        &models,
        "--baseline",
        "weak",
        "--out",
        s(&eval),
        "--config",
        s(&cfg),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let table = std::fs::read_to_string(eval.join("comparison.csv")).unwrap();
    assert!(table.starts_with("seed,model,mean_oracle,win_rate_vs_baseline"));
    assert_eq!(table.lines().count(), 3);
    let matrix = std::fs::read_to_string(eval.join("win_rates.csv")).unwrap();
    assert_eq!(matrix.lines().count(), 3);
}

#[test]
fn pipeline_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = cong(&["pipeline", "run", "--config", s(&cfg), "--out", s(out)]);
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    for f in [
        "manifest.json",
        "checkpoints/weak_aligned.json",
        "checkpoints/strong_sft.json",
        "checkpoints/strong_final.json",
        "baselines/weak_sft.json",
        "comparison.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn self_alignment_flag_shares_the_reference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("self");
    let o = cong(&[
        "pipeline",
        "run",
        "--config",
        s(&cfg),
        "--self-align",
        "--out",
        s(&out),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["self_alignment"], true);
    let inputs = m["inputs"].as_array().unwrap();
    let hash = |name: &str| {
        inputs
            .iter()
            .find(|a| a["name"] == name)
            .map(|a| a["sha256"].clone())
            .unwrap()
    };
    assert_eq!(hash("weak_ref"), hash("strong_ref"));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(
        cong(&["pipeline", "run", "--config", s(&missing)])
            .status
            .code(),
        Some(2)
    );

    let prompts = dir.path().join("p.jsonl");
    std::fs::write(&prompts, "{\"prompt\":\"ab|\"}\n").unwrap();
    let out = dir.path().join("o.jsonl");
    let o = cong(&[
        "cd-gen",
        "--alpha",
        "0.4",
        "--lambda",
        "0.1",
        "--prompts",
        s(&prompts),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[decode]\nalpha = 1.5\n").unwrap();
    assert_eq!(
        cong(&["align-weak", "--config", s(&bad)]).status.code(),
        Some(2)
    );
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(
        cong(&["train-base", "--role", "medium", "--config", "x"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(cong(&["no-such-command"]).status.code(), Some(2));
}
