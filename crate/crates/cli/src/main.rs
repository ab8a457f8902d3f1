//! `cong`: train toy models, decode contrastively, run the two-stage
//! pipeline and check the numerical properties it relies on.
//!
//! Exit codes: 0 on success, 1 when `verify` finds a failing property,
//! 2 on any runtime or usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use cong::checkpoint;
use cong::config::ExperimentConfig;
use cong::harness::{alpha_sweep, compare_methods, run_property_suite, WeakPair, WinRateMatrix};
use cong::pipeline::{
    align_weak, generate_dataset, load_prompts, run_full_pipeline, train_base, Role, WeakDecoding,
};
use cong::records::save_jsonl;
use cong::task::Task;
use cong::{Error, LanguageModel, Result, Sequence};

#[derive(Parser, Debug)]
#[command(
    name = "cong",
    version,
    about = "Contrastive decoding for weak-to-strong alignment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a reference model on the task corpus.
    TrainBase {
        #[arg(long, value_enum)]
        role: RoleArg,
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path; defaults to `<output_dir>/inputs/<role>_ref.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// DPO-align the weak reference model on oracle-ranked candidates.
    AlignWeak {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path; defaults to `<output_dir>/checkpoints/weak_aligned.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode prompts contrastively and write generation records.
    CdGen {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pair: PairArgs,
    },
    /// Run the full pipeline.
    Pipeline {
        #[command(subcommand)]
        action: PipelineAction,
    },
    /// Decode over a grid of α and write sweep tables.
    SweepAlpha {
        /// Comma-separated, strictly increasing α values in [0, 1].
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Prompt file; defaults to the task's evaluation prompts.
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[command(flatten)]
        pair: PairArgs,
    },
    /// Evaluate models against each other.
    Eval {
        #[command(subcommand)]
        action: EvalAction,
    },
    /// Run the numerical property suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand, Debug)]
enum PipelineAction {
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Use the strong reference as the weak reference too.
        #[arg(long)]
        self_align: bool,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum EvalAction {
    Compare {
        /// `name=checkpoint` entries, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<String>,
        #[arg(long)]
        baseline: String,
        #[arg(long)]
        out: PathBuf,
        /// Prompt file; defaults to the task's evaluation prompts.
        #[arg(long)]
        prompts: Option<PathBuf>,
        #[command(flatten)]
        pair: PairArgs,
    },
}

/// The weak pair and configuration shared by decoding commands.
#[derive(Args, Debug)]
struct PairArgs {
    /// Experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Aligned weak checkpoint; falls back to `models.weak_aligned`.
    #[arg(long)]
    aligned: Option<PathBuf>,
    /// Weak reference checkpoint; falls back to `models.weak_ref`.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum RoleArg {
    Weak,
    Strong,
}

impl From<RoleArg> for Role {
    fn from(r: RoleArg) -> Self {
        match r {
            RoleArg::Weak => Role::Weak,
            RoleArg::Strong => Role::Strong,
        }
    }
}

/// A run that completed but found failing checks.
struct Failed;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failed)) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<std::result::Result<(), Failed>> {
    match command {
        Command::TrainBase { role, config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let role = Role::from(role);
            let task = Task::new(cfg.task.clone())?;
            let shape = match role {
                Role::Weak => cfg.weak_shape(),
                Role::Strong => cfg.strong,
            };
            let model = train_base(&task, &shape, &cfg.base_train, cfg.seed, role)?;
            let path = out.unwrap_or_else(|| {
                cfg.output_dir
                    .join("inputs")
                    .join(format!("{}_ref.json", role.name()))
            });
            save_model(&model, &path)?;
        }
        Command::AlignWeak { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let task = Task::new(cfg.task.clone())?;
            let weak_ref = match &cfg.models.weak_ref {
                Some(p) => checkpoint::load(p)?,
                None => train_base(
                    &task,
                    &cfg.weak_shape(),
                    &cfg.base_train,
                    cfg.seed,
                    Role::Weak,
                )?,
            };
            let prompts = match &cfg.models.prompts {
                Some(p) => load_prompts(p, weak_ref.vocab())?,
                None => task.train_prompts(cfg.seed),
            };
            let aligned = align_weak(&weak_ref, &prompts, &cfg.oracle, &cfg.align, cfg.seed)?;
            let path = out.unwrap_or_else(|| cfg.output_dir.join("checkpoints/weak_aligned.json"));
            save_model(&aligned.model, &path)?;
            let pairs = cfg.output_dir.join("datasets/weak_preferences.jsonl");
            save_jsonl(&pairs, &aligned.records)?;
            info!(
                "wrote {} preference pairs to {}",
                aligned.records.len(),
                pairs.display()
            );
        }
        Command::CdGen {
            alpha,
            lambda,
            prompts,
            out,
            pair,
        } => {
            let (cfg, aligned, reference) = pair.load()?;
            let prompts = load_prompts(&prompts, aligned.vocab())?;
            let decode = cfg.decode.with_alpha(alpha).with_lambda(lambda);
            decode.validate()?;
            let weak = WeakPair {
                aligned: &aligned,
                reference: &reference,
                beta: cfg.reward_beta,
            };
            let data = generate_dataset(
                weak,
                &prompts,
                &decode,
                WeakDecoding::Contrastive,
                &cfg.oracle,
                cfg.seed,
            )?;
            save_jsonl(&out, &data.records)?;
            info!(
                "wrote {} generations to {} (mean implicit reward {:.4})",
                data.records.len(),
                out.display(),
                data.mean_implicit_reward()
            );
        }
        Command::Pipeline {
            action:
                PipelineAction::Run {
                    config,
                    self_align,
                    out,
                },
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.self_alignment |= self_align;
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            cfg.validate()?;
            let manifest = run_full_pipeline(&cfg)?;
            for row in &manifest.metrics.comparison {
                println!(
                    "{:<12} oracle {:.4}  win vs weak_sft {:.3}",
                    row.model, row.mean_oracle, row.win_rate_vs_baseline
                );
            }
            println!(
                "manifest: {}",
                cfg.output_dir.join("manifest.json").display()
            );
        }
        Command::SweepAlpha {
            grid,
            out,
            prompts,
            pair,
        } => {
            let (cfg, aligned, reference) = pair.load()?;
            let prompts = prompts_or_eval(prompts.as_deref(), &cfg, &aligned)?;
            let report = alpha_sweep(
                &aligned,
                &reference,
                &prompts,
                &grid,
                &cfg.oracle,
                &cfg.decode,
                cfg.reward_beta,
                cfg.seed,
            )?;
            report.save(&out)?;
            for r in &report.rows {
                println!(
                    "alpha {:.2}  implicit {:.4}  explicit {:.4}  length {:.2}",
                    r.alpha, r.mean_implicit_reward, r.mean_explicit_reward, r.length_mean
                );
            }
            println!("length variation {:.4}", report.length_variation());
        }
        Command::Eval {
            action:
                EvalAction::Compare {
                    models,
                    baseline,
                    out,
                    prompts,
                    pair,
                },
        } => {
            let cfg = pair.config()?;
            let loaded = models
                .iter()
                .map(|m| parse_model_arg(m))
                .collect::<Result<Vec<_>>>()?;
            let Some((_, first)) = loaded.first() else {
                return Err(Error::InvalidConfig("no models given".into()));
            };
            let prompts = prompts_or_eval(prompts.as_deref(), &cfg, first)?;
            let weak = pair.optional_pair(&cfg)?;
            let refs: Vec<(&str, &LanguageModel)> =
                loaded.iter().map(|(n, m)| (n.as_str(), m)).collect();
            let cmp = compare_methods(
                &refs,
                &baseline,
                &prompts,
                &cfg.oracle,
                weak.as_ref().map(|(a, r)| WeakPair {
                    aligned: a,
                    reference: r,
                    beta: cfg.reward_beta,
                }),
                &cfg.eval_decode,
                cfg.seed,
            )?;
            create_dir(&out)?;
            cmp.save_csv(&out.join("comparison.csv"))?;
            let labels = cmp.rows.iter().map(|r| r.model.clone()).collect();
            let matrix = WinRateMatrix::from_scores(labels, &cmp.scores)?;
            let f = std::fs::File::create(out.join("win_rates.csv"))?;
            matrix.write_csv(f)?;
            for r in &cmp.rows {
                println!(
                    "{:<12} oracle {:.4}  win vs {} {:.3}",
                    r.model, r.mean_oracle, cmp.baseline, r.win_rate_vs_baseline
                );
            }
        }
        Command::Verify { seed } => {
            let checks = run_property_suite(seed)?;
            let mut all = true;
            for c in &checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
                all &= c.passed;
            }
            if !all {
                return Ok(Err(Failed));
            }
        }
    }
    Ok(Ok(()))
}

impl PairArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        match &self.config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }

    fn paths(&self, cfg: &ExperimentConfig) -> (Option<PathBuf>, Option<PathBuf>) {
        (
            self.aligned
                .clone()
                .or_else(|| cfg.models.weak_aligned.clone()),
            self.reference
                .clone()
                .or_else(|| cfg.models.weak_ref.clone()),
        )
    }

    fn load(&self) -> Result<(ExperimentConfig, LanguageModel, LanguageModel)> {
        let cfg = self.config()?;
        match self.paths(&cfg) {
            (Some(a), Some(r)) => Ok((cfg, checkpoint::load(&a)?, checkpoint::load(&r)?)),
            _ => Err(Error::InvalidConfig(
                "an aligned and a reference weak checkpoint are required (--aligned, --reference)"
                    .into(),
            )),
        }
    }

    /// The pair when both checkpoints are known. Passing only one of the
    /// two flags is an error; an incomplete config just means no pair.
    fn optional_pair(
        &self,
        cfg: &ExperimentConfig,
    ) -> Result<Option<(LanguageModel, LanguageModel)>> {
        match self.paths(cfg) {
            (Some(a), Some(r)) => Ok(Some((checkpoint::load(&a)?, checkpoint::load(&r)?))),
            _ if self.aligned.is_some() || self.reference.is_some() => Err(Error::InvalidConfig(
                "--aligned and --reference must be given together".into(),
            )),
            _ => Ok(None),
        }
    }
}

fn parse_model_arg(arg: &str) -> Result<(String, LanguageModel)> {
    let (name, path) = arg
        .split_once('=')
        .filter(|(n, p)| !n.is_empty() && !p.is_empty())
        .ok_or_else(|| Error::InvalidConfig(format!("expected name=path, got {arg:?}")))?;
    Ok((name.to_string(), checkpoint::load(Path::new(path))?))
}

fn prompts_or_eval(
    path: Option<&Path>,
    cfg: &ExperimentConfig,
    model: &LanguageModel,
) -> Result<Vec<Sequence>> {
    match path {
        Some(p) => load_prompts(p, model.vocab()),
        None => {
            let task = Task::new(cfg.task.clone())?;
            if task.vocab() != model.vocab() {
                return Err(Error::VocabMismatch);
            }
            Ok(task.eval_prompts(cfg.seed))
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.display().to_string(),
        source,
    })
}

fn save_model(model: &LanguageModel, path: &Path) -> Result<()> {
    checkpoint::save(model, path)?;
    info!("wrote {}", path.display());
    Ok(())
}
