//! Side-by-side evaluation of trained models on a shared prompt list.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cd::DecodeConfig;
use crate::error::{Error, Result};
use crate::generate::sample_standard;
use crate::harness::metrics::win_rate;
use crate::harness::oracle::OracleSpec;
use crate::model::LanguageModel;
use crate::numerics::mean;
use crate::reward::sequence_implicit_reward;
use crate::seeds::{self, stream};
use crate::vocab::Sequence;

/// The aligned weak model and its reference, used to score generations by
/// implicit reward.
#[derive(Debug, Clone, Copy)]
pub struct WeakPair<'a> {
    pub aligned: &'a LanguageModel,
    pub reference: &'a LanguageModel,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub seed: u64,
    pub model: String,
    pub mean_oracle: f64,
    pub win_rate_vs_baseline: f64,
    /// `NaN` when no weak pair was supplied.
    pub mean_implicit_reward: f64,
    pub mean_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
    /// Per-model oracle scores aligned with the prompt list.
    pub scores: Vec<Vec<f64>>,
    pub generations: Vec<Vec<Sequence>>,
}

impl Comparison {
    pub fn row(&self, model: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    /// Win rate of `a` over `b` on the shared prompts.
    pub fn win_rate(&self, a: &str, b: &str) -> Result<f64> {
        let idx = |name: &str| {
            self.rows
                .iter()
                .position(|r| r.model == name)
                .ok_or_else(|| Error::MissingBaseline(name.to_string()))
        };
        win_rate(&self.scores[idx(a)?], &self.scores[idx(b)?])
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_comparison_csv(writer, &self.rows)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|source| Error::File {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(f)
    }
}

/// Writes rows from any number of runs; the `seed` column tells them apart.
pub fn write_comparison_csv<W: Write>(writer: W, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Decodes every prompt with every model and scores the responses.
/// Sampling seeds depend on the prompt index only, so all models see the
/// same randomness on a given prompt.
pub fn compare_methods(
    models: &[(&str, &LanguageModel)],
    baseline: &str,
    prompts: &[Sequence],
    spec: &OracleSpec,
    weak_pair: Option<WeakPair<'_>>,
    decode: &DecodeConfig,
    seed: u64,
) -> Result<Comparison> {
    if models.len() < 2 {
        return Err(Error::InvalidConfig(
            "comparison needs at least two models".into(),
        ));
    }
    for (i, (name, _)) in models.iter().enumerate() {
        if models[..i].iter().any(|(n, _)| n == name) {
            return Err(Error::InvalidConfig(format!(
                "duplicate model name {name:?}"
            )));
        }
    }
    let base = models
        .iter()
        .position(|(n, _)| *n == baseline)
        .ok_or_else(|| Error::MissingBaseline(baseline.to_string()))?;
    if prompts.is_empty() {
        return Err(Error::Misaligned("no prompts to compare".into()));
    }

    let mut scores = Vec::with_capacity(models.len());
    let mut generations = Vec::with_capacity(models.len());
    let mut partial = Vec::with_capacity(models.len());
    for (name, model) in models {
        let mut s = Vec::with_capacity(prompts.len());
        let mut gens = Vec::with_capacity(prompts.len());
        let mut implicit = Vec::with_capacity(prompts.len());
        let mut lengths = Vec::with_capacity(prompts.len());
        for (i, p) in prompts.iter().enumerate() {
            let cfg = decode.with_seed(seeds::derive_seed(seed, stream::EVAL, i as u64));
            let y = sample_standard(model, p, &cfg)?;
            s.push(spec.score(model.vocab(), &y)?);
            if let Some(wp) = weak_pair {
                implicit.push(sequence_implicit_reward(
                    wp.aligned,
                    wp.reference,
                    p,
                    &y,
                    wp.beta,
                )?);
            }
            lengths.push(y.content_len() as f64);
            gens.push(y);
        }
        let mean_implicit = if weak_pair.is_some() {
            mean(&implicit)
        } else {
            f64::NAN
        };
        partial.push((name.to_string(), mean(&s), mean_implicit, mean(&lengths)));
        scores.push(s);
        generations.push(gens);
    }

    let mut rows = Vec::with_capacity(models.len());
    for (i, (model, mean_oracle, mean_implicit_reward, mean_length)) in
        partial.into_iter().enumerate()
    {
        rows.push(ComparisonRow {
            seed,
            model,
            mean_oracle,
            win_rate_vs_baseline: win_rate(&scores[i], &scores[base])?,
            mean_implicit_reward,
            mean_length,
        });
    }
    Ok(Comparison {
        baseline: baseline.to_string(),
        rows,
        scores,
        generations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NeuralDims;
    use crate::vocab::build_vocab;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> LanguageModel {
        let vocab = build_vocab("abcdefghoxz|").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LanguageModel::random(vocab, NeuralDims::new(14, 4, 8, 3), 1.0, &mut rng).unwrap()
    }

    fn prompts(m: &LanguageModel) -> Vec<Sequence> {
        ["ab|", "cd|", "efg|", "h|"]
            .iter()
            .map(|s| m.vocab().encode(s).unwrap())
            .collect()
    }

    #[test]
    fn model_against_itself_is_one_half() {
        let a = model(1);
        let b = model(2);
        let ps = prompts(&a);
        let cmp = compare_methods(
            &[("a", &a), ("b", &b)],
            "a",
            &ps,
            &OracleSpec::default(),
            None,
            &DecodeConfig::sampling(1.0, 10),
            3,
        )
        .unwrap();
        assert_eq!(cmp.row("a").unwrap().win_rate_vs_baseline, 0.5);
        let wb = cmp.row("b").unwrap().win_rate_vs_baseline;
        assert_eq!(cmp.win_rate("a", "b").unwrap() + wb, 1.0);
        assert!(cmp.row("a").unwrap().mean_implicit_reward.is_nan());
    }

    #[test]
    fn missing_baseline_is_an_error() {
        let a = model(1);
        let b = model(2);
        let ps = prompts(&a);
        let err = compare_methods(
            &[("a", &a), ("b", &b)],
            "c",
            &ps,
            &OracleSpec::default(),
            None,
            &DecodeConfig::greedy(5),
            0,
        );
        assert!(matches!(err, Err(Error::MissingBaseline(_))));
        let one = compare_methods(
            &[("a", &a)],
            "a",
            &ps,
            &OracleSpec::default(),
            None,
            &DecodeConfig::greedy(5),
            0,
        );
        assert!(one.is_err());
    }

    #[test]
    fn implicit_reward_of_identical_pair_is_zero() {
        let a = model(1);
        let b = model(2);
        let ps = prompts(&a);
        let pair = WeakPair {
            aligned: &a,
            reference: &a,
            beta: 0.5,
        };
        let cmp = compare_methods(
            &[("a", &a), ("b", &b)],
            "a",
            &ps,
            &OracleSpec::default(),
            Some(pair),
            &DecodeConfig::greedy(6),
            0,
        )
        .unwrap();
        assert!(cmp.rows.iter().all(|r| r.mean_implicit_reward == 0.0));
    }

    #[test]
    fn csv_rows_carry_the_seed() {
        let a = model(1);
        let b = model(2);
        let ps = prompts(&a);
        let mut rows = Vec::new();
        for seed in [7, 8] {
            let cmp = compare_methods(
                &[("a", &a), ("b", &b)],
                "b",
                &ps,
                &OracleSpec::default(),
                None,
                &DecodeConfig::sampling(1.0, 6),
                seed,
            )
            .unwrap();
            rows.extend(cmp.rows);
        }
        let mut buf = Vec::new();
        write_comparison_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "seed,model,mean_oracle,win_rate_vs_baseline,mean_implicit_reward,mean_length"
        );
        assert_eq!(lines.len(), 1 + 2 * 2);
        assert!(lines[3].starts_with("8,a,"));
    }
}
