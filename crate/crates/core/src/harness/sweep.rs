//! Contrastive decoding across a grid of α values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cd::{cd_generate, DecodeConfig};
use crate::error::{Error, Result};
use crate::harness::metrics::WinRateMatrix;
use crate::harness::oracle::OracleSpec;
use crate::model::LanguageModel;
use crate::numerics::{mean, std_dev};
use crate::records::{save_jsonl, GenerationRecord};
use crate::reward::sequence_implicit_reward;
use crate::seeds::{self, stream};
use crate::vocab::Sequence;

/// Level of the adjacent-α monotonicity tests.
pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub mean_implicit_reward: f64,
    pub mean_explicit_reward: f64,
    pub length_mean: f64,
    pub length_std: f64,
}

/// One-sided paired t-test of "implicit reward rises from `alpha_low` to
/// `alpha_high`", i.e. against the expected non-increasing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacentTest {
    pub alpha_low: f64,
    pub alpha_high: f64,
    pub mean_increase: f64,
    pub t_statistic: f64,
    pub p_value: f64,
}

impl AdjacentTest {
    fn paired(alpha_low: f64, alpha_high: f64, low: &[f64], high: &[f64]) -> Result<Self> {
        let diffs: Vec<f64> = high.iter().zip(low).map(|(h, l)| h - l).collect();
        let n = diffs.len();
        if n < 2 {
            return Err(Error::DegenerateSample(
                "paired test needs two prompts".into(),
            ));
        }
        let m = mean(&diffs);
        let sd = std_dev(&diffs);
        let (t, p) = if sd == 0.0 {
            match m.partial_cmp(&0.0) {
                Some(std::cmp::Ordering::Greater) => (f64::INFINITY, 0.0),
                Some(std::cmp::Ordering::Less) => (f64::NEG_INFINITY, 1.0),
                _ => (0.0, 0.5),
            }
        } else {
            let t = m / (sd / (n as f64).sqrt());
            let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
                .map_err(|e| Error::DegenerateSample(e.to_string()))?;
            (t, 1.0 - dist.cdf(t))
        };
        Ok(Self {
            alpha_low,
            alpha_high,
            mean_increase: m,
            t_statistic: t,
            p_value: p,
        })
    }

    pub fn rejects_monotone_order(&self) -> bool {
        self.p_value < SIGNIFICANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub win_rates: WinRateMatrix,
    pub adjacent_tests: Vec<AdjacentTest>,
    /// Generations per α, aligned with the prompt list.
    pub generations: Vec<Vec<GenerationRecord>>,
}

impl SweepReport {
    /// `(max − min) / min` of the per-α mean lengths.
    pub fn length_variation(&self) -> f64 {
        let lens = self.rows.iter().map(|r| r.length_mean);
        let max = lens.clone().fold(f64::NEG_INFINITY, f64::max);
        let min = lens.fold(f64::INFINITY, f64::min);
        (max - min) / min
    }

    pub fn monotone_order_rejected(&self) -> bool {
        self.adjacent_tests
            .iter()
            .any(AdjacentTest::rejects_monotone_order)
    }

    /// Indices of rows with `alpha` in `[lo, hi]`.
    pub fn alpha_indices(&self, lo: f64, hi: f64) -> Vec<usize> {
        let eps = 1e-9;
        (0..self.rows.len())
            .filter(|&i| self.rows[i].alpha >= lo - eps && self.rows[i].alpha <= hi + eps)
            .collect()
    }

    /// Writes `sweep.csv`, `win_rates.csv`, `monotonicity.csv` and
    /// `generations.jsonl` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let file_err = |path: &Path, source| Error::File {
            path: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
        let create = |name: &str| {
            let path = dir.join(name);
            std::fs::File::create(&path).map_err(|e| file_err(&path, e))
        };
        let mut w = csv::Writer::from_writer(create("sweep.csv")?);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_writer(create("monotonicity.csv")?);
        for t in &self.adjacent_tests {
            w.serialize(t)?;
        }
        w.flush()?;
        self.win_rates.write_csv(create("win_rates.csv")?)?;
        let all: Vec<&GenerationRecord> = self.generations.iter().flatten().collect();
        save_jsonl(&dir.join("generations.jsonl"), &all)
    }
}

/// Checks a grid lies in `[0, 1]`, is non-empty and strictly increasing.
pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidGrid("empty".into()));
    }
    if let Some(a) = grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::InvalidGrid(format!("{a} outside [0, 1]")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(
            "values must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Decodes every prompt at every α in `grid` with `base` (whose α is
/// replaced) and summarizes implicit reward at `beta`, oracle reward and
/// length.
#[allow(clippy::too_many_arguments)]
pub fn alpha_sweep(
    weak_r: &LanguageModel,
    weak_ref: &LanguageModel,
    prompts: &[Sequence],
    grid: &[f64],
    spec: &OracleSpec,
    base: &DecodeConfig,
    beta: f64,
    seed: u64,
) -> Result<SweepReport> {
    validate_grid(grid)?;
    if prompts.is_empty() {
        return Err(Error::Misaligned("no prompts to sweep".into()));
    }
    let vocab = weak_r.vocab();
    let mut rows = Vec::with_capacity(grid.len());
    let mut implicit_by_alpha = Vec::with_capacity(grid.len());
    let mut scores = Vec::with_capacity(grid.len());
    let mut generations = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let mut recs = Vec::with_capacity(prompts.len());
        for (i, p) in prompts.iter().enumerate() {
            let cfg =
                base.with_alpha(alpha)
                    .with_seed(seeds::derive_seed(seed, stream::SWEEP, i as u64));
            let y = cd_generate(weak_r, weak_ref, p, &cfg)?;
            recs.push(GenerationRecord {
                prompt: vocab.decode(p)?,
                response: vocab.decode(&y)?,
                alpha,
                lambda: cfg.lambda,
                implicit_reward: sequence_implicit_reward(weak_r, weak_ref, p, &y, beta)?,
                explicit_reward: spec.score(vocab, &y)?,
                length: y.content_len(),
            });
        }
        let implicit: Vec<f64> = recs.iter().map(|r| r.implicit_reward).collect();
        let explicit: Vec<f64> = recs.iter().map(|r| r.explicit_reward).collect();
        let lengths: Vec<f64> = recs.iter().map(|r| r.length as f64).collect();
        rows.push(SweepRow {
            alpha,
            mean_implicit_reward: mean(&implicit),
            mean_explicit_reward: mean(&explicit),
            length_mean: mean(&lengths),
            length_std: std_dev(&lengths),
        });
        implicit_by_alpha.push(implicit);
        scores.push(explicit);
        generations.push(recs);
    }
    let labels = grid.iter().map(|a| format!("{a}")).collect();
    let win_rates = WinRateMatrix::from_scores(labels, &scores)?;
    let adjacent_tests = (1..grid.len())
        .map(|k| {
            AdjacentTest::paired(
                grid[k - 1],
                grid[k],
                &implicit_by_alpha[k - 1],
                &implicit_by_alpha[k],
            )
        })
        .collect::<Result<_>>()?;
    Ok(SweepReport {
        rows,
        win_rates,
        adjacent_tests,
        generations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::sample_standard;
    use crate::model::NeuralDims;
    use crate::vocab::build_vocab;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair() -> (LanguageModel, LanguageModel, Vec<Sequence>) {
        let vocab = build_vocab("abcdefghoxz|").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = NeuralDims::new(14, 4, 8, 3);
        let a = LanguageModel::random(vocab.clone(), dims, 1.0, &mut rng).unwrap();
        let b = LanguageModel::random(vocab.clone(), dims, 1.0, &mut rng).unwrap();
        let ps = ["ab|", "cd|", "efg|", "h|", "aa|"]
            .iter()
            .map(|s| vocab.encode(s).unwrap())
            .collect();
        (a, b, ps)
    }

    #[test]
    fn alpha_one_row_is_standard_decoding() {
        let (a, b, ps) = pair();
        let spec = OracleSpec::default();
        for penalty in [1.0, 1.2] {
            let base = DecodeConfig::greedy(12)
                .with_lambda(0.0)
                .with_penalty(penalty);
            let rep = alpha_sweep(&a, &b, &ps, &[0.0, 0.5, 1.0], &spec, &base, 1.0, 0).unwrap();
            let mut imp = Vec::new();
            let mut exp = Vec::new();
            let mut len = Vec::new();
            for p in &ps {
                let y = sample_standard(&a, p, &base).unwrap();
                imp.push(sequence_implicit_reward(&a, &b, p, &y, 1.0).unwrap());
                exp.push(spec.score(a.vocab(), &y).unwrap());
                len.push(y.content_len() as f64);
            }
            let last = rep.rows.last().unwrap();
            assert_eq!(last.mean_implicit_reward, mean(&imp));
            assert_eq!(last.mean_explicit_reward, mean(&exp));
            assert_eq!(last.length_mean, mean(&len));
            assert_eq!(last.length_std, std_dev(&len));
        }
    }

    #[test]
    fn report_shapes_and_files() {
        let (a, b, ps) = pair();
        let grid = [0.0, 0.25, 0.5, 1.0];
        let rep = alpha_sweep(
            &a,
            &b,
            &ps,
            &grid,
            &OracleSpec::default(),
            &DecodeConfig::default(),
            1.0,
            1,
        )
        .unwrap();
        assert_eq!(rep.rows.len(), 4);
        assert_eq!(rep.adjacent_tests.len(), 3);
        assert_eq!(rep.win_rates.antisymmetry_defect(), 0.0);
        assert_eq!(rep.alpha_indices(0.0, 0.5), vec![0, 1, 2]);
        let dir = tempfile::tempdir().unwrap();
        rep.save(dir.path()).unwrap();
        let sweep = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert!(sweep.starts_with(
            "alpha,mean_implicit_reward,mean_explicit_reward,length_mean,length_std\n"
        ));
        assert_eq!(sweep.lines().count(), 5);
        let gens = std::fs::read_to_string(dir.path().join("generations.jsonl")).unwrap();
        assert_eq!(gens.lines().count(), 4 * ps.len());
    }

    #[test]
    fn bad_grids_are_rejected() {
        let (a, b, ps) = pair();
        let s = OracleSpec::default();
        let d = DecodeConfig::default();
        for grid in [&[][..], &[0.5, 0.2][..], &[0.0, 1.5][..]] {
            assert!(matches!(
                alpha_sweep(&a, &b, &ps, grid, &s, &d, 1.0, 0),
                Err(Error::InvalidGrid(_))
            ));
        }
    }

    #[test]
    fn paired_test_direction() {
        let low = [1.0, 2.0, 3.0, 4.0];
        let rising = [2.0, 3.1, 3.9, 5.2];
        let t = AdjacentTest::paired(0.0, 0.1, &low, &rising).unwrap();
        assert!(t.rejects_monotone_order());
        let t = AdjacentTest::paired(0.0, 0.1, &rising, &low).unwrap();
        assert!(!t.rejects_monotone_order());
        let t = AdjacentTest::paired(0.0, 0.1, &low, &low).unwrap();
        assert_eq!(t.p_value, 0.5);
    }

    #[test]
    fn paired_test_matches_hand_computation() {
        // Differences 1, 2, 3: mean 2, sd 1, t = 2·√3, df 2.
        let t = AdjacentTest::paired(0.0, 1.0, &[0.0, 0.0, 0.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((t.t_statistic - 2.0 * 3f64.sqrt()).abs() < 1e-12);
        // Student t with 2 df: P(T > t) = (1 − t/√(t² + 2)) / 2.
        let x = t.t_statistic;
        let p = 0.5 * (1.0 - x / (x * x + 2.0).sqrt());
        assert!((t.p_value - p).abs() < 1e-10);
    }
}
