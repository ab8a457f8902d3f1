//! Win-rate matrices, reward correlation and summary statistics.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::RewardRecord;

/// Pairwise win rates between conditions scored on a common prompt list.
/// `entries[i][j]` is the fraction of prompts on which condition `i` beats
/// condition `j`, ties counting one half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateMatrix {
    pub labels: Vec<String>,
    pub entries: Vec<Vec<f64>>,
}

/// `1`, `0.5` or `0` for a win, tie or loss of `a` against `b`.
pub fn win_value(a: f64, b: f64) -> f64 {
    if a > b {
        1.0
    } else if a == b {
        0.5
    } else {
        0.0
    }
}

/// Mean of [`win_value`] over aligned score lists.
pub fn win_rate(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Misaligned(format!(
            "{} scores against {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Misaligned("no prompts to compare".into()));
    }
    let wins: f64 = a.iter().zip(b).map(|(x, y)| win_value(*x, *y)).sum();
    Ok(wins / a.len() as f64)
}

impl WinRateMatrix {
    /// Builds the matrix from per-condition score lists aligned by prompt.
    /// Only the upper triangle is computed; the lower triangle is `1 − e_ij`
    /// so the antisymmetry identity holds exactly.
    pub fn from_scores(labels: Vec<String>, scores: &[Vec<f64>]) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(Error::Misaligned(
                "labels and score lists differ in count".into(),
            ));
        }
        let n = labels.len();
        let mut entries = vec![vec![0.5; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let e = win_rate(&scores[i], &scores[j])?;
                entries[i][j] = e;
                entries[j][i] = 1.0 - e;
            }
        }
        if n == 1 {
            // Still validate alignment of the lone condition.
            win_rate(&scores[0], &scores[0])?;
        }
        Ok(Self { labels, entries })
    }

    /// Mean of `entries[i][j]` over `i ∈ rows`, `j ∈ cols`.
    pub fn block_mean(&self, rows: &[usize], cols: &[usize]) -> f64 {
        let mut total = 0.0;
        for &i in rows {
            for &j in cols {
                total += self.entries[i][j];
            }
        }
        total / (rows.len() * cols.len()) as f64
    }

    /// `max |e_ij + e_ji − 1|` and `max |e_ii − 0.5|`.
    pub fn antisymmetry_defect(&self) -> f64 {
        let n = self.labels.len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            worst = worst.max((self.entries[i][i] - 0.5).abs());
            for j in 0..n {
                worst = worst.max((self.entries[i][j] + self.entries[j][i] - 1.0).abs());
            }
        }
        worst
    }

    /// CSV with a `row` column followed by one column per label.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["row".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.entries) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|x| x.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pearson correlation between implicit and explicit rewards.
pub fn reward_correlation(records: &[RewardRecord]) -> Result<f64> {
    let xs: Vec<f64> = records.iter().map(|r| r.implicit).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.explicit).collect();
    pearson(&xs, &ys)
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Misaligned(
            "coordinate lists differ in length".into(),
        ));
    }
    if xs.len() < 3 {
        return Err(Error::DegenerateSample(format!(
            "{} records, need at least 3",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateSample("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
