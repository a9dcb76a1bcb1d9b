use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::CnnError;

/// Confusion-matrix metrics. Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub confusion: Vec<Vec<usize>>,
    /// Row-normalised confusion. Rows without samples stay all zero.
    pub normalized_confusion: Vec<Vec<f64>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_f1: f64,
    pub accuracy: f64,
}

/// `2 tp / (2 tp + fp + fn)`, zero when there is nothing to score.
pub fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    let d = 2 * tp + fp + fn_;
    if d == 0 {
        0.0
    } else {
        2.0 * tp as f64 / d as f64
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let k = confusion.len();
        let total: usize = confusion.iter().flatten().sum();
        let normalized_confusion = confusion
            .iter()
            .map(|row| {
                let s: usize = row.iter().sum();
                row.iter().map(|&c| if s == 0 { 0.0 } else { c as f64 / s as f64 }).collect()
            })
            .collect();
        let (mut precision, mut recall, mut f1) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        for c in 0..k {
            let tp = confusion[c][c];
            let fp: usize = (0..k).filter(|&r| r != c).map(|r| confusion[r][c]).sum();
            let fn_: usize = (0..k).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
            precision[c] = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            recall[c] = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            f1[c] = f1_from_counts(tp, fp, fn_);
        }
        let macro_f1 = if k == 0 { 0.0 } else { f1.iter().sum::<f64>() / k as f64 };
        let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
        let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        Self { confusion, normalized_confusion, precision, recall, f1, macro_f1, accuracy }
    }

    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self, CnnError> {
        if truth.is_empty() {
            return Err(CnnError::EmptyDataset);
        }
        if truth.len() != predicted.len() {
            return Err(CnnError::Shape(format!("{} labels for {} predictions", truth.len(), predicted.len())));
        }
        let mut confusion = vec![vec![0; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(CnnError::LabelOutOfRange { label: t.max(p), classes });
            }
            confusion[t][p] += 1;
        }
        Ok(Self::from_confusion(confusion))
    }

    /// F1 of `positive` against all other classes.
    pub fn binary_f1(&self, positive: usize) -> f64 {
        self.f1[positive]
    }
}

/// Which F1 a repetition experiment reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Kind {
    Macro,
    /// One-vs-rest F1 of the given class index.
    Binary(usize),
}

impl F1Kind {
    pub fn of(self, m: &Metrics) -> f64 {
        match self {
            F1Kind::Macro => m.macro_f1,
            F1Kind::Binary(c) => m.binary_f1(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionSummary {
    pub repetitions: usize,
    /// Mean row-normalised confusion.
    pub mean_confusion: Vec<Vec<f64>>,
    /// 95% Student-t half-widths per cell.
    pub ci95_confusion: Vec<Vec<f64>>,
    pub mean_f1: f64,
    pub ci95_f1: f64,
    pub f1_values: Vec<f64>,
}

/// Mean and 95% half-width `t(0.975, n-1) * s / sqrt(n)` with the sample
/// standard deviation `s`. Needs at least two values.
pub fn mean_ci95(values: &[f64]) -> Result<(f64, f64), CnnError> {
    let n = values.len();
    if n < 2 {
        return Err(CnnError::Repetitions(n));
    }
    // Shifted by the first value so identical inputs give exactly zero spread.
    let mean = values[0] + values.iter().map(|v| v - values[0]).sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive dof").inverse_cdf(0.975);
    Ok((mean, t * var.sqrt() / (n as f64).sqrt()))
}

pub fn summarize_repetitions(runs: &[Metrics], f1: F1Kind) -> Result<RepetitionSummary, CnnError> {
    let n = runs.len();
    if n < 2 {
        return Err(CnnError::Repetitions(n));
    }
    let k = runs[0].confusion.len();
    if runs.iter().any(|m| m.confusion.len() != k) {
        return Err(CnnError::Shape("repetitions disagree on the class count".into()));
    }
    let mut mean_confusion = vec![vec![0.0; k]; k];
    let mut ci95_confusion = vec![vec![0.0; k]; k];
    for r in 0..k {
        for c in 0..k {
            let cell: Vec<f64> = runs.iter().map(|m| m.normalized_confusion[r][c]).collect();
            let (m, h) = mean_ci95(&cell)?;
            mean_confusion[r][c] = m;
            ci95_confusion[r][c] = h;
        }
    }
    let f1_values: Vec<f64> = runs.iter().map(|m| f1.of(m)).collect();
    let (mean_f1, ci95_f1) = mean_ci95(&f1_values)?;
    Ok(RepetitionSummary { repetitions: n, mean_confusion, ci95_confusion, mean_f1, ci95_f1, f1_values })
}
