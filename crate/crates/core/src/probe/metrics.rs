use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Binary classification summary; class 1 is the positive class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub f1: f64,
    pub auroc: f64,
    pub true_positive: usize,
    pub false_positive: usize,
    pub true_negative: usize,
    pub false_negative: usize,
    pub seed: u64,
}

impl EvalReport {
    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.true_negative + self.false_negative
    }

    pub fn error_rate(&self) -> f64 {
        1.0 - self.accuracy
    }

    /// The three headline lines printed by the CLI.
    pub fn lines(&self) -> [String; 3] {
        [
            format!("accuracy {:.4}", self.accuracy),
            format!("f1 {:.4}", self.f1),
            format!("auroc {:.4}", self.auroc),
        ]
    }

    pub const CSV_HEADER: &'static str = "seed,accuracy,f1,auroc,tp,fp,tn,fn";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.seed,
            self.accuracy,
            self.f1,
            self.auroc,
            self.true_positive,
            self.false_positive,
            self.true_negative,
            self.false_negative
        )
    }
}

/// Area under the ROC curve as the Mann–Whitney statistic, ties at midranks.
pub fn auroc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(contract(format!(
            "auroc needs equal, non-empty inputs ({} scores, {} labels)",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(contract("auroc received a NaN score"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(contract("auroc is undefined with a single class"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64 * midrank;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Accuracy and positive-class F1 at threshold 0.5, plus AUROC.
pub fn compute_metrics(scores: &[f64], labels: &[usize], seed: u64) -> Result<EvalReport> {
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(contract(format!("label {l} is not binary")));
    }
    let auroc = auroc(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= 0.5, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(EvalReport {
        accuracy: (tp + tn) as f64 / scores.len() as f64,
        f1,
        auroc,
        true_positive: tp,
        false_positive: fp,
        true_negative: tn,
        false_negative: fn_,
        seed,
    })
}

/// Mean and sample standard deviation of each metric over repeated runs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricSummary {
    pub runs: usize,
    pub accuracy: (f64, f64),
    pub f1: (f64, f64),
    pub auroc: (f64, f64),
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl MetricSummary {
    pub fn from_reports(reports: &[EvalReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(contract("no runs to summarize"));
        }
        Ok(Self {
            runs: reports.len(),
            accuracy: mean_std(reports.iter().map(|r| r.accuracy)),
            f1: mean_std(reports.iter().map(|r| r.f1)),
            auroc: mean_std(reports.iter().map(|r| r.auroc)),
        })
    }

    pub fn lines(&self) -> [String; 3] {
        let f = |name: &str, (m, s): (f64, f64)| format!("{name} {:.2} ± {:.2} (n={})", 100.0 * m, 100.0 * s, self.runs);
        [f("accuracy", self.accuracy), f("f1", self.f1), f("auroc", self.auroc)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_counted_auroc() {
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    }

    #[test]
    fn ties_use_midranks() {
        assert_eq!(auroc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.2, 0.5, 0.5, 0.9], &[0, 1, 0, 1]).unwrap(), 0.875);
    }

    #[test]
    fn perfect_and_degenerate_predictors() {
        let r = compute_metrics(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], 0).unwrap();
        assert_eq!((r.accuracy, r.f1, r.auroc), (1.0, 1.0, 1.0));

        let r = compute_metrics(&[0.1, 0.2, 0.3, 0.4], &[0, 1, 0, 1], 0).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.f1, 0.0);
        assert_eq!(r.total(), 4);
        assert_eq!(r.accuracy + r.error_rate(), 1.0);
    }

    #[test]
    fn errors_on_bad_input() {
        assert!(compute_metrics(&[], &[], 0).is_err());
        assert!(compute_metrics(&[0.3], &[1], 0).is_err());
        assert!(compute_metrics(&[0.3, 0.4], &[1], 0).is_err());
        assert!(compute_metrics(&[0.3, 0.4], &[2, 0], 0).is_err());
    }

    #[test]
    fn summary_mean_and_std() {
        let mk = |a| EvalReport {
            accuracy: a,
            f1: a,
            auroc: a,
            true_positive: 0,
            false_positive: 0,
            true_negative: 0,
            false_negative: 0,
            seed: 0,
        };
        let s = MetricSummary::from_reports(&[mk(0.8), mk(0.9), mk(1.0)]).unwrap();
        assert!((s.accuracy.0 - 0.9).abs() < 1e-12);
        assert!((s.accuracy.1 - 0.1).abs() < 1e-12);
        assert!(s.lines()[0].starts_with("accuracy 90.00 ± 10.00"));
    }
}
