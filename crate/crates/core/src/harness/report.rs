use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::cv::ModelKind;
use super::metrics::Metrics;
use super::train::{Prediction, TrainCurve, TrainPolicy};
use crate::telemetry::ExperimentPair;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub config_hash: String,
    pub pair: ExperimentPair,
    pub pipeline: String,
    pub model: ModelKind,
    pub channels: String,
    pub window: Option<String>,
    pub task_filter: String,
    pub folds: usize,
    pub normalize: bool,
    pub policy: TrainPolicy,
    pub code_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub val_fold: usize,
    pub train_subjects: usize,
    pub val_subjects: usize,
    pub test_subjects: Vec<String>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub metrics: Metrics,
    pub curve: TrainCurve,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: RunMetadata,
    pub model_description: String,
    pub n_subjects: usize,
    pub n_samples: usize,
    /// From confusion counts summed over folds; AUC over all test scores.
    pub pooled: Metrics,
    /// Mean of per-fold values where defined.
    pub fold_mean: Metrics,
    pub folds: Vec<FoldReport>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub kind: String,
    pub rows: Vec<SweepRow>,
    /// Row with the highest pooled F1.
    pub best_by_f1: Option<usize>,
}

impl SweepReport {
    pub fn new(kind: &str, rows: Vec<SweepRow>) -> Self {
        let best_by_f1 = rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.report.pooled.f1.map(|f| (i, f)))
            .fold(None, |best: Option<(usize, f64)>, (i, f)| match best {
                Some((_, bf)) if bf >= f => best,
                _ => Some((i, f)),
            })
            .map(|(i, _)| i);
        Self {
            kind: kind.to_string(),
            rows,
            best_by_f1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn table(&self) -> String {
        let rows: Vec<(String, &Metrics)> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mark = if Some(i) == self.best_by_f1 { " *" } else { "" };
                (format!("{}{mark}", r.label), &r.report.pooled)
            })
            .collect();
        format_table(&rows)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"))
}

/// Aligned text table of pooled metrics, two decimals, `-` for undefined.
pub fn format_table(rows: &[(String, &Metrics)]) -> String {
    let header = ["", "Accuracy", "F1", "AUC", "Precision", "Recall"];
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|(label, m)| {
            [
                label.clone(),
                cell(m.accuracy),
                cell(m.f1),
                cell(m.auc),
                cell(m.precision),
                cell(m.recall),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for r in &body {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            let pad = w - c.chars().count();
            if i == 0 {
                out.push_str(c);
                out.push_str(&" ".repeat(pad));
            } else {
                out.push_str("  ");
                out.push_str(&" ".repeat(pad));
                out.push_str(c);
            }
        }
        out.push('\n');
    };
    line(&mut out, &header.map(String::from));
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    let _ = writeln!(out, "{}", "-".repeat(total));
    for r in &body {
        line(&mut out, r);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::metrics::Confusion;

    #[test]
    fn table_alignment_and_missing_values() {
        let a = Metrics::from_confusion(Confusion { tp: 11, fp: 4, tn: 32, fn_: 0 }, Some(86.2069));
        let b = Metrics::from_confusion(Confusion { tp: 0, fp: 0, tn: 3, fn_: 2 }, None);
        let t = format_table(&[("AD vs CTL".into(), &a), ("x".into(), &b)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines.iter().all(|l| l.chars().count() == lines[0].chars().count()));
        assert!(lines[2].contains("73.33") && lines[2].contains("100.00"));
        assert!(lines[2].contains("84.62"));
        assert!(lines[3].contains(" -"));
    }
}
