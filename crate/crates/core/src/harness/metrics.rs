//! Confusion counts and the scores derived from them.

use serde::Serialize;

use crate::config::Task;

pub fn precision(tp: u64, fp: u64) -> f64 {
    if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    }
}

pub fn recall(tp: u64, fn_: u64) -> f64 {
    if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    }
}

/// `2PR/(P+R)`, zero when `P + R = 0`.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// `2tp / (2tp + fp + fn)`, equal to [`f1`] of the count-derived precision
/// and recall but rounded once.
pub fn f1_counts(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp == 0 {
        0.0
    } else {
        (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub name: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    /// Single-label: share of this class's samples predicted correctly.
    /// Multi-label: binary accuracy `(tp + tn) / total`.
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ClassMetrics {
    fn from_counts(name: String, task: Task, tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let total = tp + fp + fn_ + tn;
        let accuracy = match task {
            Task::SingleLabel => recall(tp, fn_),
            Task::MultiLabel if total == 0 => 0.0,
            Task::MultiLabel => (tp + tn) as f64 / total as f64,
        };
        let (p, r) = (precision(tp, fp), recall(tp, fn_));
        ClassMetrics {
            name,
            tp,
            fp,
            fn_,
            tn,
            accuracy,
            precision: p,
            recall: r,
            f1: f1_counts(tp, fp, fn_),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub task: Task,
    pub total: u64,
    /// Single-label: `trace(confusion) / total`. Multi-label: mean of the
    /// per-class binary accuracies.
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`, single-label only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confusion: Option<Vec<Vec<u64>>>,
}

impl MetricsReport {
    pub fn single_label(class_names: &[String], truth: &[usize], pred: &[usize]) -> Self {
        let n = class_names.len();
        let mut confusion = vec![vec![0u64; n]; n];
        for (&t, &p) in truth.iter().zip(pred) {
            confusion[t][p] += 1;
        }
        Self::from_confusion(class_names, confusion)
    }

    pub fn from_confusion(class_names: &[String], confusion: Vec<Vec<u64>>) -> Self {
        let n = class_names.len();
        let total: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..n).map(|i| confusion[i][i]).sum();
        let per_class: Vec<ClassMetrics> = (0..n)
            .map(|c| {
                let tp = confusion[c][c];
                let row: u64 = confusion[c].iter().sum();
                let col: u64 = confusion.iter().map(|r| r[c]).sum();
                let (fp, fn_) = (col - tp, row - tp);
                ClassMetrics::from_counts(
                    class_names[c].clone(),
                    Task::SingleLabel,
                    tp,
                    fp,
                    fn_,
                    total - tp - fp - fn_,
                )
            })
            .collect();
        MetricsReport {
            task: Task::SingleLabel,
            total,
            accuracy: if total == 0 { 0.0 } else { trace as f64 / total as f64 },
            macro_f1: per_class.iter().map(|c| c.f1).sum::<f64>() / n.max(1) as f64,
            per_class,
            confusion: Some(confusion),
        }
    }

    pub fn multi_label(class_names: &[String], truth: &[Vec<bool>], pred: &[Vec<bool>]) -> Self {
        let n = class_names.len();
        let mut counts = vec![[0u64; 4]; n];
        for (t, p) in truth.iter().zip(pred) {
            for c in 0..n {
                let slot = match (t[c], p[c]) {
                    (true, true) => 0,
                    (false, true) => 1,
                    (true, false) => 2,
                    (false, false) => 3,
                };
                counts[c][slot] += 1;
            }
        }
        let per_class: Vec<ClassMetrics> = counts
            .iter()
            .zip(class_names)
            .map(|(k, name)| ClassMetrics::from_counts(name.clone(), Task::MultiLabel, k[0], k[1], k[2], k[3]))
            .collect();
        MetricsReport {
            task: Task::MultiLabel,
            total: truth.len() as u64,
            accuracy: per_class.iter().map(|c| c.accuracy).sum::<f64>() / n.max(1) as f64,
            macro_f1: per_class.iter().map(|c| c.f1).sum::<f64>() / n.max(1) as f64,
            per_class,
            confusion: None,
        }
    }

    /// Recomputes every scalar from the emitted counts and compares exactly.
    pub fn identities_hold(&self) -> bool {
        let rebuilt = match (&self.task, &self.confusion) {
            (Task::SingleLabel, Some(conf)) => {
                let names: Vec<String> = self.per_class.iter().map(|c| c.name.clone()).collect();
                Self::from_confusion(&names, conf.clone())
            }
            (Task::MultiLabel, None) => {
                let per_class: Vec<ClassMetrics> = self
                    .per_class
                    .iter()
                    .map(|c| ClassMetrics::from_counts(c.name.clone(), Task::MultiLabel, c.tp, c.fp, c.fn_, c.tn))
                    .collect();
                let n = per_class.len().max(1) as f64;
                MetricsReport {
                    task: Task::MultiLabel,
                    total: self.total,
                    accuracy: per_class.iter().map(|c| c.accuracy).sum::<f64>() / n,
                    macro_f1: per_class.iter().map(|c| c.f1).sum::<f64>() / n,
                    per_class,
                    confusion: None,
                }
            }
            _ => return false,
        };
        rebuilt == *self
    }

    /// Plain-text summary, one line per class.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "samples {}  accuracy {:.4}  macro-F1 {:.4}\n",
            self.total, self.accuracy, self.macro_f1
        );
        for c in &self.per_class {
            s.push_str(&format!(
                "  {:<12} acc {:.4}  P {:.4}  R {:.4}  F1 {:.4}  (tp {} fp {} fn {} tn {})\n",
                c.name, c.accuracy, c.precision, c.recall, c.f1, c.tp, c.fp, c.fn_, c.tn
            ));
        }
        s
    }
}
