//! Confusion matrices and per-class classification metrics.

use std::fmt::Write as _;

use crate::dataset::{RegisterLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Rows are actual labels, columns predicted labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|c| self.counts[c][c]).sum()
    }

    /// Number of samples whose actual label is `c`.
    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    /// Number of samples predicted as `c`.
    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }

    pub fn add(&mut self, actual: RegisterLabel, predicted: RegisterLabel) {
        self.counts[actual.index()][predicted.index()] += 1;
    }
}

pub fn confusion(actual: &[RegisterLabel], predicted: &[RegisterLabel]) -> Result<ConfusionMatrix> {
    if actual.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "{} actual labels but {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::invalid("no labels to compare"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&a, &p) in actual.iter().zip(predicted) {
        cm.add(a, p);
    }
    Ok(cm)
}

/// [`confusion`] over raw label codes.
pub fn confusion_from_codes(actual: &[u8], predicted: &[u8]) -> Result<ConfusionMatrix> {
    let decode = |codes: &[u8]| -> Result<Vec<RegisterLabel>> {
        codes
            .iter()
            .map(|&c| RegisterLabel::from_code(c).map_err(|_| Error::invalid(format!("label code {c} out of range"))))
            .collect()
    };
    confusion(&decode(actual)?, &decode(predicted)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub support: u64,
    /// Set when the metric's denominator was zero and it was reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<T> {
    pub classes: [ClassMetrics<T>; NUM_CLASSES],
    pub accuracy: T,
    pub macro_precision: T,
    pub macro_recall: T,
    pub macro_f1: T,
    pub confusion: ConfusionMatrix,
}

fn ratio<T: Scalar>(num: u64, den: u64) -> (T, bool) {
    if den == 0 {
        (T::zero(), true)
    } else {
        (T::of(num as f64 / den as f64), false)
    }
}

pub fn metrics<T: Scalar>(cm: &ConfusionMatrix) -> Result<EvalReport<T>> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("confusion matrix is empty"));
    }
    let classes = std::array::from_fn(|c| {
        let tp = cm.counts[c][c];
        let (precision, precision_undefined) = ratio::<T>(tp, cm.col_sum(c));
        let (recall, recall_undefined) = ratio::<T>(tp, cm.row_sum(c));
        let f1 = if precision + recall > T::zero() {
            T::of(2.0) * precision * recall / (precision + recall)
        } else {
            T::zero()
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support: cm.row_sum(c),
            precision_undefined,
            recall_undefined,
        }
    });
    let k = T::of(NUM_CLASSES as f64);
    let mean = |f: fn(&ClassMetrics<T>) -> T| classes.iter().map(f).sum::<T>() / k;
    Ok(EvalReport {
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        accuracy: ratio::<T>(cm.trace(), total).0,
        classes,
        confusion: *cm,
    })
}

impl<T: Scalar> EvalReport<T> {
    /// Aligned table with one row per class and an accuracy row, followed by the
    /// confusion matrix. Metrics with a zero denominator carry a `*`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let cell = |v: T, undefined: bool| format!("{:.2}{}", v.as_f64(), if undefined { "*" } else { "" });
        let _ = writeln!(out, "{:<10}{:>10}{:>8}{:>10}{:>9}", "Class", "Precision", "Recall", "F1-score", "Support");
        for (label, m) in RegisterLabel::ALL.iter().zip(&self.classes) {
            let _ = writeln!(
                out,
                "{:<10}{:>10}{:>8}{:>10}{:>9}",
                label.name(),
                cell(m.precision, m.precision_undefined),
                cell(m.recall, m.recall_undefined),
                cell(m.f1, false),
                m.support
            );
        }
        let _ = writeln!(
            out,
            "{:<10}{:>28}{:>9}",
            "Accuracy",
            format!("{:.2}", self.accuracy.as_f64()),
            self.confusion.total()
        );
        if self.classes.iter().any(|m| m.precision_undefined || m.recall_undefined) {
            let _ = writeln!(out, "* zero denominator, reported as 0");
        }
        let _ = writeln!(out);
        let _ = write!(out, "{:<16}", "Actual\\Predicted");
        for l in RegisterLabel::ALL {
            let _ = write!(out, "{:>9}", l.name());
        }
        let _ = writeln!(out);
        for (label, row) in RegisterLabel::ALL.iter().zip(&self.confusion.counts) {
            let _ = write!(out, "{:<16}", label.name());
            for v in row {
                let _ = write!(out, "{v:>9}");
            }
            let _ = writeln!(out);
        }
        out
    }

    /// One `key=value` per line, full precision, for machine diffing.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "total={}", self.confusion.total());
        let _ = writeln!(out, "accuracy={:.6}", self.accuracy.as_f64());
        for (label, m) in RegisterLabel::ALL.iter().zip(&self.classes) {
            let n = label.name();
            let _ = writeln!(out, "{n}.precision={:.6}", m.precision.as_f64());
            let _ = writeln!(out, "{n}.recall={:.6}", m.recall.as_f64());
            let _ = writeln!(out, "{n}.f1={:.6}", m.f1.as_f64());
            let _ = writeln!(out, "{n}.support={}", m.support);
            let _ = writeln!(out, "{n}.precision_undefined={}", m.precision_undefined);
            let _ = writeln!(out, "{n}.recall_undefined={}", m.recall_undefined);
        }
        let _ = writeln!(out, "macro.precision={:.6}", self.macro_precision.as_f64());
        let _ = writeln!(out, "macro.recall={:.6}", self.macro_recall.as_f64());
        let _ = writeln!(out, "macro.f1={:.6}", self.macro_f1.as_f64());
        for (label, row) in RegisterLabel::ALL.iter().zip(&self.confusion.counts) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(out, "confusion.{}={}", label.name(), cells.join(","));
        }
        out
    }
}
