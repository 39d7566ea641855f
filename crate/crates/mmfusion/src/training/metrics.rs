//! Macro-averaged precision/recall/F1 and the confusion matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold occurrences of this class.
    pub support: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub k: usize,
    pub n: usize,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// `confusion[gold][pred]`.
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    /// Attach label names (in class-index order) to the per-class rows.
    pub fn with_labels(mut self, labels: &[String]) -> MetricsReport {
        for (c, l) in self.per_class.iter_mut().zip(labels) {
            c.label = l.clone();
        }
        self
    }

    /// Percentages with two decimals, the format used by the reports.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "macro precision {}  macro recall {}  macro f1 {}  accuracy {}  (n={})\n",
            pct(self.macro_precision),
            pct(self.macro_recall),
            pct(self.macro_f1),
            pct(self.accuracy),
            self.n
        ));
        for c in &self.per_class {
            out.push_str(&format!(
                "  {:<16} P {:>6}  R {:>6}  F1 {:>6}  support {}\n",
                c.label,
                pct(c.precision),
                pct(c.recall),
                pct(c.f1),
                c.support
            ));
        }
        out
    }

    pub fn confusion_to_text(&self) -> String {
        let mut out = String::from("gold\\pred");
        for j in 0..self.k {
            out.push_str(&format!(" {j:>6}"));
        }
        out.push('\n');
        for (i, row) in self.confusion.iter().enumerate() {
            out.push_str(&format!("{i:>9}"));
            for v in row {
                out.push_str(&format!(" {v:>6}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Per-class precision/recall/F1 with zero denominators yielding zero,
/// macro values as unweighted means over all `k` classes, and exact-match
/// accuracy.
#[allow(clippy::needless_range_loop)]
pub fn macro_metrics(predictions: &[usize], golds: &[usize], k: usize) -> Result<MetricsReport> {
    if predictions.len() != golds.len() {
        return Err(Error::Contract(format!(
            "{} predictions vs {} golds",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Contract("macro_metrics on empty inputs".into()));
    }
    if let Some(&bad) = predictions.iter().chain(golds).find(|&&i| i >= k) {
        return Err(Error::Label(format!(
            "class index {bad} out of range for k={k}"
        )));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &g) in predictions.iter().zip(golds) {
        confusion[g][p] += 1;
    }
    let mut per_class = Vec::with_capacity(k);
    let mut correct = 0usize;
    for c in 0..k {
        let tp = confusion[c][c];
        correct += tp;
        let fp: usize = (0..k).filter(|&g| g != c).map(|g| confusion[g][c]).sum();
        let fn_: usize = (0..k).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            label: c.to_string(),
            precision,
            recall,
            f1,
            support: confusion[c].iter().sum(),
        });
    }
    let n = predictions.len();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
    Ok(MetricsReport {
        k,
        n,
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        accuracy: correct as f64 / n as f64,
        per_class,
        confusion,
    })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}
