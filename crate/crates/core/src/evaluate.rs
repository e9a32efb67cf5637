//! Confusion-matrix metrics, ROC curves and the model comparison table.
//!
//! A record is predicted positive (transplanted) iff its score is `>=` the
//! threshold.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::Outcome;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn check_lengths(scores: &[f64], labels: &[Outcome]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

pub fn confusion(scores: &[f64], labels: &[Outcome], threshold: f64) -> Result<ConfusionMatrix> {
    check_lengths(scores, labels)?;
    let mut cm = ConfusionMatrix::default();
    for (&s, label) in scores.iter().zip(labels) {
        match (s >= threshold, label.is_positive()) {
            (true, true) => cm.tp += 1,
            (false, false) => cm.tn += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Accuracy, sensitivity and specificity. A rate whose denominator is zero
/// is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl Metrics {
    /// `(sensitivity + specificity) / 2`.
    pub fn balanced_accuracy(&self) -> Option<f64> {
        Some((self.sensitivity? + self.specificity?) / 2.0)
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let accuracy = ratio(cm.tp + cm.tn, cm.total())
        .ok_or_else(|| Error::Undefined("accuracy of an empty confusion matrix".into()))?;
    Ok(Metrics {
        accuracy,
        sensitivity: ratio(cm.tp, cm.tp + cm.fn_),
        specificity: ratio(cm.tn, cm.tn + cm.fp),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// Staircase from (0, 0) to (1, 1); one step per distinct score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
}

pub fn roc_curve(scores: &[f64], labels: &[Outcome]) -> Result<RocCurve> {
    check_lengths(scores, labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidConfig("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|l| l.is_positive()).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]].is_positive() {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            k += 1;
        }
        points.push(RocPoint {
            fpr: fp / neg,
            tpr: tp / pos,
        });
    }
    Ok(RocCurve { points })
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub model: String,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    /// Integrated ROC area; `None` if the evaluation set holds one class.
    pub auc_roc: Option<f64>,
    pub balanced_accuracy: Option<f64>,
}

impl EvaluationRow {
    pub fn from_confusion(model: &str, cm: ConfusionMatrix, auc_roc: Option<f64>) -> Result<Self> {
        let m = metrics(&cm)?;
        Ok(EvaluationRow {
            model: model.to_string(),
            confusion: cm,
            accuracy: m.accuracy,
            sensitivity: m.sensitivity,
            specificity: m.specificity,
            auc_roc,
            balanced_accuracy: m.balanced_accuracy(),
        })
    }
}

/// Thresholded metrics plus ROC for one model's scores.
pub fn evaluate_scores(
    model: &str,
    scores: &[f64],
    labels: &[Outcome],
    threshold: f64,
) -> Result<(EvaluationRow, Option<RocCurve>)> {
    let cm = confusion(scores, labels, threshold)?;
    let curve = match roc_curve(scores, labels) {
        Ok(c) => Some(c),
        Err(Error::SingleClass) => None,
        Err(e) => return Err(e),
    };
    let row = EvaluationRow::from_confusion(model, cm, curve.as_ref().map(auc))?;
    Ok((row, curve))
}

fn cell(v: Option<f64>, decimals: usize) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.decimals$}"))
}

const HEADERS: [&str; 6] = [
    "Model",
    "Accuracy (%)",
    "Sensitivity",
    "Specificity",
    "AUC (ROC)",
    "Balanced Acc.",
];

/// Fixed-width comparison table. Accuracy is a percentage with 2 decimals,
/// the rates have 4; undefined cells print `n/a`.
pub fn render_report(rows: &[EvaluationRow]) -> String {
    let model_width = rows
        .iter()
        .map(|r| r.model.len())
        .chain(std::iter::once(HEADERS[0].len()))
        .max()
        .unwrap_or(0);
    let num_width = HEADERS[1..].iter().map(|h| h.len()).max().unwrap_or(0);
    let mut out = String::new();
    let mut line = format!("{:<model_width$}", HEADERS[0]);
    for h in &HEADERS[1..] {
        let _ = write!(line, "  {h:>num_width$}");
    }
    out.push_str(&line);
    out.push('\n');
    out.push_str(&"-".repeat(line.len()));
    out.push('\n');
    for r in rows {
        let cells = [
            cell(Some(r.accuracy * 100.0), 2),
            cell(r.sensitivity, 4),
            cell(r.specificity, 4),
            cell(r.auc_roc, 4),
            cell(r.balanced_accuracy, 4),
        ];
        let mut line = format!("{:<model_width$}", r.model);
        for c in &cells {
            let _ = write!(line, "  {c:>num_width$}");
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per model with counts and full-precision rates; undefined cells are empty.
pub fn metrics_csv(rows: &[EvaluationRow]) -> String {
    let mut out = String::from(
        "model,tp,tn,fp,fn,accuracy,sensitivity,specificity,auc_roc,balanced_accuracy\n",
    );
    for r in rows {
        let c = r.confusion;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.model,
            c.tp,
            c.tn,
            c.fp,
            c.fn_,
            r.accuracy,
            opt(r.sensitivity),
            opt(r.specificity),
            opt(r.auc_roc),
            opt(r.balanced_accuracy)
        );
    }
    out
}

pub fn roc_csv(model: &str, curve: &RocCurve) -> String {
    let mut out = String::from("model,fpr,tpr\n");
    for p in &curve.points {
        let _ = writeln!(out, "{model},{},{}", p.fpr, p.tpr);
    }
    out
}
