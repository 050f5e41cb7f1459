use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Macro-averaged precision, recall and F1 with the confusion matrix
/// (`confusion[label][prediction]`). Micro-averaged precision and recall
/// both equal `accuracy` for single-label classification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
}

/// Precision, recall and F1 per class averaged with equal class weight.
/// A class never predicted has precision 0, a class absent from the labels
/// has recall 0, and F1 is 0 when both are 0.
pub fn classify_metrics(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<ClassificationReport> {
    if predictions.is_empty() {
        return Err(Error::data("no predictions to score"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::data(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let classes = predictions
        .iter()
        .chain(labels)
        .map(|&c| c + 1)
        .max()
        .unwrap_or(0)
        .max(classes);
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        confusion[l][p] += 1;
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let mut precision = Vec::with_capacity(classes);
    let mut recall = Vec::with_capacity(classes);
    let mut f1 = Vec::with_capacity(classes);
    for c in 0..classes {
        let tp = confusion[c][c];
        let predicted: usize = confusion.iter().map(|row| row[c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        precision.push(p);
        recall.push(r);
        f1.push(if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    Ok(ClassificationReport {
        precision: mean(&precision),
        recall: mean(&recall),
        f1: mean(&f1),
        accuracy: ratio(correct, predictions.len()),
        per_class_precision: precision,
        per_class_recall: recall,
        per_class_f1: f1,
        confusion,
    })
}

/// Mean absolute error.
pub fn regression_mae(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::data("no predictions to score"));
    }
    if predictions.len() != targets.len() {
        return Err(Error::data(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / predictions.len() as f64)
}

/// `metric,value` rows.
pub fn metrics_csv(rows: &[(String, f64)]) -> String {
    let mut out = String::from("metric,value\n");
    for (name, value) in rows {
        let _ = writeln!(out, "{name},{value}");
    }
    out
}

impl ClassificationReport {
    pub fn rows(&self) -> Vec<(String, f64)> {
        let mut rows = vec![
            ("accuracy".to_string(), self.accuracy),
            ("precision".to_string(), self.precision),
            ("recall".to_string(), self.recall),
            ("f1".to_string(), self.f1),
        ];
        for (l, row) in self.confusion.iter().enumerate() {
            for (p, &n) in row.iter().enumerate() {
                rows.push((format!("confusion_{l}_{p}"), n as f64));
            }
        }
        rows
    }
}
