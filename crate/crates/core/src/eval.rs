//! Confusion matrices, threshold metrics and ROC analysis.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ImageRecord, LabelSet};
use crate::error::{EvalError, TrainError};
use crate::network::{check_threshold, forward, ModelWeights};

#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }

    pub fn healthy(&self) -> u64 {
        self.tn + self.fp
    }

    pub fn diseased(&self) -> u64 {
        self.fn_ + self.tp
    }
}

/// Threshold metrics. `None` marks a ratio whose denominator is zero.
#[derive(Clone, Copy, PartialEq, Debug, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Metrics {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        precision,
        recall,
        specificity: ratio(cm.tn, cm.tn + cm.fp),
        f1,
    }
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(i) = labels.iter().position(|&y| y > 1) {
        return Err(EvalError::NonBinaryLabel(labels[i], i));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    Ok(())
}

/// Counts at `threshold`; a score at or above it is called diseased.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionMatrix, EvalError> {
    check_inputs(scores, labels)?;
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
            (false, false) => cm.tn += 1,
        }
    }
    Ok(cm)
}

/// `(false-positive rate, true-positive rate)` points from (0,0) to (1,1).
pub type RocCurve = Vec<[f64; 2]>;

/// ROC curve over every distinct score and its trapezoidal area.
///
/// Tied scores move the curve diagonally in one step. The area is
/// accumulated in integers and divided once, so it equals the pairwise
/// statistic `(#{pos > neg} + ½·#{pos = neg}) / (P·N)` exactly.
pub fn roc_auroc(scores: &[f64], labels: &[u8]) -> Result<(RocCurve, f64), EvalError> {
    check_inputs(scores, labels)?;
    let positives = labels.iter().filter(|&&y| y == 1).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass { positives: positives as usize, negatives: negatives as usize });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (p, n) = (positives as f64, negatives as f64);
    let mut curve = vec![[0.0, 0.0]];
    let (mut tp, mut fp) = (0u64, 0u64);
    // twice the area, in units of 1/(P·N)
    let mut area2: u128 = 0;
    let mut k = 0;
    while k < order.len() {
        let score = scores[order[k]];
        let (tp0, fp0) = (tp, fp);
        while k < order.len() && scores[order[k]] == score {
            if labels[order[k]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        area2 += u128::from(fp - fp0) * u128::from(tp + tp0);
        curve.push([fp as f64 / n, tp as f64 / p]);
    }
    let auroc = area2 as f64 / (2 * u128::from(positives) * u128::from(negatives)) as f64;
    Ok((curve, auroc))
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ReportMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    /// `None` when only one class is present.
    pub auroc: Option<f64>,
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: u64,
    pub n_healthy: u64,
    pub n_diseased: u64,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub metrics: ReportMetrics,
    /// Empty when only one class is present.
    pub roc: RocCurve,
}

impl EvalReport {
    pub fn to_pretty(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"));
        let c = &self.confusion;
        let m = &self.metrics;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "samples {} (healthy {}, diseased {}), threshold {}",
            self.n, self.n_healthy, self.n_diseased, self.threshold
        );
        let _ = writeln!(s, "                 predicted healthy  predicted diseased");
        let _ = writeln!(s, "actual healthy   {:>17}  {:>18}", c.tn, c.fp);
        let _ = writeln!(s, "actual diseased  {:>17}  {:>18}", c.fn_, c.tp);
        for (name, v) in [
            ("accuracy", m.accuracy),
            ("precision", m.precision),
            ("recall", m.recall),
            ("specificity", m.specificity),
            ("f1", m.f1),
            ("auroc", m.auroc),
        ] {
            let _ = writeln!(s, "{name:<12} {}", fmt(v));
        }
        s
    }
}

/// Full report for precomputed scores.
pub fn evaluate_scores(scores: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport, EvalError> {
    let cm = confusion(scores, labels, threshold)?;
    let m = metrics(&cm);
    let (roc, auroc) = match roc_auroc(scores, labels) {
        Ok((roc, auroc)) => (roc, Some(auroc)),
        Err(EvalError::SingleClass { .. }) => (Vec::new(), None),
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        n: cm.total(),
        n_healthy: cm.healthy(),
        n_diseased: cm.diseased(),
        threshold,
        confusion: cm,
        metrics: ReportMetrics {
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            specificity: m.specificity,
            f1: m.f1,
            auroc,
        },
        roc,
    })
}

/// Model scores for `records`, in order.
pub fn score_records(weights: &ModelWeights, records: &[ImageRecord]) -> Result<Vec<f64>, TrainError> {
    records.par_iter().map(|r| forward(weights, &r.pixels).map(f64::from).map_err(TrainError::from)).collect()
}

/// Scores every record without augmentation and reports at `threshold`.
/// Also returns the scores, in record order.
pub fn evaluate_model(
    weights: &ModelWeights,
    records: &[ImageRecord],
    threshold: f64,
) -> Result<(EvalReport, Vec<f64>), TrainError> {
    check_threshold(threshold)?;
    let scores = score_records(weights, records)?;
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let report = evaluate_scores(&scores, &labels, threshold)?;
    Ok((report, scores))
}

#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct DiseaseCount {
    pub code: String,
    pub count: u64,
}

/// Positive flags per disease column, most frequent first; ties keep
/// column order.
pub fn dataset_stats(labels: &LabelSet) -> Vec<DiseaseCount> {
    let mut counts: Vec<DiseaseCount> = labels
        .disease_codes
        .iter()
        .enumerate()
        .map(|(k, code)| DiseaseCount {
            code: code.clone(),
            count: labels.rows.iter().filter(|r| r.flags.get(k) == Some(&1)).count() as u64,
        })
        .collect();
    counts.sort_by_key(|c| std::cmp::Reverse(c.count));
    counts
}
