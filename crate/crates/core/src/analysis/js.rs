use serde::Serialize;

use super::cond::CondMatrix;
use super::AnalysisError;

/// Jensen-Shannon divergence in bits between two distributions.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let kl = |a: &[f64], m: &[f64]| -> f64 {
        a.iter()
            .zip(m)
            .filter(|(x, _)| **x > 0.0)
            .map(|(x, y)| x * (x / y).log2())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl(p, &m) + 0.5 * kl(q, &m)).max(0.0)
}

/// Square root of the base-2 JS divergence; lies in `[0, 1]`.
pub fn js_row_distance(p: &[f64], q: &[f64]) -> f64 {
    js_divergence(p, q).sqrt().min(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JsReport {
    /// Mean distance over the compared rows (0 when none).
    pub mean: f64,
    /// `(row label, distance)` for each compared row.
    pub rows: Vec<(String, f64)>,
    /// Rows empty on one side only, left out of the mean.
    pub skipped: Vec<String>,
}

/// Average JS distance between corresponding normalized rows of two
/// conditional matrices, over rows observed in both.
pub fn js_distance(pred: &CondMatrix, gold: &CondMatrix) -> Result<JsReport, AnalysisError> {
    if pred.labels != gold.labels {
        return Err(AnalysisError::Misaligned("conditional matrices index different units".into()));
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for a in 0..pred.len() {
        match (pred.normalized_row(a), gold.normalized_row(a)) {
            (Some(p), Some(q)) => rows.push((pred.labels[a].clone(), js_row_distance(&p, &q))),
            (None, None) => {}
            _ => {
                log::warn!("row {} observed on one side only; excluded", pred.labels[a]);
                skipped.push(pred.labels[a].clone());
            }
        }
    }
    let mean = if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(|r| r.1).sum::<f64>() / rows.len() as f64
    };
    Ok(JsReport { mean, rows, skipped })
}
