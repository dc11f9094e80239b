use serde::Serialize;

use super::AnalysisError;
use crate::corpus::{Document, Label, TypeSchema};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassScore {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold cells of this class.
    pub support: usize,
    pub predicted: usize,
    pub correct: usize,
}

/// Scores in percent. NO_RELATION is the negative class: it has no entry in
/// `per_class` and predicting a positive label on a gold-negative cell is a
/// false positive for that label.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub per_class: Vec<ClassScore>,
    /// Mean F1 over positive classes present in the gold or the predictions.
    pub macro_f1: f64,
    pub micro_f1: f64,
    /// Pooled precision and recall over positive decisions.
    pub precision: f64,
    pub recall: f64,
    /// Number of scored cells.
    pub cells: usize,
    /// `confusion[gold][pred]`, class 0 = NO_RELATION.
    pub confusion: Vec<Vec<usize>>,
    /// Nothing was scored (for example an empty subset).
    pub empty: bool,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

impl MetricReport {
    pub fn from_confusion(schema: &TypeSchema, confusion: Vec<Vec<usize>>) -> Self {
        let c = confusion.len();
        let mut per_class = Vec::with_capacity(c.saturating_sub(1));
        let (mut tp, mut pred, mut gold) = (0, 0, 0);
        let mut macro_sum = 0.0;
        let mut macro_n = 0;
        for k in 1..c {
            let correct = confusion[k][k];
            let support: usize = confusion[k].iter().sum();
            let predicted: usize = confusion.iter().map(|row| row[k]).sum();
            let p = pct(correct, predicted);
            let r = pct(correct, support);
            let f = f1(p, r);
            if support + predicted > 0 {
                macro_sum += f;
                macro_n += 1;
            }
            tp += correct;
            pred += predicted;
            gold += support;
            per_class.push(ClassScore {
                name: Label::from_class(k).name(schema).to_string(),
                precision: p,
                recall: r,
                f1: f,
                support,
                predicted,
                correct,
            });
        }
        let precision = pct(tp, pred);
        let recall = pct(tp, gold);
        let cells = confusion.iter().flatten().sum();
        MetricReport {
            per_class,
            macro_f1: if macro_n == 0 { 0.0 } else { macro_sum / macro_n as f64 },
            micro_f1: f1(precision, recall),
            precision,
            recall,
            cells,
            confusion,
            empty: cells == 0,
        }
    }
}

fn check_aligned(pred: &[Document], gold: &[Document]) -> Result<(), AnalysisError> {
    if pred.len() != gold.len() {
        return Err(AnalysisError::Misaligned(format!(
            "{} predicted documents vs {} gold documents",
            pred.len(),
            gold.len()
        )));
    }
    for (p, g) in pred.iter().zip(gold) {
        if p.doc_id != g.doc_id || p.m() != g.m() || p.gold.m() != g.gold.m() {
            return Err(AnalysisError::Misaligned(format!(
                "document {:?} ({} entities) vs {:?} ({} entities)",
                p.doc_id,
                p.m(),
                g.doc_id,
                g.m()
            )));
        }
    }
    Ok(())
}

/// Scores the cells accepted by `keep(doc_index, i, j)`.
fn score_cells(
    schema: &TypeSchema,
    pred: &[Document],
    gold: &[Document],
    include_diagonal: bool,
    keep: impl Fn(usize, usize, usize) -> bool,
) -> Result<MetricReport, AnalysisError> {
    check_aligned(pred, gold)?;
    let c = schema.num_classes();
    let mut confusion = vec![vec![0usize; c]; c];
    for (d, (p, g)) in pred.iter().zip(gold).enumerate() {
        let m = g.m();
        for i in 0..m {
            for j in 0..m {
                if (i == j && !include_diagonal) || !keep(d, i, j) {
                    continue;
                }
                let (gc, pc) = (g.gold.get(i, j).class(), p.gold.get(i, j).class());
                if gc >= c || pc >= c {
                    return Err(AnalysisError::Misaligned(format!("label outside the {c} schema classes")));
                }
                confusion[gc][pc] += 1;
            }
        }
    }
    Ok(MetricReport::from_confusion(schema, confusion))
}

/// Scores predicted relation matrices (the `gold` field of each predicted
/// document) against gold, cell by ordered off-diagonal cell.
pub fn score(
    schema: &TypeSchema,
    pred: &[Document],
    gold: &[Document],
    include_diagonal: bool,
) -> Result<MetricReport, AnalysisError> {
    score_cells(schema, pred, gold, include_diagonal, |_, _, _| true)
}

/// Scores only cells `(i, j)` where entity `i` or `j` takes part in at least
/// `min_relations` gold relations (positive cells in its row and column).
pub fn subset_f1(
    schema: &TypeSchema,
    pred: &[Document],
    gold: &[Document],
    min_relations: usize,
    include_diagonal: bool,
) -> Result<MetricReport, AnalysisError> {
    if min_relations == 0 {
        return Err(AnalysisError::Invalid("min_relations must be at least 1".into()));
    }
    let degrees: Vec<Vec<usize>> = gold
        .iter()
        .map(|g| (0..g.m()).map(|i| g.gold.degree(i)).collect())
        .collect();
    score_cells(schema, pred, gold, include_diagonal, |d, i, j| {
        degrees[d][i] >= min_relations || degrees[d][j] >= min_relations
    })
}
