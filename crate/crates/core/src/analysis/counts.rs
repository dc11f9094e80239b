use serde::Serialize;

use super::AnalysisError;
use crate::corpus::Corpus;

/// Pearson correlations between per-document relation counts. `None` marks
/// pairs involving a type whose count never varies.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CountCorrelationMatrix {
    pub labels: Vec<String>,
    pub r: Vec<Vec<Option<f64>>>,
}

/// Positive cells of each relation type, one row per document.
pub fn relation_counts(corpus: &Corpus) -> Vec<Vec<usize>> {
    corpus
        .documents
        .iter()
        .map(|d| {
            let mut c = vec![0; corpus.schema.num_relations()];
            for (_, _, r) in d.gold.positives() {
                c[r.index()] += 1;
            }
            c
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn count_correlation(corpus: &Corpus) -> Result<CountCorrelationMatrix, AnalysisError> {
    if corpus.len() < 2 {
        return Err(AnalysisError::Invalid("count correlation needs at least 2 documents".into()));
    }
    let counts = relation_counts(corpus);
    let k = corpus.schema.num_relations();
    let cols: Vec<Vec<f64>> = (0..k)
        .map(|r| counts.iter().map(|c| c[r] as f64).collect())
        .collect();
    let r = (0..k)
        .map(|a| {
            (0..k)
                .map(|b| {
                    let v = pearson(&cols[a], &cols[b]);
                    if a == b {
                        v.map(|_| 1.0)
                    } else {
                        v
                    }
                })
                .collect()
        })
        .collect();
    Ok(CountCorrelationMatrix {
        labels: corpus.schema.relations().iter().map(|r| r.name.clone()).collect(),
        r,
    })
}
