use super::train::{par_map, train, TrainLog};
use super::{Model, ModelConfig, ModelError, Task};
use crate::analysis::{score, MetricReport};
use crate::corpus::{Corpus, Document, RelationMatrix};
use crate::encoder::EmbeddingFile;
use crate::numerics::Scalar;

/// Element-wise mean of member probability tables of equal length.
pub fn average_probabilities<T: Scalar>(members: &[Vec<T>]) -> Vec<T> {
    let Some(first) = members.first() else {
        return Vec::new();
    };
    let n = T::lit(members.len() as f64);
    let mut out = first.clone();
    for m in &members[1..] {
        assert_eq!(m.len(), out.len(), "member probability tables differ in size");
        out.iter_mut().zip(m).for_each(|(a, &b)| *a += b);
    }
    out.into_iter().map(|v| v / n).collect()
}

/// Models whose class probabilities are averaged before the argmax.
#[derive(Clone, Debug)]
pub struct Ensemble<T> {
    members: Vec<Model<T>>,
}

impl<T: Scalar> Ensemble<T> {
    pub fn new(members: Vec<Model<T>>) -> Result<Self, ModelError> {
        let Some(first) = members.first() else {
            return Err(ModelError::Mismatch("an ensemble needs at least one member".into()));
        };
        for (i, m) in members.iter().enumerate().skip(1) {
            if m.task != first.task || m.schema != first.schema || m.cfg.include_diagonal != first.cfg.include_diagonal {
                return Err(ModelError::Mismatch(format!(
                    "ensemble member {i} differs from member 0 in task, schema or diagonal handling"
                )));
            }
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[Model<T>] {
        &self.members
    }

    /// Mean member probabilities, `M² × C`.
    pub fn probabilities(&self, doc: &Document, external: Option<&EmbeddingFile>) -> Result<Vec<T>, ModelError> {
        let probs = self
            .members
            .iter()
            .map(|m| Ok(m.probabilities(doc, external)?.data().to_vec()))
            .collect::<Result<Vec<_>, ModelError>>()?;
        Ok(average_probabilities(&probs))
    }

    pub fn predict(&self, doc: &Document, external: Option<&EmbeddingFile>) -> Result<RelationMatrix, ModelError> {
        let probs = self.probabilities(doc, external)?;
        Ok(self.members[0].labels_from_scores(doc.m(), &probs))
    }

    pub fn predict_corpus(&self, corpus: &Corpus, external: Option<&EmbeddingFile>) -> Result<Vec<Document>, ModelError> {
        par_map(&corpus.documents, self.members[0].cfg.workers, |d| Ok(d.with_relations(self.predict(d, external)?)))
            .into_iter()
            .collect()
    }

    pub fn evaluate(&self, corpus: &Corpus, external: Option<&EmbeddingFile>) -> Result<MetricReport, ModelError> {
        let pred = self.predict_corpus(corpus, external)?;
        Ok(score(&corpus.schema, &pred, &corpus.documents, self.members[0].cfg.include_diagonal)?)
    }
}

/// `n` independently seeded runs (`cfg.seed`, `cfg.seed + 1`, ...).
pub fn train_ensemble<T: Scalar>(
    corpus: &Corpus,
    cfg: &ModelConfig,
    n: usize,
    task: Task,
    external: Option<&EmbeddingFile>,
) -> Result<(Ensemble<T>, Vec<TrainLog>), ModelError> {
    let mut members = Vec::with_capacity(n);
    let mut logs = Vec::with_capacity(n);
    for i in 0..n {
        let mut c = cfg.clone();
        c.seed = cfg.seed.wrapping_add(i as u64);
        log::info!("ensemble member {}/{n} (seed {})", i + 1, c.seed);
        let out = train::<T>(corpus, &c, task, external)?;
        members.push(out.model);
        logs.push(out.log);
    }
    Ok((Ensemble::new(members)?, logs))
}
