use super::train::{par_map, train_with_validation, TrainLog};
use super::{Model, ModelConfig, ModelError, Task};
use crate::analysis::{score, MetricReport};
use crate::corpus::{Corpus, Document, Label, RelationMatrix};
use crate::encoder::EmbeddingFile;
use crate::numerics::Scalar;

/// Stage one: which cells hold any relation.
#[derive(Clone, Debug)]
pub enum Detector<T> {
    Model(Model<T>),
    /// Gold positive cells, for isolating the typing stage.
    Oracle,
}

#[derive(Clone, Debug)]
pub struct TwoStage<T> {
    pub detector: Detector<T>,
    /// Types the cells the detector marks positive.
    pub classifier: Model<T>,
}

impl<T: Scalar> TwoStage<T> {
    /// Detected cells of `doc`. The oracle reads the gold matrix.
    pub fn detect(&self, doc: &Document, external: Option<&EmbeddingFile>) -> Result<Vec<bool>, ModelError> {
        Ok(match &self.detector {
            Detector::Oracle => doc.gold.cells().iter().map(|l| !l.is_none()).collect(),
            Detector::Model(m) => m.forward(doc, external)?.labels.cells().iter().map(|l| !l.is_none()).collect(),
        })
    }

    pub fn predict(&self, doc: &Document, external: Option<&EmbeddingFile>) -> Result<RelationMatrix, ModelError> {
        let m = doc.m();
        let found = self.detect(doc, external)?;
        if !found.iter().any(|&f| f) {
            return Ok(RelationMatrix::new(m));
        }
        let typed = self.classifier.forward(doc, external)?.labels;
        let cells = typed
            .cells()
            .iter()
            .zip(&found)
            .map(|(l, &f)| if f { *l } else { Label::NONE })
            .collect();
        Ok(RelationMatrix::from_cells(m, cells).expect("cell count matches"))
    }

    pub fn predict_corpus(&self, corpus: &Corpus, external: Option<&EmbeddingFile>) -> Result<Vec<Document>, ModelError> {
        let pred: Vec<Document> = par_map(&corpus.documents, self.classifier.cfg.workers, |d| {
            Ok(d.with_relations(self.predict(d, external)?))
        })
        .into_iter()
        .collect::<Result<_, ModelError>>()?;
        let any = pred.iter().any(|d| d.gold.positives().next().is_some());
        if !any && !pred.is_empty() {
            log::warn!("relation detector marked no cell positive in {} documents; every prediction is NO_RELATION", pred.len());
        }
        Ok(pred)
    }

    pub fn evaluate(&self, corpus: &Corpus, external: Option<&EmbeddingFile>) -> Result<MetricReport, ModelError> {
        let pred = self.predict_corpus(corpus, external)?;
        Ok(score(&corpus.schema, &pred, &corpus.documents, self.classifier.cfg.include_diagonal)?)
    }
}

/// Trains a detector (unless `oracle`) and a typing model with the same
/// config, each selected on `val`.
pub fn train_two_stage<T: Scalar>(
    train: &Corpus,
    val: &Corpus,
    cfg: &ModelConfig,
    external: Option<&EmbeddingFile>,
    oracle: bool,
) -> Result<(TwoStage<T>, Vec<TrainLog>), ModelError> {
    let mut logs = Vec::new();
    let detector = if oracle {
        Detector::Oracle
    } else {
        let out = train_with_validation::<T>(train, val, cfg, Task::Detection, external)?;
        logs.push(out.log);
        Detector::Model(out.model)
    };
    let out = train_with_validation::<T>(train, val, cfg, Task::Typing, external)?;
    logs.push(out.log);
    Ok((
        TwoStage {
            detector,
            classifier: out.model,
        },
        logs,
    ))
}
