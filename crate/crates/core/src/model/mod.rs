//! The relation-matrix classifier: encoder, optional GNN and matrix
//! transformer branches, and a per-cell linear head.

mod config;
mod ensemble;
mod train;
mod two_stage;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::biror::{self, build_graph};
use crate::corpus::{CorpusError, Document, Label, RelationMatrix, SchemaFile, TypeSchema};
use crate::encoder::{self, EmbeddingFile, EncoderError, Vocab};
use crate::multiror::{self, MultirorError};
use crate::numerics::layers::{linear, Dropout};
use crate::numerics::params::Bound;
use crate::numerics::{init, load_checkpoint, save_checkpoint, DType, NumericsError, ParamStore, Scalar, Tape, Tensor, Var};

pub use config::{ModelConfig, Variant};
pub use ensemble::{average_probabilities, train_ensemble, Ensemble};
pub use train::{evaluate, holdout_split, predict_corpus, train, train_with_validation, EpochLog, StepLog, TrainLog, TrainOutcome};
pub use two_stage::{train_two_stage, Detector, TwoStage};

/// Label used for cells left out of the loss.
pub const IGNORE: usize = usize::MAX;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Multiror(#[from] MultirorError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training diverged at step {step}: loss = {loss} ({detail})")]
    Divergence { step: usize, loss: f64, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Mismatch(String),
    #[error("empty training corpus")]
    EmptyCorpus,
}

/// What the head predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// NO_RELATION plus every relation type.
    Relations,
    /// NO_RELATION vs any relation.
    Detection,
    /// Relation type of gold-positive cells; negatives are left out of the loss.
    Typing,
}

impl Task {
    pub fn num_classes(self, schema: &TypeSchema) -> usize {
        match self {
            Task::Detection => 2,
            Task::Relations | Task::Typing => schema.num_classes(),
        }
    }

    /// Loss target of one cell.
    pub fn target(self, gold: Label) -> usize {
        match self {
            Task::Relations => gold.class(),
            Task::Detection => usize::from(!gold.is_none()),
            Task::Typing if gold.is_none() => IGNORE,
            Task::Typing => gold.class(),
        }
    }
}

/// Per-cell output of one document.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    /// `M × M × C` class scores.
    pub logits: Tensor<T>,
    pub labels: RelationMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub schema: TypeSchema,
    pub vocab: Vocab,
    pub task: Task,
    pub params: ParamStore<T>,
}

/// Row-wise softmax of an `R × C` block.
pub(crate) fn softmax_rows<T: Scalar>(logits: &[T], classes: usize) -> Vec<T> {
    let mut out = logits.to_vec();
    for row in out.chunks_mut(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Argmax over classes `from..C` of each row; ties go to the lower class.
pub fn argmax_rows<T: Scalar>(scores: &[T], classes: usize, from: usize) -> Vec<usize> {
    scores
        .chunks(classes)
        .map(|row| {
            let mut best = from;
            for c in from + 1..classes {
                if row[c] > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters drawn from `cfg.seed`.
    pub fn new(cfg: ModelConfig, schema: TypeSchema, vocab: Vocab, task: Task) -> Result<Self, ModelError> {
        cfg.validate().map_err(ModelError::Config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.d();
        let mut params = ParamStore::new();
        encoder::init_params(&mut params, &cfg.encoder, vocab.len(), &mut rng);
        if cfg.variant.uses_gnn() {
            biror::init_params(&mut params, &cfg.gnn, d, &mut rng);
        }
        if cfg.variant.uses_transformer() {
            multiror::init_params(&mut params, &cfg.mt, d, &mut rng);
        }
        let c = task.num_classes(&schema);
        // unit-scale features times this std give logits around 0.1, close to uniform
        params.insert("cls.w", init::normal(&[d, c], 0.1 / (d as f64).sqrt(), &mut rng));
        params.insert("cls.b", init::zeros(&[c]));
        Ok(Self {
            cfg,
            schema,
            vocab,
            task,
            params,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.task.num_classes(&self.schema)
    }

    fn check_size(&self, doc: &Document) -> Result<(), ModelError> {
        if doc.m() > self.cfg.mt.max_m {
            return Err(MultirorError::TooManyEntities {
                m: doc.m(),
                max_m: self.cfg.mt.max_m,
            }
            .into());
        }
        Ok(())
    }

    /// Cell features before the head: `M² × d`, row-major cells.
    pub fn features(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        doc: &Document,
        external: Option<&EmbeddingFile>,
        dropout: &mut Dropout,
    ) -> Result<Var, ModelError> {
        self.check_size(doc)?;
        let m = doc.m();
        let ents = encoder::embed_entities(tape, params, doc, &self.cfg.encoder, &self.vocab, external)?;
        let rels = encoder::init_relations(tape, params, ents)?;
        let gnn = if self.cfg.variant.uses_gnn() {
            let graph = build_graph(m, self.cfg.include_diagonal, self.cfg.gnn.self_loops);
            Some(biror::run_biror(tape, params, &self.cfg.gnn, &graph, ents, rels, dropout)?)
        } else {
            None
        };
        let mt = if self.cfg.variant.uses_transformer() {
            Some(multiror::run_multiror(tape, params, &self.cfg.mt, rels, m, dropout)?)
        } else {
            None
        };
        Ok(match (gnn, mt) {
            (Some(a), Some(b)) => tape.add(a, b)?,
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => rels,
        })
    }

    /// Class scores `M² × C` on `tape`.
    pub fn logits(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        doc: &Document,
        external: Option<&EmbeddingFile>,
        dropout: &mut Dropout,
    ) -> Result<Var, ModelError> {
        let f = self.features(tape, params, doc, external, dropout)?;
        Ok(linear(tape, params, "cls", f)?)
    }

    /// Loss targets of every cell, row-major; excluded cells get [`IGNORE`].
    pub fn targets(&self, doc: &Document) -> Vec<usize> {
        let m = doc.m();
        (0..m * m)
            .map(|c| {
                let (i, j) = (c / m, c % m);
                if i == j && !self.cfg.include_diagonal {
                    IGNORE
                } else {
                    self.task.target(doc.gold.get(i, j))
                }
            })
            .collect()
    }

    /// Evaluation-mode scores, `M² × C`.
    pub fn raw_logits(&self, doc: &Document, external: Option<&EmbeddingFile>) -> Result<Tensor<T>, ModelError> {
        let c = self.num_classes();
        if doc.m() == 0 {
            return Ok(Tensor::zeros(&[0, c]));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let out = self.logits(&mut tape, &bound, doc, external, &mut Dropout::off())?;
        Ok(tape.value(out).clone())
    }

    /// Softmax class probabilities, `M² × C`.
    pub fn probabilities(&self, doc: &Document, external: Option<&EmbeddingFile>) -> Result<Tensor<T>, ModelError> {
        let logits = self.raw_logits(doc, external)?;
        let c = self.num_classes();
        Ok(Tensor::new(logits.shape(), softmax_rows(logits.data(), c))?)
    }

    /// Labels from per-cell scores; the diagonal is NO_RELATION unless included.
    /// For typing heads the argmax skips class 0.
    pub(crate) fn labels_from_scores(&self, m: usize, scores: &[T]) -> RelationMatrix {
        let c = self.num_classes();
        let from = usize::from(self.task == Task::Typing);
        let arg = argmax_rows(scores, c, from);
        let mut out = RelationMatrix::new(m);
        for (cell, &k) in arg.iter().enumerate() {
            let (i, j) = (cell / m, cell % m);
            if i != j || self.cfg.include_diagonal {
                out.set(i, j, Label::from_class(k));
            }
        }
        out
    }

    pub fn forward(&self, doc: &Document, external: Option<&EmbeddingFile>) -> Result<Prediction<T>, ModelError> {
        let logits = self.raw_logits(doc, external)?;
        let m = doc.m();
        let labels = self.labels_from_scores(m, logits.data());
        let c = self.num_classes();
        Ok(Prediction {
            logits: logits.reshaped(&[m, m, c])?,
            labels,
        })
    }

    /// `(loss, gradients)` of one document. The loss is the mean cross-entropy
    /// over its scored cells multiplied by `weight`.
    pub fn loss_and_grads(
        &self,
        doc: &Document,
        external: Option<&EmbeddingFile>,
        weight: f64,
        dropout: &mut Dropout,
    ) -> Result<(f64, ParamStore<T>), ModelError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, true);
        let logits = self.logits(&mut tape, &bound, doc, external, dropout)?;
        let loss = tape.cross_entropy(logits, &self.targets(doc), Some(IGNORE))?;
        let loss = tape.scale(loss, T::lit(weight));
        let value = tape.value(loss).item().as_f64();
        let grads = tape.backward(loss)?;
        Ok((value, bound.collect(&self.params, &grads)))
    }

    pub fn metadata(&self) -> serde_json::Value {
        json!({
            "format": "ror-model",
            "config": self.cfg,
            "schema": self.schema.to_file_spec(),
            "vocab": self.vocab.tokens(),
            "task": self.task,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, dtype: DType) -> Result<(), ModelError> {
        Ok(save_checkpoint(path, &self.params, &self.metadata(), dtype)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let ckpt = load_checkpoint::<T>(path)?;
        Self::from_parts(ckpt.params, &ckpt.metadata)
    }

    pub fn from_parts(params: ParamStore<T>, meta: &serde_json::Value) -> Result<Self, ModelError> {
        let bad = |m: String| ModelError::Checkpoint(m);
        if meta.get("format").and_then(|f| f.as_str()) != Some("ror-model") {
            return Err(bad("not a model checkpoint".into()));
        }
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| bad(format!("metadata lacks {k}")));
        let cfg: ModelConfig = serde_json::from_value(field("config")?).map_err(|e| bad(e.to_string()))?;
        let spec: SchemaFile = serde_json::from_value(field("schema")?).map_err(|e| bad(e.to_string()))?;
        let tokens: Vec<String> = serde_json::from_value(field("vocab")?).map_err(|e| bad(e.to_string()))?;
        let task: Task = serde_json::from_value(field("task")?).map_err(|e| bad(e.to_string()))?;
        let schema = TypeSchema::from_file_spec(&spec)?;
        let model = Self {
            cfg,
            schema,
            vocab: Vocab::from_tokens(tokens),
            task,
            params,
        };
        let fresh = Model::<T>::new(model.cfg.clone(), model.schema.clone(), model.vocab.clone(), task)?;
        if !fresh.params.same_layout(&model.params) {
            return Err(bad("parameter names or shapes do not match the stored config".into()));
        }
        Ok(model)
    }

    /// Copy of the model with parameters cast to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            schema: self.schema.clone(),
            vocab: self.vocab.clone(),
            task: self.task,
            params: self.params.cast(),
        }
    }
}
