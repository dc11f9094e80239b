use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Model, ModelConfig, ModelError, Task, IGNORE};
use crate::analysis::{score, MetricReport};
use crate::corpus::{Corpus, Document, Label, RelationMatrix};
use crate::encoder::{EmbeddingFile, Vocab};
use crate::numerics::{clip_grad_norm, lr_at, Adam, AdamConfig, Dropout, ParamStore, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub train_docs: usize,
    pub val_docs: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the best validation macro F1.
    pub model: Model<T>,
    pub log: TrainLog,
}

/// Maps `f` over `items` on up to `workers` scoped threads, keeping order.
pub(crate) fn par_map<I: Sync, O: Send>(items: &[I], workers: usize, f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    let workers = workers.max(1).min(items.len());
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(f).collect::<Vec<O>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}

/// Predicted copies of every document, on `model.cfg.workers` threads.
pub fn predict_corpus<T: Scalar>(
    model: &Model<T>,
    corpus: &Corpus,
    external: Option<&EmbeddingFile>,
) -> Result<Vec<Document>, ModelError> {
    par_map(&corpus.documents, model.cfg.workers, |d| {
        Ok(d.with_relations(model.forward(d, external)?.labels))
    })
    .into_iter()
    .collect()
}

/// Scores a relation model on `corpus`.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    corpus: &Corpus,
    external: Option<&EmbeddingFile>,
) -> Result<MetricReport, ModelError> {
    let pred = predict_corpus(model, corpus, external)?;
    Ok(score(&corpus.schema, &pred, &corpus.documents, model.cfg.include_diagonal)?)
}

/// Selection metric of a model of any task, in percent.
fn validation_f1<T: Scalar>(
    model: &Model<T>,
    val: &Corpus,
    external: Option<&EmbeddingFile>,
) -> Result<f64, ModelError> {
    let pred = predict_corpus(model, val, external)?;
    let (pred, gold): (Vec<Document>, Vec<Document>) = match model.task {
        Task::Relations => (pred, val.documents.clone()),
        // Detection labels are classes 0/1; compare them as "relation 0" against
        // gold collapsed the same way.
        Task::Detection => {
            let collapse = |d: &Document| {
                let m = d.m();
                let cells = d.gold.cells().iter().map(|l| Label::from_class(usize::from(!l.is_none()))).collect();
                d.with_relations(RelationMatrix::from_cells(m, cells).unwrap())
            };
            (pred, val.documents.iter().map(collapse).collect())
        }
        // Typing is only judged on gold-positive cells.
        Task::Typing => {
            let masked = pred
                .iter()
                .zip(&val.documents)
                .map(|(p, g)| {
                    let cells = p
                        .gold
                        .cells()
                        .iter()
                        .zip(g.gold.cells())
                        .map(|(pl, gl)| if gl.is_none() { Label::NONE } else { *pl })
                        .collect();
                    p.with_relations(RelationMatrix::from_cells(p.m(), cells).unwrap())
                })
                .collect();
            (masked, val.documents.clone())
        }
    };
    Ok(score(&val.schema, &pred, &gold, model.cfg.include_diagonal)?.macro_f1)
}

/// Splits off `cfg.val_fraction` of `corpus` (shuffled with the seed, both
/// parts kept in corpus order) as a selection set. With too few documents for
/// a held-out split, both parts are the whole corpus.
pub fn holdout_split(corpus: &Corpus, cfg: &ModelConfig) -> (Corpus, Corpus) {
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_5EED);
    idx.shuffle(&mut rng);
    let n_val = (cfg.val_fraction * corpus.len() as f64).round() as usize;
    if n_val == 0 || n_val >= corpus.len() {
        return (corpus.clone(), corpus.clone());
    }
    let mut val_idx = idx[..n_val].to_vec();
    let mut train_idx = idx[n_val..].to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    (corpus.select(&train_idx), corpus.select(&val_idx))
}

/// Trains on `corpus` after holding out a selection set with [`holdout_split`].
pub fn train<T: Scalar>(
    corpus: &Corpus,
    cfg: &ModelConfig,
    task: Task,
    external: Option<&EmbeddingFile>,
) -> Result<TrainOutcome<T>, ModelError> {
    if corpus.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let (fit, val) = holdout_split(corpus, cfg);
    train_with_validation(&fit, &val, cfg, task, external)
}

/// Per-document gradients of one batch, summed in batch order.
fn batch_gradients<T: Scalar>(
    model: &Model<T>,
    docs: &[&Document],
    external: Option<&EmbeddingFile>,
    seed: u64,
    step: usize,
) -> Result<Option<(f64, ParamStore<T>)>, ModelError> {
    let counts: Vec<usize> = docs
        .iter()
        .map(|d| model.targets(d).iter().filter(|&&t| t != IGNORE).count())
        .collect();
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Ok(None);
    }
    let p = model.cfg.dropout;
    let one = |pos: usize| -> Result<(f64, ParamStore<T>), ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((step as u64 + 1) << 16) | pos as u64);
        let mut dropout = Dropout::train(p, &mut rng);
        model.loss_and_grads(docs[pos], external, counts[pos] as f64 / total as f64, &mut dropout)
    };
    let active: Vec<usize> = (0..docs.len()).filter(|&i| counts[i] > 0).collect();
    let results = par_map(&active, model.cfg.workers, |&i| one(i));
    let mut loss = 0.0;
    let mut grads = model.params.zeros_like();
    for r in results {
        let (l, g) = r?;
        loss += l;
        grads.add_scaled(&g, T::one());
    }
    Ok(Some((loss, grads)))
}

/// Trains on `train` and keeps the parameters of the epoch with the best
/// macro F1 on `val` (earliest epoch on ties).
pub fn train_with_validation<T: Scalar>(
    train: &Corpus,
    val: &Corpus,
    cfg: &ModelConfig,
    task: Task,
    external: Option<&EmbeddingFile>,
) -> Result<TrainOutcome<T>, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let vocab = Vocab::build(&train.documents, cfg.min_token_count);
    let mut model = Model::<T>::new(cfg.clone(), train.schema.clone(), vocab, task)?;
    for d in train.documents.iter().chain(&val.documents) {
        model.check_size(d)?;
    }
    let mut opt = Adam::new(
        &model.params,
        AdamConfig {
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
    );
    let per_epoch = train.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0005_4F55_1E00);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog {
        train_docs: train.len(),
        val_docs: val.len(),
        best_val_macro_f1: f64::NEG_INFINITY,
        ..TrainLog::default()
    };
    let mut best = model.params.clone();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let docs: Vec<&Document> = chunk.iter().map(|&i| &train.documents[i]).collect();
            let lr = lr_at(step + 1, total, cfg.warmup, cfg.peak_lr);
            let Some((loss, mut grads)) = batch_gradients(&model, &docs, external, cfg.seed, step)? else {
                step += 1;
                continue;
            };
            let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip);
            if !loss.is_finite() || !grad_norm.is_finite() {
                let ids: Vec<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
                return Err(ModelError::Divergence {
                    step,
                    loss,
                    detail: format!("gradient norm {grad_norm}, lr {lr:.3e}, batch {ids:?}"),
                });
            }
            opt.step(&mut model.params, &grads, lr);
            log.steps.push(StepLog {
                step,
                epoch,
                loss,
                lr,
                grad_norm,
            });
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        let val_f1 = validation_f1(&model, val, external)?;
        let train_loss = if batches > 0 { epoch_loss / batches as f64 } else { 0.0 };
        log::info!(
            "epoch {}/{}: loss {train_loss:.4}, validation macro F1 {val_f1:.2}",
            epoch + 1,
            cfg.epochs
        );
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_macro_f1: val_f1,
        });
        if val_f1 > log.best_val_macro_f1 {
            log.best_val_macro_f1 = val_f1;
            log.best_epoch = epoch;
            best = model.params.clone();
        }
    }
    if cfg.epochs > 0 {
        model.params = best;
    } else {
        log.best_val_macro_f1 = validation_f1(&model, val, external)?;
    }
    Ok(TrainOutcome { model, log })
}
