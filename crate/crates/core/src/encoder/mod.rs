//! Entity embeddings from tokens (or an external file) and initial relation
//! embeddings from entity pairs.

mod embfile;

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::numerics::params::Bound;
use crate::numerics::{init, NumericsError, ParamStore, Scalar, Tape, Tensor, Var};

pub use embfile::{EmbeddingFile, EMBEDDING_MAGIC};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("embedding file: {0}")]
    EmbeddingFile(String),
    #[error("embedding rows for {doc_id:?}: expected {expected:?}, found {found} values")]
    EmbeddingShape {
        doc_id: String,
        expected: (usize, usize),
        found: usize,
    },
    #[error("embedding file has no entry for document {0:?}")]
    MissingDoc(String),
    #[error("document {doc_id:?} has {expected} entities but the embedding file stores {found}")]
    EntityCount { doc_id: String, expected: usize, found: usize },
    #[error("embedding dim {found} does not match the model dim {expected}")]
    Dim { expected: usize, found: usize },
    #[error("external embeddings selected but no embedding file loaded")]
    NoExternalFile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Learned,
    External,
}

/// Marks span tokens against context tokens with a learned 2-row embedding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityIndicator {
    None,
    SentenceIndex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub source: EmbeddingSource,
    pub entity_indicator: EntityIndicator,
    /// Tokens after each mention (up to the next mention) pooled into the
    /// entity vector alongside the span. 0 means span pooling only.
    pub context_window: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 512,
            source: EmbeddingSource::Learned,
            entity_indicator: EntityIndicator::SentenceIndex,
            context_window: 0,
        }
    }
}

pub const UNK: &str = "<unk>";

/// Token → id map. Id 0 is reserved for unknown tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Tokens seen at least `min_count` times, in order of first appearance.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>, min_count: usize) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut order = Vec::new();
        for doc in docs {
            for t in &doc.tokens {
                let c = counts.entry(t.as_str()).or_insert_with(|| {
                    order.push(t.as_str());
                    0
                });
                *c += 1;
            }
        }
        let mut tokens = vec![UNK.to_string()];
        tokens.extend(
            order
                .into_iter()
                .filter(|t| counts[t] >= min_count.max(1) && *t != UNK)
                .map(str::to_string),
        );
        Self::from_tokens(tokens)
    }

    /// Rebuilds from a stored token list whose first entry is [`UNK`].
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Adds the encoder and relation-init parameters to `store`.
pub fn init_params<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    cfg: &EncoderConfig,
    vocab_size: usize,
    rng: &mut R,
) {
    let d = cfg.embed_dim;
    if cfg.source == EmbeddingSource::Learned {
        store.insert("enc.tok", init::normal(&[vocab_size, d], 0.02, rng));
        if cfg.entity_indicator == EntityIndicator::SentenceIndex {
            store.insert("enc.ind", init::normal(&[2, d], 0.02, rng));
        }
    }
    store.insert("rel.ffn1.w", init::xavier_uniform(2 * d, 2 * d, rng));
    store.insert("rel.ffn1.b", init::zeros(&[2 * d]));
    store.insert("rel.ffn2.w", init::xavier_uniform(2 * d, d, rng));
    store.insert("rel.ffn2.b", init::zeros(&[d]));
}

/// Token positions pooled for each entity, with their indicator value
/// (1 inside the span, 0 in the trailing context).
fn pooled_positions(doc: &Document, context_window: usize) -> Vec<Vec<(usize, usize)>> {
    let n = doc.tokens.len();
    doc.entities
        .iter()
        .map(|e| {
            let mut pos: Vec<(usize, usize)> = e.span().map(|p| (p, 1)).collect();
            if context_window > 0 {
                let next = doc
                    .entities
                    .iter()
                    .map(|o| o.start)
                    .filter(|&s| s >= e.end)
                    .min()
                    .unwrap_or(n);
                let stop = next.min(e.end + context_window).min(n);
                pos.extend((e.end..stop).map(|p| (p, 0)));
            }
            pos
        })
        .collect()
}

/// Entity vectors as an `M × d` tape variable.
///
/// Learned mode: `e_i = mean_{t ∈ span}(E[w_t] + S[1]) + mean_{t ∈ ctx}(E[w_t] + S[0])`,
/// with `S` the indicator table (absent when disabled) and the context term
/// dropped when the window is 0 or empty. External mode copies the file rows.
pub fn embed_entities<T: Scalar>(
    tape: &mut Tape<T>,
    params: &Bound,
    doc: &Document,
    cfg: &EncoderConfig,
    vocab: &Vocab,
    external: Option<&EmbeddingFile>,
) -> Result<Var, EncoderError> {
    let m = doc.m();
    let d = cfg.embed_dim;
    if cfg.source == EmbeddingSource::External {
        let file = external.ok_or(EncoderError::NoExternalFile)?;
        return Ok(tape.constant(external_rows(file, doc, d)?));
    }
    let groups = pooled_positions(doc, cfg.context_window);
    let mut ids = Vec::new();
    let mut inds = Vec::new();
    let mut pool = Vec::new();
    for (i, g) in groups.iter().enumerate() {
        let n_span = g.iter().filter(|p| p.1 == 1).count();
        let n_ctx = g.len() - n_span;
        for &(p, ind) in g {
            ids.push(vocab.id(&doc.tokens[p]));
            inds.push(ind);
            let w = if ind == 1 { n_span } else { n_ctx };
            pool.push((i, 1.0 / w as f64));
        }
    }
    let r = ids.len();
    let mut weights = vec![T::zero(); m * r];
    for (col, (row, w)) in pool.into_iter().enumerate() {
        weights[row * r + col] = T::lit(w);
    }
    if r == 0 {
        return Ok(tape.constant(Tensor::zeros(&[m, d])));
    }
    let mut x = tape.embedding_lookup(params.var("enc.tok")?, &ids)?;
    if cfg.entity_indicator == EntityIndicator::SentenceIndex {
        let s = tape.embedding_lookup(params.var("enc.ind")?, &inds)?;
        x = tape.add(x, s)?;
    }
    let p = tape.constant(Tensor::new(&[m, r], weights)?);
    Ok(tape.matmul(p, x)?)
}

/// The `M × d` block stored for `doc`, checked against its entity count and `dim`.
pub fn external_rows<T: Scalar>(file: &EmbeddingFile, doc: &Document, dim: usize) -> Result<Tensor<T>, EncoderError> {
    if file.dim() != dim {
        return Err(EncoderError::Dim {
            expected: dim,
            found: file.dim(),
        });
    }
    let (n, rows) = file
        .get(&doc.doc_id)
        .ok_or_else(|| EncoderError::MissingDoc(doc.doc_id.clone()))?;
    if n != doc.m() {
        return Err(EncoderError::EntityCount {
            doc_id: doc.doc_id.clone(),
            expected: doc.m(),
            found: n,
        });
    }
    Ok(Tensor::new(&[n, dim], rows.iter().map(|&x| T::lit(x as f64)).collect())?)
}

/// Initial relation embeddings, `M² × d` in row-major cell order:
/// `rel(i, j) = W2 · relu(W1 · [e_i; e_j] + b1) + b2`.
///
/// `W1 · [e_i; e_j]` is computed as `A[i] + B[j]` with `A = E · W1[:d]` and
/// `B = E · W1[d:]`, so the first layer costs `O(M)` matmul rows.
pub fn init_relations<T: Scalar>(tape: &mut Tape<T>, params: &Bound, ents: Var) -> Result<Var, EncoderError> {
    let (m, d) = tape.value(ents).as_matrix_dims();
    let w1 = params.var("rel.ffn1.w")?;
    if tape.shape(w1)[0] != 2 * d {
        return Err(NumericsError::ShapeMismatch {
            op: "init_relations",
            left: tape.shape(ents).to_vec(),
            right: tape.shape(w1).to_vec(),
        }
        .into());
    }
    let top = tape.slice(w1, 0, 0, d)?;
    let bottom = tape.slice(w1, 0, d, d)?;
    let a = tape.matmul(ents, top)?;
    let b = tape.matmul(ents, bottom)?;
    let rows: Vec<usize> = (0..m * m).map(|c| c / m).collect();
    let cols: Vec<usize> = (0..m * m).map(|c| c % m).collect();
    let ai = tape.gather_rows(a, &rows)?;
    let bj = tape.gather_rows(b, &cols)?;
    let h = tape.add(ai, bj)?;
    let h = tape.add_bias(h, params.var("rel.ffn1.b")?)?;
    let h = tape.relu(h);
    let h = tape.matmul(h, params.var("rel.ffn2.w")?)?;
    Ok(tape.add_bias(h, params.var("rel.ffn2.b")?)?)
}
