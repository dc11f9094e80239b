//! Documents, entities, relation matrices and corpus IO.

mod io;
mod schema;
mod synth;

use thiserror::Error;

pub use io::{load_corpus, parse_corpus, save_corpus, write_corpus, DocRecord, EntityRecord, LoadReport, RelationRecord};
pub use schema::{ArgPos, EntityTypeId, RelId, RelationSpec, RelationType, SchemaFile, TypeSchema, NO_RELATION};
pub use synth::{generate_synthetic, CountCorrelation, SynthConfig};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("line {line}: malformed JSON: {msg}")]
    Json { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Invalid { line: usize, msg: String },
    #[error("line {line}: entity index {index} out of range for {m} entities")]
    EntityIndex { line: usize, index: usize, m: usize },
    #[error("line {line}: unknown {kind} type {name:?}")]
    UnknownType { line: usize, kind: &'static str, name: String },
    #[error("line {line}: duplicate relation ({arg0}, {arg1}, {name})")]
    DuplicateRelation { line: usize, arg0: usize, arg1: usize, name: String },
    #[error("line {line}: conflicting labels for pair ({arg0}, {arg1}): {first} and {second}")]
    ConflictingRelation {
        line: usize,
        arg0: usize,
        arg1: usize,
        first: String,
        second: String,
    },
    #[error("line {line}: schema violation in {doc_id}: {detail}")]
    SchemaViolation { line: usize, doc_id: String, detail: String },
    #[error("infeasible synthesis config: {0}")]
    Infeasible(String),
}

/// One cell label: NO_RELATION or a relation type of the schema.
///
/// Class index 0 is NO_RELATION and class `r + 1` is relation `r`, which is
/// also the column order of model logits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(u16);

impl Label {
    pub const NONE: Label = Label(0);

    pub fn relation(rel: RelId) -> Self {
        Label(rel.0 + 1)
    }

    pub fn from_class(class: usize) -> Self {
        Label(class as u16)
    }

    pub fn class(self) -> usize {
        self.0 as usize
    }

    pub fn is_none(self) -> bool {
        self.0 == 0
    }

    pub fn rel(self) -> Option<RelId> {
        (self.0 > 0).then(|| RelId(self.0 - 1))
    }

    pub fn name(self, schema: &TypeSchema) -> &str {
        match self.rel() {
            None => NO_RELATION,
            Some(r) => &schema.relation(r).name,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entity {
    pub id: usize,
    pub start: usize,
    pub end: usize,
    pub etype: EntityTypeId,
}

impl Entity {
    pub fn span(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// M×M grid of labels, row-major: cell `(i, j)` holds the relation with
/// entity `i` as arg0 and entity `j` as arg1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelationMatrix {
    m: usize,
    cells: Vec<Label>,
}

impl RelationMatrix {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            cells: vec![Label::NONE; m * m],
        }
    }

    pub fn from_cells(m: usize, cells: Vec<Label>) -> Option<Self> {
        (cells.len() == m * m).then_some(Self { m, cells })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> Label {
        self.cells[i * self.m + j]
    }

    pub fn set(&mut self, i: usize, j: usize, label: Label) {
        self.cells[i * self.m + j] = label;
    }

    pub fn cells(&self) -> &[Label] {
        &self.cells
    }

    /// Positive cells in row-major order.
    pub fn positives(&self) -> impl Iterator<Item = (usize, usize, RelId)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter_map(move |(k, l)| l.rel().map(|r| (k / self.m, k % self.m, r)))
    }

    /// Number of positive cells in row `i` plus column `i` (the diagonal cell,
    /// if positive, counts once).
    pub fn degree(&self, i: usize) -> usize {
        let mut n = 0;
        for k in 0..self.m {
            if !self.get(i, k).is_none() {
                n += 1;
            }
            if k != i && !self.get(k, i).is_none() {
                n += 1;
            }
        }
        n
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub entities: Vec<Entity>,
    pub gold: RelationMatrix,
}

impl Document {
    pub fn m(&self) -> usize {
        self.entities.len()
    }

    /// Copy of the document with a different relation matrix.
    pub fn with_relations(&self, rels: RelationMatrix) -> Self {
        assert_eq!(rels.m(), self.m(), "relation matrix size");
        Self {
            gold: rels,
            ..self.clone()
        }
    }

    /// Type-constraint violations of the gold matrix, as messages.
    pub fn schema_violations(&self, schema: &TypeSchema) -> Vec<String> {
        self.gold
            .positives()
            .filter(|&(i, j, r)| !schema.admits(r, self.entities[i].etype, self.entities[j].etype))
            .map(|(i, j, r)| {
                format!(
                    "{}({}:{}, {}:{}) not admitted",
                    schema.relation(r).name,
                    i,
                    schema.entity_type_name(self.entities[i].etype),
                    j,
                    schema.entity_type_name(self.entities[j].etype)
                )
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub schema: TypeSchema,
    pub documents: Vec<Document>,
}

impl Corpus {
    pub fn new(schema: TypeSchema, documents: Vec<Document>) -> Self {
        Self { schema, documents }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// Same schema, a subset of documents by index.
    pub fn select(&self, idx: &[usize]) -> Corpus {
        Corpus {
            schema: self.schema.clone(),
            documents: idx.iter().map(|&i| self.documents[i].clone()).collect(),
        }
    }

    /// First `n` documents and the rest.
    pub fn split_at(&self, n: usize) -> (Corpus, Corpus) {
        let n = n.min(self.len());
        (
            Corpus::new(self.schema.clone(), self.documents[..n].to_vec()),
            Corpus::new(self.schema.clone(), self.documents[n..].to_vec()),
        )
    }
}

/// All ordered entity pairs in row-major order.
pub fn relation_pairs(m: usize, include_diagonal: bool) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            if include_diagonal || i != j {
                out.push((i, j));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_counts() {
        assert_eq!(relation_pairs(7, true).len(), 49);
        assert!(relation_pairs(1, false).is_empty());
        let p = relation_pairs(3, false);
        assert_eq!(p.len(), 6);
        assert!(p.iter().all(|(i, j)| i != j));
        assert_eq!(p[0], (0, 1));
    }

    #[test]
    fn label_classes() {
        assert_eq!(Label::NONE.class(), 0);
        assert_eq!(Label::relation(RelId(2)).class(), 3);
        assert_eq!(Label::from_class(3).rel(), Some(RelId(2)));
        assert_eq!(Label::NONE.rel(), None);
    }

    #[test]
    fn degree_counts_row_and_column() {
        let mut r = RelationMatrix::new(3);
        r.set(0, 1, Label::relation(RelId(0)));
        r.set(1, 0, Label::relation(RelId(0)));
        r.set(2, 0, Label::relation(RelId(1)));
        assert_eq!(r.degree(0), 3);
        assert_eq!(r.degree(1), 2);
        assert_eq!(r.degree(2), 1);
    }
}
