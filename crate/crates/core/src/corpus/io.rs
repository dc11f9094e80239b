use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Document, Entity, Label, RelationMatrix, TypeSchema};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub id: usize,
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub etype: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub arg0: usize,
    pub arg1: usize,
    #[serde(rename = "type")]
    pub rtype: String,
}

/// One JSONL line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocRecord {
    pub doc_id: String,
    pub tokens: Vec<String>,
    pub entities: Vec<EntityRecord>,
    #[serde(default)]
    pub relations: Vec<RelationRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub documents: usize,
    /// Documents loaded despite type-constraint violations (lax mode only).
    pub documents_with_violations: usize,
    pub violations: usize,
}

impl DocRecord {
    pub fn from_document(doc: &Document, schema: &TypeSchema) -> Self {
        DocRecord {
            doc_id: doc.doc_id.clone(),
            tokens: doc.tokens.clone(),
            entities: doc
                .entities
                .iter()
                .map(|e| EntityRecord {
                    id: e.id,
                    start: e.start,
                    end: e.end,
                    etype: schema.entity_type_name(e.etype).to_string(),
                })
                .collect(),
            relations: doc
                .gold
                .positives()
                .map(|(i, j, r)| RelationRecord {
                    arg0: i,
                    arg1: j,
                    rtype: schema.relation(r).name.clone(),
                })
                .collect(),
        }
    }

    fn into_document(self, schema: &TypeSchema, line: usize) -> Result<Document, CorpusError> {
        let invalid = |msg: String| CorpusError::Invalid { line, msg };
        let n = self.tokens.len();
        let m = self.entities.len();
        let mut entities = Vec::with_capacity(m);
        for (k, e) in self.entities.into_iter().enumerate() {
            if e.id != k {
                return Err(invalid(format!("entity ids must be 0..M-1 in order; found {} at position {k}", e.id)));
            }
            if !(e.start < e.end && e.end <= n) {
                return Err(invalid(format!(
                    "entity {k} span [{}, {}) outside {n} tokens",
                    e.start, e.end
                )));
            }
            let etype = schema.entity_type_id(&e.etype).ok_or(CorpusError::UnknownType {
                line,
                kind: "entity",
                name: e.etype,
            })?;
            entities.push(Entity {
                id: k,
                start: e.start,
                end: e.end,
                etype,
            });
        }
        let mut gold = RelationMatrix::new(m);
        for r in self.relations {
            for index in [r.arg0, r.arg1] {
                if index >= m {
                    return Err(CorpusError::EntityIndex { line, index, m });
                }
            }
            let rel = schema.relation_id(&r.rtype).ok_or_else(|| CorpusError::UnknownType {
                line,
                kind: "relation",
                name: r.rtype.clone(),
            })?;
            let label = Label::relation(rel);
            let existing = gold.get(r.arg0, r.arg1);
            if existing == label {
                return Err(CorpusError::DuplicateRelation {
                    line,
                    arg0: r.arg0,
                    arg1: r.arg1,
                    name: r.rtype,
                });
            }
            if !existing.is_none() {
                return Err(CorpusError::ConflictingRelation {
                    line,
                    arg0: r.arg0,
                    arg1: r.arg1,
                    first: existing.name(schema).to_string(),
                    second: r.rtype,
                });
            }
            gold.set(r.arg0, r.arg1, label);
        }
        Ok(Document {
            doc_id: self.doc_id,
            tokens: self.tokens,
            entities,
            gold,
        })
    }
}

/// Parses corpus JSONL from a reader. Blank lines are skipped.
///
/// In strict mode a document with a relation whose argument types the schema
/// does not admit (or a self-relation on the diagonal) is an error; in lax mode
/// it is kept and counted in the report.
pub fn parse_corpus<R: BufRead>(
    reader: R,
    schema: &TypeSchema,
    strict: bool,
) -> Result<(Corpus, LoadReport), CorpusError> {
    let mut docs = Vec::new();
    let mut report = LoadReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| CorpusError::Io {
            path: format!("line {lineno}"),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Json {
            line: lineno,
            msg: e.to_string(),
        })?;
        let doc = rec.into_document(schema, lineno)?;
        let mut problems = doc.schema_violations(schema);
        problems.extend(
            (0..doc.m())
                .filter(|&i| !doc.gold.get(i, i).is_none())
                .map(|i| format!("self-relation on entity {i}")),
        );
        if !problems.is_empty() {
            if strict {
                return Err(CorpusError::SchemaViolation {
                    line: lineno,
                    doc_id: doc.doc_id.clone(),
                    detail: problems.join("; "),
                });
            }
            log::debug!("line {lineno}: {} ({} problem(s))", problems[0], problems.len());
            report.documents_with_violations += 1;
            report.violations += problems.len();
        }
        docs.push(doc);
    }
    report.documents = docs.len();
    if report.violations > 0 {
        log::warn!(
            "loaded {} documents, {} with schema violations",
            report.documents,
            report.documents_with_violations
        );
    }
    Ok((Corpus::new(schema.clone(), docs), report))
}

pub fn load_corpus(
    path: impl AsRef<Path>,
    schema: &TypeSchema,
    strict: bool,
) -> Result<(Corpus, LoadReport), CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_corpus(BufReader::new(file), schema, strict)
}

/// Writes one JSON line per document; relations in row-major cell order.
pub fn write_corpus<W: Write>(mut w: W, corpus: &Corpus) -> std::io::Result<()> {
    for doc in &corpus.documents {
        let rec = DocRecord::from_document(doc, &corpus.schema);
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_corpus(path: impl AsRef<Path>, corpus: &Corpus) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let file = File::create(path).map_err(io_err)?;
    write_corpus(BufWriter::new(file), corpus).map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::RelId;

    fn parse(text: &str, strict: bool) -> Result<(Corpus, LoadReport), CorpusError> {
        parse_corpus(text.as_bytes(), &TypeSchema::ace05(), strict)
    }

    const MIN: &str = r#"{"doc_id":"d","tokens":["a","b"],"entities":[{"id":0,"start":0,"end":1,"type":"PER"},{"id":1,"start":1,"end":2,"type":"PER"}],"relations":[{"arg0":0,"arg1":1,"type":"Per-Soc"}]}"#;

    #[test]
    fn minimal_document() {
        let (c, rep) = parse(MIN, true).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(rep.documents, 1);
        let g = &c.documents[0].gold;
        assert_eq!(g.get(0, 1), Label::relation(RelId(0)));
        assert_eq!(g.get(1, 0), Label::NONE);
    }

    #[test]
    fn empty_relations_give_all_negative() {
        let line = r#"{"doc_id":"d","tokens":["a"],"entities":[{"id":0,"start":0,"end":1,"type":"ORG"}],"relations":[]}"#;
        let (c, _) = parse(line, true).unwrap();
        assert!(c.documents[0].gold.cells().iter().all(|l| l.is_none()));
    }

    #[test]
    fn strict_rejects_type_violation_lax_counts_it() {
        let line = r#"{"doc_id":"d","tokens":["a","b"],"entities":[{"id":0,"start":0,"end":1,"type":"PER"},{"id":1,"start":1,"end":2,"type":"GPE"}],"relations":[{"arg0":0,"arg1":1,"type":"Part-Whole"}]}"#;
        let err = parse(line, true).unwrap_err();
        assert!(matches!(err, CorpusError::SchemaViolation { line: 1, .. }), "{err}");
        let (c, rep) = parse(line, false).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(rep.violations, 1);
    }

    #[test]
    fn reports_line_numbers_and_specific_errors() {
        let text = format!("{MIN}\n\n{{not json\n");
        match parse(&text, true).unwrap_err() {
            CorpusError::Json { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        let oob = MIN.replace(r#""arg1":1"#, r#""arg1":5"#);
        assert!(matches!(parse(&oob, true).unwrap_err(), CorpusError::EntityIndex { index: 5, m: 2, .. }));
        let unk = MIN.replace("Per-Soc", "Friend");
        assert!(matches!(parse(&unk, true).unwrap_err(), CorpusError::UnknownType { kind: "relation", .. }));
        let unk_ent = MIN.replacen("PER", "ALIEN", 1);
        assert!(matches!(parse(&unk_ent, true).unwrap_err(), CorpusError::UnknownType { kind: "entity", .. }));
        let dup = MIN.replace(
            r#"{"arg0":0,"arg1":1,"type":"Per-Soc"}"#,
            r#"{"arg0":0,"arg1":1,"type":"Per-Soc"},{"arg0":0,"arg1":1,"type":"Per-Soc"}"#,
        );
        assert!(matches!(parse(&dup, true).unwrap_err(), CorpusError::DuplicateRelation { .. }));
        let conflict = MIN.replace(
            r#"{"arg0":0,"arg1":1,"type":"Per-Soc"}"#,
            r#"{"arg0":0,"arg1":1,"type":"Per-Soc"},{"arg0":0,"arg1":1,"type":"Phys"}"#,
        );
        assert!(matches!(parse(&conflict, true).unwrap_err(), CorpusError::ConflictingRelation { .. }));
    }

    #[test]
    fn rejects_bad_spans_and_ids() {
        let span = MIN.replace(r#""start":1,"end":2"#, r#""start":1,"end":3"#);
        assert!(matches!(parse(&span, true).unwrap_err(), CorpusError::Invalid { .. }));
        let ids = MIN.replace(r#""id":1"#, r#""id":7"#);
        assert!(matches!(parse(&ids, true).unwrap_err(), CorpusError::Invalid { .. }));
    }

    #[test]
    fn round_trip() {
        let (c, _) = parse(MIN, true).unwrap();
        let mut buf = Vec::new();
        write_corpus(&mut buf, &c).unwrap();
        let (back, _) = parse_corpus(buf.as_slice(), &c.schema, true).unwrap();
        assert_eq!(back, c);
    }
}
