//! Frozen entity embedding files.
//!
//! Layout: magic `ROREMB01`, a little-endian `u64` header length, a JSON header
//! `{dim, docs: [{doc_id, n_entities, offset}]}` where `offset` is the byte
//! offset of the document's rows from the start of the payload, then per
//! document `n_entities × dim` little-endian `f32` values, entity-id order.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EncoderError;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"ROREMB01";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dim: usize,
    docs: Vec<DocEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocEntry {
    doc_id: String,
    n_entities: usize,
    offset: u64,
}

/// In-memory embedding file: per document, an `n_entities × dim` row block.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingFile {
    dim: usize,
    order: Vec<String>,
    rows: HashMap<String, (usize, Vec<f32>)>,
}

impl EmbeddingFile {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.order
    }

    /// Adds one document's rows (`n_entities · dim` values).
    pub fn insert(&mut self, doc_id: impl Into<String>, n_entities: usize, data: Vec<f32>) -> Result<(), EncoderError> {
        let doc_id = doc_id.into();
        if data.len() != n_entities * self.dim {
            return Err(EncoderError::EmbeddingShape {
                doc_id,
                expected: (n_entities, self.dim),
                found: data.len(),
            });
        }
        if self.rows.contains_key(&doc_id) {
            return Err(EncoderError::EmbeddingFile(format!("duplicate doc_id {doc_id:?}")));
        }
        self.order.push(doc_id.clone());
        self.rows.insert(doc_id, (n_entities, data));
        Ok(())
    }

    /// `(n_entities, row-major values)` for a document.
    pub fn get(&self, doc_id: &str) -> Option<(usize, &[f32])> {
        self.rows.get(doc_id).map(|(n, d)| (*n, d.as_slice()))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), EncoderError> {
        let mut offset = 0u64;
        let mut docs = Vec::with_capacity(self.order.len());
        for id in &self.order {
            let (n, _) = &self.rows[id];
            docs.push(DocEntry {
                doc_id: id.clone(),
                n_entities: *n,
                offset,
            });
            offset += (n * self.dim * 4) as u64;
        }
        let header = serde_json::to_vec(&Header { dim: self.dim, docs })
            .map_err(|e| EncoderError::EmbeddingFile(e.to_string()))?;
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for id in &self.order {
            for x in &self.rows[id].1 {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, EncoderError> {
        let bad = |m: String| EncoderError::EmbeddingFile(m);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != EMBEDDING_MAGIC {
            return Err(bad("bad magic bytes".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut header)?;
        let header: Header = serde_json::from_slice(&header).map_err(|e| bad(format!("header: {e}")))?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        let mut file = EmbeddingFile::new(header.dim);
        for d in header.docs {
            let start = d.offset as usize;
            let end = start + d.n_entities * header.dim * 4;
            let bytes = payload
                .get(start..end)
                .ok_or_else(|| bad(format!("rows of {:?} lie outside the payload", d.doc_id)))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            file.insert(d.doc_id, d.n_entities, data)?;
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EncoderError> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncoderError> {
        Self::read(BufReader::new(File::open(path)?))
    }
}
