//! Exact cosine-similarity vector store with JSON-lines persistence.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::cosine;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreEntry {
    pub id: String,
    pub vector: Vec<f32>,
    pub payload: String,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("vector has {got} dimensions, store expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("entry {0} has an empty payload")]
    EmptyPayload(String),
    #[error("duplicate entry id {0}")]
    DuplicateId(String),
    #[error("store file line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// An in-memory list of embedded entries searched by brute force.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    entries: Vec<StoreEntry>,
}

#[derive(Serialize, Deserialize)]
struct Line {
    id: String,
    vector: String,
    payload: String,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

fn encode(vector: &[f32]) -> String {
    let bytes: Vec<u8> = vector.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str) -> Result<Vec<f32>, String> {
    let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
    if bytes.len() % 4 != 0 {
        return Err(format!("vector byte length {} is not a multiple of 4", bytes.len()));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

impl VectorStore {
    pub fn new(dim: usize) -> VectorStore {
        VectorStore { dim, entries: Vec::new() }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[StoreEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&StoreEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn contains_metadata(&self, key: &str, value: &str) -> bool {
        self.entries.iter().any(|e| e.metadata.get(key).is_some_and(|v| v == value))
    }

    pub fn add(&mut self, entry: StoreEntry) -> Result<(), StoreError> {
        if entry.vector.len() != self.dim {
            return Err(StoreError::DimensionMismatch { expected: self.dim, got: entry.vector.len() });
        }
        if entry.payload.trim().is_empty() {
            return Err(StoreError::EmptyPayload(entry.id));
        }
        if self.get(&entry.id).is_some() {
            return Err(StoreError::DuplicateId(entry.id));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Similarity of every entry to `query`, in insertion order.
    pub fn similarities(&self, query: &[f32]) -> Vec<f64> {
        self.entries.iter().map(|e| cosine(query, &e.vector)).collect()
    }

    /// The `k` most similar entries, best first; ties keep insertion order.
    pub fn top_k(&self, query: &[f32], k: usize) -> Vec<(usize, f64)> {
        let mut scored: Vec<(usize, f64)> = self.similarities(query).into_iter().enumerate().collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut out = BufWriter::new(fs::File::create(&tmp)?);
            for e in &self.entries {
                let line = Line {
                    id: e.id.clone(),
                    vector: encode(&e.vector),
                    payload: e.payload.clone(),
                    metadata: e.metadata.clone(),
                };
                serde_json::to_writer(&mut out, &line).map_err(std::io::Error::from)?;
                out.write_all(b"\n")?;
            }
            out.flush()?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }

    /// Loads a store written by [`VectorStore::save`]; a missing file yields an empty store.
    pub fn load(path: &Path, dim: usize) -> Result<VectorStore, StoreError> {
        let mut store = VectorStore::new(dim);
        let text = match fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(store),
            Err(e) => return Err(e.into()),
        };
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let corrupt = |reason: String| StoreError::Corrupt { line: i + 1, reason };
            let line: Line = serde_json::from_str(raw).map_err(|e| corrupt(e.to_string()))?;
            let vector = decode(&line.vector).map_err(corrupt)?;
            store.add(StoreEntry { id: line.id, vector, payload: line.payload, metadata: line.metadata })?;
        }
        Ok(store)
    }
}
