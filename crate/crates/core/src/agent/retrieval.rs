use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk: Chunk,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("chunk {doc_id}#{chunk_index} has empty text")]
    EmptyChunk { doc_id: String, chunk_index: usize },
    #[error("chunk {doc_id}#{chunk_index} appears twice")]
    Duplicate { doc_id: String, chunk_index: usize },
}

/// Lexical retrieval store. A chunk's score is the summed frequency of the
/// distinct query terms it contains, normalised by the chunk's length.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ContextStore {
    chunks: Vec<Chunk>,
}

fn terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

impl ContextStore {
    pub fn new(chunks: Vec<Chunk>) -> Result<Self, StoreError> {
        let mut seen = HashSet::new();
        for c in &chunks {
            if c.text.trim().is_empty() {
                return Err(StoreError::EmptyChunk {
                    doc_id: c.doc_id.clone(),
                    chunk_index: c.chunk_index,
                });
            }
            if !seen.insert((c.doc_id.clone(), c.chunk_index)) {
                return Err(StoreError::Duplicate {
                    doc_id: c.doc_id.clone(),
                    chunk_index: c.chunk_index,
                });
            }
        }
        Ok(ContextStore { chunks })
    }

    /// Split each document on blank lines into chunks.
    pub fn from_documents(docs: &[(&str, &str)]) -> Result<Self, StoreError> {
        let mut chunks = Vec::new();
        for (doc_id, text) in docs {
            let paras = text.split("\n\n").map(str::trim).filter(|p| !p.is_empty());
            for (chunk_index, para) in paras.enumerate() {
                chunks.push(Chunk {
                    doc_id: doc_id.to_string(),
                    chunk_index,
                    text: para.to_string(),
                    tags: Vec::new(),
                });
            }
        }
        Self::new(chunks)
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn retrieve(&self, query: &str, top_k: usize) -> Vec<ScoredChunk> {
        let query: HashSet<String> = terms(query).into_iter().collect();
        let mut scored: Vec<ScoredChunk> = self
            .chunks
            .iter()
            .filter_map(|c| {
                let words = terms(&c.text);
                let mut tf: HashMap<&str, usize> = HashMap::new();
                for w in &words {
                    *tf.entry(w.as_str()).or_default() += 1;
                }
                let hits: usize = query.iter().filter_map(|q| tf.get(q.as_str())).sum();
                (hits > 0).then(|| ScoredChunk {
                    chunk: c.clone(),
                    score: hits as f64 / words.len() as f64,
                })
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.chunk.doc_id.cmp(&b.chunk.doc_id))
                .then_with(|| a.chunk.chunk_index.cmp(&b.chunk.chunk_index))
        });
        scored.truncate(top_k);
        scored
    }
}
