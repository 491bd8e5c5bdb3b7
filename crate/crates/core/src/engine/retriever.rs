//! File-backed retriever: precomputed ranked context lists per query id.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EngineError;

/// One retrieved context bundle: an ordered list of passages (one per
/// hop).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedContext {
    pub id: String,
    pub passages: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retriever_score: Option<f64>,
}

/// Line format of the context store file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextStoreLine {
    pub query_id: String,
    pub contexts: Vec<RetrievedContext>,
}

/// In-memory index of a context store. Repeated lines for one query id
/// append in file order.
#[derive(Debug, Clone, Default)]
pub struct FileRetriever {
    by_query: BTreeMap<String, Vec<RetrievedContext>>,
}

impl FileRetriever {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn from_reader(reader: impl BufRead) -> Result<Self, EngineError> {
        let mut by_query: BTreeMap<String, Vec<RetrievedContext>> = BTreeMap::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ContextStoreLine = serde_json::from_str(&line)?;
            by_query.entry(parsed.query_id).or_default().extend(parsed.contexts);
        }
        Ok(FileRetriever { by_query })
    }

    /// First `n` stored contexts for the query, in stored order. Fewer are
    /// returned without error when the store holds fewer.
    pub fn top_n(&self, query_id: &str, n: usize) -> Result<Vec<RetrievedContext>, EngineError> {
        let contexts = self
            .by_query
            .get(query_id)
            .ok_or_else(|| EngineError::UnknownQueryId(query_id.to_string()))?;
        Ok(contexts.iter().take(n).cloned().collect())
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.by_query.keys().map(String::as_str)
    }
}
