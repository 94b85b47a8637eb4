use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbeddingProvider, ProviderError};
use crate::classifier::{tokenize, EMBEDDING_DIM};

/// Hex SHA-256 of the text, the embedding cache key.
pub fn content_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    hash: String,
    vector: Vec<f64>,
}

/// Embedding cache backed by a JSON-lines file of `{"hash", "vector"}`
/// records. Without an upstream provider it is offline and unknown texts
/// are a `CACHE_MISS`; with one, misses are fetched and appended.
pub struct EmbeddingCache {
    path: Option<PathBuf>,
    vectors: RwLock<HashMap<String, Vec<f64>>>,
    upstream: Option<Box<dyn EmbeddingProvider>>,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            vectors: RwLock::new(HashMap::new()),
            upstream: None,
        }
    }

    /// Loads `path` if it exists; new entries are appended to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref().to_path_buf();
        let mut vectors = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: CacheLine = serde_json::from_str(&line).map_err(|e| ProviderError::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                if record.vector.len() != EMBEDDING_DIM {
                    return Err(ProviderError::DimensionMismatch {
                        expected: EMBEDDING_DIM,
                        found: record.vector.len(),
                    });
                }
                vectors.insert(record.hash, record.vector);
            }
        }
        Ok(Self {
            path: Some(path),
            vectors: RwLock::new(vectors),
            upstream: None,
        })
    }

    pub fn with_upstream(mut self, provider: Box<dyn EmbeddingProvider>) -> Self {
        self.upstream = Some(provider);
        self
    }

    pub fn len(&self) -> usize {
        self.vectors.read().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, text: &str, vector: Vec<f64>) -> Result<(), ProviderError> {
        if vector.len() != EMBEDDING_DIM {
            return Err(ProviderError::DimensionMismatch {
                expected: EMBEDDING_DIM,
                found: vector.len(),
            });
        }
        let hash = content_hash(text);
        if let Some(path) = &self.path {
            let mut file = OpenOptions::new().create(true).append(true).open(path)?;
            let line = serde_json::to_string(&CacheLine { hash: hash.clone(), vector: vector.clone() })
                .expect("finite vectors serialize");
            writeln!(file, "{line}")?;
        }
        self.vectors
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(hash, vector);
        Ok(())
    }

    fn cached(&self, text: &str) -> Option<Vec<f64>> {
        self.vectors
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(&content_hash(text))
            .cloned()
    }
}

impl EmbeddingProvider for EmbeddingCache {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidRequest("no texts to embed".into()));
        }
        let mut out: Vec<Option<Vec<f64>>> = texts.iter().map(|t| self.cached(t)).collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|i| out[*i].is_none()).collect();
        if !missing.is_empty() {
            let Some(upstream) = &self.upstream else {
                return Err(ProviderError::CacheMiss(content_hash(texts[missing[0]])));
            };
            let batch: Vec<&str> = missing.iter().map(|i| texts[*i]).collect();
            let fetched = upstream.embed(&batch)?;
            for (i, vector) in missing.into_iter().zip(fetched) {
                self.insert(texts[i], vector.clone())?;
                out[i] = Some(vector);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }
}

/// Offline stand-in for a sentence encoder: hashed token counts in 768
/// buckets with signs, L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashEmbedder;

impl HashEmbedder {
    pub fn embed_one(text: &str) -> Vec<f64> {
        let mut v = vec![0.0; EMBEDDING_DIM];
        for (token, count) in tokenize(text) {
            let digest = Sha256::digest(token.as_bytes());
            let bucket = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) as usize % EMBEDDING_DIM;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign * f64::from(count);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ProviderError> {
        if texts.is_empty() {
            return Err(ProviderError::InvalidRequest("no texts to embed".into()));
        }
        Ok(texts.iter().map(|t| Self::embed_one(t)).collect())
    }
}
