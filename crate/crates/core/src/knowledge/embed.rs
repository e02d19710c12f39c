//! Text embedding providers.

use std::time::Duration;

use serde_json::json;
use thiserror::Error;

use crate::http;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EmbedError {
    #[error("embedding transport error: {0}")]
    Transport(String),
    #[error("embedding provider returned an unusable response: {0}")]
    Provider(String),
    #[error("missing API key: environment variable {0} is not set")]
    MissingApiKey(String),
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError>;

    fn dimension(&self) -> usize;

    fn model_id(&self) -> &str;
}

pub const DEFAULT_HASHING_DIM: usize = 256;

/// Deterministic local embedder: signed feature hashing of lowercase word unigrams and
/// bigrams, L2-normalized. Texts sharing vocabulary get positive cosine similarity.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    model: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> HashingEmbedder {
        assert!(dim > 0, "embedding dimension must be positive");
        HashingEmbedder { dim, model: format!("hashing-{dim}") }
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder::new(DEFAULT_HASHING_DIM)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3))
}

impl EmbeddingProvider for HashingEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
        let mut acc = vec![0f64; self.dim];
        let mut add = |feature: &str, weight: f64| {
            let h = fnv1a(feature.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            acc[(h % self.dim as u64) as usize] += sign * weight;
        };
        for w in &words {
            add(w, 1.0);
        }
        for pair in words.windows(2) {
            add(&format!("{} {}", pair[0], pair[1]), 0.5);
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(acc.into_iter().map(|v| if norm > 0.0 { (v / norm) as f32 } else { 0.0 }).collect())
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn model_id(&self) -> &str {
        &self.model
    }
}

pub const DEFAULT_EMBEDDING_MODEL: &str = "text-embedding-ada-002";
pub const DEFAULT_EMBEDDING_ENDPOINT: &str = "https://api.openai.com/v1/embeddings";

/// OpenAI-compatible embeddings endpoint.
pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    dim: usize,
    api_key: String,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn from_env(endpoint: &str, model: &str, dim: usize, api_key_var: &str) -> Result<RemoteEmbedder, EmbedError> {
        let api_key = std::env::var(api_key_var).map_err(|_| EmbedError::MissingApiKey(api_key_var.to_string()))?;
        Ok(RemoteEmbedder {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            dim,
            api_key,
            agent: http::agent(Duration::from_secs(60)),
        })
    }
}

impl EmbeddingProvider for RemoteEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let body = json!({"model": self.model, "input": text});
        let response = http::post_json(&self.agent, &self.endpoint, &self.api_key, &body).map_err(EmbedError::Transport)?;
        let values = response["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| EmbedError::Provider("missing data[0].embedding".into()))?;
        let vector: Vec<f32> = values.iter().filter_map(|v| v.as_f64()).map(|v| v as f32).collect();
        if vector.len() != self.dim {
            return Err(EmbedError::Provider(format!("expected {} dimensions, got {}", self.dim, vector.len())));
        }
        Ok(vector)
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn model_id(&self) -> &str {
        &self.model
    }
}

/// Cosine similarity, accumulated in f64. Zero vectors have similarity 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_deterministic_and_normalized() {
        let e = HashingEmbedder::default();
        let a = e.embed("global attention block").unwrap();
        assert_eq!(a, e.embed("global attention block").unwrap());
        assert_eq!(a.len(), 256);
        let norm: f64 = a.iter().map(|v| f64::from(*v).powi(2)).sum();
        assert!((norm - 1.0).abs() < 1e-6);
        assert!(e.embed("").unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shared_words_are_closer() {
        let e = HashingEmbedder::default();
        let q = e.embed("channel attention block").unwrap();
        let near = e.embed("attention block with channel gating").unwrap();
        let far = e.embed("soil moisture regression").unwrap();
        assert!(cosine(&q, &near) > cosine(&q, &far));
        assert!((cosine(&q, &q) - 1.0).abs() < 1e-6);
    }
}
