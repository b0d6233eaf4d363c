//! Sentence embedders and cosine similarity.

use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::http::{HttpConfig, JsonClient};

pub trait EmbeddingClient: Send + Sync {
    /// One unit-norm vector per text.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;
}

pub const HASH_DIM: usize = 256;

/// Bag of hashed character 3-grams, L2-normalized. Deterministic across
/// processes and platforms.
#[derive(Clone, Copy, Debug)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: HASH_DIM }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl HashEmbedder {
    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let padded: Vec<char> = std::iter::once(' ').chain(text.to_lowercase().chars()).chain(std::iter::once(' ')).collect();
        let mut v = vec![0.0; self.dim];
        let mut buf = String::new();
        for w in padded.windows(3) {
            buf.clear();
            buf.extend(w);
            v[(fnv1a(buf.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // too short for a single trigram
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbeddingClient for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Deserialize)]
struct VectorsReply {
    vectors: Vec<Vec<f64>>,
}

/// Embedder behind an HTTP endpoint: `{"texts": [...]}` answered by
/// `{"vectors": [[...], ...]}`. Vectors are re-normalized on arrival.
#[derive(Clone, Debug)]
pub struct ExternalEmbedder {
    client: JsonClient,
}

impl ExternalEmbedder {
    pub fn new(url: impl Into<String>, config: HttpConfig) -> Result<Self> {
        Ok(ExternalEmbedder { client: JsonClient::new("embedder", url, config)? })
    }
}

impl EmbeddingClient for ExternalEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let reply: VectorsReply = self.client.call(&json!({ "texts": texts }))?;
        if reply.vectors.len() != texts.len() {
            return Err(self.client.err(1, format!("{} vectors for {} texts", reply.vectors.len(), texts.len())));
        }
        reply
            .vectors
            .into_iter()
            .map(|mut v| {
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm == 0.0 || !norm.is_finite() {
                    return Err(Error::Model("embedder returned a zero or non-finite vector".into()));
                }
                v.iter_mut().for_each(|x| *x /= norm);
                Ok(v)
            })
            .collect()
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}
