//! Okapi BM25 over a small in-memory document set.

use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Lowercased whitespace tokens with punctuation trimmed from both ends.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// BM25 score of every document for `query`, each query token counted once
/// per occurrence.
pub fn bm25_scores(query: &str, docs: &[String], params: Bm25Params) -> Vec<f64> {
    let q = tokenize(query);
    let toks: Vec<Vec<String>> = docs.iter().map(|d| tokenize(d)).collect();
    bm25_tokens(&q, &toks, params)
}

pub fn bm25_tokens(query: &[String], docs: &[Vec<String>], params: Bm25Params) -> Vec<f64> {
    let n = docs.len() as f64;
    let total: usize = docs.iter().map(Vec::len).sum();
    if docs.is_empty() || query.is_empty() || total == 0 {
        return vec![0.0; docs.len()];
    }
    let avgdl = total as f64 / n;
    let tfs: Vec<HashMap<&str, usize>> = docs
        .iter()
        .map(|d| {
            let mut m = HashMap::new();
            for t in d {
                *m.entry(t.as_str()).or_insert(0) += 1;
            }
            m
        })
        .collect();
    let idf: HashMap<&str, f64> = query
        .iter()
        .map(|t| {
            let df = tfs.iter().filter(|m| m.contains_key(t.as_str())).count() as f64;
            (t.as_str(), (1.0 + (n - df + 0.5) / (df + 0.5)).ln())
        })
        .collect();
    docs.iter()
        .zip(&tfs)
        .map(|(d, tf)| {
            let norm = params.k1 * (1.0 - params.b + params.b * d.len() as f64 / avgdl);
            query
                .iter()
                .map(|t| {
                    let f = *tf.get(t.as_str()).unwrap_or(&0) as f64;
                    idf[t.as_str()] * f * (params.k1 + 1.0) / (f + norm)
                })
                .sum()
        })
        .collect()
}

/// Min-max normalization to [0, 1]; a constant input maps to 0.5.
pub fn min_max(xs: &[f64]) -> Vec<f64> {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![0.5; xs.len()];
    }
    xs.iter().map(|x| (x - lo) / (hi - lo)).collect()
}
