//! Per-fact relevance features.

use serde::{Deserialize, Serialize};

use super::bm25::{bm25_scores, min_max, Bm25Params};
use super::embed::{cosine, EmbeddingClient};
use crate::error::{Error, Result};
use crate::kg::{DialogueState, NodeId, REFERS_TO};
use crate::verbalizer::VerbalizedFact;

pub const NUM_FEATURES: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Features {
    /// Cosine to the last turn.
    pub cos_k1: f64,
    /// Cosine to the last two turns.
    pub cos_k2: f64,
    /// BM25 against the current user utterance, min-max normalized over the candidates.
    pub bm25: f64,
    pub recency: f64,
}

impl Features {
    pub fn to_array(self) -> [f64; NUM_FEATURES] {
        [self.cos_k1, self.cos_k2, self.bm25, self.recency]
    }

    pub fn from_array(a: [f64; NUM_FEATURES]) -> Self {
        Features { cos_k1: a[0], cos_k2: a[1], bm25: a[2], recency: a[3] }
    }
}

/// Texts of the last `k` turns, oldest first, joined by spaces.
pub fn history_text(state: &DialogueState, k: usize) -> String {
    let turns = state.turns();
    let from = turns.len().saturating_sub(k);
    turns[from..].iter().map(|t| t.text.as_str()).collect::<Vec<_>>().join(" ")
}

/// `max_e P_link(e) * 2^-d(e)` over the entity arguments, where `d(e)` is the
/// number of user turns since the mention that linked `e`. Zero when no
/// argument was ever mentioned.
pub fn recency_score(state: &DialogueState, entities: &[NodeId]) -> f64 {
    let mut best = 0.0f64;
    for e in state.graph.edges_labeled(REFERS_TO) {
        if !entities.contains(&e.dst) {
            continue;
        }
        let Some(m) = state.mention(&e.src) else { continue };
        let Some(d) = state.user_turns_since(&m.turn) else { continue };
        best = best.max(e.prob * 0.5f64.powi(d as i32));
    }
    best
}

/// Features for each candidate fact, given the state after the current user
/// turn was added.
pub fn compute_features(
    state: &DialogueState,
    facts: &[VerbalizedFact],
    embedder: &dyn EmbeddingClient,
    bm25: Bm25Params,
) -> Result<Vec<Features>> {
    if facts.is_empty() {
        return Ok(Vec::new());
    }
    let query = state.last_user_turn().map(|t| t.text.clone()).unwrap_or_default();
    let mut texts = vec![history_text(state, 1), history_text(state, 2)];
    texts.extend(facts.iter().map(|f| f.text.clone()));
    let vecs = embedder.embed(&texts)?;
    if vecs.len() != texts.len() {
        return Err(Error::Model(format!("embedder returned {} vectors for {} texts", vecs.len(), texts.len())));
    }
    let docs: Vec<String> = facts.iter().map(|f| f.text.clone()).collect();
    let bm = min_max(&bm25_scores(&query, &docs, bm25));
    Ok(facts
        .iter()
        .enumerate()
        .map(|(i, f)| Features {
            cos_k1: cosine(&vecs[0], &vecs[i + 2]),
            cos_k2: cosine(&vecs[1], &vecs[i + 2]),
            bm25: bm[i],
            recency: recency_score(state, &f.entity_args),
        })
        .collect())
}
