//! Relevance scoring of verbalized facts.

mod bm25;
mod embed;
mod features;
mod model;
mod train;

pub use bm25::{bm25_scores, bm25_tokens, min_max, tokenize, Bm25Params};
pub use embed::{cosine, EmbeddingClient, ExternalEmbedder, HashEmbedder, HASH_DIM};
pub use features::{compute_features, history_text, recency_score, Features, NUM_FEATURES};
pub use model::{score_and_select, softmax, RelevanceModel, Scored, DEFAULT_HIDDEN};
pub use train::{loss_and_grad, train, LikelihoodScorer, TrainCandidate, TrainConfig, TrainReport, TrainTurn};
