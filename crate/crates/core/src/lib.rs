//! Knowledge-grounded response engine over a dialogue-state knowledge graph.
//!
//! Each turn the graph is extended with facts derived by exact probabilistic
//! inference over a small rule set, every fact is verbalized and scored for
//! conversational relevance, and the top facts are placed in the prompt of a
//! pluggable response generator.

pub mod augment;
pub mod builtins;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fixture;
pub mod generation;
pub mod http;
pub mod inference;
pub mod kg;
pub mod linking;
pub mod par;
pub mod pipeline;
pub mod verbalizer;
pub mod relevance;
pub mod rulelang;
pub mod value;

pub use error::{Error, Result};
