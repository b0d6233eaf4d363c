//! Grounding, exact inference and weight learning.

mod ground;
mod learn;
mod wmc;

pub use ground::{ground, AtomId, GroundOptions, GroundProgram, GroundRule, ProbFact};
pub use learn::{learn_weights, parse_interpretations, Interpretation, LearnOptions, LearnResult};
pub use wmc::{in_scope, query, query_all, Marginal, QueryAll, QueryOptions, DEFAULT_MAX_ENUM_FACTS};
