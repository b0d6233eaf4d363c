use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },

    #[error("line {line}: weight {weight} outside [0,1]")]
    InvalidWeight { line: usize, weight: f64 },

    #[error("line {line}: head variable {var} of {head} is not bound by the body")]
    RangeRestriction { line: usize, var: String, head: String },

    #[error("unstratifiable program: negative cycle through {}", cycle.join(" -> "))]
    Unstratifiable { cycle: Vec<String> },

    #[error("builtin {literal} in rule `{rule}` called with unbound required argument")]
    UnboundBuiltin { rule: String, literal: String },

    #[error("query too hard for exact enumeration: {atom} depends on {facts} probabilistic facts (limit {limit})")]
    QueryTooHard { atom: String, facts: usize, limit: usize },

    #[error("unknown predicate {0}")]
    UnknownPredicate(String),

    #[error("interpretation {index} has probability 0 under every weight assignment")]
    ImpossibleInterpretation { index: usize },

    #[error("program has no learnable weights")]
    NoLearnableWeights,

    #[error("atom {atom} in interpretation {index} is outside the Herbrand base")]
    UnknownInterpretationAtom { index: usize, atom: String },

    #[error("span [{start},{end}) invalid for turn {turn} of length {len}")]
    SpanOutOfRange { turn: String, start: usize, end: usize, len: usize },

    #[error("unknown {kind} {id}")]
    UnknownId { kind: &'static str, id: String },

    #[error("empty utterance")]
    EmptyUtterance,

    #[error("template line {line}: {msg}")]
    Template { line: usize, msg: String },

    #[error("{service} request failed after {attempts} attempt(s): {msg}")]
    Http { service: &'static str, attempts: u32, msg: String },

    #[error("{0} is not supported by this endpoint")]
    Unsupported(&'static str),

    #[error("non-finite loss at epoch {epoch}, turn {turn}: {detail}")]
    NonFiniteLoss { epoch: usize, turn: usize, detail: String },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid model file: {0}")]
    Model(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn syntax(line: usize, col: usize, msg: impl Into<String>) -> Self {
        Error::Syntax { line, col, msg: msg.into() }
    }
}
