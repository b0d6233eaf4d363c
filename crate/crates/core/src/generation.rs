//! Prompt construction and response generators.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::http::{HttpConfig, JsonClient};
use crate::kg::Speaker;
use crate::relevance::{LikelihoodScorer, TrainCandidate, TrainTurn};

pub const INSTRUCTION: &str = "You are an assistant. Use only the following facts.";
pub const DEFAULT_MAX_PROMPT_CHARS: usize = 4000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptFact {
    pub id: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub instruction: String,
    /// Most relevant first.
    pub facts: Vec<PromptFact>,
    pub history: Vec<(Speaker, String)>,
    pub rendered: String,
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn render(instruction: &str, facts: &[PromptFact], history: &[(Speaker, String)]) -> String {
    let mut lines = vec![one_line(instruction)];
    if !facts.is_empty() {
        lines.push("Facts:".into());
        lines.extend(facts.iter().map(|f| format!("- {}", one_line(&f.text))));
    }
    lines.push("Dialogue:".into());
    lines.extend(history.iter().map(|(s, t)| format!("{s}: {}", one_line(t))));
    lines.join("\n")
}

/// Keeps the first `k` facts, then drops facts from the tail and after them
/// the oldest turns until the rendering fits in `max_chars` characters.
pub fn build_prompt(history: &[(Speaker, String)], facts: &[PromptFact], k: usize, max_chars: usize) -> Prompt {
    let mut facts: Vec<PromptFact> = facts.iter().take(k).cloned().collect();
    let mut history: Vec<(Speaker, String)> = history.to_vec();
    let mut rendered = render(INSTRUCTION, &facts, &history);
    while rendered.chars().count() > max_chars {
        if facts.pop().is_none() {
            if history.is_empty() {
                break;
            }
            history.remove(0);
        }
        rendered = render(INSTRUCTION, &facts, &history);
    }
    Prompt { instruction: INSTRUCTION.into(), facts, history, rendered }
}

pub trait GeneratorClient: Send + Sync {
    fn generate(&self, prompt: &Prompt) -> Result<String>;
    /// `ln P(response | prompt)`.
    fn likelihood(&self, prompt: &Prompt, response: &str) -> Result<f64>;
}

pub const MOCK_PREFIX: &str = "Here is what I found: ";
pub const MOCK_APOLOGY: &str = "I'm sorry, I don't have that information.";

/// Deterministic stand-in generator. Responses echo the top fact; the
/// likelihood is high when the prompt holds a gold fact for the response.
#[derive(Clone, Debug, Default)]
pub struct MockGenerator {
    gold: HashMap<String, BTreeSet<String>>,
}

impl MockGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers the gold fact ids for turns whose reference response is `response`.
    pub fn with_gold(mut self, response: impl Into<String>, fact_ids: impl IntoIterator<Item = String>) -> Self {
        self.add_gold(response, fact_ids);
        self
    }

    pub fn add_gold(&mut self, response: impl Into<String>, fact_ids: impl IntoIterator<Item = String>) {
        self.gold.entry(response.into()).or_default().extend(fact_ids);
    }
}

impl GeneratorClient for MockGenerator {
    fn generate(&self, prompt: &Prompt) -> Result<String> {
        Ok(match prompt.facts.first() {
            Some(f) => format!("{MOCK_PREFIX}{}", f.text),
            None => MOCK_APOLOGY.to_string(),
        })
    }

    fn likelihood(&self, prompt: &Prompt, response: &str) -> Result<f64> {
        let hit = self.gold.get(response).is_some_and(|ids| prompt.facts.iter().any(|f| ids.contains(&f.id)));
        Ok(if hit { 0.9f64.ln() } else { 0.1f64.ln() })
    }
}

/// Generator behind HTTP: `{"prompt"}` returns `{"text"}`, and
/// `{"prompt", "completion"}` returns `{"logprob"}`.
#[derive(Clone, Debug)]
pub struct HttpGenerator {
    client: JsonClient,
}

#[derive(Deserialize)]
struct TextReply {
    text: String,
}

#[derive(Deserialize)]
struct LogprobReply {
    logprob: f64,
}

impl HttpGenerator {
    pub fn new(url: impl Into<String>, config: HttpConfig) -> Result<Self> {
        Ok(HttpGenerator { client: JsonClient::new("generator", url, config)? })
    }
}

impl GeneratorClient for HttpGenerator {
    fn generate(&self, prompt: &Prompt) -> Result<String> {
        let r: TextReply = self.client.call(&json!({ "prompt": prompt.rendered }))?;
        Ok(r.text)
    }

    fn likelihood(&self, prompt: &Prompt, response: &str) -> Result<f64> {
        let reply = self.client.post(&json!({ "prompt": prompt.rendered, "completion": response }))?;
        if matches!(reply.status, 400 | 404 | 405 | 422 | 501) {
            return Err(Error::Unsupported("likelihood scoring"));
        }
        if !(200..300).contains(&reply.status) {
            return Err(self.client.err(reply.attempts, format!("status {}: {}", reply.status, reply.body)));
        }
        let attempts = reply.attempts;
        match serde_json::from_value::<LogprobReply>(reply.body) {
            Ok(r) if r.logprob.is_finite() && r.logprob <= 0.0 => Ok(r.logprob),
            Ok(r) => Err(self.client.err(attempts, format!("invalid logprob {}", r.logprob))),
            Err(_) => Err(Error::Unsupported("likelihood scoring")),
        }
    }
}

/// `P(y|x,z)` from a generator, one single-fact prompt per candidate.
pub struct GeneratorScorer<'a> {
    pub generator: &'a dyn GeneratorClient,
    pub max_chars: usize,
}

impl LikelihoodScorer for GeneratorScorer<'_> {
    fn likelihood(&self, turn: &TrainTurn, candidate: &TrainCandidate) -> Result<f64> {
        let fact = PromptFact { id: candidate.id.clone(), text: candidate.text.clone() };
        let prompt = build_prompt(&turn.history, &[fact], 1, self.max_chars);
        Ok(self.generator.likelihood(&prompt, &turn.response)?.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn facts(n: usize) -> Vec<PromptFact> {
        (0..n).map(|i| PromptFact { id: format!("f({i})"), text: format!("Fact number {i}.") }).collect()
    }

    fn history() -> Vec<(Speaker, String)> {
        vec![(Speaker::User, "Hello there".into()), (Speaker::System, "Hi.".into()), (Speaker::User, "What events do I have today?".into())]
    }

    #[test]
    fn k_limits_fact_lines() {
        let p = build_prompt(&history(), &facts(12), 10, usize::MAX);
        assert_eq!(p.rendered.lines().filter(|l| l.starts_with("- ")).count(), 10);
        assert_eq!(p.rendered.lines().next(), Some(INSTRUCTION));
        assert!(p.rendered.ends_with("user: What events do I have today?"));
        let order: Vec<&str> = p.rendered.lines().filter_map(|l| l.strip_prefix("- ")).collect();
        assert_eq!(order, p.facts.iter().map(|f| f.text.as_str()).collect::<Vec<_>>());
    }

    #[test]
    fn no_facts_no_block() {
        let p = build_prompt(&history(), &[], 10, usize::MAX);
        assert!(!p.rendered.contains("Facts:"));
    }

    #[test]
    fn truncation_order() {
        let full = build_prompt(&history(), &facts(3), 10, usize::MAX);
        let len = full.rendered.chars().count();
        let p = build_prompt(&history(), &facts(3), 10, len - 1);
        assert_eq!(p.facts, facts(2));
        assert_eq!(p.history.len(), 3);
        let tiny = build_prompt(&history(), &facts(3), 10, 100);
        assert!(tiny.facts.is_empty());
        assert!(tiny.history.len() < 3);
        assert_eq!(tiny.history.last(), history().last());
    }

    #[test]
    fn mock_contract() {
        let g = MockGenerator::new().with_gold("gold reply", ["f(1)".to_string()]);
        let p = build_prompt(&history(), &facts(2), 10, usize::MAX);
        assert_eq!(g.generate(&p).unwrap(), "Here is what I found: Fact number 0.");
        assert_eq!(g.generate(&build_prompt(&history(), &[], 10, usize::MAX)).unwrap(), MOCK_APOLOGY);
        assert_eq!(g.likelihood(&p, "gold reply").unwrap(), 0.9f64.ln());
        assert_eq!(g.likelihood(&build_prompt(&history(), &facts(1), 10, usize::MAX), "gold reply").unwrap(), 0.1f64.ln());
        assert_eq!(g.likelihood(&p, "other").unwrap(), 0.1f64.ln());
    }
}
