//! Mention detection and rule-based entity linking.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::builtins::{is_time_expression, jw_similarity, lcs, lev_distance, nb_common_words};
use crate::error::{Error, Result};
use crate::http::{HttpConfig, JsonClient};
use crate::inference::{ground, query, GroundOptions, QueryOptions};
use crate::kg::{DialogueState, KnowledgeGraph, MentionId, NodeId, Span, TurnId, MENTION, REFERS_TO, UTTERANCE};
use crate::par::{self, Parallelism};
use crate::rulelang::{Atom, CoreProgram, Literal, PredKey, Program, Term};
use crate::value::{GroundAtom, Value, WeightedFact};

pub const DEFAULT_LINK_THRESHOLD: f64 = 0.1;

/// Pronouns and time-of-day words detected alongside KB names so that the
/// anaphora rules and the morning/afternoon room rules have mentions to use.
pub const DEFAULT_LEXICON: &[&str] = &[
    "i", "me", "my", "myself", "he", "him", "his", "she", "her", "they", "them", "their", "it", "morning",
    "afternoon",
];

pub trait MentionDetector: Send + Sync {
    /// Non-overlapping character spans, in text order.
    fn detect(&self, text: &str) -> Result<Vec<Span>>;
}

/// Longest-first, case-insensitive, whole-word dictionary matching.
#[derive(Clone, Debug, Default)]
pub struct DictionaryMatcher {
    terms: Vec<Vec<char>>,
    times: bool,
}

fn lower_chars(s: &str) -> Vec<char> {
    s.chars().map(|c| c.to_lowercase().next().unwrap_or(c)).collect()
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

impl DictionaryMatcher {
    pub fn new<I, S>(terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut terms: Vec<Vec<char>> =
            terms.into_iter().map(|t| lower_chars(t.as_ref().trim())).filter(|t| !t.is_empty()).collect();
        terms.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        terms.dedup();
        DictionaryMatcher { terms, times: false }
    }

    /// Matcher over every `name` attribute in the graph plus the default lexicon,
    /// also detecting time expressions.
    pub fn from_graph(graph: &KnowledgeGraph) -> Self {
        let names = graph.nodes().filter_map(|n| n.attr_str("name")).map(str::to_string);
        let mut m = Self::new(names.chain(DEFAULT_LEXICON.iter().map(|s| s.to_string())));
        m.times = true;
        m
    }

    pub fn with_time_expressions(mut self, on: bool) -> Self {
        self.times = on;
        self
    }

    fn time_at(chars: &[char], i: usize) -> Option<usize> {
        // longest prefix starting at i that parses as a time expression
        let mut best = None;
        let mut end = i;
        while end < chars.len() && end - i < 8 {
            end += 1;
            let at_boundary = end == chars.len() || !is_word(chars[end]);
            if at_boundary {
                let s: String = chars[i..end].iter().collect();
                if is_time_expression(&s) {
                    best = Some(end);
                }
            }
        }
        best
    }
}

impl MentionDetector for DictionaryMatcher {
    fn detect(&self, text: &str) -> Result<Vec<Span>> {
        let chars = lower_chars(text);
        let mut spans = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if i > 0 && is_word(chars[i - 1]) || !is_word(chars[i]) {
                i += 1;
                continue;
            }
            let mut hit = None;
            if self.times && chars[i].is_ascii_digit() {
                hit = Self::time_at(&chars, i);
            }
            if hit.is_none() {
                hit = self.terms.iter().find_map(|t| {
                    let end = i + t.len();
                    (end <= chars.len() && chars[i..end] == t[..] && (end == chars.len() || !is_word(chars[end])))
                        .then_some(end)
                });
            }
            match hit {
                Some(end) => {
                    spans.push(Span::new(i, end));
                    i = end;
                }
                None => i += 1,
            }
        }
        Ok(spans)
    }
}

#[derive(Deserialize)]
struct SpansReply {
    spans: Vec<[usize; 2]>,
}

/// Mention detector behind an HTTP endpoint:
/// `{"text": ...}` answered by `{"spans": [[start, end], ...]}`.
#[derive(Clone, Debug)]
pub struct ExternalDetector {
    client: JsonClient,
}

impl ExternalDetector {
    pub fn new(url: impl Into<String>, config: HttpConfig) -> Result<Self> {
        Ok(ExternalDetector { client: JsonClient::new("mention detector", url, config)? })
    }
}

impl MentionDetector for ExternalDetector {
    fn detect(&self, text: &str) -> Result<Vec<Span>> {
        let reply: SpansReply = self.client.call(&json!({ "text": text }))?;
        let len = text.chars().count();
        let mut spans: Vec<Span> =
            reply.spans.iter().map(|s| Span::new(s[0], s[1])).filter(|s| s.start < s.end && s.end <= len).collect();
        spans.sort_by_key(|s| (s.start, std::cmp::Reverse(s.end)));
        let mut out: Vec<Span> = Vec::new();
        for s in spans {
            if out.last().is_none_or(|p| s.start >= p.end) {
                out.push(s);
            }
        }
        Ok(out)
    }
}

/// Detects mentions in `turn` and adds them to the state.
pub fn detect_mentions(state: &mut DialogueState, turn: &TurnId, detector: &dyn MentionDetector) -> Result<Vec<MentionId>> {
    let text = state.turn(turn).ok_or_else(|| Error::UnknownId { kind: "turn", id: turn.to_string() })?.text.clone();
    let mut ids = Vec::new();
    for span in detector.detect(&text)? {
        let surface = span.slice(&text).unwrap_or_default().to_string();
        ids.push(state.add_mention(turn, span, &surface)?);
    }
    Ok(ids)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkCandidate {
    pub entity: NodeId,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkResult {
    pub mention: MentionId,
    /// Highest probability first.
    pub candidates: Vec<LinkCandidate>,
}

#[derive(Clone, Debug)]
pub struct LinkOptions {
    pub threshold: f64,
    pub query: QueryOptions,
    pub ground: GroundOptions,
    /// Entities already linked from the previous this many turns stay
    /// candidates regardless of string similarity.
    pub anaphora_reach: usize,
}

impl Default for LinkOptions {
    fn default() -> Self {
        LinkOptions {
            threshold: DEFAULT_LINK_THRESHOLD,
            query: QueryOptions::default(),
            ground: GroundOptions::default(),
            anaphora_reach: 4,
        }
    }
}

/// Whether some string rule guard could fire for `surface` against `name`.
pub fn string_candidate(name: &str, surface: &str) -> bool {
    jw_similarity(name, surface) >= 0.7
        || lev_distance(name, surface) <= 5
        || lcs(name, surface) >= 4
        || nb_common_words(name, surface) > 0
}

/// Candidate entities for a mention: string-similar named nodes plus every
/// referent of the preceding `reach` turns.
pub fn candidates(state: &DialogueState, mention: &MentionId, reach: usize) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    let Some(m) = state.mention(mention) else {
        return out;
    };
    if !is_time_expression(&m.surface) {
        for n in state.graph.nodes() {
            if n.kind == MENTION || n.kind == UTTERANCE {
                continue;
            }
            if let Some(name) = n.attr_str("name") {
                if string_candidate(name, &m.surface) {
                    out.insert(n.id.clone());
                }
            }
        }
    }
    let turns = state.turns();
    if let Some(pos) = turns.iter().position(|t| t.id == m.turn) {
        let recent: Vec<&TurnId> = turns[pos.saturating_sub(reach)..pos].iter().map(|t| &t.id).collect();
        let recent_mentions: BTreeSet<&NodeId> =
            state.mentions().iter().filter(|x| recent.contains(&&x.turn)).map(|x| &x.id).collect();
        for e in state.graph.edges_labeled(REFERS_TO) {
            if recent_mentions.contains(&e.src) {
                out.insert(e.dst.clone());
            }
        }
    }
    out
}

/// The facts the linking rules see for `turn`: the serialized state,
/// `new(turn)`, and name facts restricted to candidate entities.
fn linking_facts(state: &DialogueState, turn: &TurnId, keep: &BTreeSet<NodeId>) -> Vec<WeightedFact> {
    let mut facts: Vec<WeightedFact> = state
        .to_facts()
        .into_iter()
        .filter(|f| {
            &*f.atom.pred != "name"
                || f.atom.arity() != 2
                || matches!(&f.atom.args[0], Value::Sym(s) if keep.contains(&NodeId::new(&**s)))
        })
        .collect();
    facts.push(WeightedFact::certain(GroundAtom::new("new", vec![Value::sym(turn.as_str())])));
    facts
}

/// Links the mentions of `turn`, writing every `refers_to` edge with
/// probability at least the threshold back to the graph.
pub fn link_mentions(
    state: &mut DialogueState,
    rules: &CoreProgram,
    turn: &TurnId,
    options: &LinkOptions,
) -> Result<Vec<LinkResult>> {
    let mentions: Vec<MentionId> = state.mentions_in(turn).map(|m| m.id.clone()).collect();
    if mentions.is_empty() {
        return Ok(Vec::new());
    }
    let per_mention: Vec<BTreeSet<NodeId>> =
        mentions.iter().map(|m| candidates(state, m, options.anaphora_reach)).collect();
    let keep: BTreeSet<NodeId> = per_mention.iter().flatten().cloned().collect();
    let gp = ground(rules, &linking_facts(state, turn, &keep), &options.ground)?;
    let key = PredKey::new(REFERS_TO, 2);
    let mut jobs: Vec<(usize, NodeId, GroundAtom)> = Vec::new();
    for (mi, m) in mentions.iter().enumerate() {
        for id in gp.atoms_of(&key) {
            let atom = gp.atom(id);
            if matches!(&atom.args[0], Value::Sym(s) if **s == *m.as_str()) {
                if let Value::Sym(e) = &atom.args[1] {
                    jobs.push((mi, NodeId::new(&**e), atom.clone()));
                }
            }
        }
    }
    let inner = QueryOptions { parallelism: Parallelism::Sequential, ..options.query };
    let probs = par::map(options.query.parallelism, &jobs, |(_, _, atom)| query(&gp, atom, &inner));
    let mut results: Vec<LinkResult> =
        mentions.iter().map(|m| LinkResult { mention: m.clone(), candidates: Vec::new() }).collect();
    for ((mi, entity, _), p) in jobs.into_iter().zip(probs) {
        let p = p?;
        if p > 0.0 && state.graph.contains(entity.as_str()) {
            results[mi].candidates.push(LinkCandidate { entity, prob: p });
        }
    }
    for r in &mut results {
        r.candidates.sort_by(|a, b| b.prob.total_cmp(&a.prob).then_with(|| a.entity.cmp(&b.entity)));
        for c in &r.candidates {
            if c.prob >= options.threshold {
                state.graph.add_edge(&r.mention, REFERS_TO, &c.entity, c.prob)?;
            }
        }
    }
    Ok(results)
}

/// Repairs a rule whose body joins on a variable that occurs exactly once
/// while another body variable also occurs exactly once in a `mention/2`
/// literal: the dangling variable is renamed to the mention variable. This
/// is the `PM1`/`PM2` slip in the last published anaphora rule.
pub fn repair_dangling_mentions(program: &Program) -> Program {
    let mut out = program.clone();
    for clause in &mut out.clauses {
        let mut counts: std::collections::BTreeMap<String, usize> = Default::default();
        let mut count = |a: &Atom| {
            for v in a.vars() {
                *counts.entry(v.to_string()).or_default() += 1;
            }
        };
        count(&clause.head);
        for lit in &clause.body {
            match lit {
                Literal::Pos(a) | Literal::Neg(a) => count(a),
                Literal::NegGroup(g) => g.iter().for_each(|l| {
                    if let Literal::Pos(a) | Literal::Neg(a) = l {
                        count(a)
                    }
                }),
                _ => {}
            }
        }
        let single = |t: &Term| t.as_var().filter(|v| counts.get(&v.to_string()) == Some(&1)).cloned();
        let dangling_mention = clause.body.iter().find_map(|l| match l {
            Literal::Pos(a) if &*a.pred == MENTION && a.args.len() == 2 => single(&a.args[1]),
            _ => None,
        });
        let dangling_ref = clause.body.iter().find_map(|l| match l {
            Literal::Pos(a) if &*a.pred == REFERS_TO && a.args.len() == 2 => single(&a.args[0]),
            _ => None,
        });
        if let (Some(to), Some(from)) = (dangling_mention, dangling_ref) {
            for lit in &mut clause.body {
                if let Literal::Pos(a) = lit {
                    if &*a.pred == REFERS_TO {
                        rename(a, &from, &to);
                    }
                }
            }
        }
    }
    out
}

fn rename(atom: &mut Atom, from: &crate::value::Sym, to: &crate::value::Sym) {
    for t in &mut atom.args {
        if t.as_var() == Some(from) {
            *t = Term::Var(to.clone());
        }
    }
}
