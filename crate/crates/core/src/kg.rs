//! Dialogue-state knowledge graph: background KB nodes plus the turns and
//! mentions observed so far, serialized to ground facts for the rule engine.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{EdgeSpec, KbSpec, NodeSpec, AttrSpec, Now};
use crate::error::{Error, Result};
use crate::value::{GroundAtom, Value, WeightedFact};

pub const TODAY: &str = "at_today";
pub const TOMORROW: &str = "at_tomorrow";
pub const NOW: &str = "at_now";

pub const UTTERANCE: &str = "utterance";
pub const MENTION: &str = "mention";
pub const REFERS_TO: &str = "refers_to";
pub const RESPOND_TO: &str = "respond_to";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

/// Utterance nodes double as turn identifiers.
pub type TurnId = NodeId;
/// Mention nodes double as mention identifiers.
pub type MentionId = NodeId;

impl NodeId {
    pub fn new(s: impl Into<String>) -> Self {
        NodeId(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    fn split_counter(&self) -> Option<(&str, u64)> {
        let (prefix, n) = self.0.rsplit_once('_')?;
        Some((prefix, n.parse().ok()?))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r_{}", self.0 + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Str(String),
}

impl AttrValue {
    pub fn to_value(&self) -> Value {
        match self {
            AttrValue::Int(i) => Value::Int(*i),
            AttrValue::Str(s) => Value::str(s),
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttrValue::Str(s) => Some(s),
            AttrValue::Int(_) => None,
        }
    }
}

impl From<&str> for AttrValue {
    fn from(s: &str) -> Self {
        AttrValue::Str(s.to_string())
    }
}

impl From<String> for AttrValue {
    fn from(s: String) -> Self {
        AttrValue::Str(s)
    }
}

impl From<i64> for AttrValue {
    fn from(i: i64) -> Self {
        AttrValue::Int(i)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attr {
    pub value: AttrValue,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: String,
    pub attrs: BTreeMap<String, Attr>,
}

impl Node {
    pub fn attr_str(&self, name: &str) -> Option<&str> {
        self.attrs.get(name).and_then(|a| a.value.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub label: String,
    pub dst: NodeId,
    pub prob: f64,
}

fn check_prob(p: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(Error::Dataset(format!("probability {p} outside [0,1]")))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KnowledgeGraph {
    nodes: BTreeMap<NodeId, Node>,
    edges: Vec<Edge>,
    counters: BTreeMap<String, u64>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_spec(spec: &KbSpec) -> Result<Self> {
        let mut g = KnowledgeGraph::new();
        for n in &spec.nodes {
            g.insert_node(&n.id, &n.kind)?;
            for (name, a) in &n.attrs {
                g.set_attr(&NodeId::new(n.id.clone()), name, a.value.clone(), a.prob.unwrap_or(1.0))?;
            }
        }
        for e in &spec.edges {
            g.add_edge(
                &NodeId::new(e.src.clone()),
                &e.label,
                &NodeId::new(e.dst.clone()),
                e.prob.unwrap_or(1.0),
            )?;
        }
        Ok(g)
    }

    pub fn to_spec(&self) -> KbSpec {
        KbSpec {
            nodes: self
                .nodes
                .values()
                .map(|n| NodeSpec {
                    id: n.id.0.clone(),
                    kind: n.kind.clone(),
                    attrs: n
                        .attrs
                        .iter()
                        .map(|(k, a)| {
                            let prob = (a.prob < 1.0).then_some(a.prob);
                            (k.clone(), AttrSpec { value: a.value.clone(), prob })
                        })
                        .collect(),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeSpec {
                    src: e.src.0.clone(),
                    label: e.label.clone(),
                    dst: e.dst.0.clone(),
                    prob: (e.prob < 1.0).then_some(e.prob),
                })
                .collect(),
        }
    }

    /// Inserts a node with an explicit id.
    pub fn insert_node(&mut self, id: &str, kind: &str) -> Result<NodeId> {
        if kind.is_empty() {
            return Err(Error::Dataset(format!("node {id} has an empty kind")));
        }
        let id = NodeId::new(id);
        if self.nodes.contains_key(&id) {
            return Err(Error::Dataset(format!("duplicate node id {id}")));
        }
        if let Some((prefix, n)) = id.split_counter() {
            let c = self.counters.entry(prefix.to_string()).or_insert(0);
            *c = (*c).max(n);
        }
        self.nodes.insert(
            id.clone(),
            Node { id: id.clone(), kind: kind.to_string(), attrs: BTreeMap::new() },
        );
        Ok(id)
    }

    /// Inserts a node with a fresh `prefix_N` id.
    pub fn add_node(&mut self, prefix: &str, kind: &str) -> NodeId {
        let c = self.counters.entry(prefix.to_string()).or_insert(0);
        *c += 1;
        let id = format!("{prefix}_{c}");
        self.insert_node(&id, kind).expect("fresh id is unique")
    }

    pub fn set_attr(
        &mut self,
        id: &NodeId,
        name: &str,
        value: impl Into<AttrValue>,
        prob: f64,
    ) -> Result<()> {
        let prob = check_prob(prob)?;
        let node = self
            .nodes
            .get_mut(id)
            .ok_or_else(|| Error::UnknownId { kind: "node", id: id.to_string() })?;
        node.attrs.insert(name.to_string(), Attr { value: value.into(), prob });
        Ok(())
    }

    pub fn add_edge(&mut self, src: &NodeId, label: &str, dst: &NodeId, prob: f64) -> Result<EdgeId> {
        let prob = check_prob(prob)?;
        for id in [src, dst] {
            if !self.nodes.contains_key(id) {
                return Err(Error::UnknownId { kind: "node", id: id.to_string() });
            }
        }
        self.edges.push(Edge { src: src.clone(), label: label.to_string(), dst: dst.clone(), prob });
        Ok(EdgeId(self.edges.len() - 1))
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn node_by_str(&self, id: &str) -> Option<&Node> {
        self.nodes.get(&NodeId::new(id))
    }

    pub fn node_mut(&mut self, id: &NodeId) -> Option<&mut Node> {
        self.nodes.get_mut(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(&NodeId::new(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edges_labeled<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| e.label == label)
    }

    pub fn name_of(&self, id: &str) -> Option<&str> {
        self.node_by_str(id).and_then(|n| n.attr_str("name"))
    }

    /// Serializes every node kind, attribute and edge as a ground fact.
    pub fn to_facts(&self) -> Vec<WeightedFact> {
        let mut facts = Vec::with_capacity(self.nodes.len() * 3 + self.edges.len());
        for node in self.nodes.values() {
            let id = Value::sym(&node.id.0);
            facts.push(WeightedFact::certain(GroundAtom::new(&node.kind, vec![id.clone()])));
            for (name, attr) in &node.attrs {
                facts.push(WeightedFact {
                    atom: GroundAtom::new(name, vec![id.clone(), attr.value.to_value()]),
                    prob: attr.prob,
                });
            }
        }
        for e in &self.edges {
            facts.push(WeightedFact {
                atom: GroundAtom::new(&e.label, vec![Value::sym(&e.src.0), Value::sym(&e.dst.0)]),
                prob: e.prob,
            });
        }
        facts.sort_by(|a, b| a.atom.cmp(&b.atom).then(a.prob.total_cmp(&b.prob)));
        facts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::User => "user",
            Speaker::System => "system",
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub id: TurnId,
    pub speaker: Speaker,
    pub text: String,
}

/// Half-open `[start, end)` span in characters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    /// Characters of `text` covered by this span.
    pub fn slice<'a>(&self, text: &'a str) -> Option<&'a str> {
        let mut idx = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
        let start = idx.nth(self.start)?;
        let end = if self.end == self.start {
            start
        } else {
            idx.nth(self.end - self.start - 1)?
        };
        Some(&text[start..end])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    pub id: MentionId,
    pub turn: TurnId,
    pub span: Span,
    pub surface: String,
}

/// The full per-session state: graph, ordered turns, mentions and clock anchor.
#[derive(Clone, Debug, PartialEq)]
pub struct DialogueState {
    pub graph: KnowledgeGraph,
    turns: Vec<Turn>,
    mentions: Vec<Mention>,
    now: Now,
}

impl DialogueState {
    /// Wraps a KB graph, adding the `at_today`, `at_tomorrow` and `at_now` anchors.
    pub fn new(mut graph: KnowledgeGraph, now: Now) -> Result<Self> {
        let tomorrow = now.tomorrow()?;
        for (id, kind, attr, value) in [
            (TODAY, "date", "date", now.date.clone()),
            (TOMORROW, "date", "date", tomorrow),
            (NOW, "time", "time", now.time.clone()),
        ] {
            let nid = NodeId::new(id);
            if graph.node(&nid).is_none() {
                graph.insert_node(id, kind)?;
            }
            graph.set_attr(&nid, attr, value, 1.0)?;
        }
        let (today, tomorrow) = now.weekdays()?;
        graph.set_attr(&NodeId::new(TODAY), "weekday", today, 1.0)?;
        graph.set_attr(&NodeId::new(TOMORROW), "weekday", tomorrow, 1.0)?;
        Ok(DialogueState { graph, turns: Vec::new(), mentions: Vec::new(), now })
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn mentions(&self) -> &[Mention] {
        &self.mentions
    }

    pub fn now(&self) -> &Now {
        &self.now
    }

    pub fn turn(&self, id: &TurnId) -> Option<&Turn> {
        self.turns.iter().find(|t| &t.id == id)
    }

    pub fn last_turn(&self) -> Option<&Turn> {
        self.turns.last()
    }

    pub fn last_user_turn(&self) -> Option<&Turn> {
        self.turns.iter().rev().find(|t| t.speaker == Speaker::User)
    }

    pub fn mentions_in<'a>(&'a self, turn: &'a TurnId) -> impl Iterator<Item = &'a Mention> + 'a {
        self.mentions.iter().filter(move |m| &m.turn == turn)
    }

    pub fn mention(&self, id: &MentionId) -> Option<&Mention> {
        self.mentions.iter().find(|m| &m.id == id)
    }

    pub fn add_turn(&mut self, speaker: Speaker, text: &str) -> Result<TurnId> {
        if text.trim().is_empty() {
            return Err(Error::EmptyUtterance);
        }
        let id = self.graph.add_node("u", UTTERANCE);
        self.graph.set_attr(&id, "text", text, 1.0)?;
        self.graph.set_attr(&id, "speaker", speaker.as_str(), 1.0)?;
        if let Some(prev) = self.turns.last() {
            let prev = prev.id.clone();
            self.graph.add_edge(&id, RESPOND_TO, &prev, 1.0)?;
        }
        self.turns.push(Turn { id: id.clone(), speaker, text: text.to_string() });
        Ok(id)
    }

    pub fn add_mention(&mut self, turn: &TurnId, span: Span, surface: &str) -> Result<MentionId> {
        let t = self
            .turn(turn)
            .ok_or_else(|| Error::UnknownId { kind: "turn", id: turn.to_string() })?;
        let len = t.text.chars().count();
        if span.start >= span.end || span.end > len {
            return Err(Error::SpanOutOfRange { turn: turn.to_string(), start: span.start, end: span.end, len });
        }
        let id = self.graph.add_node("m", MENTION);
        self.graph.set_attr(&id, "string", surface, 1.0)?;
        self.graph.add_edge(turn, MENTION, &id, 1.0)?;
        self.mentions.push(Mention { id: id.clone(), turn: turn.clone(), span, surface: surface.to_string() });
        Ok(id)
    }

    pub fn to_facts(&self) -> Vec<WeightedFact> {
        self.graph.to_facts()
    }

    /// Number of user turns strictly after `turn`.
    pub fn user_turns_since(&self, turn: &TurnId) -> Option<usize> {
        let pos = self.turns.iter().position(|t| &t.id == turn)?;
        Some(self.turns[pos + 1..].iter().filter(|t| t.speaker == Speaker::User).count())
    }

    /// Entities linked from mentions of the last user turn with probability at
    /// least `link_threshold`, highest probability first.
    pub fn current_turn_entities(&self, link_threshold: f64) -> Vec<NodeId> {
        let Some(turn) = self.last_user_turn() else {
            return Vec::new();
        };
        let mentions: Vec<&NodeId> = self.mentions_in(&turn.id).map(|m| &m.id).collect();
        let mut best: BTreeMap<&NodeId, f64> = BTreeMap::new();
        for e in self.graph.edges_labeled(REFERS_TO) {
            if e.prob >= link_threshold && mentions.contains(&&e.src) {
                let p = best.entry(&e.dst).or_insert(0.0);
                *p = p.max(e.prob);
            }
        }
        let mut out: Vec<(&NodeId, f64)> = best.into_iter().collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        out.into_iter().map(|(id, _)| id.clone()).collect()
    }
}

impl Serialize for DialogueState {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Snapshot<'a> {
            kb: KbSpec,
            turns: &'a [Turn],
            mentions: &'a [Mention],
            now: &'a Now,
        }
        Snapshot { kb: self.graph.to_spec(), turns: &self.turns, mentions: &self.mentions, now: &self.now }
            .serialize(serializer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> DialogueState {
        DialogueState::new(KnowledgeGraph::new(), Now::new("2023-05-01", "10:15")).unwrap()
    }

    #[test]
    fn first_turn_has_no_respond_to() {
        let mut s = state();
        let u1 = s.add_turn(Speaker::User, "Hi robot").unwrap();
        assert_eq!(u1.as_str(), "u_1");
        assert_eq!(s.graph.edges_labeled(RESPOND_TO).count(), 0);
    }

    #[test]
    fn second_turn_responds_to_first() {
        let mut s = state();
        s.add_turn(Speaker::User, "Hi robot").unwrap();
        let u2 = s.add_turn(Speaker::System, "Hello").unwrap();
        let e: Vec<_> = s.graph.edges_labeled(RESPOND_TO).collect();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].src, u2);
        assert_eq!(e[0].dst.as_str(), "u_1");
    }

    #[test]
    fn turn_ids_follow_counter() {
        let mut s = state();
        for i in 0..5 {
            s.add_turn(Speaker::User, &format!("turn {i}")).unwrap();
        }
        let ids: Vec<_> = s.turns().iter().map(|t| t.id.to_string()).collect();
        assert_eq!(ids, ["u_1", "u_2", "u_3", "u_4", "u_5"]);
    }

    #[test]
    fn empty_text_rejected() {
        assert!(matches!(state().add_turn(Speaker::User, "  "), Err(Error::EmptyUtterance)));
    }

    #[test]
    fn mention_surface_and_edge() {
        let mut s = state();
        let u = s.add_turn(Speaker::User, "my name is Curtis Williams").unwrap();
        let span = Span::new(11, 26);
        assert_eq!(span.slice("my name is Curtis Williams"), Some("Curtis Williams"));
        let m = s.add_mention(&u, span, "Curtis Williams").unwrap();
        let node = s.graph.node(&m).unwrap();
        assert_eq!(node.attr_str("string"), Some("Curtis Williams"));
        assert!(s.graph.edges_labeled(MENTION).any(|e| e.src == u && e.dst == m));
    }

    #[test]
    fn zero_length_and_out_of_range_spans() {
        let mut s = state();
        let u = s.add_turn(Speaker::User, "hello").unwrap();
        assert!(matches!(s.add_mention(&u, Span::new(2, 2), ""), Err(Error::SpanOutOfRange { .. })));
        assert!(matches!(s.add_mention(&u, Span::new(3, 9), "x"), Err(Error::SpanOutOfRange { .. })));
    }

    #[test]
    fn two_mentions_same_turn() {
        let mut s = state();
        let u = s.add_turn(Speaker::User, "jill and bob").unwrap();
        let a = s.add_mention(&u, Span::new(0, 4), "jill").unwrap();
        let b = s.add_mention(&u, Span::new(9, 12), "bob").unwrap();
        assert_ne!(a, b);
        assert_eq!(s.mentions_in(&u).count(), 2);
    }

    #[test]
    fn person_serializes_to_kind_and_name() {
        let mut g = KnowledgeGraph::new();
        let p = g.insert_node("p_1", "person").unwrap();
        g.set_attr(&p, "name", "Jill Martinez", 1.0).unwrap();
        let text: Vec<String> = g.to_facts().iter().map(|f| f.to_string()).collect();
        assert_eq!(text, ["name(p_1,\"Jill Martinez\").", "person(p_1)."]);
    }

    #[test]
    fn probabilistic_edge_serialization() {
        let mut g = KnowledgeGraph::new();
        let m = g.insert_node("m_1", "mention").unwrap();
        let p = g.insert_node("p_1", "person").unwrap();
        g.add_edge(&m, REFERS_TO, &p, 0.9).unwrap();
        let facts = g.to_facts();
        let edge = facts.iter().find(|f| &*f.atom.pred == REFERS_TO).unwrap();
        assert_eq!(edge.to_string(), "0.9::refers_to(m_1,p_1).");
        assert_eq!(edge.prob, 0.9);
    }

    #[test]
    fn empty_graph_no_facts() {
        assert!(KnowledgeGraph::new().to_facts().is_empty());
    }

    #[test]
    fn anchors_present() {
        let s = state();
        assert_eq!(s.graph.node_by_str(TODAY).unwrap().kind, "date");
        assert_eq!(s.graph.node_by_str(TODAY).unwrap().attr_str("date"), Some("2023-05-01"));
        assert_eq!(s.graph.node_by_str(TOMORROW).unwrap().attr_str("date"), Some("2023-05-02"));
        assert_eq!(s.graph.node_by_str(NOW).unwrap().attr_str("time"), Some("10:15"));
    }

    #[test]
    fn current_turn_entities_dedup_and_order() {
        let mut g = KnowledgeGraph::new();
        g.insert_node("p_1", "person").unwrap();
        g.insert_node("p_2", "person").unwrap();
        let mut s = DialogueState::new(g, Now::new("2023-05-01", "10:15")).unwrap();
        assert!(s.current_turn_entities(0.1).is_empty());
        let u = s.add_turn(Speaker::User, "jill and jill m").unwrap();
        let a = s.add_mention(&u, Span::new(0, 4), "jill").unwrap();
        let b = s.add_mention(&u, Span::new(9, 15), "jill m").unwrap();
        s.graph.add_edge(&a, REFERS_TO, &"p_1".into(), 0.92).unwrap();
        s.graph.add_edge(&b, REFERS_TO, &"p_1".into(), 0.5).unwrap();
        s.graph.add_edge(&b, REFERS_TO, &"p_2".into(), 0.95).unwrap();
        s.graph.add_edge(&a, REFERS_TO, &"p_2".into(), 0.05).unwrap();
        let ids: Vec<String> = s.current_turn_entities(0.1).iter().map(|i| i.to_string()).collect();
        assert_eq!(ids, ["p_2", "p_1"]);
    }

    #[test]
    fn fresh_ids_skip_loaded_ones() {
        let mut g = KnowledgeGraph::new();
        g.insert_node("m_4", "mention").unwrap();
        assert_eq!(g.add_node("m", "mention").as_str(), "m_5");
    }
}
