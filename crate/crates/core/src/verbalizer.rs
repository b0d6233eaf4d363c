//! Template-based verbalization of ground facts.
//!
//! Template files are TSV: `predicate/arity<TAB>template`. Placeholders are
//! `$i` (the argument as text), `$name(i)` (a node id resolved to its name),
//! `$list(i)` (list elements resolved and comma-joined) and `$raw(i)` (the
//! argument in rule syntax). A template consisting of a single `-` marks a
//! predicate that is never shown, such as dialogue bookkeeping.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, NodeId, NOW, TODAY, TOMORROW};
use crate::value::{GroundAtom, Value};

#[derive(Clone, Debug, PartialEq)]
enum Piece {
    Lit(String),
    Arg(usize),
    Name(usize),
    List(usize),
    Raw(usize),
}

#[derive(Clone, Debug, PartialEq)]
enum Template {
    Hidden,
    Pieces(Vec<Piece>),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TemplateSet {
    templates: HashMap<(String, usize), Template>,
}

fn parse_template(text: &str, arity: usize, line: usize) -> Result<Template> {
    if text == "-" {
        return Ok(Template::Hidden);
    }
    let err = |msg: String| Error::Template { line, msg };
    let mut pieces = Vec::new();
    let mut lit = String::new();
    let mut rest = text;
    while let Some(pos) = rest.find('$') {
        lit.push_str(&rest[..pos]);
        rest = &rest[pos + 1..];
        let (kind, after) = ["name(", "list(", "raw("]
            .iter()
            .find_map(|k| rest.strip_prefix(k).map(|r| (Some(&k[..k.len() - 1]), r)))
            .unwrap_or((None, rest));
        let digits: String = after.chars().take_while(|c| c.is_ascii_digit()).collect();
        if digits.is_empty() {
            if kind.is_none() {
                lit.push('$');
                continue;
            }
            return Err(err(format!("expected an argument index after ${}(", kind.unwrap_or_default())));
        }
        let mut after = &after[digits.len()..];
        if kind.is_some() {
            after = after.strip_prefix(')').ok_or_else(|| err("unclosed placeholder".to_string()))?;
        }
        let idx: usize = digits.parse().map_err(|_| err(format!("bad index {digits}")))?;
        if idx == 0 || idx > arity {
            return Err(err(format!("placeholder ${idx} out of range for arity {arity}")));
        }
        if !lit.is_empty() {
            pieces.push(Piece::Lit(std::mem::take(&mut lit)));
        }
        let i = idx - 1;
        pieces.push(match kind {
            None => Piece::Arg(i),
            Some("name") => Piece::Name(i),
            Some("list") => Piece::List(i),
            _ => Piece::Raw(i),
        });
        rest = after;
    }
    lit.push_str(rest);
    if !lit.is_empty() {
        pieces.push(Piece::Lit(lit));
    }
    Ok(Template::Pieces(pieces))
}

impl TemplateSet {
    pub fn parse(text: &str) -> Result<Self> {
        let mut set = TemplateSet::default();
        set.extend_from(text)?;
        Ok(set)
    }

    /// Adds the templates in `text`; later definitions replace earlier ones.
    pub fn extend_from(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, template) =
                line.split_once('\t').ok_or_else(|| Error::Template { line: line_no, msg: "missing tab".into() })?;
            let (pred, arity) = key
                .trim()
                .rsplit_once('/')
                .and_then(|(p, a)| Some((p.to_string(), a.parse::<usize>().ok()?)))
                .ok_or_else(|| Error::Template { line: line_no, msg: format!("bad key {key:?}, expected pred/arity") })?;
            let t = parse_template(template.trim(), arity, line_no)?;
            if self.templates.insert((pred.clone(), arity), t).is_some() {
                log::warn!("template line {line_no}: duplicate {pred}/{arity}, keeping the later one");
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Loads every `.tsv` file in `dir`, in file name order.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut files: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "tsv"))
            .collect();
        files.sort();
        let mut set = TemplateSet::default();
        for f in files {
            set.extend_from(&std::fs::read_to_string(f)?)?;
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Whether facts of this predicate are hidden from verbalization.
    pub fn hides(&self, atom: &GroundAtom) -> bool {
        matches!(self.templates.get(&(atom.pred.to_string(), atom.arity())), Some(Template::Hidden))
    }
}

/// A fact rendered as a sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerbalizedFact {
    pub fact: GroundAtom,
    pub prob: f64,
    pub text: String,
    /// Node-id arguments of the fact, list elements included.
    pub entity_args: Vec<NodeId>,
    pub derived: bool,
}

impl VerbalizedFact {
    /// Canonical fact id, the atom in rule syntax.
    pub fn id(&self) -> String {
        self.fact.to_string()
    }
}

fn plain(v: &Value) -> String {
    match v {
        Value::Sym(s) | Value::Str(s) => s.to_string(),
        Value::List(items) => join(&items.iter().map(plain).collect::<Vec<_>>()),
        other => other.to_string(),
    }
}

fn named(v: &Value, graph: &KnowledgeGraph) -> String {
    match v {
        Value::Sym(s) => graph.name_of(s).or_else(|| anchor_name(s)).map_or_else(|| s.to_string(), str::to_string),
        Value::List(items) => join(&items.iter().map(|x| named(x, graph)).collect::<Vec<_>>()),
        other => plain(other),
    }
}

fn anchor_name(id: &str) -> Option<&'static str> {
    match id {
        TODAY => Some("today"),
        TOMORROW => Some("tomorrow"),
        NOW => Some("now"),
        _ => None,
    }
}

/// "a", "a and b", "a, b and c"; "none" for an empty list.
pub fn join(items: &[String]) -> String {
    match items {
        [] => "none".to_string(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

fn entity_args(atom: &GroundAtom, graph: &KnowledgeGraph) -> Vec<NodeId> {
    fn walk(v: &Value, graph: &KnowledgeGraph, out: &mut Vec<NodeId>) {
        match v {
            Value::Sym(s) if graph.contains(s) => {
                let id = NodeId::new(&**s);
                if !out.contains(&id) {
                    out.push(id);
                }
            }
            Value::List(items) => items.iter().for_each(|x| walk(x, graph, out)),
            _ => {}
        }
    }
    let mut out = Vec::new();
    atom.args.iter().for_each(|v| walk(v, graph, &mut out));
    out
}

/// Renders `fact` as a capitalized sentence; predicates without a template
/// get a generic one.
pub fn verbalize(fact: &GroundAtom, prob: f64, graph: &KnowledgeGraph, templates: &TemplateSet) -> VerbalizedFact {
    let key = (fact.pred.to_string(), fact.arity());
    let mut text = match templates.templates.get(&key) {
        Some(Template::Pieces(pieces)) => pieces
            .iter()
            .map(|p| match p {
                Piece::Lit(s) => s.clone(),
                Piece::Arg(i) => plain(&fact.args[*i]),
                Piece::Name(i) => named(&fact.args[*i], graph),
                Piece::List(i) => named(&fact.args[*i], graph),
                Piece::Raw(i) => fact.args[*i].to_string(),
            })
            .collect::<String>(),
        _ if fact.args.is_empty() => format!("{} holds", fact.pred),
        _ => {
            let args: Vec<String> = fact.args.iter().map(|a| named(a, graph)).collect();
            format!("{} holds for {}", fact.pred, args.join(", "))
        }
    };
    let trimmed = text.trim_end().len();
    text.truncate(trimmed);
    if !text.ends_with('.') {
        text.push('.');
    }
    if let Some(first) = text.chars().next().filter(|c| c.is_lowercase()) {
        text.replace_range(..first.len_utf8(), &first.to_uppercase().to_string());
    }
    VerbalizedFact { fact: fact.clone(), prob, text, entity_args: entity_args(fact, graph), derived: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        for (id, kind, name) in [("p_1", "person", "Jill Martinez"), ("p_123", "person", "Lisa Wilson"), ("e_2", "event", "Deliverables team meeting")] {
            let n = g.insert_node(id, kind).unwrap();
            g.set_attr(&n, "name", name, 1.0).unwrap();
        }
        g
    }

    fn atom(pred: &str, args: &[&str]) -> GroundAtom {
        GroundAtom::new(pred, args.iter().map(Value::sym).collect())
    }

    #[test]
    fn person_template() {
        let t = TemplateSet::parse("person/1\t$name(1) is a person.").unwrap();
        let v = verbalize(&atom("person", &["p_123"]), 1.0, &graph(), &t);
        assert_eq!(v.text, "Lisa Wilson is a person.");
        assert_eq!(v.entity_args, [NodeId::new("p_123")]);
    }

    #[test]
    fn attending_template() {
        let t = TemplateSet::parse("attending_today/2\t$name(2) is attending $name(1) today.").unwrap();
        let v = verbalize(&atom("attending_today", &["e_2", "p_1"]), 1.0, &graph(), &t);
        assert_eq!(v.text, "Jill Martinez is attending Deliverables team meeting today.");
    }

    #[test]
    fn fallback_and_lists() {
        let g = graph();
        let v = verbalize(&atom("foo", &["a", "b"]), 0.5, &g, &TemplateSet::default());
        assert_eq!(v.text, "Foo holds for a, b.");
        let members = GroundAtom::new("group_members", vec![Value::sym("g_1"), Value::List(vec![Value::sym("p_1"), Value::sym("p_123"), Value::sym("x")])]);
        let t = TemplateSet::parse("group_members/2\tThe members of $name(1) are $list(2).").unwrap();
        assert_eq!(verbalize(&members, 1.0, &g, &t).text, "The members of g_1 are Jill Martinez, Lisa Wilson and x.");
    }

    #[test]
    fn template_errors() {
        assert!(TemplateSet::parse("").unwrap().is_empty());
        let err = TemplateSet::parse("p/2\t$3 is odd").unwrap_err();
        assert!(matches!(err, Error::Template { line: 1, .. }));
        assert!(TemplateSet::parse("nokey here").is_err());
        let t = TemplateSet::parse("p/1\tfirst $1\np/1\tsecond $1").unwrap();
        assert_eq!(verbalize(&atom("p", &["z"]), 1.0, &graph(), &t).text, "Second z.");
    }

    #[test]
    fn hidden_predicates() {
        let t = TemplateSet::parse("mention/2\t-").unwrap();
        assert!(t.hides(&atom("mention", &["u_1", "m_1"])));
        assert!(!t.hides(&atom("mention", &["m_1"])));
    }
}
