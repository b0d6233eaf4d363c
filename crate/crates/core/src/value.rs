//! Ground values and atoms shared by the graph serializer, the grounder and
//! the verbalizer.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

/// Interned-by-refcount symbol.
pub type Sym = Arc<str>;

/// A fully ground term.
#[derive(Clone, Debug)]
pub enum Value {
    /// Prolog atom, e.g. a node id `p_1`.
    Sym(Sym),
    /// Double-quoted string.
    Str(Sym),
    Int(i64),
    Float(f64),
    List(Vec<Value>),
}

impl Value {
    pub fn sym(s: impl AsRef<str>) -> Self {
        Value::Sym(Arc::from(s.as_ref()))
    }

    pub fn str(s: impl AsRef<str>) -> Self {
        Value::Str(Arc::from(s.as_ref()))
    }

    fn rank(&self) -> u8 {
        match self {
            Value::Int(_) => 0,
            Value::Float(_) => 1,
            Value::Sym(_) => 2,
            Value::Str(_) => 3,
            Value::List(_) => 4,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    /// Text content of symbols and strings.
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Sym(s) | Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(l) => Some(l),
            _ => None,
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Value {}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Float(a), Value::Float(b)) => a.total_cmp(b),
            (Value::Sym(a), Value::Sym(b)) | (Value::Str(a), Value::Str(b)) => a.cmp(b),
            (Value::List(a), Value::List(b)) => a.cmp(b),
            _ => self.rank().cmp(&other.rank()),
        }
    }
}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.rank().hash(state);
        match self {
            Value::Int(i) => i.hash(state),
            Value::Float(f) => f.to_bits().hash(state),
            Value::Sym(s) | Value::Str(s) => s.hash(state),
            Value::List(l) => l.hash(state),
        }
    }
}

/// True when `s` can be written as an unquoted Prolog atom.
pub fn is_plain_atom(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => chars.all(|c| c.is_ascii_alphanumeric() || c == '_'),
        _ => false,
    }
}

fn write_escaped(f: &mut fmt::Formatter<'_>, s: &str, quote: char) -> fmt::Result {
    write!(f, "{quote}")?;
    for c in s.chars() {
        match c {
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            c if c == quote => write!(f, "\\{c}")?,
            c => write!(f, "{c}")?,
        }
    }
    write!(f, "{quote}")
}

/// Formats a float so that it re-parses as a float with the same bits.
pub fn format_float(x: f64) -> String {
    let s = format!("{x:?}");
    if s.contains(['.', 'e', 'E']) || !x.is_finite() {
        s
    } else {
        format!("{s}.0")
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Sym(s) if is_plain_atom(s) => f.write_str(s),
            Value::Sym(s) => write_escaped(f, s, '\''),
            Value::Str(s) => write_escaped(f, s, '"'),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => f.write_str(&format_float(*x)),
            Value::List(items) => {
                f.write_str("[")?;
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{v}")?;
                }
                f.write_str("]")
            }
        }
    }
}

/// A predicate applied to ground values.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroundAtom {
    pub pred: Sym,
    pub args: Vec<Value>,
}

impl GroundAtom {
    pub fn new(pred: impl AsRef<str>, args: Vec<Value>) -> Self {
        GroundAtom { pred: Arc::from(pred.as_ref()), args }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if is_plain_atom(&self.pred) {
            f.write_str(&self.pred)?;
        } else {
            write_escaped(f, &self.pred, '\'')?;
        }
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, v) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{v}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// A ground fact with its probability of being true.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedFact {
    pub atom: GroundAtom,
    pub prob: f64,
}

impl WeightedFact {
    pub fn certain(atom: GroundAtom) -> Self {
        WeightedFact { atom, prob: 1.0 }
    }
}

impl fmt::Display for WeightedFact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.prob < 1.0 {
            write!(f, "{}::", format_float(self.prob))?;
        }
        write!(f, "{}.", self.atom)
    }
}

/// Serialized as the atom in rule syntax, e.g. `"refers_to(m_1,p_1)"`.
impl serde::Serialize for GroundAtom {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for GroundAtom {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        crate::rulelang::parse_ground_atom(&s).map_err(serde::de::Error::custom)
    }
}
