use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use crate::value::{format_float, is_plain_atom, GroundAtom, Sym, Value};

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Val(Value),
    Var(Sym),
    Wildcard,
}

impl Term {
    pub fn var(name: &str) -> Self {
        Term::Var(Arc::from(name))
    }

    pub fn as_var(&self) -> Option<&Sym> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Val(v) => write!(f, "{v}"),
            Term::Var(v) => f.write_str(v),
            Term::Wildcard => f.write_str("_"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub pred: Sym,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(pred: &str, args: Vec<Term>) -> Self {
        Atom { pred: Arc::from(pred), args }
    }

    pub fn key(&self) -> PredKey {
        PredKey(self.pred.clone(), self.args.len())
    }

    pub fn vars(&self) -> impl Iterator<Item = &Sym> {
        self.args.iter().filter_map(Term::as_var)
    }

    pub fn has_wildcard(&self) -> bool {
        self.args.iter().any(|t| matches!(t, Term::Wildcard))
    }

    /// The atom as a ground atom, if it has no variables.
    pub fn to_ground(&self) -> Option<GroundAtom> {
        let args = self
            .args
            .iter()
            .map(|t| match t {
                Term::Val(v) => Some(v.clone()),
                _ => None,
            })
            .collect::<Option<Vec<Value>>>()?;
        Some(GroundAtom { pred: self.pred.clone(), args })
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if is_plain_atom(&self.pred) {
            f.write_str(&self.pred)?;
        } else {
            write!(f, "{}", Value::Sym(self.pred.clone()))?;
        }
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// Predicate name and arity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PredKey(pub Sym, pub usize);

impl PredKey {
    pub fn new(name: &str, arity: usize) -> Self {
        PredKey(Arc::from(name), arity)
    }
}

impl fmt::Display for PredKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0, self.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CmpOp {
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "=<",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "=",
            CmpOp::Ne => "\\=",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Literal {
    /// A database predicate or an evaluable builtin.
    Pos(Atom),
    Neg(Atom),
    /// `\+( l1, ..., ln )`; only appears negated and never nests.
    NegGroup(Vec<Literal>),
    Cmp(CmpOp, Term, Term),
    Findall { template: Term, goal: Atom, result: Term },
}

impl Literal {
    /// Variables in order of first occurrence.
    pub fn vars(&self, out: &mut Vec<Sym>) {
        let mut push = |v: &Sym| {
            if !out.contains(v) {
                out.push(v.clone());
            }
        };
        match self {
            Literal::Pos(a) | Literal::Neg(a) => a.vars().for_each(push),
            Literal::NegGroup(ls) => {
                for l in ls {
                    let mut inner = Vec::new();
                    l.vars(&mut inner);
                    inner.iter().for_each(&mut push);
                }
            }
            Literal::Cmp(_, a, b) => [a, b].into_iter().filter_map(Term::as_var).for_each(push),
            Literal::Findall { template, goal, result } => {
                template.as_var().into_iter().for_each(&mut push);
                goal.vars().for_each(&mut push);
                result.as_var().into_iter().for_each(push);
            }
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Pos(a) => write!(f, "{a}"),
            Literal::Neg(a) => write!(f, "\\+ {a}"),
            Literal::NegGroup(ls) => {
                f.write_str("\\+(")?;
                write_body(f, ls)?;
                f.write_str(")")
            }
            Literal::Cmp(op, a, b) => write!(f, "{a}{}{b}", op.symbol()),
            Literal::Findall { template, goal, result } => {
                write!(f, "findall({template}, {goal}, {result})")
            }
        }
    }
}

fn write_body(f: &mut fmt::Formatter<'_>, body: &[Literal]) -> fmt::Result {
    for (i, l) in body.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{l}")?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Weight {
    Fixed(f64),
    /// `t(_)` (no initial value) or `t(p)`.
    Learnable(Option<f64>),
    Deterministic,
}

/// Starting value of `t(_)` weights.
pub const DEFAULT_LEARNABLE_INIT: f64 = 0.5;

impl Weight {
    /// Probability attached to the clause, `None` when deterministic.
    pub fn value(&self) -> Option<f64> {
        match *self {
            Weight::Fixed(p) => Some(p),
            Weight::Learnable(p) => Some(p.unwrap_or(DEFAULT_LEARNABLE_INIT)),
            Weight::Deterministic => None,
        }
    }

    pub fn is_learnable(&self) -> bool {
        matches!(self, Weight::Learnable(_))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clause {
    pub weight: Weight,
    pub head: Atom,
    pub body: Vec<Literal>,
    pub line: usize,
}

impl Clause {
    pub fn is_fact(&self) -> bool {
        self.body.is_empty()
    }

    /// Variables appearing anywhere in the clause, in order of first occurrence.
    pub fn vars(&self) -> Vec<Sym> {
        let mut out: Vec<Sym> = Vec::new();
        for v in self.head.vars() {
            if !out.contains(v) {
                out.push(v.clone());
            }
        }
        for l in &self.body {
            l.vars(&mut out);
        }
        out
    }

    /// Variables occurring in the body.
    pub fn body_vars(&self) -> BTreeSet<Sym> {
        let mut out = Vec::new();
        for l in &self.body {
            l.vars(&mut out);
        }
        out.into_iter().collect()
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.weight {
            Weight::Fixed(p) => write!(f, "{}::", format_float(p))?,
            Weight::Learnable(None) => f.write_str("t(_)::")?,
            Weight::Learnable(Some(p)) => write!(f, "t({})::", format_float(p))?,
            Weight::Deterministic => {}
        }
        write!(f, "{}", self.head)?;
        if !self.body.is_empty() {
            f.write_str(" :- ")?;
            write_body(f, &self.body)?;
        }
        f.write_str(".")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Program {
    pub clauses: Vec<Clause>,
}

impl Program {
    /// Predicates defined by clause heads, in order of first definition.
    pub fn head_predicates(&self) -> Vec<PredKey> {
        let mut out = Vec::new();
        for c in &self.clauses {
            let k = c.head.key();
            if !out.contains(&k) {
                out.push(k);
            }
        }
        out
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.clauses {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}
