//! Tokenizer and recursive-descent parser for the rule language.
//!
//! ```text
//! statement := [weight "::"] head [":-" body] "."
//! weight    := number | "t(_)" | "t(" number ")"
//! body      := literal {"," literal}
//! literal   := atom | "\+" atom | "\+(" body ")" | term cmp term | findall(T, G, L)
//! ```

use std::sync::Arc;

use super::ast::{Atom, Clause, CmpOp, Literal, Program, Term, Weight};
use crate::error::{Error, Result};
use crate::value::{GroundAtom, Value};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Name(String),
    Var(String),
    Wild,
    Int(i64),
    Float(f64),
    Str(String),
    QName(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Dot,
    Neck,
    DoubleColon,
    Not,
    Cmp(CmpOp),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer { chars: text.chars().peekable(), line: 1, col: 1 }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn peek2(&self) -> Option<char> {
        let mut it = self.chars.clone();
        it.next();
        it.next()
    }

    fn quoted(&mut self, quote: char, line: usize, col: usize) -> Result<String> {
        let mut s = String::new();
        loop {
            match self.bump() {
                None => return Err(Error::syntax(line, col, "unterminated quoted text")),
                Some('\\') => match self.bump() {
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    Some(c) => s.push(c),
                    None => return Err(Error::syntax(line, col, "unterminated escape")),
                },
                Some(c) if c == quote => return Ok(s),
                Some(c) => s.push(c),
            }
        }
    }

    fn number(&mut self, first: char, line: usize, col: usize) -> Result<Tok> {
        let mut s = String::from(first);
        while let Some(c) = self.peek().filter(char::is_ascii_digit) {
            s.push(c);
            self.bump();
        }
        let mut is_float = false;
        if self.peek() == Some('.') && self.peek2().is_some_and(|c| c.is_ascii_digit()) {
            is_float = true;
            s.push('.');
            self.bump();
            while let Some(c) = self.peek().filter(char::is_ascii_digit) {
                s.push(c);
                self.bump();
            }
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let next = self.peek2();
            if next.is_some_and(|c| c.is_ascii_digit() || c == '-' || c == '+') {
                is_float = true;
                s.push('e');
                self.bump();
                if let Some(sign) = self.peek().filter(|c| *c == '-' || *c == '+') {
                    s.push(sign);
                    self.bump();
                }
                while let Some(c) = self.peek().filter(char::is_ascii_digit) {
                    s.push(c);
                    self.bump();
                }
            }
        }
        if is_float {
            s.parse().map(Tok::Float).map_err(|_| Error::syntax(line, col, format!("bad number {s}")))
        } else {
            s.parse().map(Tok::Int).map_err(|_| Error::syntax(line, col, format!("bad number {s}")))
        }
    }

    fn tokens(mut self) -> Result<Vec<Token>> {
        let mut out = Vec::new();
        loop {
            while let Some(c) = self.peek() {
                if c.is_whitespace() {
                    self.bump();
                } else if c == '%' {
                    while self.peek().is_some_and(|c| c != '\n') {
                        self.bump();
                    }
                } else {
                    break;
                }
            }
            let (line, col) = (self.line, self.col);
            let Some(c) = self.bump() else { break };
            let tok = match c {
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                '[' => Tok::LBracket,
                ']' => Tok::RBracket,
                ',' => Tok::Comma,
                '.' => Tok::Dot,
                '"' => Tok::Str(self.quoted('"', line, col)?),
                '\'' => Tok::QName(self.quoted('\'', line, col)?),
                ':' => match self.bump() {
                    Some('-') => Tok::Neck,
                    Some(':') => Tok::DoubleColon,
                    _ => return Err(Error::syntax(line, col, "expected ':-' or '::'")),
                },
                '\\' => match self.bump() {
                    Some('+') => Tok::Not,
                    Some('=') => Tok::Cmp(CmpOp::Ne),
                    _ => return Err(Error::syntax(line, col, "expected '\\+' or '\\='")),
                },
                '<' => Tok::Cmp(CmpOp::Lt),
                '>' => {
                    if self.peek() == Some('=') {
                        self.bump();
                        Tok::Cmp(CmpOp::Ge)
                    } else {
                        Tok::Cmp(CmpOp::Gt)
                    }
                }
                '=' => {
                    if self.peek() == Some('<') {
                        self.bump();
                        Tok::Cmp(CmpOp::Le)
                    } else {
                        Tok::Cmp(CmpOp::Eq)
                    }
                }
                '-' if self.peek().is_some_and(|c| c.is_ascii_digit()) => self.number('-', line, col)?,
                c if c.is_ascii_digit() => self.number(c, line, col)?,
                c if c.is_alphabetic() || c == '_' => {
                    let mut s = String::from(c);
                    while let Some(c) = self.peek().filter(|c| c.is_alphanumeric() || *c == '_') {
                        s.push(c);
                        self.bump();
                    }
                    if s == "_" {
                        Tok::Wild
                    } else if c.is_uppercase() || c == '_' {
                        Tok::Var(s)
                    } else {
                        Tok::Name(s)
                    }
                }
                other => return Err(Error::syntax(line, col, format!("unexpected character {other:?}"))),
            };
            out.push(Token { tok, line, col });
        }
        Ok(out)
    }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    eof: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, n: usize) -> Option<&Tok> {
        self.toks.get(self.pos + n).map(|t| &t.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks.get(self.pos).map_or(self.eof, |t| (t.line, t.col))
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        let (line, col) = self.here();
        Err(Error::syntax(line, col, msg))
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn weight(&mut self) -> Result<Weight> {
        let line = self.here().0;
        let w = match (self.peek(), self.peek_at(1)) {
            (Some(Tok::Int(_) | Tok::Float(_)), Some(Tok::DoubleColon)) => {
                let p = match self.next() {
                    Some(Tok::Int(i)) => i as f64,
                    Some(Tok::Float(f)) => f,
                    _ => unreachable!(),
                };
                self.pos += 1;
                Weight::Fixed(check_weight(p, line)?)
            }
            (Some(Tok::Name(n)), Some(Tok::LParen)) if n == "t" && self.is_learnable_prefix() => {
                self.pos += 2;
                let w = match self.next() {
                    Some(Tok::Wild) => Weight::Learnable(None),
                    Some(Tok::Int(i)) => Weight::Learnable(Some(check_weight(i as f64, line)?)),
                    Some(Tok::Float(f)) => Weight::Learnable(Some(check_weight(f, line)?)),
                    _ => return self.err("expected '_' or a probability inside t(...)"),
                };
                self.expect(Tok::RParen, "')'")?;
                self.expect(Tok::DoubleColon, "'::'")?;
                w
            }
            _ => Weight::Deterministic,
        };
        Ok(w)
    }

    fn is_learnable_prefix(&self) -> bool {
        matches!(
            (self.peek_at(2), self.peek_at(3), self.peek_at(4)),
            (Some(Tok::Wild | Tok::Int(_) | Tok::Float(_)), Some(Tok::RParen), Some(Tok::DoubleColon))
        )
    }

    fn term(&mut self) -> Result<Term> {
        match self.next() {
            Some(Tok::Var(v)) => Ok(Term::Var(Arc::from(v.as_str()))),
            Some(Tok::Wild) => Ok(Term::Wildcard),
            Some(Tok::Int(i)) => Ok(Term::Val(Value::Int(i))),
            Some(Tok::Float(f)) => Ok(Term::Val(Value::Float(f))),
            Some(Tok::Str(s)) => Ok(Term::Val(Value::str(s))),
            Some(Tok::Name(n)) | Some(Tok::QName(n)) => {
                if self.peek() == Some(&Tok::LParen) {
                    self.pos -= 1;
                    self.err("compound terms are only allowed as goals")
                } else {
                    Ok(Term::Val(Value::sym(n)))
                }
            }
            Some(Tok::LBracket) => {
                let mut items = Vec::new();
                if self.peek() != Some(&Tok::RBracket) {
                    loop {
                        match self.term()? {
                            Term::Val(v) => items.push(v),
                            _ => {
                                self.pos -= 1;
                                return self.err("list literals must be ground");
                            }
                        }
                        if self.peek() == Some(&Tok::Comma) {
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::RBracket, "']'")?;
                Ok(Term::Val(Value::List(items)))
            }
            _ => {
                self.pos -= 1;
                self.err("expected a term")
            }
        }
    }

    fn atom(&mut self) -> Result<Atom> {
        let pred = match self.next() {
            Some(Tok::Name(n)) | Some(Tok::QName(n)) => n,
            _ => {
                self.pos -= 1;
                return self.err("expected a predicate name");
            }
        };
        let mut args = Vec::new();
        if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            loop {
                args.push(self.term()?);
                match self.next() {
                    Some(Tok::Comma) => continue,
                    Some(Tok::RParen) => break,
                    _ => {
                        self.pos -= 1;
                        return self.err("expected ',' or ')'");
                    }
                }
            }
        }
        Ok(Atom::new(&pred, args))
    }

    fn literal(&mut self, in_group: bool) -> Result<Literal> {
        match self.peek() {
            Some(Tok::Not) => {
                self.pos += 1;
                if self.peek() == Some(&Tok::LParen) {
                    if in_group {
                        return self.err("negated groups cannot nest");
                    }
                    self.pos += 1;
                    let body = self.body(true)?;
                    self.expect(Tok::RParen, "')' closing the negated group")?;
                    Ok(Literal::NegGroup(body))
                } else {
                    Ok(Literal::Neg(self.atom()?))
                }
            }
            Some(Tok::Name(n)) if n == "findall" && self.peek_at(1) == Some(&Tok::LParen) => {
                self.pos += 2;
                let template = self.term()?;
                self.expect(Tok::Comma, "','")?;
                let goal = self.atom()?;
                self.expect(Tok::Comma, "','")?;
                let result = self.term()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(Literal::Findall { template, goal, result })
            }
            Some(Tok::Name(_) | Tok::QName(_))
                if !matches!(self.peek_at(1), Some(Tok::Cmp(_))) =>
            {
                Ok(Literal::Pos(self.atom()?))
            }
            _ => {
                let lhs = self.term()?;
                let op = match self.next() {
                    Some(Tok::Cmp(op)) => op,
                    _ => {
                        self.pos -= 1;
                        return self.err("expected a comparison operator");
                    }
                };
                let rhs = self.term()?;
                Ok(Literal::Cmp(op, lhs, rhs))
            }
        }
    }

    fn body(&mut self, in_group: bool) -> Result<Vec<Literal>> {
        let mut out = vec![self.literal(in_group)?];
        while self.peek() == Some(&Tok::Comma) {
            self.pos += 1;
            out.push(self.literal(in_group)?);
        }
        Ok(out)
    }

    fn clause(&mut self) -> Result<Clause> {
        let line = self.here().0;
        let weight = self.weight()?;
        let head = self.atom()?;
        let body = if self.peek() == Some(&Tok::Neck) {
            self.pos += 1;
            self.body(false)?
        } else {
            Vec::new()
        };
        self.expect(Tok::Dot, "'.' ending the clause")?;
        let clause = Clause { weight, head, body, line };
        check_range_restriction(&clause)?;
        Ok(clause)
    }
}

fn check_weight(p: f64, line: usize) -> Result<f64> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(Error::InvalidWeight { line, weight: p })
    }
}

/// Every head variable must occur in the body. Variables that occur only
/// inside a negated group are accepted here and resolved by demand
/// propagation during desugaring.
fn check_range_restriction(c: &Clause) -> Result<()> {
    if c.head.has_wildcard() {
        return Err(Error::RangeRestriction { line: c.line, var: "_".into(), head: c.head.to_string() });
    }
    let body = c.body_vars();
    for v in c.head.vars() {
        if !body.contains(v) {
            return Err(Error::RangeRestriction { line: c.line, var: v.to_string(), head: c.head.to_string() });
        }
    }
    Ok(())
}

pub fn parse_program(text: &str) -> Result<Program> {
    let toks = Lexer::new(text).tokens()?;
    let eof = toks.last().map_or((1, 1), |t| (t.line, t.col + 1));
    let mut p = Parser { toks, pos: 0, eof };
    let mut clauses = Vec::new();
    while p.peek().is_some() {
        clauses.push(p.clause()?);
    }
    Ok(Program { clauses })
}

/// Parses a single atom such as a query `refers_to(m_1,p_1)`.
pub fn parse_atom(text: &str) -> Result<Atom> {
    let toks = Lexer::new(text).tokens()?;
    let eof = toks.last().map_or((1, 1), |t| (t.line, t.col + 1));
    let mut p = Parser { toks, pos: 0, eof };
    let atom = p.atom()?;
    if p.peek() == Some(&Tok::Dot) {
        p.pos += 1;
    }
    if p.peek().is_some() {
        return p.err("trailing input after atom");
    }
    Ok(atom)
}

/// Parses an atom that must be ground.
pub fn parse_ground_atom(text: &str) -> Result<GroundAtom> {
    parse_atom(text)?
        .to_ground()
        .ok_or_else(|| Error::syntax(1, 1, format!("atom `{}` is not ground", text.trim())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_fact() {
        let p = parse_program("0.6::a.").unwrap();
        assert_eq!(p.clauses.len(), 1);
        assert!(p.clauses[0].is_fact());
        assert_eq!(p.clauses[0].weight, Weight::Fixed(0.6));
        assert_eq!(p.clauses[0].head.to_string(), "a");
    }

    #[test]
    fn linking_rule() {
        let src = "0.60838635::refers_to(M,E) :- new(U), mention(U,M), string(M,S), \n\
                   is_processable_time(S,0), name(E,N), jw_similarity(N,S,O), O>0.9.";
        let p = parse_program(src).unwrap();
        let c = &p.clauses[0];
        assert_eq!(c.weight, Weight::Fixed(0.60838635));
        assert_eq!(c.body.len(), 7);
        assert_eq!(
            c.body[6],
            Literal::Cmp(CmpOp::Gt, Term::var("O"), Term::Val(Value::Float(0.9)))
        );
    }

    #[test]
    fn negated_group() {
        let src = "room_available_today(R,T) :- room(R), \\+(location(E,R), date(E,D), date(at_today,D), \n\
                   start_time(E,ST), end_time(E,ET), time_between(T,ST,ET,1)).";
        let p = parse_program(src).unwrap();
        let c = &p.clauses[0];
        assert_eq!(c.body.len(), 2);
        match &c.body[1] {
            Literal::NegGroup(g) => assert_eq!(g.len(), 6),
            other => panic!("expected group, got {other:?}"),
        }
    }

    #[test]
    fn learnable_weights() {
        let p = parse_program("t(_)::h :- b. t(0.25)::f. t(x).").unwrap();
        assert_eq!(p.clauses[0].weight, Weight::Learnable(None));
        assert_eq!(p.clauses[1].weight, Weight::Learnable(Some(0.25)));
        assert_eq!(p.clauses[2].weight, Weight::Deterministic);
        assert_eq!(p.clauses[2].head.to_string(), "t(x)");
    }

    #[test]
    fn comments_and_findall() {
        let src = "% groups\ngroup_members(G,L) :- group(G), findall(P, person_group(P,G), L). % tail";
        let p = parse_program(src).unwrap();
        assert!(matches!(p.clauses[0].body[1], Literal::Findall { .. }));
    }

    #[test]
    fn weight_out_of_range() {
        assert!(matches!(parse_program("1.5::a."), Err(Error::InvalidWeight { line: 1, .. })));
    }

    #[test]
    fn unbound_head_variable() {
        assert!(matches!(parse_program("p(X) :- q(Y)."), Err(Error::RangeRestriction { .. })));
        assert!(matches!(parse_program("p(X)."), Err(Error::RangeRestriction { .. })));
    }

    #[test]
    fn syntax_error_position() {
        match parse_program("a :- b\nc.") {
            Err(Error::Syntax { line, col, .. }) => assert_eq!((line, col), (2, 1)),
            other => panic!("{other:?}"),
        }
        match parse_program("p :- \\+(q.") {
            Err(Error::Syntax { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nested_group_rejected() {
        assert!(parse_program("p :- q, \\+(r, \\+(s)).").is_err());
    }

    #[test]
    fn query_atom() {
        let a = parse_atom("refers_to(m_1, 'P1').").unwrap();
        assert_eq!(a.args[1], Term::Val(Value::sym("P1")));
    }
}
