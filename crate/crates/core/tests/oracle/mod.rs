//! Reference implementations written straight from the definitions, sharing
//! no code with the engine.

use std::collections::{BTreeSet, HashMap};

/// A literal `pred(arg)`, or `pred` when `arg` is `None`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Lit {
    pub pred: String,
    pub arg: Option<Arg>,
    pub positive: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arg {
    Var,
    Const(String),
}

#[derive(Clone, Debug)]
pub struct Rule {
    pub head: String,
    pub head_arg: Arg,
    pub body: Vec<Lit>,
    pub stratum: usize,
}

/// A stratified program with unary predicates over a fixed constant domain.
#[derive(Clone, Debug, Default)]
pub struct Prog {
    pub constants: Vec<String>,
    pub prob_facts: Vec<((String, String), f64)>,
    pub certain: Vec<(String, String)>,
    pub rules: Vec<Rule>,
    pub strata: usize,
}

pub type GroundAtom = (String, String);

impl Prog {
    pub fn to_source(&self) -> String {
        let mut out = String::new();
        for ((p, c), w) in &self.prob_facts {
            out.push_str(&format!("{w}::{p}({c}).\n"));
        }
        for (p, c) in &self.certain {
            out.push_str(&format!("{p}({c}).\n"));
        }
        for r in &self.rules {
            let arg = |a: &Arg| match a {
                Arg::Var => "X".to_string(),
                Arg::Const(c) => c.clone(),
            };
            let body: Vec<String> = r
                .body
                .iter()
                .map(|l| {
                    let atom = match &l.arg {
                        Some(a) => format!("{}({})", l.pred, arg(a)),
                        None => l.pred.clone(),
                    };
                    if l.positive { atom } else { format!("\\+ {atom}") }
                })
                .collect();
            out.push_str(&format!("{}({}) :- {}.\n", r.head, arg(&r.head_arg), body.join(", ")));
        }
        out
    }

    /// Least model of one world, stratum by stratum.
    fn model(&self, world: u32) -> BTreeSet<GroundAtom> {
        let mut m: BTreeSet<GroundAtom> = self.certain.iter().cloned().collect();
        for (i, ((p, c), _)) in self.prob_facts.iter().enumerate() {
            if world >> i & 1 == 1 {
                m.insert((p.clone(), c.clone()));
            }
        }
        for s in 0..self.strata {
            loop {
                let mut added = false;
                for r in self.rules.iter().filter(|r| r.stratum == s) {
                    for c in &self.constants {
                        let bind = |a: &Arg| match a {
                            Arg::Var => c.clone(),
                            Arg::Const(k) => k.clone(),
                        };
                        let holds = r.body.iter().all(|l| {
                            let a = l.arg.as_ref().map(bind).unwrap_or_default();
                            m.contains(&(l.pred.clone(), a)) == l.positive
                        });
                        if holds && m.insert((r.head.clone(), bind(&r.head_arg))) {
                            added = true;
                        }
                    }
                }
                if !added {
                    break;
                }
            }
        }
        m
    }

    /// Marginals of every atom true in some world, by enumerating all worlds.
    pub fn marginals(&self) -> HashMap<GroundAtom, f64> {
        let n = self.prob_facts.len();
        let mut out: HashMap<GroundAtom, f64> = HashMap::new();
        for world in 0..(1u32 << n) {
            let mut w = 1.0;
            for (i, (_, p)) in self.prob_facts.iter().enumerate() {
                w *= if world >> i & 1 == 1 { *p } else { 1.0 - *p };
            }
            for a in self.model(world) {
                *out.entry(a).or_insert(0.0) += w;
            }
        }
        out
    }
}

pub fn noisy_or(weights: &[f64]) -> f64 {
    1.0 - weights.iter().map(|w| 1.0 - w).product::<f64>()
}

/// Okapi BM25 with lowercase whitespace tokens.
pub fn bm25(query: &str, docs: &[String], k1: f64, b: f64) -> Vec<f64> {
    let toks: Vec<Vec<String>> = docs.iter().map(|d| d.to_lowercase().split_whitespace().map(String::from).collect()).collect();
    let q: Vec<String> = query.to_lowercase().split_whitespace().map(String::from).collect();
    let n = docs.len() as f64;
    let avgdl = toks.iter().map(|d| d.len()).sum::<usize>() as f64 / n;
    toks.iter()
        .map(|d| {
            let mut score = 0.0;
            for t in &q {
                let nt = toks.iter().filter(|d| d.contains(t)).count() as f64;
                let idf = (1.0 + (n - nt + 0.5) / (nt + 0.5)).ln();
                let f = d.iter().filter(|x| *x == t).count() as f64;
                score += idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * d.len() as f64 / avgdl));
            }
            score
        })
        .collect()
}
