//! Exact marginals by enumerating the worlds of a backward slice.

use std::collections::{BTreeSet, HashMap};

use super::ground::{AtomId, GroundProgram};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::rulelang::PredKey;
use crate::value::{GroundAtom, Value};

pub const DEFAULT_MAX_ENUM_FACTS: usize = 20;
const BLOCK_BITS: usize = 12;

#[derive(Clone, Copy, Debug)]
pub struct QueryOptions {
    pub max_enum_facts: usize,
    pub parallelism: Parallelism,
}

impl Default for QueryOptions {
    fn default() -> Self {
        QueryOptions { max_enum_facts: DEFAULT_MAX_ENUM_FACTS, parallelism: Parallelism::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Leaf {
    None,
    Bit(usize),
    Const(bool),
}

#[derive(Clone, Debug)]
struct Node {
    leaf: Leaf,
    rules: Vec<(Vec<usize>, Vec<usize>)>,
}

/// The part of a ground program relevant to a set of atoms.
#[derive(Clone, Debug)]
pub(crate) struct Slice {
    nodes: Vec<Node>,
    local: HashMap<AtomId, usize>,
    /// Probabilistic fact indices, one per enumeration bit.
    pub(crate) bits: Vec<usize>,
    /// Facts fixed by a weight of exactly 0 or 1, with their value.
    pub(crate) fixed: Vec<(usize, bool)>,
    /// Evaluation passes: each is a run of node indices iterated to fixpoint
    /// when `cyclic` (a single pass otherwise).
    passes: Vec<Vec<usize>>,
    cyclic: bool,
}

impl Slice {
    pub(crate) fn build(gp: &GroundProgram, roots: &[AtomId]) -> Slice {
        let mut slice = Slice {
            nodes: Vec::new(),
            local: HashMap::new(),
            bits: Vec::new(),
            fixed: Vec::new(),
            passes: Vec::new(),
            cyclic: false,
        };
        let mut order: Vec<usize> = Vec::new();
        let mut state: HashMap<AtomId, bool> = HashMap::new(); // false = on stack
        for &root in roots {
            if state.contains_key(&root) {
                continue;
            }
            let mut stack: Vec<(AtomId, Vec<AtomId>, usize)> = vec![(root, deps_of(gp, root), 0)];
            state.insert(root, false);
            while let Some(top) = stack.last_mut() {
                if top.2 < top.1.len() {
                    let d = top.1[top.2];
                    top.2 += 1;
                    match state.get(&d) {
                        Some(false) => slice.cyclic = true,
                        Some(true) => {}
                        None => {
                            state.insert(d, false);
                            stack.push((d, deps_of(gp, d), 0));
                        }
                    }
                    continue;
                }
                let atom = top.0;
                stack.pop();
                state.insert(atom, true);
                let idx = slice.nodes.len();
                slice.local.insert(atom, idx);
                slice.nodes.push(Node { leaf: Leaf::None, rules: Vec::new() });
                order.push(idx);
            }
        }
        let atoms: Vec<AtomId> = {
            let mut v = vec![0; slice.nodes.len()];
            for (&a, &i) in &slice.local {
                v[i] = a;
            }
            v
        };
        for (i, &atom) in atoms.iter().enumerate() {
            let node = &mut slice.nodes[i];
            if gp.is_certain(atom) {
                node.leaf = Leaf::Const(true);
                continue;
            }
            if let Some(f) = gp.fact_of[atom as usize] {
                let w = gp.fact_weight(&gp.prob_facts[f]);
                node.leaf = if w <= 0.0 {
                    slice.fixed.push((f, false));
                    Leaf::Const(false)
                } else if w >= 1.0 {
                    slice.fixed.push((f, true));
                    Leaf::Const(true)
                } else {
                    slice.bits.push(f);
                    Leaf::Bit(slice.bits.len() - 1)
                };
            }
            for &r in &gp.rules_by_head[atom as usize] {
                let rule = &gp.rules[r];
                if rule.neg.iter().any(|&n| gp.is_certain(n)) {
                    continue;
                }
                let pos = rule.pos.iter().filter(|&&a| !gp.is_certain(a)).map(|a| slice.local[a]).collect();
                let neg = rule.neg.iter().map(|a| slice.local[a]).collect();
                slice.nodes[i].rules.push((pos, neg));
            }
        }
        if slice.cyclic {
            let mut by_stratum: Vec<(usize, usize)> = order.iter().map(|&i| (gp.stratum[atoms[i] as usize], i)).collect();
            by_stratum.sort_by_key(|&(s, _)| s);
            let mut cur: Option<usize> = None;
            for (s, i) in by_stratum {
                if cur != Some(s) {
                    slice.passes.push(Vec::new());
                    cur = Some(s);
                }
                slice.passes.last_mut().unwrap().push(i);
            }
        } else {
            slice.passes.push(order);
        }
        slice
    }

    pub(crate) fn index_of(&self, atom: AtomId) -> Option<usize> {
        self.local.get(&atom).copied()
    }

    /// Least stratified model of the world `mask` into `truth`.
    pub(crate) fn eval(&self, mask: u64, truth: &mut [bool]) {
        truth.iter_mut().for_each(|t| *t = false);
        for pass in &self.passes {
            loop {
                let mut changed = false;
                for &i in pass {
                    if truth[i] {
                        continue;
                    }
                    let node = &self.nodes[i];
                    let v = match node.leaf {
                        Leaf::Bit(b) => mask >> b & 1 == 1,
                        Leaf::Const(c) => c,
                        Leaf::None => false,
                    } || node
                        .rules
                        .iter()
                        .any(|(pos, neg)| pos.iter().all(|&p| truth[p]) && neg.iter().all(|&n| !truth[n]));
                    if v {
                        truth[i] = true;
                        changed = true;
                    }
                }
                if !self.cyclic || !changed {
                    break;
                }
            }
        }
    }

    /// Folds `visit` over every world in deterministic block order.
    pub(crate) fn fold<A, I, V, M>(&self, probs: &[f64], mode: Parallelism, init: I, visit: V, merge: M) -> A
    where
        A: Send,
        I: Fn() -> A + Sync + Send,
        V: Fn(&mut A, u64, f64, &[bool]) + Sync + Send,
        M: Fn(A, A) -> A,
    {
        let n = self.bits.len();
        let total: u64 = 1 << n;
        let block_bits = n.min(BLOCK_BITS);
        let blocks = (total >> block_bits) as usize;
        let partials = par::map_range(mode, blocks, |b| {
            let mut acc = init();
            let mut truth = vec![false; self.nodes.len()];
            let start = (b as u64) << block_bits;
            for mask in start..start + (1u64 << block_bits) {
                let mut w = 1.0;
                for (k, p) in probs.iter().enumerate() {
                    w *= if mask >> k & 1 == 1 { *p } else { 1.0 - *p };
                }
                self.eval(mask, &mut truth);
                visit(&mut acc, mask, w, &truth);
            }
            acc
        });
        let mut it = partials.into_iter();
        let first = it.next().unwrap_or_else(&init);
        it.fold(first, merge)
    }

    pub(crate) fn bit_probs(&self, gp: &GroundProgram) -> Vec<f64> {
        self.bits.iter().map(|&f| gp.fact_weight(&gp.prob_facts[f])).collect()
    }
}

fn deps_of(gp: &GroundProgram, atom: AtomId) -> Vec<AtomId> {
    if gp.is_certain(atom) {
        return Vec::new();
    }
    let mut out = Vec::new();
    for &r in &gp.rules_by_head[atom as usize] {
        let rule = &gp.rules[r];
        if rule.neg.iter().any(|&n| gp.is_certain(n)) {
            continue;
        }
        out.extend(rule.pos.iter().chain(&rule.neg).copied().filter(|&a| !gp.is_certain(a)));
    }
    out
}

fn check_known(gp: &GroundProgram, atom: &GroundAtom) -> Result<()> {
    let key = PredKey(atom.pred.clone(), atom.arity());
    if gp.knows_predicate(&key) {
        Ok(())
    } else {
        Err(Error::UnknownPredicate(key.to_string()))
    }
}

/// Marginal probability of `atom`.
pub fn query(gp: &GroundProgram, atom: &GroundAtom, options: &QueryOptions) -> Result<f64> {
    check_known(gp, atom)?;
    let Some(id) = gp.atom_id(atom) else {
        return Ok(0.0);
    };
    query_id(gp, id, options)
}

pub(crate) fn query_id(gp: &GroundProgram, id: AtomId, options: &QueryOptions) -> Result<f64> {
    if gp.is_certain(id) {
        return Ok(1.0);
    }
    let slice = Slice::build(gp, &[id]);
    if slice.bits.len() > options.max_enum_facts {
        return Err(Error::QueryTooHard {
            atom: gp.atom(id).to_string(),
            facts: slice.bits.len(),
            limit: options.max_enum_facts,
        });
    }
    let root = slice.index_of(id).expect("root in slice");
    let probs = slice.bit_probs(gp);
    let p = slice.fold(
        &probs,
        options.parallelism,
        || 0.0f64,
        |acc, _, w, truth| {
            if truth[root] {
                *acc += w;
            }
        },
        |a, b| a + b,
    );
    Ok(p.clamp(0.0, 1.0))
}

/// One successfully queried atom.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginal {
    pub atom: GroundAtom,
    pub prob: f64,
}

#[derive(Debug, Default)]
pub struct QueryAll {
    /// Atoms with non-zero probability, sorted by atom.
    pub marginals: Vec<Marginal>,
    pub errors: Vec<Error>,
}

/// Whether any argument (or list element) of `atom` is in `scope`.
pub fn in_scope(atom: &GroundAtom, scope: &BTreeSet<String>) -> bool {
    fn hit(v: &Value, scope: &BTreeSet<String>) -> bool {
        match v {
            Value::List(items) => items.iter().any(|x| hit(x, scope)),
            Value::Sym(s) => scope.contains(&**s),
            _ => false,
        }
    }
    atom.args.iter().any(|v| hit(v, scope))
}

/// Queries every possible atom of `pred`. With a non-empty `scope` only
/// atoms mentioning a scoped node id are queried.
pub fn query_all(gp: &GroundProgram, pred: &PredKey, scope: &BTreeSet<String>, options: &QueryOptions) -> QueryAll {
    let ids: Vec<AtomId> = gp
        .atoms_of(pred)
        .into_iter()
        .filter(|&id| scope.is_empty() || in_scope(gp.atom(id), scope))
        .collect();
    let results = par::map(options.parallelism, &ids, |&id| {
        let sequential = QueryOptions { parallelism: Parallelism::Sequential, ..*options };
        query_id(gp, id, &sequential)
    });
    let mut out = QueryAll::default();
    for (id, r) in ids.into_iter().zip(results) {
        match r {
            Ok(p) if p > 0.0 => out.marginals.push(Marginal { atom: gp.atom(id).clone(), prob: p }),
            Ok(_) => {}
            Err(e) => out.errors.push(e),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{ground, GroundOptions};
    use crate::rulelang::{desugar, parse_atom, parse_program, DesugarOptions, Term};
    use crate::value::WeightedFact;

    fn atom(s: &str) -> GroundAtom {
        let a = parse_atom(s).unwrap();
        let args = a.args.into_iter().map(|t| match t {
            Term::Val(v) => v,
            _ => panic!(),
        });
        GroundAtom { pred: a.pred, args: args.collect() }
    }

    fn prob(src: &str, facts: &[(&str, f64)], q: &str) -> f64 {
        let core = desugar(&parse_program(src).unwrap(), DesugarOptions::default()).unwrap();
        let facts: Vec<WeightedFact> = facts.iter().map(|(a, p)| WeightedFact { atom: atom(a), prob: *p }).collect();
        let gp = ground(&core, &facts, &GroundOptions::default()).unwrap();
        query(&gp, &atom(q), &QueryOptions::default()).unwrap()
    }

    #[test]
    fn single_fact_chain() {
        assert!((prob("0.6::a. c :- a.", &[], "c") - 0.6).abs() < 1e-12);
    }

    #[test]
    fn four_worlds() {
        let src = "0.5::a. 0.6::b. c :- a. c :- b.";
        assert!((prob(src, &[], "c") - 0.8).abs() < 1e-12);
    }

    #[test]
    fn negation() {
        assert!((prob("0.3::e. r :- \\+ e.", &[], "r") - 0.7).abs() < 1e-12);
    }

    #[test]
    fn weighted_rule_switch() {
        assert!((prob("0.7::h :- b. b.", &[], "h") - 0.7).abs() < 1e-12);
    }

    #[test]
    fn shared_switch_correlates_groundings() {
        // one switch for both groundings: P(h) = 0.5, not noisy-or 0.75
        let src = "0.5::h :- b(X). b(1). b(2).";
        assert!((prob(src, &[], "h") - 0.5).abs() < 1e-12);
    }

    #[test]
    fn duplicate_facts_are_independent() {
        assert!((prob("q :- f.", &[("f", 0.5), ("f", 0.5)], "q") - 0.75).abs() < 1e-12);
    }

    #[test]
    fn underivable_atom_is_zero_and_unknown_errors() {
        assert_eq!(prob("p(X) :- q(X).", &[("q(1)", 0.4)], "p(2)"), 0.0);
        let core = desugar(&parse_program("p.").unwrap(), DesugarOptions::default()).unwrap();
        let gp = ground(&core, &[], &GroundOptions::default()).unwrap();
        assert!(matches!(query(&gp, &atom("nope"), &QueryOptions::default()), Err(Error::UnknownPredicate(_))));
    }

    #[test]
    fn recursive_path() {
        let src = "p(X,Y) :- e(X,Y). p(X,Z) :- p(X,Y), e(Y,Z).";
        let facts = [("e(a,b)", 0.5), ("e(b,a)", 0.5), ("e(b,c)", 0.5)];
        assert!((prob(src, &facts, "p(a,c)") - 0.25).abs() < 1e-12);
    }

    #[test]
    fn too_many_facts() {
        let facts: Vec<(String, f64)> = (0..21).map(|i| (format!("f({i})"), 0.5)).collect();
        let refs: Vec<(&str, f64)> = facts.iter().map(|(a, p)| (a.as_str(), *p)).collect();
        let core = desugar(&parse_program("q :- f(X).").unwrap(), DesugarOptions::default()).unwrap();
        let wf: Vec<WeightedFact> = refs.iter().map(|(a, p)| WeightedFact { atom: atom(a), prob: *p }).collect();
        let gp = ground(&core, &wf, &GroundOptions::default()).unwrap();
        let err = query(&gp, &atom("q"), &QueryOptions::default()).unwrap_err();
        assert!(matches!(err, Error::QueryTooHard { facts: 21, limit: 20, .. }), "{err}");
    }

    #[test]
    fn parallel_matches_sequential() {
        let facts: Vec<(String, f64)> = (0..14).map(|i| (format!("f({i})"), 0.1 + 0.05 * i as f64)).collect();
        let core = desugar(&parse_program("q :- f(X), \\+ f(0).").unwrap(), DesugarOptions::default()).unwrap();
        let wf: Vec<WeightedFact> = facts.iter().map(|(a, p)| WeightedFact { atom: atom(a), prob: *p }).collect();
        let gp = ground(&core, &wf, &GroundOptions::default()).unwrap();
        let seq = QueryOptions { parallelism: Parallelism::Sequential, ..Default::default() };
        let a = query(&gp, &atom("q"), &seq).unwrap();
        let b = query(&gp, &atom("q"), &QueryOptions::default()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
