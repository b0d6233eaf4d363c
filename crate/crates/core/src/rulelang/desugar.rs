//! Lowering of parsed programs into the core form consumed by the grounder.
//!
//! * A weighted rule `w::h :- B` becomes a switch fact `w::aux_i` and the
//!   deterministic rule `h :- B, aux_i`.
//! * A negated group `\+(B)` becomes `\+ g_j(V)` with `g_j(V) :- B`, where `V`
//!   are the group variables shared with the rest of the clause.
//! * A head variable bound only under negation gets a demand predicate: the
//!   rule is guarded by `dem_p_k(V)` and every call site that binds `V`
//!   contributes `dem_p_k(V) :- <literals preceding the call>`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use super::ast::{Atom, Clause, CmpOp, Literal, PredKey, Program, Term, Weight};
use super::stratify::stratify;
use crate::builtins;
use crate::error::Result;
use crate::value::{GroundAtom, Sym};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DesugarOptions {
    /// One switch per ground rule instance instead of one per clause.
    pub per_grounding_switches: bool,
}

/// A probability attached to a program element, possibly learnable.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub weight: f64,
    pub learnable: bool,
    /// Index of the originating clause in the source program.
    pub clause: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum CoreLit {
    Pos(Atom),
    /// Demand guard, evaluated over the possible-atom closure.
    Closure(Atom),
    Neg(Atom),
    Builtin(Atom),
    Cmp(CmpOp, Term, Term),
    Findall { template: Term, goal: Atom, result: Term },
    /// Probabilistic switch of parameter `param`.
    Switch { param: usize, atom: Atom },
}

impl CoreLit {
    pub fn called_pred(&self) -> Option<PredKey> {
        match self {
            CoreLit::Pos(a) | CoreLit::Closure(a) | CoreLit::Neg(a) => Some(a.key()),
            CoreLit::Findall { goal, .. } => Some(goal.key()),
            _ => None,
        }
    }

    pub fn vars(&self) -> Vec<Sym> {
        let mut out = Vec::new();
        match self {
            CoreLit::Pos(a) | CoreLit::Closure(a) | CoreLit::Neg(a) | CoreLit::Builtin(a) => {
                out.extend(a.vars().cloned())
            }
            CoreLit::Switch { atom, .. } => out.extend(atom.vars().cloned()),
            CoreLit::Cmp(_, a, b) => out.extend([a, b].into_iter().filter_map(Term::as_var).cloned()),
            CoreLit::Findall { template, goal, result } => {
                out.extend(template.as_var().cloned());
                out.extend(goal.vars().cloned());
                out.extend(result.as_var().cloned());
            }
        }
        out
    }

    /// Variables this literal needs bound before it can be evaluated, and
    /// the variables it binds once evaluated.
    pub fn modes(&self) -> (Vec<Sym>, Vec<Sym>) {
        match self {
            CoreLit::Pos(a) | CoreLit::Closure(a) => (Vec::new(), a.vars().cloned().collect()),
            CoreLit::Neg(a) => (a.vars().cloned().collect(), Vec::new()),
            CoreLit::Switch { atom, .. } => (atom.vars().cloned().collect(), Vec::new()),
            CoreLit::Builtin(a) => {
                let sig = builtins::signature(&a.pred, a.args.len()).expect("registered builtin");
                let pick = |idx: &[usize]| {
                    idx.iter().filter_map(|&i| a.args[i].as_var().cloned()).collect::<Vec<_>>()
                };
                (pick(sig.required), pick(sig.outputs))
            }
            CoreLit::Cmp(CmpOp::Eq, a, b) => {
                let vars: Vec<Sym> = [a, b].into_iter().filter_map(Term::as_var).cloned().collect();
                // either side can be bound from the other
                (Vec::new(), vars)
            }
            CoreLit::Cmp(_, a, b) => ([a, b].into_iter().filter_map(Term::as_var).cloned().collect(), Vec::new()),
            CoreLit::Findall { template, goal, result } => {
                let local: Vec<&Sym> = template.as_var().into_iter().collect();
                let needed = goal.vars().filter(|v| !local.contains(v)).cloned().collect();
                (needed, result.as_var().cloned().into_iter().collect())
            }
        }
    }

    fn evaluable(&self, bound: &BTreeSet<Sym>) -> bool {
        match self {
            CoreLit::Cmp(CmpOp::Eq, a, b) => {
                let is_bound = |t: &Term| t.as_var().is_none_or(|v| bound.contains(v));
                is_bound(a) || is_bound(b)
            }
            _ => self.modes().0.iter().all(|v| bound.contains(v)),
        }
    }
}

impl fmt::Display for CoreLit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreLit::Pos(a) | CoreLit::Closure(a) | CoreLit::Builtin(a) => write!(f, "{a}"),
            CoreLit::Switch { atom, .. } => write!(f, "{atom}"),
            CoreLit::Neg(a) => write!(f, "\\+ {a}"),
            CoreLit::Cmp(op, a, b) => write!(f, "{a}{}{b}", op.symbol()),
            CoreLit::Findall { template, goal, result } => write!(f, "findall({template}, {goal}, {result})"),
        }
    }
}

/// Variables bound after evaluating `body` greedily in any mode-feasible order.
pub fn bound_vars(body: &[CoreLit], initial: &BTreeSet<Sym>) -> (BTreeSet<Sym>, bool) {
    let mut bound = initial.clone();
    let mut done = vec![false; body.len()];
    loop {
        let mut progress = false;
        for (i, lit) in body.iter().enumerate() {
            if !done[i] && lit.evaluable(&bound) {
                done[i] = true;
                progress = true;
                bound.extend(lit.modes().1);
            }
        }
        if !progress {
            return (bound, done.iter().all(|d| *d));
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoreRule {
    pub head: Atom,
    pub body: Vec<CoreLit>,
    /// Source clause index, `None` for generated helper rules.
    pub clause: Option<usize>,
}

impl fmt::Display for CoreRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head)?;
        if !self.body.is_empty() {
            f.write_str(" :- ")?;
            for (i, l) in self.body.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{l}")?;
            }
        }
        f.write_str(".")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoreFact {
    pub atom: GroundAtom,
    /// `None` for deterministic facts.
    pub param: Option<usize>,
}

/// Desugared, stratified program.
#[derive(Clone, Debug)]
pub struct CoreProgram {
    pub facts: Vec<CoreFact>,
    pub rules: Vec<CoreRule>,
    pub params: Vec<Param>,
    pub strata: BTreeMap<PredKey, usize>,
    /// Generated predicates (switches, negation groups, demand guards).
    pub aux_preds: BTreeSet<PredKey>,
    /// Demand predicates, evaluated over the possible-atom closure.
    pub closure_preds: BTreeSet<PredKey>,
    pub options: DesugarOptions,
    pub source: Program,
}

impl CoreProgram {
    /// Source program with every parameter's current weight written back.
    pub fn to_program(&self) -> Program {
        let mut p = self.source.clone();
        for param in &self.params {
            p.clauses[param.clause].weight = Weight::Fixed(param.weight);
        }
        p
    }

    pub fn has_learnable(&self) -> bool {
        self.params.iter().any(|p| p.learnable)
    }

    /// Predicates defined by source clauses, excluding generated helpers.
    pub fn user_head_predicates(&self) -> Vec<PredKey> {
        self.source.head_predicates().into_iter().filter(|k| !self.aux_preds.contains(k)).collect()
    }

    pub fn stratum(&self, key: &PredKey) -> usize {
        self.strata.get(key).copied().unwrap_or(0)
    }

    pub fn max_stratum(&self) -> usize {
        self.strata.values().copied().max().unwrap_or(0)
    }

    /// Replaces parameter weights, e.g. after learning.
    pub fn with_weights(&self, weights: &[f64]) -> CoreProgram {
        let mut out = self.clone();
        for (p, w) in out.params.iter_mut().zip(weights) {
            p.weight = *w;
        }
        out
    }
}

struct Namer {
    used: HashSet<Sym>,
    aux: usize,
    group: usize,
}

impl Namer {
    fn fresh(&mut self, prefix: &str, counter: fn(&mut Namer) -> &mut usize) -> Sym {
        loop {
            let c = counter(self);
            *c += 1;
            let name: Sym = Arc::from(format!("{prefix}_{c}"));
            if self.used.insert(name.clone()) {
                return name;
            }
        }
    }
}


fn classify(atom: &Atom) -> CoreLit {
    if builtins::is_builtin(&atom.pred, atom.args.len()) {
        CoreLit::Builtin(atom.clone())
    } else {
        CoreLit::Pos(atom.clone())
    }
}

fn literal_vars(l: &Literal) -> Vec<Sym> {
    let mut v = Vec::new();
    l.vars(&mut v);
    v
}

/// Lowers a parsed program and stratifies the result.
pub fn desugar(program: &Program, options: DesugarOptions) -> Result<CoreProgram> {
    let mut namer = Namer { used: HashSet::new(), aux: 0, group: 0 };
    for c in &program.clauses {
        namer.used.insert(c.head.pred.clone());
        for l in &c.body {
            let mut stack = vec![l];
            while let Some(l) = stack.pop() {
                match l {
                    Literal::Pos(a) | Literal::Neg(a) => {
                        namer.used.insert(a.pred.clone());
                    }
                    Literal::Findall { goal, .. } => {
                        namer.used.insert(goal.pred.clone());
                    }
                    Literal::NegGroup(ls) => stack.extend(ls),
                    Literal::Cmp(..) => {}
                }
            }
        }
    }

    let mut facts = Vec::new();
    let mut rules = Vec::new();
    let mut params = Vec::new();
    let mut aux_preds = BTreeSet::new();

    for (ci, clause) in program.clauses.iter().enumerate() {
        if clause.is_fact() {
            let atom = clause.head.to_ground().expect("range restriction guarantees ground facts");
            let param = clause.weight.value().map(|w| {
                params.push(Param { weight: w, learnable: clause.weight.is_learnable(), clause: ci });
                params.len() - 1
            });
            facts.push(CoreFact { atom, param });
            continue;
        }
        let mut body = Vec::new();
        for (li, lit) in clause.body.iter().enumerate() {
            match lit {
                Literal::Pos(a) => body.push(classify(a)),
                Literal::Cmp(op, a, b) => body.push(CoreLit::Cmp(*op, a.clone(), b.clone())),
                Literal::Findall { template, goal, result } => body.push(CoreLit::Findall {
                    template: template.clone(),
                    goal: goal.clone(),
                    result: result.clone(),
                }),
                Literal::Neg(a) if !needs_group(clause, li, a) => body.push(CoreLit::Neg(a.clone())),
                Literal::Neg(_) | Literal::NegGroup(_) => {
                    let inner: Vec<Literal> = match lit {
                        Literal::NegGroup(ls) => ls.clone(),
                        other => vec![match other {
                            Literal::Neg(a) => Literal::Pos(a.clone()),
                            _ => unreachable!(),
                        }],
                    };
                    let outside = outside_vars(clause, li);
                    let mut shared = Vec::new();
                    for l in &inner {
                        for v in literal_vars(l) {
                            if outside.contains(&v) && !shared.contains(&v) {
                                shared.push(v);
                            }
                        }
                    }
                    let name = namer.fresh("g", |n| &mut n.group);
                    let head = Atom { pred: name, args: shared.iter().cloned().map(Term::Var).collect() };
                    aux_preds.insert(head.key());
                    let gbody = inner
                        .iter()
                        .map(|l| match l {
                            Literal::Pos(a) => classify(a),
                            Literal::Neg(a) => CoreLit::Neg(a.clone()),
                            Literal::Cmp(op, a, b) => CoreLit::Cmp(*op, a.clone(), b.clone()),
                            Literal::Findall { template, goal, result } => CoreLit::Findall {
                                template: template.clone(),
                                goal: goal.clone(),
                                result: result.clone(),
                            },
                            Literal::NegGroup(_) => unreachable!("parser rejects nested groups"),
                        })
                        .collect();
                    rules.push(CoreRule { head: head.clone(), body: gbody, clause: None });
                    body.push(CoreLit::Neg(head));
                }
            }
        }
        if let Some(w) = clause.weight.value() {
            params.push(Param { weight: w, learnable: clause.weight.is_learnable(), clause: ci });
            let name = namer.fresh("aux", |n| &mut n.aux);
            let args = if options.per_grounding_switches {
                let (bound, _) = bound_vars(&body, &BTreeSet::new());
                clause.vars().into_iter().filter(|v| bound.contains(v)).map(Term::Var).collect()
            } else {
                Vec::new()
            };
            let atom = Atom { pred: name, args };
            aux_preds.insert(atom.key());
            body.push(CoreLit::Switch { param: params.len() - 1, atom });
        }
        rules.push(CoreRule { head: clause.head.clone(), body, clause: Some(ci) });
    }

    let closure_preds = add_demand(&mut rules);
    aux_preds.extend(closure_preds.iter().cloned());

    let mut core = CoreProgram {
        facts,
        rules,
        params,
        strata: BTreeMap::new(),
        aux_preds,
        closure_preds,
        options,
        source: program.clone(),
    };
    core.strata = stratify(&core)?;
    Ok(core)
}

/// Variables occurring in the clause outside body literal `skip`.
fn outside_vars(clause: &Clause, skip: usize) -> BTreeSet<Sym> {
    let mut out: BTreeSet<Sym> = clause.head.vars().cloned().collect();
    for (i, l) in clause.body.iter().enumerate() {
        if i != skip {
            out.extend(literal_vars(l));
        }
    }
    out
}

/// A plain negation needs its own helper when it has wildcards or local
/// variables, which are existentially quantified under the negation.
fn needs_group(clause: &Clause, li: usize, atom: &Atom) -> bool {
    let outside = outside_vars(clause, li);
    atom.has_wildcard() || atom.vars().any(|v| !outside.contains(v))
}

fn demand_name(pred: &str, positions: &[usize]) -> Sym {
    let pos: Vec<String> = positions.iter().map(|p| (p + 1).to_string()).collect();
    Arc::from(format!("dem_{pred}_{}", pos.join("_")))
}

/// Guards rules whose head variables are not bound by the body with demand
/// literals, then derives demand rules from call sites. Returns the demand
/// predicates.
fn add_demand(rules: &mut Vec<CoreRule>) -> BTreeSet<PredKey> {
    let mut demands: BTreeMap<PredKey, BTreeSet<Vec<usize>>> = BTreeMap::new();
    let mut closure = BTreeSet::new();
    for rule in rules.iter_mut() {
        let (bound, _) = bound_vars(&rule.body, &BTreeSet::new());
        let positions: Vec<usize> = rule
            .head
            .args
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.as_var().filter(|v| !bound.contains(*v)).map(|_| i))
            .collect();
        if positions.is_empty() {
            continue;
        }
        let name = demand_name(&rule.head.pred, &positions);
        let guard = Atom { pred: name, args: positions.iter().map(|&i| rule.head.args[i].clone()).collect() };
        closure.insert(guard.key());
        rule.body.insert(0, CoreLit::Closure(guard));
        demands.entry(rule.head.key()).or_default().insert(positions);
    }
    if demands.is_empty() {
        return closure;
    }

    let mut seen: HashSet<(Atom, Vec<CoreLit>)> = HashSet::new();
    let mut i = 0;
    while i < rules.len() {
        let rule = rules[i].clone();
        i += 1;
        for (li, lit) in rule.body.iter().enumerate() {
            let Some(key) = lit.called_pred() else { continue };
            let Some(position_sets) = demands.get(&key) else { continue };
            if matches!(lit, CoreLit::Closure(_)) {
                continue;
            }
            let callee = match lit {
                CoreLit::Pos(a) | CoreLit::Neg(a) => a,
                CoreLit::Findall { goal, .. } => goal,
                _ => unreachable!(),
            };
            let prefix: Vec<CoreLit> = rule.body[..li]
                .iter()
                .filter(|l| !matches!(l, CoreLit::Neg(_) | CoreLit::Switch { .. }))
                .cloned()
                .collect();
            let (bound, _) = bound_vars(&prefix, &BTreeSet::new());
            for positions in position_sets {
                let args: Vec<Term> = positions.iter().map(|&p| callee.args[p].clone()).collect();
                let all_bound = args.iter().all(|t| match t {
                    Term::Val(_) => true,
                    Term::Var(v) => bound.contains(v),
                    Term::Wildcard => false,
                });
                if !all_bound {
                    log::debug!("call site {lit} in `{rule}` cannot bind demanded arguments");
                    continue;
                }
                let head = Atom { pred: demand_name(&callee.pred, positions), args };
                if seen.insert((head.clone(), prefix.clone())) {
                    rules.push(CoreRule { head, body: prefix.clone(), clause: None });
                }
            }
        }
    }
    closure
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rulelang::parse_program;

    fn core(src: &str) -> CoreProgram {
        desugar(&parse_program(src).unwrap(), DesugarOptions::default()).unwrap()
    }

    #[test]
    fn weighted_rule_becomes_switch() {
        let c = core("0.6::h :- b.");
        assert_eq!(c.rules.len(), 1);
        assert_eq!(c.rules[0].to_string(), "h :- b, aux_1.");
        assert_eq!(c.params, vec![Param { weight: 0.6, learnable: false, clause: 0 }]);
        assert!(matches!(c.rules[0].body[1], CoreLit::Switch { param: 0, .. }));
    }

    #[test]
    fn deterministic_rule_unchanged() {
        let c = core("h(X) :- b(X), \\+ c(X).");
        assert_eq!(c.rules[0].to_string(), "h(X) :- b(X), \\+ c(X).");
        assert!(c.params.is_empty());
    }

    #[test]
    fn negated_group_extracted() {
        let c = core(
            "room_available_today(R,T) :- room(R), \\+(location(E,R), date(E,D), date(at_today,D), \
             start_time(E,ST), end_time(E,ET), time_between(T,ST,ET,1)).",
        );
        let g = c.rules.iter().find(|r| &*r.head.pred == "g_1").unwrap();
        assert_eq!(g.head.to_string(), "g_1(R,T)");
        let main = c.rules.iter().find(|r| &*r.head.pred == "room_available_today").unwrap();
        let plain: Vec<String> = main
            .body
            .iter()
            .filter(|l| !matches!(l, CoreLit::Closure(_)))
            .map(|l| l.to_string())
            .collect();
        assert_eq!(plain, ["room(R)", "\\+ g_1(R,T)"]);
        // T is only bound under negation, so the rule is demand-guarded
        assert_eq!(main.body[0].to_string(), "dem_room_available_today_2(T)");
    }

    #[test]
    fn demand_rules_from_call_sites() {
        let c = core(
            "avail(R,T) :- room(R), \\+(busy(R,T2), T2 = T).\n\
             rooms(L,T) :- slot(T), findall(R, avail(R,T), L).",
        );
        let dem: Vec<String> = c
            .rules
            .iter()
            .filter(|r| r.head.pred.starts_with("dem_"))
            .map(|r| r.to_string())
            .collect();
        assert!(dem.contains(&"dem_avail_2(T) :- slot(T).".to_string()), "{dem:?}");
        assert!(c.closure_preds.contains(&PredKey::new("dem_avail_2", 1)));
    }

    #[test]
    fn free_negation_variables_become_groups() {
        let c = core("lonely(P) :- person(P), \\+ friend(P,_).");
        let main = c.rules.iter().find(|r| &*r.head.pred == "lonely").unwrap();
        assert_eq!(main.to_string(), "lonely(P) :- person(P), \\+ g_1(P).");
    }

    #[test]
    fn per_grounding_switch_args() {
        let p = parse_program("0.3::r(M,E) :- m(M), e(E).").unwrap();
        let c = desugar(&p, DesugarOptions { per_grounding_switches: true }).unwrap();
        assert_eq!(c.rules[0].to_string(), "r(M,E) :- m(M), e(E), aux_1(M,E).");
    }

    #[test]
    fn facts_and_learnable_params() {
        let c = core("t(_)::h :- b. b. 0.2::f.");
        assert_eq!(c.facts.len(), 2);
        assert_eq!(c.facts[0].param, None);
        assert_eq!(c.facts[1].param, Some(1));
        assert!(c.params[0].learnable);
        assert_eq!(c.params[0].weight, 0.5);
        let back = c.with_weights(&[0.7, 0.2]).to_program();
        assert_eq!(back.clauses[0].weight, Weight::Fixed(0.7));
    }

    #[test]
    fn fresh_names_avoid_user_predicates() {
        let c = core("aux_1. 0.5::h :- aux_1.");
        assert!(c.rules[0].to_string().ends_with("aux_2."));
    }
}
