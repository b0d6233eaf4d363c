//! Bottom-up semi-naive grounding of a core program over a fact set.
//!
//! The grounder tracks three atom sets per stratum:
//! * possible atoms, derivable when every probabilistic fact holds and
//!   negations are ignored unless their atom is certain;
//! * certain atoms, true in every world;
//! * the closure model, the stratified model of the world in which every
//!   probabilistic fact with positive weight holds (used by `findall`).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use crate::builtins::BuiltinRegistry;
use crate::error::{Error, Result};
use crate::rulelang::{CmpOp, CoreLit, CoreProgram, CoreRule, PredKey, Term};
use crate::value::{GroundAtom, Sym, Value, WeightedFact};

pub type AtomId = u32;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GroundRule {
    pub head: AtomId,
    pub pos: Vec<AtomId>,
    pub neg: Vec<AtomId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbFact {
    pub atom: AtomId,
    pub weight: f64,
    /// Program parameter this fact instantiates (switches and program facts).
    pub param: Option<usize>,
}

#[derive(Clone, Debug, Default)]
struct Relation {
    ids: Vec<AtomId>,
    by_arg: Vec<HashMap<Value, Vec<AtomId>>>,
}

/// Ground rules and probabilistic facts over interned atoms.
#[derive(Clone, Debug, Default)]
pub struct GroundProgram {
    pub(crate) atoms: Vec<GroundAtom>,
    index: HashMap<GroundAtom, AtomId>,
    relations: HashMap<PredKey, Relation>,
    pub(crate) stratum: Vec<usize>,
    pub(crate) certain: Vec<bool>,
    closure: Vec<bool>,
    pub(crate) rules: Vec<GroundRule>,
    pub(crate) rules_by_head: Vec<Vec<usize>>,
    pub(crate) prob_facts: Vec<ProbFact>,
    pub(crate) fact_of: Vec<Option<usize>>,
    known: BTreeSet<PredKey>,
    pub(crate) params: Vec<f64>,
    pub(crate) learnable: Vec<bool>,
}

impl GroundProgram {
    pub fn atom(&self, id: AtomId) -> &GroundAtom {
        &self.atoms[id as usize]
    }

    pub fn atom_id(&self, atom: &GroundAtom) -> Option<AtomId> {
        self.index.get(atom).copied()
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn rules(&self) -> &[GroundRule] {
        &self.rules
    }

    pub fn prob_facts(&self) -> &[ProbFact] {
        &self.prob_facts
    }

    pub fn is_certain(&self, id: AtomId) -> bool {
        self.certain[id as usize]
    }

    pub fn knows_predicate(&self, key: &PredKey) -> bool {
        self.known.contains(key)
    }

    /// Possible atoms of a predicate, sorted.
    pub fn atoms_of(&self, key: &PredKey) -> Vec<AtomId> {
        let mut ids = self.relations.get(key).map(|r| r.ids.clone()).unwrap_or_default();
        ids.sort_by(|a, b| self.atoms[*a as usize].cmp(&self.atoms[*b as usize]));
        ids
    }

    /// Current weight of a probabilistic fact.
    pub fn fact_weight(&self, fact: &ProbFact) -> f64 {
        fact.param.map_or(fact.weight, |p| self.params[p])
    }

    pub fn set_param_weights(&mut self, weights: &[f64]) {
        self.params.copy_from_slice(weights);
    }

    fn intern(&mut self, atom: GroundAtom, stratum: usize) -> (AtomId, bool) {
        if let Some(&id) = self.index.get(&atom) {
            return (id, false);
        }
        let id = self.atoms.len() as AtomId;
        let key = PredKey(atom.pred.clone(), atom.arity());
        let rel = self.relations.entry(key).or_default();
        if rel.by_arg.len() < atom.arity() {
            rel.by_arg.resize_with(atom.arity(), HashMap::new);
        }
        rel.ids.push(id);
        for (i, v) in atom.args.iter().enumerate() {
            rel.by_arg[i].entry(v.clone()).or_default().push(id);
        }
        self.index.insert(atom.clone(), id);
        self.atoms.push(atom);
        self.stratum.push(stratum);
        self.certain.push(false);
        self.closure.push(false);
        self.rules_by_head.push(Vec::new());
        self.fact_of.push(None);
        (id, true)
    }

    fn add_rule(&mut self, rule: GroundRule) {
        self.rules_by_head[rule.head as usize].push(self.rules.len());
        self.rules.push(rule);
    }

    fn add_prob_fact(&mut self, atom: GroundAtom, weight: f64, param: Option<usize>, stratum: usize) -> AtomId {
        let (id, _) = self.intern(atom.clone(), stratum);
        if self.fact_of[id as usize].is_none() && self.rules_by_head[id as usize].is_empty() {
            self.fact_of[id as usize] = Some(self.prob_facts.len());
            self.prob_facts.push(ProbFact { atom: id, weight, param });
            return id;
        }
        // a second independent fact on the same atom gets its own hidden atom
        let n = self.prob_facts.len();
        let mut args = vec![Value::Int(n as i64)];
        args.extend(atom.args.iter().cloned());
        let hidden = GroundAtom { pred: Arc::from(format!("{}#dup", atom.pred)), args };
        let (hid, _) = self.intern(hidden, stratum);
        self.fact_of[hid as usize] = Some(n);
        self.prob_facts.push(ProbFact { atom: hid, weight, param });
        self.add_rule(GroundRule { head: id, pos: vec![hid], neg: Vec::new() });
        id
    }
}

#[derive(Clone, Debug)]
enum Slot {
    Val(Value),
    Var(usize),
    Wild,
}

#[derive(Clone, Debug)]
struct PlanAtom {
    key: PredKey,
    args: Vec<Slot>,
}

#[derive(Clone, Debug)]
enum Step {
    Pos { atom: PlanAtom, recursive: bool },
    Closure { atom: PlanAtom, recursive: bool },
    Neg(PlanAtom),
    Builtin(PlanAtom),
    Cmp(CmpOp, Slot, Slot),
    Findall { template: Slot, goal: PlanAtom, result: Slot },
    Switch { param: usize, atom: PlanAtom },
}

#[derive(Clone, Debug)]
struct Plan {
    head: PlanAtom,
    steps: Vec<Step>,
    nvars: usize,
    recursive: bool,
    closure_head: bool,
}

fn compile_atom(atom: &crate::rulelang::Atom, vars: &mut Vec<Sym>) -> PlanAtom {
    PlanAtom { key: atom.key(), args: atom.args.iter().map(|t| compile_term(t, vars)).collect() }
}

fn compile_term(t: &Term, vars: &mut Vec<Sym>) -> Slot {
    match t {
        Term::Val(v) => Slot::Val(v.clone()),
        Term::Wildcard => Slot::Wild,
        Term::Var(v) => Slot::Var(match vars.iter().position(|x| x == v) {
            Some(i) => i,
            None => {
                vars.push(v.clone());
                vars.len() - 1
            }
        }),
    }
}

fn compile(rule: &CoreRule, core: &CoreProgram) -> Result<Plan> {
    let head_stratum = core.stratum(&rule.head.key());
    let mut vars = Vec::new();
    let head = compile_atom(&rule.head, &mut vars);
    let mut order = Vec::new();
    let mut done = vec![false; rule.body.len()];
    let mut bound: BTreeSet<Sym> = BTreeSet::new();
    while order.len() < rule.body.len() {
        let next = (0..rule.body.len()).find(|&i| {
            !done[i] && {
                let lit = &rule.body[i];
                match lit {
                    CoreLit::Cmp(CmpOp::Eq, a, b) => {
                        let ok = |t: &Term| t.as_var().is_none_or(|v| bound.contains(v));
                        ok(a) || ok(b)
                    }
                    _ => lit.modes().0.iter().all(|v| bound.contains(v)),
                }
            }
        });
        let Some(i) = next else {
            let lit = (0..rule.body.len()).find(|&i| !done[i]).map(|i| rule.body[i].to_string());
            return Err(Error::UnboundBuiltin { rule: rule.to_string(), literal: lit.unwrap_or_default() });
        };
        done[i] = true;
        bound.extend(rule.body[i].vars());
        order.push(i);
    }
    let mut recursive = false;
    let steps = order
        .into_iter()
        .map(|i| match &rule.body[i] {
            CoreLit::Pos(a) => {
                let rec = core.stratum(&a.key()) == head_stratum && !core.closure_preds.contains(&a.key());
                recursive |= rec;
                Step::Pos { atom: compile_atom(a, &mut vars), recursive: rec }
            }
            CoreLit::Closure(a) => {
                let rec = core.stratum(&a.key()) == head_stratum;
                recursive |= rec;
                Step::Closure { atom: compile_atom(a, &mut vars), recursive: rec }
            }
            CoreLit::Neg(a) => Step::Neg(compile_atom(a, &mut vars)),
            CoreLit::Builtin(a) => Step::Builtin(compile_atom(a, &mut vars)),
            CoreLit::Cmp(op, a, b) => Step::Cmp(*op, compile_term(a, &mut vars), compile_term(b, &mut vars)),
            CoreLit::Findall { template, goal, result } => Step::Findall {
                template: compile_term(template, &mut vars),
                goal: compile_atom(goal, &mut vars),
                result: compile_term(result, &mut vars),
            },
            CoreLit::Switch { param, atom } => Step::Switch { param: *param, atom: compile_atom(atom, &mut vars) },
        })
        .collect();
    Ok(Plan {
        head,
        steps,
        nvars: vars.len(),
        recursive,
        closure_head: core.closure_preds.contains(&rule.head.key()),
    })
}

#[derive(Clone, Debug, Default)]
pub struct GroundOptions {
    pub builtins: BuiltinRegistry,
}

/// One rule instance found during a join, before interning.
struct Instance {
    head: GroundAtom,
    pos: Vec<AtomId>,
    neg: Vec<AtomId>,
    /// Switch atoms still to be created: (atom, param).
    switches: Vec<(GroundAtom, usize)>,
}

struct Grounder<'a> {
    gp: GroundProgram,
    core: &'a CoreProgram,
    builtins: &'a BuiltinRegistry,
    switch_atoms: HashMap<GroundAtom, AtomId>,
}

fn resolve(slot: &Slot, b: &[Option<Value>]) -> Option<Value> {
    match slot {
        Slot::Val(v) => Some(v.clone()),
        Slot::Var(i) => b[*i].clone(),
        Slot::Wild => None,
    }
}

fn ground_plan_atom(atom: &PlanAtom, b: &[Option<Value>]) -> Option<GroundAtom> {
    let args = atom.args.iter().map(|s| resolve(s, b)).collect::<Option<Vec<_>>>()?;
    Some(GroundAtom { pred: atom.key.0.clone(), args })
}

/// Unifies `args` with `values`, returning the extended bindings.
fn unify(args: &[Slot], values: &[Value], b: &[Option<Value>]) -> Option<Vec<Option<Value>>> {
    let mut out = b.to_vec();
    for (slot, v) in args.iter().zip(values) {
        match slot {
            Slot::Val(c) if c != v => return None,
            Slot::Var(i) => match &out[*i] {
                Some(x) if x != v => return None,
                Some(_) => {}
                None => out[*i] = Some(v.clone()),
            },
            _ => {}
        }
    }
    Some(out)
}

fn compare(op: CmpOp, a: &Value, b: &Value) -> bool {
    use std::cmp::Ordering::*;
    let ord = match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x.partial_cmp(&y),
        _ => match op {
            CmpOp::Eq | CmpOp::Ne => Some(a.cmp(b)),
            _ => None,
        },
    };
    match (op, ord) {
        (_, None) => false,
        (CmpOp::Lt, Some(o)) => o == Less,
        (CmpOp::Gt, Some(o)) => o == Greater,
        (CmpOp::Le, Some(o)) => o != Greater,
        (CmpOp::Ge, Some(o)) => o != Less,
        (CmpOp::Eq, Some(o)) => o == Equal,
        (CmpOp::Ne, Some(o)) => o != Equal,
    }
}

impl<'a> Grounder<'a> {
    fn candidates(&self, atom: &PlanAtom, b: &[Option<Value>], range: Option<(AtomId, AtomId)>) -> Vec<AtomId> {
        let Some(rel) = self.gp.relations.get(&atom.key) else {
            return Vec::new();
        };
        let mut best: Option<&Vec<AtomId>> = None;
        for (i, slot) in atom.args.iter().enumerate() {
            if let Some(v) = resolve(slot, b) {
                match rel.by_arg.get(i).and_then(|m| m.get(&v)) {
                    Some(ids) => {
                        if best.is_none_or(|cur| ids.len() < cur.len()) {
                            best = Some(ids);
                        }
                    }
                    None => return Vec::new(),
                }
            }
        }
        let ids = best.unwrap_or(&rel.ids);
        match range {
            Some((lo, hi)) => ids.iter().copied().filter(|id| *id >= lo && *id < hi).collect(),
            None => ids.clone(),
        }
    }

    fn solve(
        &self,
        plan: &Plan,
        step: usize,
        delta: Option<(usize, AtomId, AtomId)>,
        b: Vec<Option<Value>>,
        acc: &mut (Vec<AtomId>, Vec<AtomId>, Vec<(GroundAtom, usize)>),
        out: &mut Vec<Instance>,
    ) {
        if step == plan.steps.len() {
            if let Some(head) = ground_plan_atom(&plan.head, &b) {
                out.push(Instance { head, pos: acc.0.clone(), neg: acc.1.clone(), switches: acc.2.clone() });
            }
            return;
        }
        match &plan.steps[step] {
            Step::Pos { atom, .. } => {
                let range = delta.filter(|d| d.0 == step).map(|d| (d.1, d.2));
                for id in self.candidates(atom, &b, range) {
                    let values = &self.gp.atoms[id as usize].args;
                    if let Some(nb) = unify(&atom.args, values, &b) {
                        let certain = self.gp.certain[id as usize];
                        if !certain {
                            acc.0.push(id);
                        }
                        self.solve(plan, step + 1, delta, nb, acc, out);
                        if !certain {
                            acc.0.pop();
                        }
                    }
                }
            }
            Step::Closure { atom, .. } => {
                let range = delta.filter(|d| d.0 == step).map(|d| (d.1, d.2));
                for id in self.candidates(atom, &b, range) {
                    if let Some(nb) = unify(&atom.args, &self.gp.atoms[id as usize].args, &b) {
                        self.solve(plan, step + 1, delta, nb, acc, out);
                    }
                }
            }
            Step::Neg(atom) => {
                let g = ground_plan_atom(atom, &b).expect("negation evaluated once bound");
                match self.gp.index.get(&g) {
                    None => self.solve(plan, step + 1, delta, b, acc, out),
                    Some(&id) if self.gp.certain[id as usize] => {}
                    Some(&id) => {
                        acc.1.push(id);
                        self.solve(plan, step + 1, delta, b, acc, out);
                        acc.1.pop();
                    }
                }
            }
            Step::Builtin(atom) => {
                let args: Vec<Option<Value>> = atom.args.iter().map(|s| resolve(s, &b)).collect();
                let sols = self.builtins.eval(&atom.key.0, &args).unwrap_or_default();
                for sol in sols {
                    if let Some(nb) = unify(&atom.args, &sol, &b) {
                        self.solve(plan, step + 1, delta, nb, acc, out);
                    }
                }
            }
            Step::Cmp(op, l, r) => match (resolve(l, &b), resolve(r, &b)) {
                (Some(x), Some(y)) => {
                    if compare(*op, &x, &y) {
                        self.solve(plan, step + 1, delta, b, acc, out);
                    }
                }
                (Some(v), None) | (None, Some(v)) if *op == CmpOp::Eq => {
                    let slot = if resolve(l, &b).is_none() { l } else { r };
                    if let Some(nb) = unify(std::slice::from_ref(slot), &[v], &b) {
                        self.solve(plan, step + 1, delta, nb, acc, out);
                    }
                }
                _ => {}
            },
            Step::Findall { template, goal, result } => {
                let mut items: BTreeSet<Value> = BTreeSet::new();
                for id in self.candidates(goal, &b, None) {
                    if !self.gp.closure[id as usize] {
                        continue;
                    }
                    if let Some(nb) = unify(&goal.args, &self.gp.atoms[id as usize].args, &b) {
                        if let Some(v) = resolve(template, &nb) {
                            items.insert(v);
                        }
                    }
                }
                let list = Value::List(items.into_iter().collect());
                if let Some(nb) = unify(std::slice::from_ref(result), &[list], &b) {
                    self.solve(plan, step + 1, delta, nb, acc, out);
                }
            }
            Step::Switch { param, atom } => {
                let g = ground_plan_atom(atom, &b).expect("switch arguments bound");
                let p = &self.core.params[*param];
                if p.weight == 0.0 && !p.learnable {
                    return;
                }
                let always = p.weight == 1.0 && !p.learnable;
                if !always {
                    acc.2.push((g, *param));
                }
                self.solve(plan, step + 1, delta, b, acc, out);
                if !always {
                    acc.2.pop();
                }
            }
        }
    }

    fn run(&self, plan: &Plan, delta: Option<(usize, AtomId, AtomId)>) -> Vec<Instance> {
        let mut out = Vec::new();
        let mut acc = (Vec::new(), Vec::new(), Vec::new());
        self.solve(plan, 0, delta, vec![None; plan.nvars], &mut acc, &mut out);
        out
    }

    fn switch_atom(&mut self, atom: GroundAtom, param: usize, stratum: usize) -> AtomId {
        if let Some(&id) = self.switch_atoms.get(&atom) {
            return id;
        }
        let w = self.core.params[param].weight;
        let id = self.gp.add_prob_fact(atom.clone(), w, Some(param), stratum);
        self.gp.closure[id as usize] = true;
        self.switch_atoms.insert(atom, id);
        id
    }

    /// Interns instances; returns whether any atom was new.
    fn commit(&mut self, instances: Vec<Instance>, closure_head: bool, stratum: usize, seen: &mut HashSet<GroundRule>) -> bool {
        let mut grew = false;
        for inst in instances {
            let (head, new) = self.gp.intern(inst.head, stratum);
            grew |= new;
            if closure_head {
                self.gp.certain[head as usize] = true;
                self.gp.closure[head as usize] = true;
                continue;
            }
            let mut pos = inst.pos;
            for (atom, param) in inst.switches {
                pos.push(self.switch_atom(atom, param, 0));
            }
            pos.sort_unstable();
            pos.dedup();
            let mut neg = inst.neg;
            neg.sort_unstable();
            neg.dedup();
            let rule = GroundRule { head, pos, neg };
            if seen.insert(rule.clone()) {
                self.gp.add_rule(rule);
            }
        }
        grew
    }

    fn finish_stratum(&mut self, rule_range: std::ops::Range<usize>) {
        let rules: Vec<GroundRule> = self.gp.rules[rule_range].to_vec();
        loop {
            let mut changed = false;
            for r in &rules {
                let h = r.head as usize;
                if !self.gp.certain[h]
                    && r.neg.is_empty()
                    && r.pos.iter().all(|&a| self.gp.certain[a as usize])
                {
                    self.gp.certain[h] = true;
                    changed = true;
                }
                if !self.gp.closure[h]
                    && r.pos.iter().all(|&a| self.gp.closure[a as usize])
                    && r.neg.iter().all(|&a| !self.gp.closure[a as usize])
                {
                    self.gp.closure[h] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }
}

/// Grounds `core` against `facts`.
pub fn ground(core: &CoreProgram, facts: &[WeightedFact], options: &GroundOptions) -> Result<GroundProgram> {
    let mut g = Grounder {
        gp: GroundProgram::default(),
        core,
        builtins: &options.builtins,
        switch_atoms: HashMap::new(),
    };
    g.gp.params = core.params.iter().map(|p| p.weight).collect();
    g.gp.learnable = core.params.iter().map(|p| p.learnable).collect();
    g.gp.known = core.strata.keys().cloned().collect();

    let mut certain_facts: Vec<GroundAtom> = Vec::new();
    let mut weighted: Vec<(GroundAtom, f64, Option<usize>)> = Vec::new();
    for f in facts {
        g.gp.known.insert(PredKey(f.atom.pred.clone(), f.atom.arity()));
        if f.prob >= 1.0 {
            certain_facts.push(f.atom.clone());
        } else if f.prob > 0.0 {
            weighted.push((f.atom.clone(), f.prob, None));
        }
    }
    for f in &core.facts {
        match f.param {
            None => certain_facts.push(f.atom.clone()),
            Some(p) => {
                let param = &core.params[p];
                if param.learnable {
                    weighted.push((f.atom.clone(), param.weight, Some(p)));
                } else if param.weight >= 1.0 {
                    certain_facts.push(f.atom.clone());
                } else if param.weight > 0.0 {
                    weighted.push((f.atom.clone(), param.weight, Some(p)));
                }
            }
        }
    }
    let stratum_of = |a: &GroundAtom| core.stratum(&PredKey(a.pred.clone(), a.arity()));
    for a in certain_facts {
        let s = stratum_of(&a);
        let (id, _) = g.gp.intern(a, s);
        g.gp.certain[id as usize] = true;
        g.gp.closure[id as usize] = true;
    }
    for (a, w, p) in weighted {
        let s = stratum_of(&a);
        let id = g.gp.add_prob_fact(a, w, p, s);
        g.gp.closure[id as usize] = true;
    }

    let mut by_stratum: BTreeMap<usize, Vec<Plan>> = BTreeMap::new();
    for rule in &core.rules {
        by_stratum.entry(core.stratum(&rule.head.key())).or_default().push(compile(rule, core)?);
    }
    let mut seen: HashSet<GroundRule> = HashSet::new();
    for (stratum, plans) in &by_stratum {
        let rules_start = g.gp.rules.len();
        // demand rules first so guarded rules see demanded bindings early
        let mut plans: Vec<&Plan> = plans.iter().collect();
        plans.sort_by_key(|p| !p.closure_head);
        let mut lo = g.gp.atoms.len() as AtomId;
        let mut grew = false;
        for plan in &plans {
            let inst = g.run(plan, None);
            grew |= g.commit(inst, plan.closure_head, *stratum, &mut seen);
        }
        while grew {
            let hi = g.gp.atoms.len() as AtomId;
            grew = false;
            for plan in plans.iter().filter(|p| p.recursive) {
                for (si, step) in plan.steps.iter().enumerate() {
                    if matches!(step, Step::Pos { recursive: true, .. } | Step::Closure { recursive: true, .. }) {
                        let inst = g.run(plan, Some((si, lo, hi)));
                        grew |= g.commit(inst, plan.closure_head, *stratum, &mut seen);
                    }
                }
            }
            lo = hi;
        }
        g.finish_stratum(rules_start..g.gp.rules.len());
        log::trace!("stratum {stratum}: {} ground rules", g.gp.rules.len() - rules_start);
    }
    Ok(g.gp)
}
