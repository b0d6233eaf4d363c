//! Learning from interpretations by expectation maximization.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use super::ground::{ground, GroundOptions, GroundProgram};
use super::wmc::{QueryOptions, Slice};
use crate::error::{Error, Result};
use crate::par;
use crate::rulelang::{parse_ground_atom, CoreProgram, PredKey};
use crate::value::{GroundAtom, WeightedFact};

/// A partial truth assignment over ground atoms.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interpretation {
    pub observations: BTreeMap<GroundAtom, bool>,
}

impl Interpretation {
    pub fn new(obs: impl IntoIterator<Item = (GroundAtom, bool)>) -> Self {
        Interpretation { observations: obs.into_iter().collect() }
    }
}

impl fmt::Display for Interpretation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (a, v) in &self.observations {
            writeln!(f, "evidence({a},{v}).")?;
        }
        Ok(())
    }
}

/// Parses `evidence(atom,true|false).` lines; interpretations are separated
/// by lines starting with `---`.
pub fn parse_interpretations(text: &str) -> Result<Vec<Interpretation>> {
    let mut out = Vec::new();
    let mut cur = Interpretation::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('%').next().unwrap_or("").trim();
        if line.starts_with("---") {
            out.push(std::mem::take(&mut cur));
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| Error::syntax(n + 1, 1, msg.to_string());
        let inner = line
            .strip_prefix("evidence(")
            .and_then(|s| s.trim_end_matches('.').trim_end().strip_suffix(')'))
            .ok_or_else(|| err("expected evidence(Atom,true|false)."))?;
        let (atom, value) = inner.rsplit_once(',').ok_or_else(|| err("expected a truth value"))?;
        let value = match value.trim() {
            "true" => true,
            "false" => false,
            _ => return Err(err("truth value must be true or false")),
        };
        let atom = parse_ground_atom(atom).map_err(|e| match e {
            Error::Syntax { col, msg, .. } => Error::Syntax { line: n + 1, col, msg },
            other => other,
        })?;
        cur.observations.insert(atom, value);
    }
    if !cur.observations.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct LearnOptions {
    pub max_iterations: usize,
    /// Stop once no weight moves by more than this.
    pub tolerance: f64,
    pub query: QueryOptions,
    pub ground: GroundOptions,
}

impl Default for LearnOptions {
    fn default() -> Self {
        LearnOptions { max_iterations: 100, tolerance: 1e-6, query: QueryOptions::default(), ground: GroundOptions::default() }
    }
}

#[derive(Clone, Debug)]
pub struct LearnResult {
    /// The program with learned weights written back.
    pub program: CoreProgram,
    pub weights: Vec<f64>,
    /// Log-likelihood of the data before each update, then at the final weights.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct Group<'a> {
    index: usize,
    count: usize,
    interp: &'a Interpretation,
}

/// Posterior truth of every learnable probabilistic fact, plus ln P(I).
fn expectations(gp: &GroundProgram, g: &Group, options: &QueryOptions) -> Result<(f64, HashMap<usize, f64>)> {
    let mut roots = Vec::new();
    let mut want = Vec::new();
    for (atom, &value) in &g.interp.observations {
        let key = PredKey(atom.pred.clone(), atom.arity());
        if !gp.knows_predicate(&key) {
            return Err(Error::UnknownInterpretationAtom { index: g.index, atom: atom.to_string() });
        }
        match gp.atom_id(atom) {
            None if value => return Err(Error::ImpossibleInterpretation { index: g.index }),
            None => {}
            Some(id) if gp.is_certain(id) => {
                if !value {
                    return Err(Error::ImpossibleInterpretation { index: g.index });
                }
            }
            Some(id) => {
                roots.push(id);
                want.push((id, value));
            }
        }
    }
    let slice = Slice::build(gp, &roots);
    if slice.bits.len() > options.max_enum_facts {
        return Err(Error::QueryTooHard {
            atom: format!("interpretation {}", g.index),
            facts: slice.bits.len(),
            limit: options.max_enum_facts,
        });
    }
    let want: Vec<(usize, bool)> = want.iter().map(|&(id, v)| (slice.index_of(id).expect("root"), v)).collect();
    let tracked: Vec<usize> = (0..slice.bits.len())
        .filter(|&b| gp.prob_facts[slice.bits[b]].param.is_some_and(|p| gp.learnable[p]))
        .collect();
    let probs = slice.bit_probs(gp);
    let (z, counts) = slice.fold(
        &probs,
        options.parallelism,
        || (0.0f64, vec![0.0f64; tracked.len()]),
        |acc, mask, w, truth| {
            if want.iter().all(|&(i, v)| truth[i] == v) {
                acc.0 += w;
                for (k, &b) in tracked.iter().enumerate() {
                    if mask >> b & 1 == 1 {
                        acc.1[k] += w;
                    }
                }
            }
        },
        |mut a, b| {
            a.0 += b.0;
            a.1.iter_mut().zip(b.1).for_each(|(x, y)| *x += y);
            a
        },
    );
    if z <= 0.0 {
        return Err(Error::ImpossibleInterpretation { index: g.index });
    }
    let mut post: HashMap<usize, f64> = tracked.iter().zip(counts).map(|(&b, n)| (slice.bits[b], n / z)).collect();
    for &(f, v) in &slice.fixed {
        post.insert(f, if v { 1.0 } else { 0.0 });
    }
    Ok((z.ln(), post))
}

/// One E-step: log-likelihood and re-estimated parameter weights.
fn step(gp: &GroundProgram, groups: &[Group], options: &QueryOptions, total: usize) -> Result<(f64, Vec<f64>)> {
    let inner = QueryOptions { parallelism: crate::par::Parallelism::Sequential, ..*options };
    let per_group = par::map(options.parallelism, groups, |g| expectations(gp, g, &inner));
    let mut ll = 0.0;
    let mut sums = vec![0.0f64; gp.params.len()];
    let mut sizes = vec![0usize; gp.params.len()];
    for f in gp.prob_facts.iter() {
        if let Some(p) = f.param.filter(|&p| gp.learnable[p]) {
            sizes[p] += 1;
        }
    }
    for (g, r) in groups.iter().zip(per_group) {
        let (lnz, post) = r?;
        ll += g.count as f64 * lnz;
        for (fi, f) in gp.prob_facts.iter().enumerate() {
            if let Some(p) = f.param.filter(|&p| gp.learnable[p]) {
                let e = post.get(&fi).copied().unwrap_or(gp.params[p]);
                sums[p] += g.count as f64 * e;
            }
        }
    }
    let weights = (0..gp.params.len())
        .map(|p| {
            if gp.learnable[p] && sizes[p] > 0 {
                sums[p] / (total * sizes[p]) as f64
            } else {
                gp.params[p]
            }
        })
        .collect();
    Ok((ll, weights))
}

/// Fits the learnable weights of `core` to `interpretations`.
pub fn learn_weights(
    core: &CoreProgram,
    facts: &[WeightedFact],
    interpretations: &[Interpretation],
    options: &LearnOptions,
) -> Result<LearnResult> {
    if !core.has_learnable() {
        return Err(Error::NoLearnableWeights);
    }
    let mut gp = ground(core, facts, &options.ground)?;
    let mut seen: BTreeMap<&Interpretation, usize> = BTreeMap::new();
    let mut groups: Vec<Group> = Vec::new();
    for (i, interp) in interpretations.iter().enumerate() {
        match seen.get(interp) {
            Some(&g) => groups[g].count += 1,
            None => {
                seen.insert(interp, groups.len());
                groups.push(Group { index: i, count: 1, interp });
            }
        }
    }
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        let (ll, next) = step(&gp, &groups, &options.query, interpretations.len())?;
        history.push(ll);
        let delta = next.iter().zip(&gp.params).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        gp.set_param_weights(&next);
        iterations += 1;
        log::debug!("em iteration {iterations}: ll={ll:.6} delta={delta:.3e}");
        if delta <= options.tolerance {
            converged = true;
            break;
        }
    }
    let (ll, _) = step(&gp, &groups, &options.query, interpretations.len())?;
    history.push(ll);
    let weights = gp.params.clone();
    Ok(LearnResult { program: core.with_weights(&weights), weights, log_likelihood: history, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rulelang::{desugar, parse_program, DesugarOptions};

    fn learn(src: &str, interps: &str) -> LearnResult {
        let core = desugar(&parse_program(src).unwrap(), DesugarOptions::default()).unwrap();
        let data = parse_interpretations(interps).unwrap();
        learn_weights(&core, &[], &data, &LearnOptions::default()).unwrap()
    }

    #[test]
    fn observed_frequency_recovered() {
        let mut text = String::new();
        for i in 0..10 {
            text.push_str(if i < 7 { "evidence(h,true).\n---\n" } else { "evidence(h,false).\n---\n" });
        }
        let r = learn("t(_)::h :- b. b.", &text);
        assert!((r.weights[0] - 0.7).abs() < 1e-6, "{:?}", r.weights);
        for w in r.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
    }

    #[test]
    fn parse_errors_carry_lines() {
        let err = parse_interpretations("evidence(a,true).\nevidence(b,maybe).").unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 2, .. }));
        let ok = parse_interpretations("evidence(p(a,\"x y\"),false).\n").unwrap();
        assert_eq!(ok.len(), 1);
    }

    #[test]
    fn no_learnable_weights() {
        let core = desugar(&parse_program("0.5::h.").unwrap(), DesugarOptions::default()).unwrap();
        let err = learn_weights(&core, &[], &[], &LearnOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NoLearnableWeights));
    }

    #[test]
    fn unknown_atom_and_impossible() {
        let core = desugar(&parse_program("t(_)::h :- b. b.").unwrap(), DesugarOptions::default()).unwrap();
        let bad = parse_interpretations("evidence(zzz,true).").unwrap();
        let err = learn_weights(&core, &[], &bad, &LearnOptions::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownInterpretationAtom { index: 0, .. }));
        let imp = parse_interpretations("evidence(h,true).\n---\nevidence(b,false).").unwrap();
        let err = learn_weights(&core, &[], &imp, &LearnOptions::default()).unwrap_err();
        assert!(matches!(err, Error::ImpossibleInterpretation { index: 1 }), "{err}");
    }
}
