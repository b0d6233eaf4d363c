use std::collections::{BTreeMap, HashMap};

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use super::ast::PredKey;
use super::desugar::{CoreLit, CoreProgram};
use crate::error::{Error, Result};

/// Assigns each predicate a stratum: positive dependencies are
/// non-decreasing, negative ones (including `findall` goals) strictly
/// increasing.
pub fn stratify(core: &CoreProgram) -> Result<BTreeMap<PredKey, usize>> {
    let mut graph: DiGraph<PredKey, bool> = DiGraph::new();
    let mut index: HashMap<PredKey, NodeIndex> = HashMap::new();
    let mut node = |g: &mut DiGraph<PredKey, bool>, k: PredKey| {
        *index.entry(k.clone()).or_insert_with(|| g.add_node(k))
    };
    for f in &core.facts {
        node(&mut graph, PredKey(f.atom.pred.clone(), f.atom.arity()));
    }
    for r in &core.rules {
        let h = node(&mut graph, r.head.key());
        for lit in &r.body {
            let (key, negative) = match lit {
                CoreLit::Pos(a) | CoreLit::Closure(a) => (a.key(), false),
                CoreLit::Switch { atom, .. } => (atom.key(), false),
                CoreLit::Neg(a) => (a.key(), true),
                CoreLit::Findall { goal, .. } => (goal.key(), true),
                CoreLit::Builtin(_) | CoreLit::Cmp(..) => continue,
            };
            let b = node(&mut graph, key);
            graph.add_edge(h, b, negative);
        }
    }

    // tarjan_scc yields components in reverse topological order of the
    // head -> body edges, i.e. dependencies first.
    let sccs = tarjan_scc(&graph);
    let mut comp_of = vec![0usize; graph.node_count()];
    for (ci, comp) in sccs.iter().enumerate() {
        for n in comp {
            comp_of[n.index()] = ci;
        }
    }
    let mut comp_stratum = vec![0usize; sccs.len()];
    for (ci, comp) in sccs.iter().enumerate() {
        let mut s = 0;
        for &n in comp {
            for e in graph.edges(n) {
                use petgraph::visit::EdgeRef;
                let target = e.target();
                let negative = *e.weight();
                if comp_of[target.index()] == ci {
                    if negative {
                        return Err(Error::Unstratifiable { cycle: negative_cycle(&graph, &comp_of, n, target) });
                    }
                    continue;
                }
                let t = comp_stratum[comp_of[target.index()]];
                s = s.max(if negative { t + 1 } else { t });
            }
        }
        comp_stratum[ci] = s;
    }
    Ok(graph
        .node_indices()
        .map(|n| (graph[n].clone(), comp_stratum[comp_of[n.index()]]))
        .collect())
}

/// Names the cycle closed by the negative edge `from -> to`.
fn negative_cycle(
    graph: &DiGraph<PredKey, bool>,
    comp_of: &[usize],
    from: NodeIndex,
    to: NodeIndex,
) -> Vec<String> {
    let comp = comp_of[from.index()];
    let mut prev: HashMap<NodeIndex, NodeIndex> = HashMap::new();
    let mut queue = std::collections::VecDeque::from([to]);
    let mut found = to == from;
    while let Some(n) = queue.pop_front() {
        if found {
            break;
        }
        for m in graph.neighbors(n) {
            if comp_of[m.index()] == comp && m != to && !prev.contains_key(&m) {
                prev.insert(m, n);
                if m == from {
                    found = true;
                    break;
                }
                queue.push_back(m);
            }
        }
    }
    let mut path = vec![from];
    let mut cur = from;
    while cur != to {
        match prev.get(&cur) {
            Some(&p) => {
                path.push(p);
                cur = p;
            }
            None => break,
        }
    }
    path.reverse();
    let mut names: Vec<String> = std::iter::once(from).chain(path).map(|n| graph[n].to_string()).collect();
    names.dedup();
    if names.len() == 1 {
        names.push(names[0].clone());
    }
    names
}
