//! Brute-force references for the analyses in [`crate::depgraph`] and the
//! context sampler in [`crate::pretrain`], plus random inputs to feed them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::depgraph::{DefSite, DefUse, Edge, EdgeType, MessageGraph};
use crate::mir::{parse_program, Method};
use crate::pretrain::ContextSample;

const VARS: [&str; 3] = ["a", "b", "c"];

/// A random single-method program of `1..=max_len` instructions over three
/// variables, with every instruction labelled so branches can land anywhere.
pub fn random_method(rng: &mut ChaCha8Rng, max_len: usize) -> Method {
    let n = rng.random_range(1..=max_len.max(1));
    let params: Vec<&str> = VARS[..2].iter().copied().filter(|_| rng.random_bool(0.5)).collect();
    let var = |rng: &mut ChaCha8Rng| VARS[rng.random_range(0..VARS.len())];
    let mut body = Vec::with_capacity(n);
    for i in 0..n {
        let stmt = match rng.random_range(0..10) {
            0 | 1 => format!("{} = {}", var(rng), var(rng)),
            2 => format!("{} = {}", var(rng), rng.random_range(0..5)),
            3 | 4 => format!("{} = {} + {}", var(rng), var(rng), var(rng)),
            5 | 6 => format!("if {} < {} goto L{}", var(rng), var(rng), rng.random_range(0..n)),
            7 => format!("goto L{}", rng.random_range(0..n)),
            8 => format!("{} = call ext({})", var(rng), var(rng)),
            _ => format!("return {}", var(rng)),
        };
        body.push(format!("L{i}: {stmt};"));
    }
    let text = format!("method m({}){{ {} }}", params.join(","), body.join(" "));
    parse_program(&text)
        .expect("generated method parses")
        .methods
        .remove(0)
}

/// Def-use pairs collected by walking every control-flow path from the first
/// instruction while tracking the latest definition of each variable.
///
/// The future of a walk depends only on the current instruction and the
/// latest-definition map, so walks reaching an already seen pair are cut
/// there; every other path is followed to its end or to a repeat.
pub fn reaching_definitions_by_paths(m: &Method) -> BTreeSet<DefUse> {
    let mut out = BTreeSet::new();
    if m.instructions.is_empty() {
        return out;
    }
    let succ = m.successors();
    let start: BTreeMap<String, DefSite> = m.params.iter().map(|p| (p.clone(), DefSite::Entry)).collect();
    let mut seen: BTreeSet<(usize, BTreeMap<String, DefSite>)> = BTreeSet::new();
    let mut stack = vec![(0usize, start)];
    while let Some((at, latest)) = stack.pop() {
        if !seen.insert((at, latest.clone())) {
            continue;
        }
        let ins = &m.instructions[at];
        for u in &ins.uses {
            if let Some(&site) = latest.get(u) {
                out.insert(DefUse {
                    def: site,
                    use_at: at,
                    var: u.clone(),
                });
            }
        }
        let mut next = latest;
        if let Some(d) = &ins.defs {
            next.insert(d.clone(), DefSite::Instr(at));
        }
        for &s in &succ[at] {
            stack.push((s, next.clone()));
        }
    }
    out
}

/// A random mirrored graph on `nodes` nodes with up to `edges` distinct
/// undirected edges; isolated nodes are allowed.
pub fn random_graph(rng: &mut ChaCha8Rng, nodes: usize, edges: usize) -> MessageGraph {
    let mut list = BTreeSet::new();
    if nodes > 1 {
        for _ in 0..edges {
            let src = rng.random_range(0..nodes);
            let dst = rng.random_range(0..nodes);
            if src != dst {
                list.insert((src, dst));
            }
        }
    }
    let list: Vec<Edge> = list
        .into_iter()
        .map(|(src, dst)| Edge {
            src,
            dst,
            ty: EdgeType::ALL[rng.random_range(0..4)],
        })
        .collect();
    MessageGraph::mirrored(nodes, &list)
}

fn bfs(adj: &[BTreeSet<usize>], start: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; adj.len()];
    dist[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let d = dist[v].expect("queued nodes have a distance");
        for &u in &adj[v] {
            if dist[u].is_none() {
                dist[u] = Some(d + 1);
                queue.push_back(u);
            }
        }
    }
    dist
}

/// Neighbourhoods and rings by breadth-first search over the raw edge lists,
/// in the same layout as [`crate::pretrain::context_samples`].
pub fn context_by_bfs(g: &MessageGraph, k: usize, r1: usize, r2: usize) -> (Vec<ContextSample>, Vec<usize>) {
    let mut adj = vec![BTreeSet::new(); g.nodes];
    for (&s, &d) in g.src.iter().zip(&g.dst) {
        adj[s].insert(d);
        adj[d].insert(s);
    }
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for v in 0..g.nodes {
        let dist = bfs(&adj, v);
        let within = |lo: usize, hi: usize| -> Vec<usize> {
            (0..g.nodes)
                .filter(|&u| dist[u].is_some_and(|d| d >= lo && d <= hi))
                .collect()
        };
        let ring = within(r1, r2);
        if ring.is_empty() {
            skipped.push(v);
            continue;
        }
        let mut neighborhood = vec![v];
        neighborhood.extend(within(0, k).into_iter().filter(|&u| u != v));
        samples.push(ContextSample {
            anchor: v,
            neighborhood,
            ring,
        });
    }
    (samples, skipped)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::depgraph::reaching_definitions;
    use crate::pretrain::context_samples;

    fn method(src: &str) -> Method {
        parse_program(src).unwrap().methods.remove(0)
    }

    #[test]
    fn path_oracle_sees_loop_carried_definitions() {
        let m = method("method f(n){ i = 0; L: i = i + 1; if i < n goto L; return i; }");
        let pairs = reaching_definitions_by_paths(&m);
        let at = |use_at: usize, def: DefSite| DefUse {
            def,
            use_at,
            var: "i".into(),
        };
        assert!(pairs.contains(&at(1, DefSite::Instr(0))));
        assert!(pairs.contains(&at(1, DefSite::Instr(1))));
        assert!(!pairs.contains(&at(3, DefSite::Instr(0))));
        assert_eq!(pairs, reaching_definitions(&m));
    }

    #[test]
    fn unreachable_code_has_no_pairs() {
        let m = method("method f(a){ return a; b = a; return b; }");
        let pairs = reaching_definitions_by_paths(&m);
        assert_eq!(pairs.len(), 1);
    }

    #[test]
    fn random_methods_respect_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let m = random_method(&mut rng, 6);
            assert!((1..=6).contains(&m.instructions.len()));
        }
    }

    #[test]
    fn dataflow_agrees_with_paths_on_small_methods() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let m = random_method(&mut rng, 6);
            assert_eq!(reaching_definitions(&m), reaching_definitions_by_paths(&m), "{m:?}");
        }
    }

    #[test]
    fn context_sampler_agrees_with_bfs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for nodes in 1..=10 {
            for _ in 0..20 {
                let edges = rng.random_range(0..2 * nodes);
                let g = random_graph(&mut rng, nodes, edges);
                assert_eq!(context_samples(&g, 2, 1, 3), context_by_bfs(&g, 2, 1, 3));
            }
        }
    }
}
