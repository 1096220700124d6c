//! Control-flow, reaching definitions and typed dependence graphs.
//!
//! Each method contributes `n + 2` nodes laid out as `ENTRY, i0 .. i(n-1), EXIT`.
//! Program graphs concatenate methods in declaration order.

use std::collections::{BTreeSet, VecDeque};

use serde_json::json;

use crate::mir::{Kind, Method, Program};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeType {
    Control = 0,
    Data = 1,
    Call = 2,
    CallReturn = 3,
}

impl EdgeType {
    pub const ALL: [EdgeType; 4] = [EdgeType::Control, EdgeType::Data, EdgeType::Call, EdgeType::CallReturn];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeType::Control => "CONTROL",
            EdgeType::Data => "DATA",
            EdgeType::Call => "CALL",
            EdgeType::CallReturn => "CALL_RETURN",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub ty: EdgeType,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeKind {
    Entry,
    Exit,
    Instr(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DefSite {
    Entry,
    Instr(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DefUse {
    pub def: DefSite,
    pub use_at: usize,
    pub var: String,
}

/// Successor lists per instruction.
pub fn build_cfg(m: &Method) -> Vec<Vec<usize>> {
    m.successors()
}

fn definitions(m: &Method) -> Vec<(DefSite, &str)> {
    m.params
        .iter()
        .map(|p| (DefSite::Entry, p.as_str()))
        .chain(
            m.instructions
                .iter()
                .filter_map(|i| i.defs.as_deref().map(|d| (DefSite::Instr(i.index), d))),
        )
        .collect()
}

/// Forward may-analysis with GEN = own definition and KILL = other definitions
/// of the same variable. Parameters are defined at ENTRY. Instructions that
/// cannot be reached from the first one neither receive nor pass on anything.
pub fn reaching_definitions(m: &Method) -> BTreeSet<DefUse> {
    let n = m.instructions.len();
    let defs = definitions(m);
    let succ = build_cfg(m);
    let mut reachable = vec![false; n];
    let mut work: Vec<usize> = if n > 0 { vec![0] } else { Vec::new() };
    while let Some(i) = work.pop() {
        if !std::mem::replace(&mut reachable[i], true) {
            work.extend(succ[i].iter().copied());
        }
    }
    let mut preds = vec![Vec::new(); n];
    for (i, s) in succ.iter().enumerate().filter(|&(i, _)| reachable[i]) {
        for &j in s {
            preds[j].push(i);
        }
    }
    let entry_out: BTreeSet<usize> = (0..defs.len()).filter(|&d| defs[d].0 == DefSite::Entry).collect();
    let def_of: Vec<Option<usize>> = m
        .instructions
        .iter()
        .map(|ins| defs.iter().position(|d| d.0 == DefSite::Instr(ins.index)))
        .collect();

    let mut ins_sets = vec![BTreeSet::new(); n];
    let mut outs = vec![BTreeSet::new(); n];
    let mut changed = true;
    while changed {
        changed = false;
        for i in (0..n).filter(|&i| reachable[i]) {
            let mut inset: BTreeSet<usize> = if i == 0 { entry_out.clone() } else { BTreeSet::new() };
            for &p in &preds[i] {
                inset.extend(outs[p].iter().copied());
            }
            let mut out: BTreeSet<usize> = match def_of[i] {
                Some(d) => inset.iter().copied().filter(|&x| defs[x].1 != defs[d].1).collect(),
                None => inset.clone(),
            };
            if let Some(d) = def_of[i] {
                out.insert(d);
            }
            if out != outs[i] {
                outs[i] = out;
                changed = true;
            }
            ins_sets[i] = inset;
        }
    }

    let mut pairs = BTreeSet::new();
    for ins in &m.instructions {
        for d in &ins_sets[ins.index] {
            let (site, var) = defs[*d];
            if ins.uses.iter().any(|u| u == var) {
                pairs.insert(DefUse {
                    def: site,
                    use_at: ins.index,
                    var: var.to_string(),
                });
            }
        }
    }
    pairs
}

/// Dependence structure of one method in local node ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MethodGraph {
    pub method: String,
    pub nodes: Vec<NodeKind>,
    pub kinds: Vec<Option<Kind>>,
    pub edges: Vec<Edge>,
}

impl MethodGraph {
    pub fn entry(&self) -> usize {
        0
    }

    pub fn exit(&self) -> usize {
        self.nodes.len() - 1
    }
}

/// CONTROL edges from the CFG plus ENTRY→first and RETURN→EXIT, DATA edges from
/// reaching definitions. Self-loops are dropped; a node pair carries at most one
/// edge per type.
pub fn build_method_graph(m: &Method) -> MethodGraph {
    let n = m.instructions.len();
    let node = |i: usize| i + 1;
    let exit = n + 1;
    let mut set = BTreeSet::new();
    if n > 0 {
        set.insert(Edge {
            src: 0,
            dst: node(0),
            ty: EdgeType::Control,
        });
    }
    for (i, succ) in build_cfg(m).iter().enumerate() {
        for &j in succ {
            set.insert(Edge {
                src: node(i),
                dst: node(j),
                ty: EdgeType::Control,
            });
        }
        if m.instructions[i].kind == Kind::Return {
            set.insert(Edge {
                src: node(i),
                dst: exit,
                ty: EdgeType::Control,
            });
        }
    }
    for du in reaching_definitions(m) {
        let src = match du.def {
            DefSite::Entry => 0,
            DefSite::Instr(d) => node(d),
        };
        set.insert(Edge {
            src,
            dst: node(du.use_at),
            ty: EdgeType::Data,
        });
    }
    let mut edges: Vec<Edge> = set.into_iter().filter(|e| e.src != e.dst).collect();
    edges.sort();
    let nodes = std::iter::once(NodeKind::Entry)
        .chain((0..n).map(NodeKind::Instr))
        .chain(std::iter::once(NodeKind::Exit))
        .collect();
    let kinds = std::iter::once(None)
        .chain(m.instructions.iter().map(|i| Some(i.kind)))
        .chain(std::iter::once(None))
        .collect();
    MethodGraph {
        method: m.name.clone(),
        nodes,
        kinds,
        edges,
    }
}

/// Union of method graphs with CALL / CALL_RETURN edges for in-program calls.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProgramGraph {
    pub methods: Vec<MethodGraph>,
    /// Global id of each method's ENTRY node.
    pub offsets: Vec<usize>,
    /// Owning method and local node of each global node.
    pub nodes: Vec<(usize, NodeKind)>,
    pub kinds: Vec<Option<Kind>>,
    /// All edges in global ids, sorted by `(src, dst, type)`.
    pub edges: Vec<Edge>,
}

pub fn build_program_graph(p: &Program) -> ProgramGraph {
    let methods: Vec<MethodGraph> = p.methods.iter().map(build_method_graph).collect();
    let mut offsets = Vec::with_capacity(methods.len());
    let mut nodes = Vec::new();
    let mut kinds = Vec::new();
    let mut edges = Vec::new();
    for (mi, g) in methods.iter().enumerate() {
        let off = nodes.len();
        offsets.push(off);
        nodes.extend(g.nodes.iter().map(|&k| (mi, k)));
        kinds.extend(g.kinds.iter().copied());
        edges.extend(g.edges.iter().map(|e| Edge {
            src: e.src + off,
            dst: e.dst + off,
            ty: e.ty,
        }));
    }
    for (mi, m) in p.methods.iter().enumerate() {
        for ins in &m.instructions {
            let Some(callee) = &ins.callee else { continue };
            let Some(j) = p.method_index(callee) else { continue };
            let site = offsets[mi] + ins.index + 1;
            let entry = offsets[j];
            let exit = offsets[j] + methods[j].nodes.len() - 1;
            edges.push(Edge {
                src: site,
                dst: entry,
                ty: EdgeType::Call,
            });
            edges.push(Edge {
                src: exit,
                dst: site,
                ty: EdgeType::CallReturn,
            });
        }
    }
    edges.sort();
    edges.dedup();
    ProgramGraph {
        methods,
        offsets,
        nodes,
        kinds,
        edges,
    }
}

impl ProgramGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn message_graph(&self) -> MessageGraph {
        MessageGraph::mirrored(self.nodes.len(), &self.edges)
    }

    /// Debug export with nodes `{id, kind}` and mirrored edges
    /// `{src, dst, type, reversed}` ordered by `(src, dst, type)`.
    pub fn to_json(&self, p: &Program) -> serde_json::Value {
        let nodes: Vec<_> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, &(mi, k))| {
                let kind = match k {
                    NodeKind::Entry => "ENTRY".to_string(),
                    NodeKind::Exit => "EXIT".to_string(),
                    NodeKind::Instr(i) => p.methods[mi].instructions[i].kind.name().to_string(),
                };
                json!({"id": id, "method": p.methods[mi].name, "kind": kind})
            })
            .collect();
        let mg = self.message_graph();
        let mut order: Vec<usize> = (0..mg.edge_count()).collect();
        order.sort_by_key(|&e| (mg.src[e], mg.dst[e], mg.ty[e], mg.reversed[e]));
        let edges: Vec<_> = order
            .into_iter()
            .map(|e| json!({"src": mg.src[e], "dst": mg.dst[e], "type": mg.ty[e].name(), "reversed": mg.reversed[e]}))
            .collect();
        json!({"nodes": nodes, "edges": edges})
    }
}

/// Directed edge list used for message passing: each dependence edge appears
/// once as stored and once reversed, both carrying the original type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessageGraph {
    pub nodes: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub ty: Vec<EdgeType>,
    pub reversed: Vec<bool>,
}

impl MessageGraph {
    pub fn mirrored(nodes: usize, edges: &[Edge]) -> Self {
        let mut g = MessageGraph {
            nodes,
            src: Vec::with_capacity(2 * edges.len()),
            dst: Vec::with_capacity(2 * edges.len()),
            ty: Vec::with_capacity(2 * edges.len()),
            reversed: Vec::with_capacity(2 * edges.len()),
        };
        for e in edges {
            g.push(e.src, e.dst, e.ty, false);
            g.push(e.dst, e.src, e.ty, true);
        }
        g
    }

    pub fn push(&mut self, src: usize, dst: usize, ty: EdgeType, reversed: bool) {
        self.src.push(src);
        self.dst.push(dst);
        self.ty.push(ty);
        self.reversed.push(reversed);
    }

    pub fn edge_count(&self) -> usize {
        self.src.len()
    }

    /// Incoming message count per node.
    pub fn in_degree(&self) -> Vec<usize> {
        let mut d = vec![0; self.nodes];
        for &v in &self.dst {
            d[v] += 1;
        }
        d
    }

    /// Row of the edge-attribute table per edge type plus a fifth row marking
    /// reversed copies.
    pub fn edge_attributes(&self) -> Vec<[f64; 5]> {
        (0..self.edge_count())
            .map(|e| {
                let mut row = [0.0; 5];
                row[self.ty[e].code()] = 1.0;
                if self.reversed[e] {
                    row[4] = 1.0;
                }
                row
            })
            .collect()
    }

    /// Renames node `v` to `perm[v]`, keeping edge order.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        MessageGraph {
            nodes: self.nodes,
            src: self.src.iter().map(|&v| perm[v]).collect(),
            dst: self.dst.iter().map(|&v| perm[v]).collect(),
            ty: self.ty.clone(),
            reversed: self.reversed.clone(),
        }
    }

    /// Undirected adjacency lists, sorted and deduplicated.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![BTreeSet::new(); self.nodes];
        for (&s, &d) in self.src.iter().zip(&self.dst) {
            if s != d {
                adj[s].insert(d);
                adj[d].insert(s);
            }
        }
        adj.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Hop distances from `start` (`usize::MAX` when unreachable).
    pub fn hop_distances(&self, start: usize) -> Vec<usize> {
        hop_distances(&self.neighbors(), start)
    }

    /// Subgraph induced by `keep` (in the given order). Returns the graph and
    /// the local id of each kept node.
    pub fn induced(&self, keep: &[usize]) -> MessageGraph {
        let mut local = vec![usize::MAX; self.nodes];
        for (i, &v) in keep.iter().enumerate() {
            local[v] = i;
        }
        let mut g = MessageGraph {
            nodes: keep.len(),
            src: Vec::new(),
            dst: Vec::new(),
            ty: Vec::new(),
            reversed: Vec::new(),
        };
        for e in 0..self.edge_count() {
            let (s, d) = (local[self.src[e]], local[self.dst[e]]);
            if s != usize::MAX && d != usize::MAX {
                g.push(s, d, self.ty[e], self.reversed[e]);
            }
        }
        g
    }

    /// Disjoint union; node ids of `other` are shifted by `self.nodes`.
    pub fn append(&mut self, other: &MessageGraph) {
        let off = self.nodes;
        for e in 0..other.edge_count() {
            self.push(other.src[e] + off, other.dst[e] + off, other.ty[e], other.reversed[e]);
        }
        self.nodes += other.nodes;
    }
}

pub fn hop_distances(adj: &[Vec<usize>], start: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if dist[u] == usize::MAX {
                dist[u] = dist[v] + 1;
                queue.push_back(u);
            }
        }
    }
    dist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mir::parse_program;

    fn method(src: &str) -> Method {
        parse_program(src).unwrap().methods.remove(0)
    }

    fn du(def: DefSite, use_at: usize, var: &str) -> DefUse {
        DefUse {
            def,
            use_at,
            var: var.into(),
        }
    }

    #[test]
    fn cfg_shapes() {
        let m = method("method f(){ a = 1; b = 2; return b; }");
        assert_eq!(build_cfg(&m), vec![vec![1], vec![2], vec![]]);
        let m = method("method min(a,b){ if a < b goto L1; r = b; return r; L1: r = a; return r; }");
        assert_eq!(build_cfg(&m)[0], vec![1, 3]);
        let m = method("method spin(){ L: goto L; }");
        assert_eq!(build_cfg(&m)[0], vec![0]);
    }

    #[test]
    fn reaching_definition_examples() {
        let m = method("method f(){ r = 1; s = r; return s; }");
        let pairs = reaching_definitions(&m);
        assert!(pairs.contains(&du(DefSite::Instr(0), 1, "r")));
        assert!(!pairs.iter().any(|p| p.use_at == 1 && p.def != DefSite::Instr(0)));

        let m = method("method f(){ r = 1; r = 2; s = r; return s; }");
        let into2: Vec<_> = reaching_definitions(&m).into_iter().filter(|p| p.use_at == 2).collect();
        assert_eq!(into2, vec![du(DefSite::Instr(1), 2, "r")]);

        let m = method("method f(i){ L: i = i + 1; goto L; }");
        let into0: BTreeSet<_> = reaching_definitions(&m).into_iter().filter(|p| p.use_at == 0).collect();
        assert_eq!(
            into0,
            BTreeSet::from([du(DefSite::Entry, 0, "i"), du(DefSite::Instr(0), 0, "i")])
        );
    }

    #[test]
    fn identity_method_graph() {
        let g = build_method_graph(&method("method id(x){ return x; }"));
        assert_eq!(g.nodes, vec![NodeKind::Entry, NodeKind::Instr(0), NodeKind::Exit]);
        let expect = vec![
            Edge {
                src: 0,
                dst: 1,
                ty: EdgeType::Control,
            },
            Edge {
                src: 0,
                dst: 1,
                ty: EdgeType::Data,
            },
            Edge {
                src: 1,
                dst: 2,
                ty: EdgeType::Control,
            },
        ];
        assert_eq!(g.edges, expect);
    }

    #[test]
    fn edge_count_arithmetic() {
        let m = method("method f(a,b){ c = a + b; if c > 0 goto P; d = 0 - c; return d; P: return c; }");
        let g = build_method_graph(&m);
        let cfg: usize = build_cfg(&m).iter().map(Vec::len).sum();
        let pairs: BTreeSet<(DefSite, usize)> = reaching_definitions(&m).into_iter().map(|p| (p.def, p.use_at)).collect();
        let returns = m.instructions.iter().filter(|i| i.kind == Kind::Return).count();
        assert_eq!(g.edges.len(), cfg + pairs.len() + returns + 1);
    }

    #[test]
    fn no_reuse_no_data_edges() {
        let g = build_method_graph(&method("method f(){ a = 1; b = 2; return 0; }"));
        assert!(g.edges.iter().all(|e| e.ty != EdgeType::Data));
    }

    #[test]
    fn call_edges() {
        let p = parse_program("method f(a){ r = call g(a); return r; } method g(x){ return x; }").unwrap();
        let g = build_program_graph(&p);
        let calls: Vec<_> = g.edges.iter().filter(|e| e.ty >= EdgeType::Call).collect();
        assert_eq!(calls.len(), 2);
        assert_eq!(g.offsets, vec![0, 4]);
        assert!(calls.contains(&&Edge {
            src: 1,
            dst: 4,
            ty: EdgeType::Call
        }));
        assert!(calls.contains(&&Edge {
            src: 6,
            dst: 1,
            ty: EdgeType::CallReturn
        }));

        let p = parse_program("method f(n){ r = call f(n); return r; }").unwrap();
        let g = build_program_graph(&p);
        assert!(g.edges.contains(&Edge {
            src: 1,
            dst: 0,
            ty: EdgeType::Call
        }));

        let p = parse_program("method f(n){ r = call ext(n); return r; }").unwrap();
        let g = build_program_graph(&p);
        assert!(g.edges.iter().all(|e| e.ty < EdgeType::Call));
    }

    #[test]
    fn rename_keeps_edges() {
        let a = parse_program("method f(a,b){ c = a + b; return c; }").unwrap();
        let b = parse_program("method g(x,y){ z = x + y; return z; }").unwrap();
        assert_eq!(build_program_graph(&a).edges, build_program_graph(&b).edges);
    }

    #[test]
    fn mirrored_and_json() {
        let p = parse_program("method id(x){ return x; }").unwrap();
        let g = build_program_graph(&p);
        let mg = g.message_graph();
        assert_eq!(mg.edge_count(), 6);
        assert_eq!(mg.in_degree(), vec![2, 3, 1]);
        let j = g.to_json(&p);
        assert_eq!(j["nodes"][1]["kind"], "RETURN");
        assert_eq!(j["edges"][0]["src"], 0);
        assert_eq!(j["edges"].as_array().unwrap().len(), 6);
    }

    #[test]
    fn path_distances() {
        let edges: Vec<Edge> = (0..4)
            .map(|i| Edge {
                src: i,
                dst: i + 1,
                ty: EdgeType::Control,
            })
            .collect();
        let mg = MessageGraph::mirrored(5, &edges);
        assert_eq!(mg.hop_distances(0), vec![0, 1, 2, 3, 4]);
        let sub = mg.induced(&[1, 2]);
        assert_eq!(sub.edge_count(), 2);
    }
}
