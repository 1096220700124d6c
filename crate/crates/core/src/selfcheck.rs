//! Gradient, graph-oracle and structural-invariant suites, runnable outside
//! the test harness (`depvec selfcheck`).

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::depgraph::{reaching_definitions, Edge, EdgeType, MessageGraph};
use crate::gnn::{
    attention_readout, canonical_row_order, encode_graph, gat_attention, init_stack, message_pass, Arch, Dropout,
    Model, ModelConfig, Scope, StackSpec,
};
use crate::lexical::{encode_sequences, init_bilstm, lexical_embedding, sgns_loss, train_bpe, PairBatch};
use crate::mir::{parse_program, parse_records, Kind, Program};
use crate::numerics::{check_param_gradients, uniform, ParamStore, Primitive, Tape, Tensor, Var};
use crate::oracle::{context_by_bfs, random_graph, random_method, reaching_definitions_by_paths};
use crate::pretrain::{
    context_loss, context_samples, draw_negatives, gaussian, init_node_head, init_vgae_heads,
    node_classification_loss, parse_checkpoint, render_checkpoint, vgae_loss, vgae_pairs, Strategy,
};
use crate::tasks::generate_desk_corpora;
use crate::Result;

/// Largest accepted norm-wise relative gradient error.
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Bound on a GAT attention row's deviation from 1.
pub const ATTENTION_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Suite {
    Gradients,
    GraphOracles,
    Invariants,
}

impl Suite {
    pub fn name(self) -> &'static str {
        match self {
            Suite::Gradients => "gradients",
            Suite::GraphOracles => "graph-oracles",
            Suite::Invariants => "invariants",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "ok  " } else { "FAIL" };
        write!(f, "{status} {:<14} {:<28} {}", self.suite.name(), self.name, self.detail)
    }
}

fn check(suite: Suite, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        suite,
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

/// Runs the three suites over `seeds`.
pub fn run_all(seeds: std::ops::Range<u64>) -> Result<Vec<Check>> {
    let mut out = gradient_suite(seeds.clone())?;
    out.extend(graph_oracle_suite(seeds.start)?);
    out.extend(invariant_suite(seeds)?);
    Ok(out)
}

fn grad_check(
    name: &str,
    seeds: std::ops::Range<u64>,
    mut build: impl FnMut(u64) -> Result<Vec<Check>>,
) -> Result<Vec<Check>> {
    let mut worst = 0.0f64;
    let mut where_ = String::new();
    let mut coords = 0;
    for seed in seeds.clone() {
        for c in build(seed)? {
            coords += 1;
            let err: f64 = c.detail.parse().unwrap_or(f64::INFINITY);
            if !(err <= worst) {
                worst = err;
                where_ = format!("seed {seed} {}", c.name);
            }
        }
    }
    let passed = worst < GRAD_TOLERANCE;
    let detail = format!(
        "max rel err {worst:.2e} over {coords} tensors, seeds {}..{}{}",
        seeds.start,
        seeds.end,
        if where_.is_empty() { String::new() } else { format!(" ({where_})") }
    );
    Ok(vec![check(Suite::Gradients, name, passed, detail)])
}

/// Per-tensor errors of one loss, encoded as checks whose detail is the
/// error itself.
fn tensor_errors(
    store: &mut ParamStore,
    names: &[String],
    seed: u64,
    loss: impl FnMut(&ParamStore, &mut Tape) -> Result<Var>,
) -> Result<Vec<Check>> {
    Ok(check_param_gradients(store, names, 16, seed, loss)?
        .into_iter()
        .map(|g| check(Suite::Gradients, g.param, true, g.rel_error.to_string()))
        .collect())
}

fn all_names(store: &ParamStore) -> Vec<String> {
    store.names().map(String::from).collect()
}

/// Zero-initialized tensors put ReLU inputs on their kink; finite
/// differences are one-sided there.
fn jitter_zeros(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for n in all_names(store) {
        let p = store.get_mut(&n).expect("listed");
        if p.value.data().iter().all(|&x| x == 0.0) {
            p.value = uniform(p.value.shape(), 0.1, rng);
        }
    }
}

/// `Σ out ⊙ C` for a fixed random `C`, so every output entry carries a
/// distinct weight.
fn project(tape: &mut Tape, out: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let c = uniform(tape.value(out).shape(), 1.0, rng);
    let c = tape.constant(c);
    let prod = tape.mul(out, c)?;
    Ok(tape.sum(prod, None)?)
}

/// Entries pushed at least 0.1 away from zero, clear of the kinks of relu,
/// leaky relu and abs.
fn off_kink(t: Tensor) -> Tensor {
    let shape = t.shape().to_vec();
    let data = t.data().iter().map(|&x| x + 0.1f64.copysign(x)).collect();
    Tensor::new(shape, data).expect("same shape")
}

fn primitive_cases(seed: u64) -> Vec<(Primitive, Vec<Vec<usize>>)> {
    let m = vec![3, 4];
    vec![
        (Primitive::MatMul, vec![m.clone(), vec![4, 2]]),
        (Primitive::Add, vec![m.clone(), m.clone()]),
        (Primitive::Add, vec![m.clone(), vec![1, 4]]),
        (Primitive::Sub, vec![m.clone(), m.clone()]),
        (Primitive::Mul, vec![m.clone(), m.clone()]),
        (Primitive::Scale(-0.7), vec![m.clone()]),
        (Primitive::AddScalar(0.3), vec![m.clone()]),
        (Primitive::Concat { axis: 0 }, vec![m.clone(), vec![2, 4]]),
        (Primitive::Concat { axis: 1 }, vec![m.clone(), vec![3, 1]]),
        (Primitive::Slice { axis: 1, start: 1, len: 2 }, vec![m.clone()]),
        (Primitive::Slice { axis: 0, start: 2, len: 1 }, vec![m.clone()]),
        (Primitive::Sum { axis: None }, vec![m.clone()]),
        (Primitive::Sum { axis: Some(0) }, vec![m.clone()]),
        (Primitive::Mean { axis: Some(1) }, vec![m.clone()]),
        (Primitive::Exp, vec![m.clone()]),
        (Primitive::Log, vec![m.clone()]),
        (Primitive::Tanh, vec![m.clone()]),
        (Primitive::Sigmoid, vec![m.clone()]),
        (Primitive::Relu, vec![m.clone()]),
        (Primitive::LeakyRelu(0.2), vec![m.clone()]),
        (Primitive::Abs, vec![m.clone()]),
        (Primitive::LogSigmoid, vec![m.clone()]),
        (Primitive::Softmax { axis: 1 }, vec![m.clone()]),
        (Primitive::LogSoftmax { axis: 0 }, vec![m.clone()]),
        (
            Primitive::Dropout {
                p: 0.2,
                key: seed,
                train: true,
            },
            vec![m.clone()],
        ),
        (Primitive::GatherRows(vec![2, 0, 2, 1]), vec![m.clone()]),
        (
            Primitive::ScatterAddRows {
                index: vec![1, 0, 1],
                rows: 2,
            },
            vec![m.clone()],
        ),
        (
            Primitive::SegmentSoftmax {
                segments: vec![0, 1, 0, 0, 1],
                count: 2,
            },
            vec![vec![5, 1]],
        ),
    ]
}

fn primitive_errors(prim: &Primitive, shapes: &[Vec<usize>], seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let names: Vec<String> = (0..shapes.len()).map(|i| format!("x{i}")).collect();
    for (name, shape) in names.iter().zip(shapes) {
        let mut t = off_kink(uniform(shape, 1.0, &mut rng));
        if *prim == Primitive::Log {
            t = Tensor::new(shape.clone(), t.data().iter().map(|x| x.abs() + 0.5).collect())?;
        }
        store.insert(name.clone(), t);
    }
    let weights_seed = rng.random();
    tensor_errors(&mut store, &names, seed, |st, tape| {
        let inputs = names.iter().map(|n| tape.param(st, n)).collect::<Result<Vec<_>, _>>()?;
        let out = tape.apply(prim, &inputs)?;
        project(tape, out, &mut ChaCha8Rng::seed_from_u64(weights_seed))
    })
}

fn connected_graph(rng: &mut ChaCha8Rng, nodes: usize) -> MessageGraph {
    let mut edges: Vec<Edge> = (1..nodes)
        .map(|v| Edge {
            src: rng.random_range(0..v),
            dst: v,
            ty: EdgeType::ALL[rng.random_range(0..4)],
        })
        .collect();
    for _ in 0..nodes / 2 {
        let (src, dst) = (rng.random_range(0..nodes), rng.random_range(0..nodes));
        if src != dst {
            edges.push(Edge {
                src,
                dst,
                ty: EdgeType::ALL[rng.random_range(0..4)],
            });
        }
    }
    MessageGraph::mirrored(nodes, &edges)
}

fn stack(prefix: &str, arch: Arch, layers: usize) -> StackSpec<'_> {
    StackSpec {
        prefix,
        arch,
        layers,
        width: 4,
    }
}

fn gnn_errors(arch: Arch, layers: usize, readout_only: bool, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = stack("g", arch, layers);
    let mut store = ParamStore::new();
    init_stack(&mut store, spec, 3, &mut rng);
    jitter_zeros(&mut store, &mut rng);
    let nodes = rng.random_range(2..=8);
    let g = connected_graph(&mut rng, nodes);
    let x = uniform(&[nodes, 4], 1.0, &mut rng);
    let names: Vec<String> = all_names(&store)
        .into_iter()
        .filter(|n| n.contains("readout") == readout_only)
        .collect();
    let weights_seed = rng.random();
    tensor_errors(&mut store, &names, seed, |st, tape| {
        let mut w = ChaCha8Rng::seed_from_u64(weights_seed);
        let xv = tape.constant(x.clone());
        if readout_only {
            let r = attention_readout(tape, st, "g", xv)?;
            return project(tape, r, &mut w);
        }
        let h = encode_graph(tape, st, spec, &g, xv, Dropout::OFF)?;
        project(tape, h, &mut w)
    })
}

fn lstm_errors(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    store.insert("embed", uniform(&[6, 4], 1.0, &mut rng));
    init_bilstm(&mut store, 4, 3, &mut rng);
    let seqs = vec![vec![1, 2, 3], vec![4, 1], vec![5]];
    let weights_seed = rng.random();
    let names = all_names(&store);
    tensor_errors(&mut store, &names, seed, |st, tape| {
        let e = tape.param(st, "embed")?;
        let out = encode_sequences(tape, st, e, &seqs)?;
        project(tape, out, &mut ChaCha8Rng::seed_from_u64(weights_seed))
    })
}

fn sgns_errors(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    store.insert("e", uniform(&[3, 4], 0.5, &mut rng));
    store.insert("o", uniform(&[3, 4], 0.5, &mut rng));
    let batch = PairBatch {
        centers: vec![0, 1, 2, 1],
        contexts: vec![1, 0, 1, 2],
        neg_centers: vec![0, 1, 2, 2],
        negatives: vec![2, 2, 0, 0],
    };
    let names = all_names(&store);
    tensor_errors(&mut store, &names, seed, |st, tape| {
        let e = tape.param(st, "e")?;
        let o = tape.param(st, "o")?;
        sgns_loss(tape, e, o, &batch)
    })
}

#[derive(Clone, Copy)]
enum Objective {
    Node,
    Context,
    Vgae,
}

fn objective_errors(objective: Objective, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Arch::ALL[seed as usize % Arch::ALL.len()];
    let nodes = rng.random_range(3..=8);
    let g = connected_graph(&mut rng, nodes);
    let x = uniform(&[nodes, 4], 1.0, &mut rng);
    let mut store = ParamStore::new();
    let center = stack("c", arch, 2);
    let context = stack("x", arch, 2);
    init_stack(&mut store, center, 3, &mut rng);
    let kinds: Vec<Option<Kind>> = (0..nodes)
        .map(|v| (v > 0).then(|| Kind::ALL[rng.random_range(0..Kind::ALL.len())]))
        .collect();
    let (samples, _) = context_samples(&g, 2, 1, 3);
    let negatives = draw_negatives(samples.len(), &mut rng);
    let (pos, neg) = vgae_pairs(&g, &mut rng);
    let noise = gaussian(&[nodes, 2], &mut rng);
    match objective {
        Objective::Node => init_node_head(&mut store, 4, &mut rng),
        Objective::Context => init_stack(&mut store, context, 3, &mut rng),
        Objective::Vgae => init_vgae_heads(&mut store, 4, 2, &mut rng),
    }
    jitter_zeros(&mut store, &mut rng);
    let names: Vec<String> = all_names(&store).into_iter().filter(|n| !n.contains("readout")).collect();
    tensor_errors(&mut store, &names, seed, |st, tape| {
        let xv = tape.constant(x.clone());
        match objective {
            Objective::Node => {
                let h = encode_graph(tape, st, center, &g, xv, Dropout::OFF)?;
                Ok(node_classification_loss(tape, st, h, &kinds)?.0)
            }
            Objective::Context => {
                context_loss(tape, st, center, context, &g, xv, &samples, &negatives, Dropout::OFF)
            }
            Objective::Vgae => {
                let h = encode_graph(tape, st, center, &g, xv, Dropout::OFF)?;
                Ok(vgae_loss(tape, st, h, &noise, &pos, &neg)?.total)
            }
        }
    })
}

/// Finite-difference agreement for every primitive, the BiLSTM, each GNN
/// layer alone and stacked five deep, the readout, the skip-gram loss and the
/// three pre-training objectives.
pub fn gradient_suite(seeds: std::ops::Range<u64>) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let cases = primitive_cases(0);
    for (i, (prim, shapes)) in cases.iter().enumerate() {
        let name = format!("primitive {} #{i}", prim.name());
        out.extend(grad_check(&name, seeds.clone(), |seed| {
            let prim = match prim {
                Primitive::Dropout { p, train, .. } => Primitive::Dropout {
                    p: *p,
                    key: seed,
                    train: *train,
                },
                other => other.clone(),
            };
            primitive_errors(&prim, shapes, seed)
        })?);
    }
    out.extend(grad_check("bilstm", seeds.clone(), lstm_errors)?);
    for arch in Arch::ALL {
        out.extend(grad_check(&format!("layer {arch}"), seeds.clone(), |s| {
            gnn_errors(arch, 1, false, s)
        })?);
        out.extend(grad_check(&format!("stack {arch} x5"), seeds.clone(), |s| {
            gnn_errors(arch, 5, false, s)
        })?);
    }
    out.extend(grad_check("readout", seeds.clone(), |s| gnn_errors(Arch::Gat, 1, true, s))?);
    out.extend(grad_check("sgns loss", seeds.clone(), sgns_errors)?);
    for (name, objective) in [
        ("node classification loss", Objective::Node),
        ("context prediction loss", Objective::Context),
        ("vgae loss", Objective::Vgae),
    ] {
        out.extend(grad_check(name, seeds.clone(), |s| objective_errors(objective, s))?);
    }
    Ok(out)
}

fn desk_programs(seed: u64) -> Result<Vec<Program>> {
    let c = generate_desk_corpora(seed);
    let mut records = c.pretrain.clone();
    records.extend(c.solution.iter().cloned());
    records.extend(c.structure_probe.iter().cloned());
    Ok(parse_records(&records)?.into_iter().map(|r| r.program).collect())
}

/// Reaching definitions against path enumeration on methods of at most six
/// instructions, and context extraction against breadth-first search on
/// graphs of at most ten nodes.
pub fn graph_oracle_suite(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let programs = desk_programs(seed)?;
    let mut methods: Vec<_> = programs
        .iter()
        .flat_map(|p| p.methods.iter())
        .filter(|m| m.instructions.len() <= 6)
        .cloned()
        .collect();
    let from_corpus = methods.len();
    methods.extend((0..2000).map(|_| random_method(&mut rng, 6)));
    let mismatch = methods
        .iter()
        .position(|m| reaching_definitions(m) != reaching_definitions_by_paths(m));
    let mut out = vec![check(
        Suite::GraphOracles,
        "reaching definitions",
        mismatch.is_none(),
        match mismatch {
            None => format!("{} methods ({from_corpus} from corpora) agree", methods.len()),
            Some(i) => format!("method {i} differs: {:?}", methods[i].name),
        },
    )];

    let mut graphs: Vec<MessageGraph> = programs
        .iter()
        .map(|p| crate::depgraph::build_program_graph(p).message_graph())
        .filter(|g| g.nodes <= 10)
        .collect();
    let from_corpus = graphs.len();
    for nodes in 1..=10 {
        for _ in 0..50 {
            let edges = rng.random_range(0..=2 * nodes);
            graphs.push(random_graph(&mut rng, nodes, edges));
        }
    }
    let mismatch = graphs
        .iter()
        .position(|g| context_samples(g, 2, 1, 3) != context_by_bfs(g, 2, 1, 3));
    out.push(check(
        Suite::GraphOracles,
        "context neighborhood/ring",
        mismatch.is_none(),
        match mismatch {
            None => format!("{} graphs ({from_corpus} from corpora) agree", graphs.len()),
            Some(i) => format!("graph {i} differs"),
        },
    ));
    Ok(out)
}

fn tiny_model(seed: u64) -> Result<Model> {
    let texts = ["r = a + b", "return r", "s = call f(r)", "if a < b goto L", "t = a * b", "u = a - b"];
    let vocab = train_bpe(&texts, 40)?;
    let cfg = ModelConfig {
        embed_dim: 6,
        lstm_hidden: 4,
        readout_width: 5,
        layers: 2,
        ..ModelConfig::default()
    };
    Model::random(cfg, vocab, seed)
}

fn permute_rows(x: &Tensor, perm: &[usize]) -> Tensor {
    let cols = x.cols();
    let mut out = Tensor::zeros(x.shape());
    for (v, &to) in perm.iter().enumerate() {
        out.data_mut()[to * cols..(to + 1) * cols].copy_from_slice(x.row_slice(v));
    }
    out
}

/// Exact structural properties: message-passing equivariance, readout
/// invariance, normalized attention, order-free lexical sums and
/// bit-identical checkpoint round trips.
pub fn invariant_suite(seeds: std::ops::Range<u64>) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for arch in Arch::ALL {
        let mut ok = true;
        for seed in seeds.clone() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut store = ParamStore::new();
            init_stack(&mut store, stack("g", arch, 1), 3, &mut rng);
            let nodes = rng.random_range(2..=8);
            let g = connected_graph(&mut rng, nodes);
            let x = uniform(&[nodes, 4], 1.0, &mut rng);
            let mut perm: Vec<usize> = (0..nodes).collect();
            perm.shuffle(&mut rng);
            let run = |g: &MessageGraph, x: &Tensor| -> Result<Tensor> {
                let mut tape = Tape::new();
                let xv = tape.constant(x.clone());
                let h = message_pass(&mut tape, &store, "g", 0, arch, g, xv, Dropout::OFF)?;
                Ok(tape.value(h).clone())
            };
            let base = run(&g, &x)?;
            let moved = run(&g.permuted(&perm), &permute_rows(&x, &perm))?;
            ok &= permute_rows(&base, &perm) == moved;
        }
        out.push(check(Suite::Invariants, format!("equivariance {arch}"), ok, "exact"));
    }

    let mut ok = true;
    let mut worst = 0.0f64;
    for seed in seeds.clone() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_stack(&mut store, stack("g", Arch::Gat, 1), 3, &mut rng);
        let nodes = rng.random_range(2..=8);
        let h = uniform(&[nodes, 4], 1.0, &mut rng);
        let read = |h: &Tensor| -> Result<Tensor> {
            let mut tape = Tape::new();
            let hv = tape.constant(h.clone());
            let r = attention_readout(&mut tape, &store, "g", hv)?;
            Ok(tape.value(r).clone())
        };
        let mut perm: Vec<usize> = (0..nodes).collect();
        perm.shuffle(&mut rng);
        let shuffled = permute_rows(&h, &perm);
        let order = canonical_row_order(&shuffled);
        ok &= order.len() == nodes && read(&h)? == read(&shuffled)?;

        let g = random_graph(&mut rng, nodes, 2 * nodes);
        let mut tape = Tape::new();
        let hv = tape.constant(h.clone());
        let (_, targets, alpha) = gat_attention(&mut tape, &store, "g", 0, &g, hv)?;
        let mut sums = vec![0.0; nodes];
        for (&t, a) in targets.iter().zip(tape.value(alpha).data()) {
            sums[t] += a;
        }
        worst = sums.iter().fold(worst, |w, s| w.max((s - 1.0).abs()));
    }
    out.push(check(Suite::Invariants, "readout permutation", ok, "exact"));
    out.push(check(
        Suite::Invariants,
        "gat rows sum to one",
        worst <= ATTENTION_TOLERANCE,
        format!("max |row sum - 1| = {worst:.1e}"),
    ));

    let statements = ["r = a + b", "s = a * b", "t = a - b", "u = call f(r)", "r = s + t", "return r"];
    let mut ok = true;
    for seed in seeds.clone() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = tiny_model(seed)?;
        let mut body: Vec<&str> = statements.to_vec();
        let base = parse_program(&format!("method f(a,b){{ {}; }}", body.join("; ")))?;
        body.shuffle(&mut rng);
        let moved = parse_program(&format!("method f(a,b){{ {}; }}", body.join("; ")))?;
        ok &= lexical_embedding(Scope::Program(&base), &model)? == lexical_embedding(Scope::Program(&moved), &model)?;
    }
    out.push(check(Suite::Invariants, "lexical order", ok, "exact"));

    let mut ok = true;
    for seed in seeds {
        let mut model = tiny_model(seed)?;
        model.params.round_to_f32();
        let text = render_checkpoint(&model, Strategy::Context);
        let (loaded, strategy) = parse_checkpoint(&text)?;
        ok &= strategy == Strategy::Context
            && loaded.params.fingerprint() == model.params.fingerprint()
            && loaded.vocab == model.vocab
            && render_checkpoint(&loaded, strategy) == text;
    }
    out.push(check(Suite::Invariants, "checkpoint round trip", ok, "bit-identical"));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_suite_passes_on_one_seed() {
        let checks = gradient_suite(0..1).unwrap();
        assert!(checks.len() > 30);
        for c in &checks {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn oracle_and_invariant_suites_pass() {
        for c in graph_oracle_suite(0).unwrap().into_iter().chain(invariant_suite(0..2).unwrap()) {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn broken_gradient_is_reported() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::new(vec![1, 2], vec![0.5, -1.0]).unwrap());
        let checks = tensor_errors(&mut store, &["w".to_string()], 0, |st, tape| {
            let w = tape.param(st, "w")?;
            let v = tape.value(w).clone();
            let c = tape.constant(v);
            let sq = tape.mul(w, c)?;
            Ok(tape.sum(sq, None)?)
        })
        .unwrap();
        let err: f64 = checks[0].detail.parse().unwrap();
        assert!(err > 0.1, "treating w as a constant halves the gradient: {err}");
    }
}
