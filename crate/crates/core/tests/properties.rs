use std::sync::OnceLock;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use depvec::depgraph::{build_program_graph, reaching_definitions, MessageGraph};
use depvec::gnn::{attention_readout, encode_graph, gat_attention, init_stack, Arch, Dropout, Model, ModelConfig, Scope, StackSpec};
use depvec::lexical::{lexical_embedding, tokenize_instruction, train_bpe, PAD};
use depvec::mir::{parse_program, parse_records, Method};
use depvec::numerics::{uniform, ParamStore, Tape, Tensor};
use depvec::oracle::{context_by_bfs, random_graph, random_method, reaching_definitions_by_paths};
use depvec::pretrain::context_samples;
use depvec::tasks::{finetune, generate_desk_corpora, Dataset, FinetuneConfig};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn model() -> &'static Model {
    static MODEL: OnceLock<Model> = OnceLock::new();
    MODEL.get_or_init(|| {
        let c = generate_desk_corpora(0);
        let programs = parse_records(&c.pretrain).unwrap();
        let texts: Vec<&str> = programs
            .iter()
            .flat_map(|r| r.program.methods.iter().flat_map(|m| m.instructions.iter().map(|i| i.text.as_str())))
            .collect();
        let config = ModelConfig {
            embed_dim: 8,
            lstm_hidden: 5,
            arch: Arch::Sage,
            layers: 2,
            dropout: 0.0,
            readout_width: 6,
        };
        Model::random(config, train_bpe(&texts, 120).unwrap(), 1).unwrap()
    })
}

/// The method with its instructions listed in `order`; every instruction in
/// generated methods is labelled, so control flow is unchanged.
fn reordered(m: &Method, order: &[usize]) -> String {
    let body: Vec<String> = order
        .iter()
        .map(|&i| {
            let ins = &m.instructions[i];
            format!("{}: {};", ins.label.as_deref().unwrap(), ins.text)
        })
        .collect();
    format!("method {}({}){{ {} }}", m.name, m.params.join(","), body.join(" "))
}

/// Replaces whole identifiers according to `map`.
fn rename_words(text: &str, map: &[(&str, &str)]) -> String {
    let mut out = String::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        let w = map.iter().find(|(from, _)| from == word).map_or(word.as_str(), |(_, to)| to);
        out.push_str(w);
        word.clear();
    };
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '_' {
            word.push(ch);
        } else {
            flush(&mut word, &mut out);
            out.push(ch);
        }
    }
    flush(&mut word, &mut out);
    out
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut rng(seed));
    p
}

fn permute_rows(x: &Tensor, perm: &[usize]) -> Tensor {
    let mut rows = vec![Vec::new(); x.rows()];
    for (v, &pv) in perm.iter().enumerate() {
        rows[pv] = x.row_slice(v).to_vec();
    }
    Tensor::from_rows(&rows).unwrap()
}

fn stack(arch: Arch, layers: usize, width: usize, seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    let spec = StackSpec {
        prefix: "g",
        arch,
        layers,
        width,
    };
    init_stack(&mut store, spec, 3, &mut rng(seed));
    store
}

fn encode(store: &ParamStore, arch: Arch, layers: usize, g: &MessageGraph, x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let spec = StackSpec {
        prefix: "g",
        arch,
        layers,
        width: x.cols(),
    };
    let h = encode_graph(&mut tape, store, spec, g, xv, Dropout::OFF).unwrap();
    tape.value(h).clone()
}

fn arch() -> impl Strategy<Value = Arch> {
    prop::sample::select(Arch::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut r = rng(seed);
        let x = uniform(&[3, 4], 1.5, &mut r);
        let c = uniform(&[3, 4], 1.0, &mut r);
        let grad = |wa: f64, wb: f64| {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let cv = tape.constant(c.clone());
            let t = tape.tanh(xv);
            let t = tape.mul(t, cv).unwrap();
            let l1 = tape.sum(t, None).unwrap();
            let sq = tape.mul(xv, xv).unwrap();
            let l2 = tape.sum(sq, None).unwrap();
            let l1 = tape.scale(l1, wa);
            let l2 = tape.scale(l2, wb);
            let loss = tape.add(l1, l2).unwrap();
            tape.backward_leaves(loss, &[xv]).unwrap().remove(0)
        };
        let (g1, g2, g) = (grad(1.0, 0.0), grad(0.0, 1.0), grad(a, b));
        for i in 0..g.data().len() {
            let expect = a * g1.data()[i] + b * g2.data()[i];
            prop_assert!((g.data()[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn replay_is_bit_identical(seed in 0u64..1000, arch in arch()) {
        let g = random_graph(&mut rng(seed), 6, 9);
        let x = uniform(&[6, 4], 1.0, &mut rng(seed + 1));
        let run = || {
            let mut store = stack(arch, 2, 4, seed);
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let spec = StackSpec { prefix: "g", arch, layers: 2, width: 4 };
            let dropout = Dropout { p: 0.2, key: seed, train: true };
            let h = encode_graph(&mut tape, &store, spec, &g, xv, dropout).unwrap();
            let r = attention_readout(&mut tape, &store, "g", h).unwrap();
            let loss = tape.sum(r, None).unwrap();
            let value = tape.value(loss).data()[0];
            tape.backward(loss, &mut store).unwrap();
            let grads: Vec<u64> = store
                .iter()
                .flat_map(|(_, p)| p.grad.iter().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect::<Vec<_>>())
                .collect();
            (value.to_bits(), grads)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn printing_then_parsing_is_a_fixed_point(seed in 0u64..5000) {
        let m = random_method(&mut rng(seed), 12);
        let printed = m.to_string();
        let again = parse_program(&printed).unwrap();
        prop_assert_eq!(&again.methods[0], &m);
        prop_assert_eq!(again.methods[0].to_string(), printed);
    }

    #[test]
    fn tokenization_is_deterministic_and_never_pads(seed in 0u64..2000) {
        let m = random_method(&mut rng(seed), 10);
        let vocab = &model().vocab;
        for ins in &m.instructions {
            let ids = tokenize_instruction(ins, vocab);
            prop_assert!(!ids.is_empty());
            prop_assert!(!ids.contains(&PAD));
            prop_assert_eq!(ids, tokenize_instruction(ins, vocab));
        }
    }

    #[test]
    fn lexical_embedding_ignores_instruction_order(seed in 0u64..1000) {
        let m = random_method(&mut rng(seed), 8);
        let ordered: Vec<usize> = (0..m.instructions.len()).collect();
        let a = parse_program(&reordered(&m, &ordered)).unwrap();
        let b = parse_program(&reordered(&m, &permutation(m.instructions.len(), seed))).unwrap();
        let ea = lexical_embedding(Scope::Program(&a), model()).unwrap();
        let eb = lexical_embedding(Scope::Program(&b), model()).unwrap();
        prop_assert_eq!(ea, eb);
    }

    #[test]
    fn graphs_are_deterministic_and_rename_invariant(seed in 0u64..2000) {
        let text = random_method(&mut rng(seed), 10).to_string();
        let p = parse_program(&text).unwrap();
        let renamed = parse_program(&rename_words(&text, &[("a", "total"), ("b", "idx"), ("c", "tmp"), ("m", "run")])).unwrap();
        let g = build_program_graph(&p);
        prop_assert_eq!(&g.edges, &build_program_graph(&p).edges);
        prop_assert_eq!(&g.edges, &build_program_graph(&renamed).edges);
    }

    #[test]
    fn reaching_definitions_match_path_enumeration(seed in 0u64..20_000) {
        let m = random_method(&mut rng(seed), 6);
        prop_assert_eq!(reaching_definitions(&m), reaching_definitions_by_paths(&m));
    }

    #[test]
    fn context_sampling_matches_bfs(seed in 0u64..20_000, nodes in 1usize..=10, edges in 0usize..20) {
        let g = random_graph(&mut rng(seed), nodes, edges);
        prop_assert_eq!(context_samples(&g, 2, 1, 3), context_by_bfs(&g, 2, 1, 3));
    }

    #[test]
    fn stacks_are_permutation_equivariant(seed in 0u64..1000, arch in arch(), nodes in 1usize..=8, layers in 1usize..=3) {
        let g = random_graph(&mut rng(seed), nodes, 2 * nodes);
        let x = uniform(&[nodes, 4], 1.0, &mut rng(seed + 7));
        let store = stack(arch, layers, 4, seed);
        let perm = permutation(nodes, seed);
        let out = encode(&store, arch, layers, &g, &x);
        let pout = encode(&store, arch, layers, &g.permuted(&perm), &permute_rows(&x, &perm));
        prop_assert_eq!(permute_rows(&out, &perm), pout);
    }

    #[test]
    fn readout_is_permutation_invariant(seed in 0u64..1000, nodes in 1usize..=10) {
        let store = stack(Arch::Gcn, 1, 4, seed);
        let h = uniform(&[nodes, 4], 2.0, &mut rng(seed));
        let read = |h: &Tensor| {
            let mut tape = Tape::new();
            let hv = tape.constant(h.clone());
            let r = attention_readout(&mut tape, &store, "g", hv).unwrap();
            tape.value(r).clone()
        };
        prop_assert_eq!(read(&h), read(&permute_rows(&h, &permutation(nodes, seed))));
    }

    #[test]
    fn gat_attention_rows_sum_to_one(seed in 0u64..1000, nodes in 1usize..=10) {
        let g = random_graph(&mut rng(seed), nodes, 3 * nodes);
        let store = stack(Arch::Gat, 1, 4, seed);
        let mut tape = Tape::new();
        let hv = tape.constant(uniform(&[nodes, 4], 3.0, &mut rng(seed + 3)));
        let (_, targets, alpha) = gat_attention(&mut tape, &store, "g", 0, &g, hv).unwrap();
        let mut sums = vec![0.0; nodes];
        for (&t, a) in targets.iter().zip(tape.value(alpha).data()) {
            sums[t] += a;
        }
        for s in sums {
            prop_assert!((s - 1.0).abs() <= 1e-12);
        }
    }
}

#[test]
fn finetuning_is_reproducible() {
    let c = generate_desk_corpora(0);
    let records = parse_records(&c.solution).unwrap();
    let labels = ["sum", "max"];
    let picked: Vec<_> = records
        .into_iter()
        .filter(|r| r.label.as_deref().is_some_and(|l| labels.iter().any(|x| l.contains(x))))
        .collect();
    let dataset = Dataset::classification(&picked).unwrap();
    let cfg = FinetuneConfig {
        epochs: 1,
        seed: 4,
        ..FinetuneConfig::default()
    };
    let run = || {
        let mut m = model().clone();
        let out = finetune(&dataset, &mut m, &cfg).unwrap();
        (out.report, out.epoch_losses.iter().map(|l| l.to_bits()).collect::<Vec<_>>(), m.params.fingerprint())
    };
    assert_eq!(run(), run());
}
