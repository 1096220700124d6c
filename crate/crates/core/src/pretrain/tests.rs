use rand::SeedableRng;

use super::*;
use crate::depgraph::{Edge, EdgeType};
use crate::gnn::tests::{jitter_zero_params, random_graph};
use crate::gnn::{init_stack, Arch};
use crate::lexical::train_bpe;
use crate::mir::parse_program;
use crate::numerics::{check_param_gradients, uniform};

fn edge(src: usize, dst: usize) -> Edge {
    Edge {
        src,
        dst,
        ty: EdgeType::Data,
    }
}

fn path(n: usize) -> MessageGraph {
    let edges: Vec<Edge> = (1..n).map(|i| edge(i - 1, i)).collect();
    MessageGraph::mirrored(n, &edges)
}

fn spec(prefix: &str, arch: Arch, layers: usize, width: usize) -> StackSpec<'_> {
    StackSpec {
        prefix,
        arch,
        layers,
        width,
    }
}

fn zero_all(store: &mut ParamStore, prefix: &str) {
    let names: Vec<String> = store.names().filter(|n| n.starts_with(prefix)).map(String::from).collect();
    for n in names {
        let p = store.get_mut(&n).unwrap();
        p.value = Tensor::zeros(p.value.shape());
    }
}

fn tiny_config(arch: Arch) -> ModelConfig {
    ModelConfig {
        embed_dim: 6,
        lstm_hidden: 3,
        arch,
        layers: 2,
        dropout: 0.0,
        readout_width: 4,
    }
}

fn tiny_model(arch: Arch, programs: &[Program]) -> Model {
    let texts: Vec<&str> = programs
        .iter()
        .flat_map(|p| p.methods.iter().flat_map(|m| m.instructions.iter().map(|i| i.text.as_str())))
        .collect();
    let vocab = train_bpe(&texts, 60).unwrap();
    Model::random(tiny_config(arch), vocab, 3).unwrap()
}

fn desk_programs() -> Vec<Program> {
    [
        "method f(a,b){ r = a + b; if r < 10 goto L; r = r * 2; L: return r; }",
        "method g(x){ y = call h(x); z = y - 1; return z; } method h(v){ w = v * v; return w; }",
        "method k(n){ i = 0; s = 0; L: if i >= n goto E; s = s + i; i = i + 1; goto L; E: return s; }",
    ]
    .iter()
    .map(|s| parse_program(s).unwrap())
    .collect()
}

#[test]
fn uniform_node_prediction_costs_ln_7() {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    init_node_head(&mut store, 4, &mut rng);
    zero_all(&mut store, NODE_HEAD);
    let mut tape = Tape::new();
    let h = tape.constant(uniform(&[4, 4], 1.0, &mut rng));
    let kinds = [None, Some(Kind::Arith), Some(Kind::Return), None];
    let (loss, _, total) = node_classification_loss(&mut tape, &store, h, &kinds).unwrap();
    assert_eq!(total, 2);
    assert!((tape.value(loss).data()[0] - 7f64.ln()).abs() < 1e-12);
    let none: [Option<Kind>; 2] = [None, None];
    let h = tape.constant(Tensor::zeros(&[2, 4]));
    assert!(node_classification_loss(&mut tape, &store, h, &none).is_err());
}

#[test]
fn one_node_corpus_is_learned() {
    let corpus = vec![parse_program("method f(){ return 0; }").unwrap()];
    let mut model = tiny_model(Arch::Gcn, &corpus);
    let cfg = PretrainConfig {
        strategy: Strategy::Node,
        epochs: 200,
        ..PretrainConfig::default()
    };
    let report = pretrain(&corpus, &mut model, &cfg).unwrap();
    assert_eq!(*report.accuracy.last().unwrap(), 1.0);
    assert!(report.epoch_losses.last() < report.epoch_losses.first());
    assert!(model.params.names().all(|n| !n.starts_with(NODE_HEAD)));
}

#[test]
fn empty_corpus_is_rejected() {
    let corpus = desk_programs();
    let mut model = tiny_model(Arch::Gcn, &corpus);
    for strategy in [Strategy::Node, Strategy::Context, Strategy::Vgae] {
        let cfg = PretrainConfig {
            strategy,
            ..PretrainConfig::default()
        };
        assert!(pretrain(&[], &mut model, &cfg).is_err());
    }
}

#[test]
fn node_loss_gradients_match_finite_differences() {
    let g = path(3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let s = spec("gnn", Arch::Gin, 2, 4);
    init_stack(&mut store, s, 3, &mut rng);
    init_node_head(&mut store, 4, &mut rng);
    jitter_zero_params(&mut store, 1);
    let x = uniform(&[3, 4], 1.0, &mut rng);
    let kinds = [Some(Kind::Assign), Some(Kind::Arith), Some(Kind::Return)];
    let names: Vec<String> = store.names().filter(|n| !n.contains("readout")).map(String::from).collect();
    let checks = check_param_gradients(&mut store, &names, 16, 1, |st, tape| {
        let xv = tape.constant(x.clone());
        let h = encode_graph(tape, st, s, &g, xv, Dropout::OFF)?;
        Ok(node_classification_loss(tape, st, h, &kinds)?.0)
    })
    .unwrap();
    for c in checks {
        assert!(c.rel_error < 1e-4, "{} {}", c.param, c.rel_error);
    }
}

#[test]
fn single_edge_rings_hold_the_other_node() {
    let g = path(2);
    let (samples, skipped) = context_samples(&g, 2, 1, 3);
    assert!(skipped.is_empty());
    assert_eq!(samples[0].ring, vec![1]);
    assert_eq!(samples[1].ring, vec![0]);
    assert_eq!(samples[1].neighborhood, vec![1, 0]);
}

#[test]
fn path_end_ring_is_next_three_nodes() {
    let (samples, _) = context_samples(&path(5), 2, 1, 3);
    assert_eq!(samples[0].ring, vec![1, 2, 3]);
    assert_eq!(samples[0].neighborhood, vec![0, 1, 2]);
}

#[test]
fn isolated_anchor_is_skipped() {
    let g = MessageGraph::mirrored(3, &[edge(0, 1)]);
    let (samples, skipped) = context_samples(&g, 2, 1, 3);
    assert_eq!(skipped, vec![2]);
    assert_eq!(samples.len(), 2);
}

#[test]
fn context_extraction_matches_distance_matrix() {
    for seed in 0..30 {
        let n = 2 + seed as usize % 9;
        let g = random_graph(n, n, seed);
        // Floyd–Warshall distances as an independent reference.
        let inf = usize::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for (v, row) in d.iter_mut().enumerate() {
            row[v] = 0;
        }
        for e in 0..g.edge_count() {
            d[g.src[e]][g.dst[e]] = d[g.src[e]][g.dst[e]].min(1);
            d[g.dst[e]][g.src[e]] = d[g.dst[e]][g.src[e]].min(1);
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
                }
            }
        }
        let (samples, skipped) = context_samples(&g, 2, 1, 3);
        for s in &samples {
            let mut hood: Vec<usize> = (0..n).filter(|&u| d[s.anchor][u] <= 2).collect();
            hood.retain(|&u| u != s.anchor);
            hood.insert(0, s.anchor);
            assert_eq!(s.neighborhood, hood);
            let ring: Vec<usize> = (0..n).filter(|&u| (1..=3).contains(&d[s.anchor][u])).collect();
            assert_eq!(s.ring, ring);
        }
        for &v in &skipped {
            assert!((0..n).all(|u| !(1..=3).contains(&d[v][u])));
        }
    }
}

#[test]
fn zero_context_costs_two_ln_2() {
    let g = path(4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let (center, context) = (spec("c", Arch::Gcn, 2, 3), spec("x", Arch::Gcn, 2, 3));
    init_stack(&mut store, center, 3, &mut rng);
    init_stack(&mut store, context, 3, &mut rng);
    zero_all(&mut store, "x.");
    let (samples, _) = context_samples(&g, 2, 1, 3);
    let negatives = draw_negatives(samples.len(), &mut rng);
    let mut tape = Tape::new();
    let x = tape.constant(uniform(&[4, 3], 1.0, &mut rng));
    let loss = context_loss(&mut tape, &store, center, context, &g, x, &samples, &negatives, Dropout::OFF).unwrap();
    assert!((tape.value(loss).data()[0] - 2.0 * 2f64.ln()).abs() < 1e-12);
}

#[test]
fn negatives_never_pick_the_anchor() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in 2..8 {
        let neg = draw_negatives(n, &mut rng);
        assert!(neg.iter().enumerate().all(|(i, &j)| i != j && j < n));
    }
    assert_eq!(draw_negatives(1, &mut rng), vec![0]);
}

#[test]
fn context_loss_gradients_match_finite_differences() {
    for arch in [Arch::Gat, Arch::Sage] {
        let g = MessageGraph::mirrored(5, &[edge(0, 1), edge(1, 2), edge(2, 3), edge(1, 4)]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let (center, context) = (spec("c", arch, 2, 3), spec("x", arch, 2, 3));
        init_stack(&mut store, center, 3, &mut rng);
        init_stack(&mut store, context, 3, &mut rng);
        jitter_zero_params(&mut store, 5);
        let (samples, _) = context_samples(&g, 2, 1, 3);
        let negatives = draw_negatives(samples.len(), &mut rng);
        let x = uniform(&[5, 3], 1.0, &mut rng);
        let names: Vec<String> = store.names().filter(|n| !n.contains("readout")).map(String::from).collect();
        let checks = check_param_gradients(&mut store, &names, 12, 5, |st, tape| {
            let xv = tape.constant(x.clone());
            context_loss(tape, st, center, context, &g, xv, &samples, &negatives, Dropout::OFF)
        })
        .unwrap();
        for c in checks {
            assert!(c.rel_error < 1e-4, "{arch} {} {}", c.param, c.rel_error);
        }
    }
}

#[test]
fn vgae_terms_at_the_prior() {
    let g = path(4);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    init_vgae_heads(&mut store, 3, 5, &mut rng);
    zero_all(&mut store, VGAE_PREFIX);
    let (pos, neg) = vgae_pairs(&g, &mut rng);
    assert_eq!(pos, vec![(0, 1), (1, 2), (2, 3)]);
    assert_eq!(neg.len(), 3);
    assert!(neg.iter().all(|&(u, v)| u < v && v - u > 1));

    let mut tape = Tape::new();
    let h = tape.constant(uniform(&[4, 3], 1.0, &mut rng));
    let terms = vgae_loss(&mut tape, &store, h, &Tensor::zeros(&[4, 5]), &pos, &neg).unwrap();
    assert_eq!(tape.value(terms.kl).data()[0], 0.0);
    let recon = tape.value(terms.reconstruction.unwrap()).data()[0];
    assert!((recon - 2f64.ln()).abs() < 1e-12);

    let terms = vgae_loss(&mut tape, &store, h, &gaussian(&[4, 5], &mut rng), &[], &[]).unwrap();
    assert!(terms.reconstruction.is_none());
}

#[test]
fn vgae_loss_gradients_match_finite_differences() {
    let g = MessageGraph::mirrored(4, &[edge(0, 1), edge(1, 2), edge(3, 1)]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let s = spec("gnn", Arch::Gcn, 2, 3);
    init_stack(&mut store, s, 3, &mut rng);
    init_vgae_heads(&mut store, 3, 2, &mut rng);
    jitter_zero_params(&mut store, 7);
    let (pos, neg) = vgae_pairs(&g, &mut rng);
    let noise = gaussian(&[4, 2], &mut rng);
    let x = uniform(&[4, 3], 1.0, &mut rng);
    let names: Vec<String> = store.names().filter(|n| !n.contains("readout")).map(String::from).collect();
    let checks = check_param_gradients(&mut store, &names, 12, 7, |st, tape| {
        let xv = tape.constant(x.clone());
        let h = encode_graph(tape, st, s, &g, xv, Dropout::OFF)?;
        Ok(vgae_loss(tape, st, h, &noise, &pos, &neg)?.total)
    })
    .unwrap();
    for c in checks {
        assert!(c.rel_error < 1e-4, "{} {}", c.param, c.rel_error);
    }
}

#[test]
fn triangle_reconstruction_improves() {
    let g = MessageGraph::mirrored(3, &[edge(0, 1), edge(1, 2), edge(2, 0)]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let s = spec("gnn", Arch::Gcn, 2, 4);
    init_stack(&mut store, s, 3, &mut rng);
    init_vgae_heads(&mut store, 4, 4, &mut rng);
    let x = uniform(&[3, 4], 1.0, &mut rng);
    let pairs = [(0, 1), (0, 2), (1, 2)];
    // Reconstruction scored at the posterior mean.
    let recon_at_mean = |store: &ParamStore| {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let h = encode_graph(&mut tape, store, s, &g, xv, Dropout::OFF).unwrap();
        let terms = vgae_loss(&mut tape, store, h, &Tensor::zeros(&[3, 4]), &pairs, &[]).unwrap();
        tape.value(terms.reconstruction.unwrap()).data()[0]
    };
    let mut adam = AdamState::new(1e-2);
    let mut recon = vec![recon_at_mean(&store)];
    for epoch in 0..50u64 {
        let mut erng = ChaCha8Rng::seed_from_u64(stream_key(&[8, epoch]));
        let (pos, neg) = vgae_pairs(&g, &mut erng);
        assert_eq!(pos, pairs);
        assert!(neg.is_empty());
        let noise = gaussian(&[3, 4], &mut erng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let h = encode_graph(&mut tape, &store, s, &g, xv, Dropout::OFF).unwrap();
        let terms = vgae_loss(&mut tape, &store, h, &noise, &pos, &neg).unwrap();
        tape.backward(terms.total, &mut store).unwrap();
        let names = updatable(&store);
        adam.step(&mut store, &names).unwrap();
        store.zero_grads();
        recon.push(recon_at_mean(&store));
    }
    assert!(recon[50] < recon[0], "{recon:?}");
}

#[test]
fn each_objective_trains_and_drops_scratch_params() {
    let corpus = desk_programs();
    for strategy in [Strategy::Node, Strategy::Context, Strategy::Vgae] {
        let mut model = tiny_model(Arch::Gat, &corpus);
        let names_before: Vec<String> = model.params.names().map(String::from).collect();
        let before = model.params.fingerprint();
        let cfg = PretrainConfig {
            strategy,
            epochs: 3,
            lr: 1e-2,
            ..PretrainConfig::default()
        };
        let report = pretrain(&corpus, &mut model, &cfg).unwrap();
        assert_eq!(report.epoch_losses.len(), 3);
        assert!(report.epoch_losses.iter().all(|l| l.is_finite()));
        let names_after: Vec<String> = model.params.names().map(String::from).collect();
        assert_eq!(names_before, names_after, "{strategy}");
        assert_ne!(before, model.params.fingerprint());
    }
    let mut model = tiny_model(Arch::Gat, &corpus);
    let before = model.params.fingerprint();
    pretrain(&corpus, &mut model, &PretrainConfig { strategy: Strategy::None, ..PretrainConfig::default() }).unwrap();
    assert_eq!(before, model.params.fingerprint());
}

#[test]
fn pretraining_is_deterministic() {
    let corpus = desk_programs();
    let run = || {
        let mut model = tiny_model(Arch::Sage, &corpus);
        let cfg = PretrainConfig {
            epochs: 2,
            ..PretrainConfig::default()
        };
        let report = pretrain(&corpus, &mut model, &cfg).unwrap();
        (model.params.fingerprint(), report)
    };
    assert_eq!(run(), run());
}

#[test]
fn config_invariants() {
    let bad = PretrainConfig {
        r1: 2,
        ..PretrainConfig::default()
    };
    assert!(bad.validate().is_err());
    assert!(PretrainConfig::default().validate().is_ok());
    assert_eq!("vgae".parse::<Strategy>().unwrap(), Strategy::Vgae);
    assert!("mask".parse::<Strategy>().is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let corpus = desk_programs();
    let mut model = tiny_model(Arch::Gat, &corpus);
    model.params.round_to_f32();
    let text = render_checkpoint(&model, Strategy::Vgae);
    let (loaded, strategy) = parse_checkpoint(&text).unwrap();
    assert_eq!(strategy, Strategy::Vgae);
    assert_eq!(loaded.config, model.config);
    assert_eq!(loaded.vocab, model.vocab);
    assert_eq!(loaded.params.fingerprint(), model.params.fingerprint());
    assert!(!loaded.params.get(crate::gnn::EMBED).unwrap().trainable);
    for p in &corpus {
        let a = crate::gnn::code_embedding(crate::gnn::Scope::Program(p), &model).unwrap();
        let b = crate::gnn::code_embedding(crate::gnn::Scope::Program(p), &loaded).unwrap();
        assert_eq!(a, b);
    }
    assert_eq!(render_checkpoint(&loaded, strategy), text);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&model, Strategy::Node, &path).unwrap();
    let (from_disk, _) = load_checkpoint(&path).unwrap();
    assert_eq!(from_disk.params.fingerprint(), model.params.fingerprint());
}

#[test]
fn checkpoint_errors_are_distinct() {
    let corpus = desk_programs();
    let model = tiny_model(Arch::Gcn, &corpus);
    let text = render_checkpoint(&model, Strategy::Context);

    let v99 = text.replacen("DEPVEC-CKPT v1", "DEPVEC-CKPT v99", 1);
    match parse_checkpoint(&v99) {
        Err(e @ CheckpointError::Version { .. }) => assert!(e.to_string().contains("v1")),
        other => panic!("{other:?}"),
    }

    let vocab_lines = model.vocab.to_text().lines().count();
    let corrupt = text.replacen(&format!("vocab {vocab_lines}"), &format!("vocab {}", vocab_lines + 100_000), 1);
    assert!(matches!(parse_checkpoint(&corrupt), Err(CheckpointError::Truncated(_))));

    let cut = &text[..text.len() / 2];
    assert!(matches!(parse_checkpoint(cut), Err(CheckpointError::Truncated(_))));

    let line = text.lines().find(|l| l.starts_with("gnn.0.w ")).unwrap();
    let w = model.params.value("gnn.0.w").unwrap();
    let (r, c) = (w.rows(), w.cols());
    let values: Vec<&str> = line.split(' ').skip(2).collect();
    let reshaped = format!("gnn.0.w {}x{} {}", c, r, values.join(" "));
    let mismatched = if r == c {
        text.replace(line, &format!("gnn.0.w {}x{} {}", r * c, 1, values.join(" ")))
    } else {
        text.replace(line, &reshaped)
    };
    assert!(matches!(parse_checkpoint(&mismatched), Err(CheckpointError::ShapeMismatch { .. })));

    assert!(matches!(parse_checkpoint("hello"), Err(CheckpointError::Malformed { .. })));
    assert!(matches!(
        load_checkpoint(std::path::Path::new("/nonexistent/ckpt")),
        Err(CheckpointError::Io(_))
    ));
}
