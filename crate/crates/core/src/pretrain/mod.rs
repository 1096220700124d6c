//! Self-supervised objectives: instruction-kind classification, context
//! prediction and a variational graph auto-encoder. Also builds the lexical
//! pipeline (subwords and skip-gram vectors) for a fresh model.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::depgraph::MessageGraph;
use crate::gnn::{
    encode_graph, init_layer, Dropout, EmbedMode, Model, ModelConfig, Prepared, StackSpec,
};
use crate::lexical::{train_bpe, train_sgns, SgnsConfig};
use crate::mir::{Kind, Program};
use crate::numerics::{glorot, stream_key, AdamState, ParamStore, Tape, Tensor, Var};
use crate::{invalid, Error, Result};

pub use checkpoint::{load_checkpoint, parse_checkpoint, render_checkpoint, save_checkpoint, CheckpointError, FORMAT_VERSION};

pub const NODE_HEAD: &str = "pretrain.node";
pub const CONTEXT_PREFIX: &str = "pretrain.ctx";
pub const VGAE_PREFIX: &str = "pretrain.vgae";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Node,
    Context,
    Vgae,
    None,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Node => "node",
            Strategy::Context => "context",
            Strategy::Vgae => "vgae",
            Strategy::None => "none",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "node" => Ok(Strategy::Node),
            "context" => Ok(Strategy::Context),
            "vgae" => Ok(Strategy::Vgae),
            "none" => Ok(Strategy::None),
            _ => invalid(format!("unknown strategy `{s}` (expected node, context, vgae or none)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig {
    pub strategy: Strategy,
    pub epochs: usize,
    pub seed: u64,
    pub lr: f64,
    /// Neighborhood radius of the center encoder.
    pub k_hops: usize,
    /// Context ring `[r1, r2]` in hops.
    pub r1: usize,
    pub r2: usize,
    pub negatives: usize,
    /// Latent width of the auto-encoder.
    pub latent: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            strategy: Strategy::Context,
            epochs: 1,
            seed: 0,
            lr: 1e-3,
            k_hops: 2,
            r1: 1,
            r2: 3,
            negatives: 1,
            latent: 32,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r1 < self.k_hops && self.r1 < self.r2) {
            return invalid(format!(
                "context radii must satisfy r1 < K and r1 < r2 (K={}, r1={}, r2={})",
                self.k_hops, self.r1, self.r2
            ));
        }
        if self.negatives != 1 {
            return invalid("exactly one negative per positive is supported");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PretrainReport {
    pub strategy: String,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Node-classification training accuracy per epoch.
    pub accuracy: Vec<f64>,
    /// Auto-encoder reconstruction term per epoch.
    pub reconstruction: Vec<f64>,
    /// Context anchors skipped because their ring was empty.
    pub skipped_anchors: usize,
    /// Graphs too small to score any node pair.
    pub kl_only_graphs: usize,
}

/// Options for building the lexical half of a fresh model.
#[derive(Clone, Debug, PartialEq)]
pub struct LexicalConfig {
    pub vocab_size: usize,
    pub sgns: SgnsConfig,
}

impl Default for LexicalConfig {
    fn default() -> Self {
        LexicalConfig {
            vocab_size: 400,
            sgns: SgnsConfig::default(),
        }
    }
}

/// Learns subwords and skip-gram vectors on `corpus`, then initializes every
/// other parameter from `seed`.
pub fn init_model(corpus: &[Program], config: ModelConfig, lexical: &LexicalConfig, seed: u64) -> Result<Model> {
    let texts: Vec<&str> = corpus
        .iter()
        .flat_map(|p| p.methods.iter().flat_map(|m| m.instructions.iter().map(|i| i.text.as_str())))
        .collect();
    let vocab = train_bpe(&texts, lexical.vocab_size)?;
    let seqs: Vec<Vec<u32>> = texts.iter().map(|t| vocab.encode_text(t)).collect();
    let sgns = SgnsConfig {
        dim: config.embed_dim,
        seed: stream_key(&[seed, 0x7367]),
        ..lexical.sgns.clone()
    };
    let m = train_sgns(&seqs, vocab.len(), &sgns)?;
    Model::new(config, vocab, m.e, seed)
}

/// Trainable parameters that received a gradient on the last backward pass.
pub fn updatable(store: &ParamStore) -> Vec<String> {
    store
        .iter()
        .filter(|(_, p)| p.trainable && p.grad.is_some())
        .map(|(n, _)| n.to_string())
        .collect()
}

fn prepare_all(corpus: &[Program], model: &Model) -> Result<Vec<Prepared>> {
    if corpus.is_empty() {
        return invalid("pre-training corpus is empty");
    }
    corpus.iter().map(|p| Prepared::build(p, &model.vocab)).collect()
}

/// Runs the configured objective. `Strategy::None` leaves the model untouched.
pub fn pretrain(corpus: &[Program], model: &mut Model, cfg: &PretrainConfig) -> Result<PretrainReport> {
    match cfg.strategy {
        Strategy::Node => pretrain_node_classification(corpus, model, cfg),
        Strategy::Context => pretrain_context_prediction(corpus, model, cfg),
        Strategy::Vgae => pretrain_vgae(corpus, model, cfg),
        Strategy::None => Ok(PretrainReport {
            strategy: "none".into(),
            ..PretrainReport::default()
        }),
    }
}

/// Shared training loop: one optimizer step per graph, graphs visited in a
/// seeded order each epoch. Parameters under `scratch` are removed afterwards.
fn train_loop(
    preps: &[Prepared],
    model: &mut Model,
    cfg: &PretrainConfig,
    scratch: &[&str],
    mut step: impl FnMut(&mut Tape, &Model, &Prepared, u64) -> Result<Option<StepOut>>,
) -> Result<Vec<EpochStats>> {
    let mut adam = AdamState::new(cfg.lr);
    let mut stats = Vec::with_capacity(cfg.epochs);
    let mut step_no = 0u64;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(&[cfg.seed, 0x7074, epoch as u64]));
        let mut order: Vec<usize> = (0..preps.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut acc = EpochStats::default();
        for &i in &order {
            step_no += 1;
            let mut tape = Tape::new();
            let key = stream_key(&[cfg.seed, 0x7374, step_no]);
            let Some(out) = step(&mut tape, model, &preps[i], key)? else {
                continue;
            };
            acc.add(&out);
            tape.backward(out.loss, &mut model.params)?;
            let names = updatable(&model.params);
            adam.step(&mut model.params, &names)?;
            model.params.zero_grads();
        }
        stats.push(acc);
    }
    for prefix in scratch {
        let names: Vec<String> = model
            .params
            .names()
            .filter(|n| n.starts_with(prefix))
            .map(String::from)
            .collect();
        for n in names {
            model.params.remove(&n);
        }
    }
    Ok(stats)
}

struct StepOut {
    loss: Var,
    value: f64,
    correct: usize,
    total: usize,
    recon: f64,
    skipped: usize,
    kl_only: bool,
}

#[derive(Default)]
struct EpochStats {
    loss: f64,
    steps: usize,
    correct: usize,
    total: usize,
    recon: f64,
    skipped: usize,
    kl_only: usize,
}

impl EpochStats {
    fn add(&mut self, o: &StepOut) {
        self.loss += o.value;
        self.steps += 1;
        self.correct += o.correct;
        self.total += o.total;
        self.recon += o.recon;
        self.skipped += o.skipped;
        self.kl_only += usize::from(o.kl_only);
    }

    fn mean_loss(&self) -> f64 {
        self.loss / self.steps.max(1) as f64
    }
}

/// Cross-entropy of a per-node linear head over the 7 instruction kinds;
/// ENTRY/EXIT nodes are excluded. Returns the loss and the number of correct
/// argmax predictions.
pub fn node_classification_loss(tape: &mut Tape, store: &ParamStore, h: Var, kinds: &[Option<Kind>]) -> Result<(Var, usize, usize)> {
    let rows: Vec<usize> = (0..kinds.len()).filter(|&i| kinds[i].is_some()).collect();
    if rows.is_empty() {
        return invalid("node classification: graph has no instruction nodes");
    }
    let w = tape.param(store, &format!("{NODE_HEAD}.w"))?;
    let b = tape.param(store, &format!("{NODE_HEAD}.b"))?;
    let hv = tape.gather_rows(h, &rows)?;
    let logits = tape.matmul(hv, w)?;
    let logits = tape.add(logits, b)?;
    let logp = tape.log_softmax(logits, 1)?;
    let n = rows.len();
    let mut onehot = Tensor::zeros(&[n, Kind::ALL.len()]);
    let mut correct = 0;
    for (r, &i) in rows.iter().enumerate() {
        let label = kinds[i].expect("instruction node").index();
        onehot.data_mut()[r * Kind::ALL.len() + label] = 1.0;
        let row = tape.value(logp).row_slice(r);
        let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).unwrap_or(0);
        correct += usize::from(best == label);
    }
    let y = tape.constant(onehot);
    let picked = tape.mul(logp, y)?;
    let total = tape.sum(picked, None)?;
    Ok((tape.scale(total, -1.0 / n as f64), correct, n))
}

pub fn init_node_head(store: &mut ParamStore, width: usize, rng: &mut ChaCha8Rng) {
    store.insert(format!("{NODE_HEAD}.w"), glorot(width, Kind::ALL.len(), rng));
    store.insert(format!("{NODE_HEAD}.b"), Tensor::zeros(&[1, Kind::ALL.len()]));
}

pub fn pretrain_node_classification(corpus: &[Program], model: &mut Model, cfg: &PretrainConfig) -> Result<PretrainReport> {
    let preps = prepare_all(corpus, model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_key(&[cfg.seed, 0x6e6f]));
    init_node_head(&mut model.params, model.config.width(), &mut rng);
    let stats = train_loop(&preps, model, cfg, &[NODE_HEAD], |tape, model, prep, key| {
        let f = model.forward(tape, prep, EmbedMode::Dependence, model.dropout(true, key))?;
        let h = f.nodes.expect("dependence mode runs the GNN");
        let (loss, correct, total) = node_classification_loss(tape, &model.params, h, &prep.kinds)?;
        Ok(Some(StepOut {
            value: tape.value(loss).data()[0],
            loss,
            correct,
            total,
            recon: 0.0,
            skipped: 0,
            kl_only: false,
        }))
    })?;
    Ok(PretrainReport {
        strategy: "node".into(),
        epoch_losses: stats.iter().map(EpochStats::mean_loss).collect(),
        accuracy: stats.iter().map(|s| s.correct as f64 / s.total.max(1) as f64).collect(),
        ..PretrainReport::default()
    })
}

/// Per-anchor subgraphs for context prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextSample {
    pub anchor: usize,
    /// Nodes within `K` hops, anchor first, then ascending id.
    pub neighborhood: Vec<usize>,
    /// Nodes at hop distance in `[r1, r2]`, ascending id.
    pub ring: Vec<usize>,
}

/// Neighborhood and ring of every node; anchors with an empty ring are
/// returned separately.
pub fn context_samples(g: &MessageGraph, k: usize, r1: usize, r2: usize) -> (Vec<ContextSample>, Vec<usize>) {
    let adj = g.neighbors();
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    for v in 0..g.nodes {
        let dist = crate::depgraph::hop_distances(&adj, v);
        let ring: Vec<usize> = (0..g.nodes).filter(|&u| dist[u] >= r1 && dist[u] <= r2).collect();
        if ring.is_empty() {
            skipped.push(v);
            continue;
        }
        let neighborhood = std::iter::once(v)
            .chain((0..g.nodes).filter(|&u| u != v && dist[u] <= k))
            .collect();
        samples.push(ContextSample {
            anchor: v,
            neighborhood,
            ring,
        });
    }
    (samples, skipped)
}

/// Disjoint union of induced subgraphs and the row of each part's nodes.
fn batch_subgraphs(g: &MessageGraph, parts: &[&[usize]]) -> (MessageGraph, Vec<usize>, Vec<usize>) {
    let mut union = MessageGraph::mirrored(0, &[]);
    let mut sources = Vec::new();
    let mut owner = Vec::new();
    for (i, nodes) in parts.iter().enumerate() {
        union.append(&g.induced(nodes));
        sources.extend_from_slice(nodes);
        owner.extend(std::iter::repeat_n(i, nodes.len()));
    }
    (union, sources, owner)
}

/// Binary context-prediction loss over `samples`, with `negatives[i]` the
/// sample whose context serves as the negative for sample `i`.
#[allow(clippy::too_many_arguments)]
pub fn context_loss(
    tape: &mut Tape,
    store: &ParamStore,
    center: StackSpec<'_>,
    context: StackSpec<'_>,
    g: &MessageGraph,
    x: Var,
    samples: &[ContextSample],
    negatives: &[usize],
    dropout: Dropout,
) -> Result<Var> {
    let a = samples.len();
    let hoods: Vec<&[usize]> = samples.iter().map(|s| s.neighborhood.as_slice()).collect();
    let (hood_graph, hood_src, _) = batch_subgraphs(g, &hoods);
    let xs = tape.gather_rows(x, &hood_src)?;
    let hs = encode_graph(tape, store, center, &hood_graph, xs, dropout)?;
    let mut starts = Vec::with_capacity(a);
    let mut off = 0;
    for s in samples {
        starts.push(off);
        off += s.neighborhood.len();
    }
    let s = tape.gather_rows(hs, &starts)?;

    let rings: Vec<&[usize]> = samples.iter().map(|s| s.ring.as_slice()).collect();
    let (ring_graph, ring_src, owner) = batch_subgraphs(g, &rings);
    let xr = tape.gather_rows(x, &ring_src)?;
    let ctx_dropout = Dropout {
        key: stream_key(&[dropout.key, 0x6378]),
        ..dropout
    };
    let hc = encode_graph(tape, store, context, &ring_graph, xr, ctx_dropout)?;
    let inv: Vec<f64> = owner.iter().map(|&o| 1.0 / samples[o].ring.len() as f64).collect();
    let inv = tape.constant(Tensor::new(vec![owner.len(), 1], inv)?);
    let scaled = tape.mul(hc, inv)?;
    let c = tape.scatter_add_rows(scaled, &owner, a)?;

    let c_neg = tape.gather_rows(c, negatives)?;
    let pos = tape.mul(s, c)?;
    let pos = tape.sum(pos, Some(1))?;
    let neg = tape.mul(s, c_neg)?;
    let neg = tape.sum(neg, Some(1))?;
    let neg = tape.scale(neg, -1.0);
    let lp = tape.log_sigmoid(pos);
    let ln = tape.log_sigmoid(neg);
    let both = tape.add(lp, ln)?;
    let total = tape.sum(both, None)?;
    Ok(tape.scale(total, -1.0 / a as f64))
}

/// For each sample, a uniformly drawn different sample (itself when alone).
pub fn draw_negatives(count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..count)
        .map(|i| {
            if count < 2 {
                i
            } else {
                let j = rng.random_range(0..count - 1);
                if j >= i {
                    j + 1
                } else {
                    j
                }
            }
        })
        .collect()
}

pub fn context_stack(config: &ModelConfig) -> StackSpec<'static> {
    Model::stack_of(config, CONTEXT_PREFIX)
}

pub fn pretrain_context_prediction(corpus: &[Program], model: &mut Model, cfg: &PretrainConfig) -> Result<PretrainReport> {
    cfg.validate()?;
    let preps = prepare_all(corpus, model)?;
    if let Some(p) = preps.iter().find(|p| p.node_count() < 2) {
        return invalid(format!("context prediction needs graphs with 2+ nodes; found {}", p.node_count()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_key(&[cfg.seed, 0x6378]));
    let ctx = context_stack(&model.config);
    for k in 0..ctx.layers {
        init_layer(&mut model.params, ctx.prefix, k, ctx.arch, ctx.width, &mut rng);
    }
    let seed = cfg.seed;
    let stats = train_loop(&preps, model, cfg, &[CONTEXT_PREFIX], |tape, model, prep, key| {
        let (samples, skipped) = context_samples(&prep.graph, cfg.k_hops, cfg.r1, cfg.r2);
        if samples.is_empty() {
            return Ok(None);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(&[seed, key, 0x6e67]));
        let negatives = draw_negatives(samples.len(), &mut rng);
        let enc = model.encodings(tape, prep)?;
        let x = model.node_features(tape, prep, enc)?;
        let loss = context_loss(
            tape,
            &model.params,
            model.stack(),
            context_stack(&model.config),
            &prep.graph,
            x,
            &samples,
            &negatives,
            model.dropout(true, key),
        )?;
        Ok(Some(StepOut {
            value: tape.value(loss).data()[0],
            loss,
            correct: 0,
            total: 0,
            recon: 0.0,
            skipped: skipped.len(),
            kl_only: false,
        }))
    })?;
    Ok(PretrainReport {
        strategy: "context".into(),
        epoch_losses: stats.iter().map(EpochStats::mean_loss).collect(),
        skipped_anchors: stats.iter().map(|s| s.skipped).sum(),
        ..PretrainReport::default()
    })
}

/// Node pairs scored by the auto-encoder: every adjacent unordered pair, and as
/// many non-adjacent pairs drawn uniformly.
pub fn vgae_pairs(g: &MessageGraph, rng: &mut ChaCha8Rng) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let adj = g.neighbors();
    let mut pos = Vec::new();
    for (u, list) in adj.iter().enumerate() {
        for &v in list.iter().filter(|&&v| v > u) {
            pos.push((u, v));
        }
    }
    let n = g.nodes;
    let mut candidates = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if adj[u].binary_search(&v).is_err() {
                candidates.push((u, v));
            }
        }
    }
    let mut neg = Vec::new();
    for _ in 0..pos.len().min(candidates.len()) {
        let i = rng.random_range(0..candidates.len());
        neg.push(candidates.swap_remove(i));
    }
    (pos, neg)
}

pub fn init_vgae_heads(store: &mut ParamStore, width: usize, latent: usize, rng: &mut ChaCha8Rng) {
    store.insert(format!("{VGAE_PREFIX}.mu.w"), glorot(width, latent, rng));
    store.insert(format!("{VGAE_PREFIX}.mu.b"), Tensor::zeros(&[1, latent]));
    store.insert(format!("{VGAE_PREFIX}.logvar.w"), glorot(width, latent, rng));
    store.insert(format!("{VGAE_PREFIX}.logvar.b"), Tensor::zeros(&[1, latent]));
}

/// Auto-encoder loss terms.
#[derive(Clone, Copy, Debug)]
pub struct VgaeTerms {
    pub total: Var,
    /// Mean binary cross-entropy over scored pairs, absent without pairs.
    pub reconstruction: Option<Var>,
    pub kl: Var,
}

/// `BCE(σ(z_u·z_v), A_uv)` averaged over positive and negative pairs, plus
/// `KL(N(μ,σ²) ‖ N(0,I))` averaged over nodes and divided by the node count.
/// `noise` is `[nodes, latent]`.
pub fn vgae_loss(
    tape: &mut Tape,
    store: &ParamStore,
    h: Var,
    noise: &Tensor,
    pos: &[(usize, usize)],
    neg: &[(usize, usize)],
) -> Result<VgaeTerms> {
    let mw = tape.param(store, &format!("{VGAE_PREFIX}.mu.w"))?;
    let mb = tape.param(store, &format!("{VGAE_PREFIX}.mu.b"))?;
    let lw = tape.param(store, &format!("{VGAE_PREFIX}.logvar.w"))?;
    let lb = tape.param(store, &format!("{VGAE_PREFIX}.logvar.b"))?;
    let mu = tape.matmul(h, mw)?;
    let mu = tape.add(mu, mb)?;
    let logvar = tape.matmul(h, lw)?;
    let logvar = tape.add(logvar, lb)?;
    let n = tape.value(mu).rows();

    // KL = -½ Σ (1 + logσ² − μ² − σ²) / N².
    let var = tape.exp(logvar);
    let mu2 = tape.mul(mu, mu)?;
    let t = tape.add_scalar(logvar, 1.0);
    let t = tape.sub(t, mu2)?;
    let t = tape.sub(t, var)?;
    let t = tape.sum(t, None)?;
    let kl = tape.scale(t, -0.5 / (n * n) as f64);

    let half = tape.scale(logvar, 0.5);
    let sigma = tape.exp(half);
    let eta = tape.constant(noise.clone());
    let spread = tape.mul(sigma, eta)?;
    let z = tape.add(mu, spread)?;

    if pos.is_empty() && neg.is_empty() {
        return Ok(VgaeTerms {
            total: kl,
            reconstruction: None,
            kl,
        });
    }
    let (us, vs): (Vec<usize>, Vec<usize>) = pos.iter().chain(neg).copied().unzip();
    let sign: Vec<f64> = std::iter::repeat_n(1.0, pos.len()).chain(std::iter::repeat_n(-1.0, neg.len())).collect();
    let zu = tape.gather_rows(z, &us)?;
    let zv = tape.gather_rows(z, &vs)?;
    let dot = tape.mul(zu, zv)?;
    let dot = tape.sum(dot, Some(1))?;
    let sign = tape.constant(Tensor::new(vec![sign.len(), 1], sign)?);
    let signed = tape.mul(dot, sign)?;
    let ll = tape.log_sigmoid(signed);
    let ll = tape.sum(ll, None)?;
    let recon = tape.scale(ll, -1.0 / us.len() as f64);
    let total = tape.add(recon, kl)?;
    Ok(VgaeTerms {
        total,
        reconstruction: Some(recon),
        kl,
    })
}

pub fn pretrain_vgae(corpus: &[Program], model: &mut Model, cfg: &PretrainConfig) -> Result<PretrainReport> {
    let preps = prepare_all(corpus, model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_key(&[cfg.seed, 0x7661]));
    init_vgae_heads(&mut model.params, model.config.width(), cfg.latent, &mut rng);
    let (seed, latent) = (cfg.seed, cfg.latent);
    let stats = train_loop(&preps, model, cfg, &[VGAE_PREFIX], |tape, model, prep, key| {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(&[seed, key, 0x7670]));
        let (pos, neg) = vgae_pairs(&prep.graph, &mut rng);
        let noise = gaussian(&[prep.node_count(), latent], &mut rng);
        let f = model.forward(tape, prep, EmbedMode::Dependence, model.dropout(true, key))?;
        let h = f.nodes.expect("dependence mode runs the GNN");
        let terms = vgae_loss(tape, &model.params, h, &noise, &pos, &neg)?;
        Ok(Some(StepOut {
            value: tape.value(terms.total).data()[0],
            loss: terms.total,
            correct: 0,
            total: 0,
            recon: terms.reconstruction.map_or(0.0, |r| tape.value(r).data()[0]),
            skipped: 0,
            kl_only: terms.reconstruction.is_none(),
        }))
    })?;
    Ok(PretrainReport {
        strategy: "vgae".into(),
        epoch_losses: stats.iter().map(EpochStats::mean_loss).collect(),
        reconstruction: stats.iter().map(|s| s.recon / (s.steps - s.kl_only).max(1) as f64).collect(),
        kl_only_graphs: stats.last().map_or(0, |s| s.kl_only),
        ..PretrainReport::default()
    })
}

pub fn gaussian(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

#[cfg(test)]
mod tests;
