//! Message passing over mirrored dependence graphs and gated attention pooling.
//!
//! Parameters of layer `k` live under `{prefix}.{k}.*`; the readout under
//! `{prefix}.readout.*`. A message from `u` to `v` is `H_u + A_e T`, where `A_e`
//! one-hot encodes the edge type and direction and `T` is the layer's `5 x w`
//! edge table.

mod model;

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depgraph::MessageGraph;
use crate::numerics::{glorot, stream_key, ParamStore, Tape, Tensor, Var};
use crate::{invalid, Error, Result};

pub use model::{code_embedding, Batch, EMBED, GNN, EmbedMode, Forward, Model, ModelConfig, Prepared, Scope};

pub const LEAKY_SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gcn,
    Gin,
    Sage,
    Gat,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::Gcn, Arch::Gin, Arch::Sage, Arch::Gat];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Gcn => "gcn",
            Arch::Gin => "gin",
            Arch::Sage => "sage",
            Arch::Gat => "gat",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Invalid(format!("unknown architecture `{s}` (expected gcn, gin, sage or gat)")))
    }
}

/// Shape of a GNN stack plus its readout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StackSpec<'a> {
    pub prefix: &'a str,
    pub arch: Arch,
    pub layers: usize,
    pub width: usize,
}

/// Dropout applied after each layer when `train` is set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    pub p: f64,
    pub key: u64,
    pub train: bool,
}

impl Dropout {
    pub const OFF: Dropout = Dropout {
        p: 0.0,
        key: 0,
        train: false,
    };
}

fn pname(prefix: &str, k: usize, name: &str) -> String {
    format!("{prefix}.{k}.{name}")
}

/// Registers the parameters of one layer.
pub fn init_layer(store: &mut ParamStore, prefix: &str, k: usize, arch: Arch, width: usize, rng: &mut ChaCha8Rng) {
    let w = width;
    store.insert(pname(prefix, k, "edge"), glorot(5, w, rng));
    match arch {
        Arch::Gcn => store.insert(pname(prefix, k, "w"), glorot(w, w, rng)),
        Arch::Sage => store.insert(pname(prefix, k, "w"), glorot(2 * w, w, rng)),
        Arch::Gin => {
            store.insert(pname(prefix, k, "eps"), Tensor::scalar(0.0));
            store.insert(pname(prefix, k, "w1"), glorot(w, w, rng));
            store.insert(pname(prefix, k, "b1"), Tensor::zeros(&[1, w]));
            store.insert(pname(prefix, k, "w2"), glorot(w, w, rng));
            store.insert(pname(prefix, k, "b2"), Tensor::zeros(&[1, w]));
        }
        Arch::Gat => {
            store.insert(pname(prefix, k, "w"), glorot(w, w, rng));
            store.insert(pname(prefix, k, "a"), glorot(2 * w, 1, rng));
        }
    }
}

/// Registers all layers and the readout (`wg [w,1]`, `bg [1,1]`, `wt [w,r]`).
pub fn init_stack(store: &mut ParamStore, spec: StackSpec<'_>, readout_width: usize, rng: &mut ChaCha8Rng) {
    for k in 0..spec.layers {
        init_layer(store, spec.prefix, k, spec.arch, spec.width, rng);
    }
    init_readout(store, spec.prefix, spec.width, readout_width, rng);
}

pub fn init_readout(store: &mut ParamStore, prefix: &str, width: usize, out: usize, rng: &mut ChaCha8Rng) {
    store.insert(format!("{prefix}.readout.wg"), glorot(width, 1, rng));
    store.insert(format!("{prefix}.readout.bg"), Tensor::scalar(0.0));
    store.insert(format!("{prefix}.readout.wt"), glorot(width, out, rng));
}

fn column(tape: &mut Tape, values: Vec<f64>) -> Result<Var> {
    let n = values.len();
    Ok(tape.constant(Tensor::new(vec![n, 1], values)?))
}

/// `H_src + A T` for every message-graph edge.
fn edge_messages(tape: &mut Tape, store: &ParamStore, prefix: &str, k: usize, g: &MessageGraph, h: Var) -> Result<Var> {
    let table = tape.param(store, &pname(prefix, k, "edge"))?;
    let attrs: Vec<f64> = g.edge_attributes().into_iter().flatten().collect();
    let a = tape.constant(Tensor::new(vec![g.edge_count(), 5], attrs)?);
    let emb = tape.matmul(a, table)?;
    let hs = tape.gather_rows(h, &g.src)?;
    Ok(tape.add(hs, emb)?)
}

/// Attention entries of a GAT layer: the graph's edges followed by one self
/// entry per node. Returns the source vectors `W m_u` / `W H_v`, the entry
/// targets and the normalized weights.
pub fn gat_attention(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    k: usize,
    g: &MessageGraph,
    h: Var,
) -> Result<(Var, Vec<usize>, Var)> {
    let w = tape.param(store, &pname(prefix, k, "w"))?;
    let a = tape.param(store, &pname(prefix, k, "a"))?;
    let width = tape.value(w).cols();
    let a1 = tape.slice(a, 0, 0, width)?;
    let a2 = tape.slice(a, 0, width, width)?;
    let msgs = edge_messages(tape, store, prefix, k, g, h)?;
    let wm = tape.matmul(msgs, w)?;
    let wh = tape.matmul(h, w)?;
    let sources = tape.concat(&[wm, wh], 0)?;
    let targets: Vec<usize> = g.dst.iter().copied().chain(0..g.nodes).collect();
    let s_dst = tape.matmul(wh, a1)?;
    let s_dst = tape.gather_rows(s_dst, &targets)?;
    let s_src = tape.matmul(sources, a2)?;
    let scores = tape.add(s_dst, s_src)?;
    let scores = tape.leaky_relu(scores, LEAKY_SLOPE);
    let alpha = tape.segment_softmax(scores, &targets, g.nodes)?;
    Ok((sources, targets, alpha))
}

/// One message-passing layer; `h` is `[nodes, width]`.
pub fn message_pass(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    k: usize,
    arch: Arch,
    g: &MessageGraph,
    h: Var,
    dropout: Dropout,
) -> Result<Var> {
    let (n, width) = tape.value(h).dims2();
    let table_width = store.value(&pname(prefix, k, "edge"))?.cols();
    if n != g.nodes || width != table_width {
        return invalid(format!(
            "message_pass: layer {k} expects [{}, {table_width}] node features, got [{n}, {width}]",
            g.nodes
        ));
    }
    let deg = g.in_degree();
    let out = match arch {
        Arch::Gcn => {
            let w = tape.param(store, &pname(prefix, k, "w"))?;
            let msgs = edge_messages(tape, store, prefix, k, g, h)?;
            let coef: Vec<f64> = g
                .src
                .iter()
                .zip(&g.dst)
                .map(|(&u, &v)| 1.0 / (((deg[v] + 1) * (deg[u] + 1)) as f64).sqrt())
                .collect();
            let coef = column(tape, coef)?;
            let scaled = tape.mul(msgs, coef)?;
            let neigh = tape.scatter_add_rows(scaled, &g.dst, n)?;
            let self_coef = column(tape, deg.iter().map(|&d| 1.0 / (d + 1) as f64).collect())?;
            let own = tape.mul(h, self_coef)?;
            let agg = tape.add(own, neigh)?;
            let z = tape.matmul(agg, w)?;
            tape.relu(z)
        }
        Arch::Gin => {
            let eps = tape.param(store, &pname(prefix, k, "eps"))?;
            let w1 = tape.param(store, &pname(prefix, k, "w1"))?;
            let b1 = tape.param(store, &pname(prefix, k, "b1"))?;
            let w2 = tape.param(store, &pname(prefix, k, "w2"))?;
            let b2 = tape.param(store, &pname(prefix, k, "b2"))?;
            let msgs = edge_messages(tape, store, prefix, k, g, h)?;
            let neigh = tape.scatter_add_rows(msgs, &g.dst, n)?;
            let one_eps = tape.add_scalar(eps, 1.0);
            let own = tape.mul(h, one_eps)?;
            let pre = tape.add(own, neigh)?;
            let z = tape.matmul(pre, w1)?;
            let z = tape.add(z, b1)?;
            let z = tape.relu(z);
            let z = tape.matmul(z, w2)?;
            tape.add(z, b2)?
        }
        Arch::Sage => {
            let w = tape.param(store, &pname(prefix, k, "w"))?;
            let msgs = edge_messages(tape, store, prefix, k, g, h)?;
            let coef = column(tape, g.dst.iter().map(|&v| 1.0 / deg[v] as f64).collect())?;
            let scaled = tape.mul(msgs, coef)?;
            let mean = tape.scatter_add_rows(scaled, &g.dst, n)?;
            let cat = tape.concat(&[h, mean], 1)?;
            let z = tape.matmul(cat, w)?;
            tape.relu(z)
        }
        Arch::Gat => {
            let (sources, targets, alpha) = gat_attention(tape, store, prefix, k, g, h)?;
            let weighted = tape.mul(sources, alpha)?;
            tape.scatter_add_rows(weighted, &targets, n)?
        }
    };
    if dropout.train && dropout.p > 0.0 {
        Ok(tape.dropout(out, dropout.p, stream_key(&[dropout.key, k as u64]), true)?)
    } else {
        Ok(out)
    }
}

/// Centres each row and scales it to unit variance.
pub fn normalize_rows(tape: &mut Tape, h: Var) -> Result<Var> {
    let mean = tape.mean(h, Some(1))?;
    let centred = tape.sub(h, mean)?;
    let sq = tape.mul(centred, centred)?;
    let var = tape.mean(sq, Some(1))?;
    let var = tape.add_scalar(var, NORM_EPS);
    let log_var = tape.log(var)?;
    let log_inv_std = tape.scale(log_var, -0.5);
    let inv_std = tape.exp(log_inv_std);
    Ok(tape.mul(centred, inv_std)?)
}

/// Runs every layer of the stack starting from `x`. Each GIN layer's output
/// is row-normalized.
pub fn encode_graph(tape: &mut Tape, store: &ParamStore, spec: StackSpec<'_>, g: &MessageGraph, x: Var, dropout: Dropout) -> Result<Var> {
    if spec.layers == 0 {
        return invalid("encode_graph: the stack has no layers");
    }
    if g.nodes == 0 {
        return invalid("encode_graph: empty graph");
    }
    let mut h = x;
    for k in 0..spec.layers {
        h = message_pass(tape, store, spec.prefix, k, spec.arch, g, h, dropout)?;
        if spec.arch == Arch::Gin {
            h = normalize_rows(tape, h)?;
        }
    }
    Ok(h)
}

/// `Σ_v σ(H_v w_g + b_g) · (H_v W_t)` as a `[1, r]` row. Rows are summed in
/// ascending lexicographic order of their values, so the result does not
/// depend on node numbering.
pub fn attention_readout(tape: &mut Tape, store: &ParamStore, prefix: &str, h: Var) -> Result<Var> {
    let wg = tape.param(store, &format!("{prefix}.readout.wg"))?;
    let bg = tape.param(store, &format!("{prefix}.readout.bg"))?;
    let wt = tape.param(store, &format!("{prefix}.readout.wt"))?;
    let n = tape.value(h).rows();
    if n == 0 {
        return invalid("attention_readout: no nodes");
    }
    let gate = tape.matmul(h, wg)?;
    let gate = tape.add(gate, bg)?;
    let gate = tape.sigmoid(gate);
    let t = tape.matmul(h, wt)?;
    let gated = tape.mul(t, gate)?;
    let order = canonical_row_order(tape.value(gated));
    let sorted = tape.gather_rows(gated, &order)?;
    Ok(tape.sum(sorted, Some(0))?)
}

/// Row indices sorted by row contents (lexicographic `total_cmp`).
pub fn canonical_row_order(t: &Tensor) -> Vec<usize> {
    let mut order: Vec<usize> = (0..t.rows()).collect();
    order.sort_by(|&a, &b| {
        t.row_slice(a)
            .iter()
            .zip(t.row_slice(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}
