use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{attention_readout, encode_graph, init_stack, Arch, Dropout, StackSpec};
use crate::depgraph::{build_program_graph, MessageGraph, NodeKind};
use crate::lexical::{encode_sequences, init_bilstm, SubwordVocab};
use crate::mir::{Kind, Program};
use crate::numerics::{stream_key, uniform, ParamStore, Tape, Tensor, Var};
use crate::{invalid, Result};

pub const EMBED: &str = "embed.e";
pub const GNN: &str = "gnn";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub lstm_hidden: usize,
    pub arch: Arch,
    pub layers: usize,
    pub dropout: f64,
    pub readout_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 100,
            lstm_hidden: 150,
            arch: Arch::Gat,
            layers: 5,
            dropout: 0.2,
            readout_width: 300,
        }
    }
}

impl ModelConfig {
    /// Width of instruction encodings and of every GNN layer.
    pub fn width(&self) -> usize {
        2 * self.lstm_hidden
    }

    pub fn embedding_width(&self) -> usize {
        self.width() + self.readout_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.lstm_hidden == 0 || self.readout_width == 0 {
            return invalid("model config: dimensions must be positive");
        }
        if self.layers == 0 {
            return invalid("model config: at least one GNN layer is required");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid(format!("model config: dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }
}

/// Which halves of the code embedding are kept; the others are zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMode {
    Both,
    Lexical,
    Dependence,
}

impl std::str::FromStr for EmbedMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(EmbedMode::Both),
            "lexical" => Ok(EmbedMode::Lexical),
            "dependence" => Ok(EmbedMode::Dependence),
            _ => invalid(format!("unknown mode `{s}` (expected both, lexical or dependence)")),
        }
    }
}

impl EmbedMode {
    pub fn name(self) -> &'static str {
        match self {
            EmbedMode::Both => "both",
            EmbedMode::Lexical => "lexical",
            EmbedMode::Dependence => "dependence",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Scope<'a> {
    Program(&'a Program),
    Method(&'a Program, usize),
}

/// Tokenized instructions and the message graph of one scope.
///
/// Identical subword sequences are encoded once. `seqs` is sorted, which also
/// fixes the summation order of the lexical embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub seqs: Vec<Vec<u32>>,
    pub counts: Vec<f64>,
    /// Row of `seqs` feeding each graph node; `seqs.len()` marks ENTRY/EXIT.
    pub node_rows: Vec<usize>,
    pub kinds: Vec<Option<Kind>>,
    pub graph: MessageGraph,
}

impl Prepared {
    pub fn build(program: &Program, vocab: &SubwordVocab) -> Result<Prepared> {
        if program.instruction_count() == 0 {
            return invalid(format!("`{}` has no instructions", program.name));
        }
        let pg = build_program_graph(program);
        let mut unique: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        let mut node_seqs = Vec::with_capacity(pg.node_count());
        for &(mi, kind) in &pg.nodes {
            node_seqs.push(match kind {
                NodeKind::Instr(i) => {
                    let ids = vocab.encode_text(&program.methods[mi].instructions[i].text);
                    *unique.entry(ids.clone()).or_default() += 1.0;
                    Some(ids)
                }
                _ => None,
            });
        }
        let seqs: Vec<Vec<u32>> = unique.keys().cloned().collect();
        let counts = unique.values().copied().collect();
        let node_rows = node_seqs
            .iter()
            .map(|s| match s {
                Some(ids) => seqs.binary_search(ids).expect("sequence registered"),
                None => seqs.len(),
            })
            .collect();
        Ok(Prepared {
            seqs,
            counts,
            node_rows,
            kinds: pg.kinds.clone(),
            graph: pg.message_graph(),
        })
    }

    pub fn scope(scope: Scope<'_>, vocab: &SubwordVocab) -> Result<Prepared> {
        match scope {
            Scope::Program(p) => Prepared::build(p, vocab),
            Scope::Method(p, i) => {
                let Some(m) = p.methods.get(i) else {
                    return invalid(format!("`{}` has no method #{i}", p.name));
                };
                let single = Program {
                    name: format!("{}::{}", p.name, m.name),
                    methods: vec![m.clone()],
                    class_label: None,
                    clone_group: None,
                };
                Prepared::build(&single, vocab)
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.graph.nodes
    }
}

/// Several prepared scopes merged into one disjoint graph over a shared
/// sequence table.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub seqs: Vec<Vec<u32>>,
    /// `[scopes, seqs]` multiplicities.
    pub counts: Tensor,
    /// Row of `seqs` feeding each node; `seqs.len()` marks ENTRY/EXIT.
    pub node_rows: Vec<usize>,
    pub graph: MessageGraph,
    /// First node and node count of each scope.
    pub spans: Vec<(usize, usize)>,
}

impl Batch {
    pub fn new(preps: &[&Prepared]) -> Batch {
        let mut table: BTreeMap<&[u32], usize> = BTreeMap::new();
        for p in preps {
            for s in &p.seqs {
                table.insert(s, 0);
            }
        }
        for (i, slot) in table.values_mut().enumerate() {
            *slot = i;
        }
        let u = table.len();
        let mut counts = Tensor::zeros(&[preps.len(), u]);
        let mut node_rows = Vec::new();
        let mut graph = MessageGraph::mirrored(0, &[]);
        let mut spans = Vec::with_capacity(preps.len());
        for (b, p) in preps.iter().enumerate() {
            let local: Vec<usize> = p.seqs.iter().map(|s| table[s.as_slice()]).collect();
            for (k, &c) in p.counts.iter().enumerate() {
                counts.data_mut()[b * u + local[k]] = c;
            }
            spans.push((graph.nodes, p.node_count()));
            node_rows.extend(p.node_rows.iter().map(|&r| local.get(r).copied().unwrap_or(u)));
            graph.append(&p.graph);
        }
        Batch {
            seqs: table.into_keys().map(<[u32]>::to_vec).collect(),
            counts,
            node_rows,
            graph,
            spans,
        }
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

/// Intermediate values of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    /// `[1, w]` sum of instruction encodings.
    pub lexical: Var,
    /// `[nodes, w]` final GNN states (absent in lexical-only mode).
    pub nodes: Option<Var>,
    /// `[1, r]` pooled graph vector.
    pub dependence: Var,
    /// `[1, w + r]` masked concatenation.
    pub embedding: Var,
}

/// Vocabulary, configuration and every named parameter.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: SubwordVocab,
    pub params: ParamStore,
}

impl Model {
    /// Fresh model around a trained subword matrix, which stays frozen.
    pub fn new(config: ModelConfig, vocab: SubwordVocab, embedding: Tensor, seed: u64) -> Result<Model> {
        config.validate()?;
        if embedding.shape() != [vocab.len(), config.embed_dim] {
            return invalid(format!(
                "embedding matrix has shape {:?}, expected [{}, {}]",
                embedding.shape(),
                vocab.len(),
                config.embed_dim
            ));
        }
        let mut params = ParamStore::new();
        params.insert_frozen(EMBED, embedding);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(&[seed, 0x6d6f_64]));
        init_bilstm(&mut params, config.embed_dim, config.lstm_hidden, &mut rng);
        init_stack(&mut params, Model::stack_of(&config, GNN), config.readout_width, &mut rng);
        Ok(Model { config, vocab, params })
    }

    /// Model with a random subword matrix, for tests and baselines.
    pub fn random(config: ModelConfig, vocab: SubwordVocab, seed: u64) -> Result<Model> {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(&[seed, 0x656d_62]));
        let e = uniform(&[vocab.len(), config.embed_dim], 0.5, &mut rng);
        Model::new(config, vocab, e, seed)
    }

    pub fn stack_of<'a>(config: &ModelConfig, prefix: &'a str) -> StackSpec<'a> {
        StackSpec {
            prefix,
            arch: config.arch,
            layers: config.layers,
            width: config.width(),
        }
    }

    pub fn stack(&self) -> StackSpec<'static> {
        Model::stack_of(&self.config, GNN)
    }

    pub fn prepare(&self, scope: Scope<'_>) -> Result<Prepared> {
        Prepared::scope(scope, &self.vocab)
    }

    /// `[unique sequences, w]` instruction encodings.
    pub fn encodings(&self, tape: &mut Tape, prep: &Prepared) -> Result<Var> {
        let e = tape.param(&self.params, EMBED)?;
        encode_sequences(tape, &self.params, e, &prep.seqs)
    }

    /// Node feature matrix: instruction encodings, zero rows for ENTRY/EXIT.
    pub fn node_features(&self, tape: &mut Tape, prep: &Prepared, enc: Var) -> Result<Var> {
        let zero = tape.constant(Tensor::zeros(&[1, self.config.width()]));
        let table = tape.concat(&[enc, zero], 0)?;
        Ok(tape.gather_rows(table, &prep.node_rows)?)
    }

    /// Multiplicity-weighted sum of encodings in sorted-sequence order.
    pub fn lexical_sum(&self, tape: &mut Tape, prep: &Prepared, enc: Var) -> Result<Var> {
        let counts = tape.constant(Tensor::row(prep.counts.clone()));
        Ok(tape.matmul(counts, enc)?)
    }

    pub fn dropout(&self, train: bool, key: u64) -> Dropout {
        Dropout {
            p: self.config.dropout,
            key,
            train,
        }
    }

    pub fn forward(&self, tape: &mut Tape, prep: &Prepared, mode: EmbedMode, dropout: Dropout) -> Result<Forward> {
        let enc = self.encodings(tape, prep)?;
        let lexical = self.lexical_sum(tape, prep, enc)?;
        let (nodes, dependence) = if mode == EmbedMode::Lexical {
            (None, tape.constant(Tensor::zeros(&[1, self.config.readout_width])))
        } else {
            let x = self.node_features(tape, prep, enc)?;
            let h = encode_graph(tape, &self.params, self.stack(), &prep.graph, x, dropout)?;
            (Some(h), attention_readout(tape, &self.params, GNN, h)?)
        };
        let lex_part = if mode == EmbedMode::Dependence {
            tape.constant(Tensor::zeros(&[1, self.config.width()]))
        } else {
            lexical
        };
        let embedding = tape.concat(&[lex_part, dependence], 1)?;
        Ok(Forward {
            lexical,
            nodes,
            dependence,
            embedding,
        })
    }

    /// `[scopes, w + r]` embeddings of a batch, one row per scope.
    pub fn forward_batch(&self, tape: &mut Tape, batch: &Batch, mode: EmbedMode, dropout: Dropout) -> Result<Var> {
        if batch.is_empty() {
            return invalid("empty batch");
        }
        let e = tape.param(&self.params, EMBED)?;
        let enc = encode_sequences(tape, &self.params, e, &batch.seqs)?;
        let b = batch.len();
        let lex = if mode == EmbedMode::Dependence {
            tape.constant(Tensor::zeros(&[b, self.config.width()]))
        } else {
            let counts = tape.constant(batch.counts.clone());
            tape.matmul(counts, enc)?
        };
        let dep = if mode == EmbedMode::Lexical {
            tape.constant(Tensor::zeros(&[b, self.config.readout_width]))
        } else {
            let zero = tape.constant(Tensor::zeros(&[1, self.config.width()]));
            let table = tape.concat(&[enc, zero], 0)?;
            let x = tape.gather_rows(table, &batch.node_rows)?;
            let h = encode_graph(tape, &self.params, self.stack(), &batch.graph, x, dropout)?;
            let mut rows = Vec::with_capacity(b);
            for &(start, len) in &batch.spans {
                let hb = tape.slice(h, 0, start, len)?;
                rows.push(attention_readout(tape, &self.params, GNN, hb)?);
            }
            tape.concat(&rows, 0)?
        };
        Ok(tape.concat(&[lex, dep], 1)?)
    }

    /// Evaluation-mode embeddings of many scopes, `chunk` at a time.
    pub fn embed_many(&self, preps: &[Prepared], mode: EmbedMode, chunk: usize) -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(preps.len());
        for group in preps.chunks(chunk.max(1)) {
            let refs: Vec<&Prepared> = group.iter().collect();
            let mut tape = Tape::new();
            let v = self.forward_batch(&mut tape, &Batch::new(&refs), mode, Dropout::OFF)?;
            let t = tape.value(v);
            out.extend((0..t.rows()).map(|i| Tensor::row(t.row_slice(i).to_vec())));
        }
        Ok(out)
    }

    /// Evaluation-mode embedding row.
    pub fn embed_prepared(&self, prep: &Prepared, mode: EmbedMode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, prep, mode, Dropout::OFF)?;
        Ok(tape.value(f.embedding).clone())
    }

    pub fn embed(&self, scope: Scope<'_>, mode: EmbedMode) -> Result<Tensor> {
        self.embed_prepared(&self.prepare(scope)?, mode)
    }
}

/// Final code embedding `[lexical ; dependence]` as a `[1, w + r]` row.
pub fn code_embedding(scope: Scope<'_>, model: &Model) -> Result<Tensor> {
    model.embed(scope, EmbedMode::Both)
}
