//! Downstream fine-tuning, metrics, probing and clone scoring.

mod corpora;
mod metrics;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use corpora::{
    generate_desk_corpora, instruction_multiset, CloneTriple, DeskCorpora, Template, CONTROL_TEMPLATES, SOLUTION_CLASSES, TEMPLATES,
    TOKEN_DOMAINS,
};
pub use metrics::{binary_metrics, multiclass_metrics, multilabel_metrics, subtoken_f1, ClassMetrics, MetricsReport};

use crate::gnn::{Batch, Dropout, EmbedMode, Model, Prepared, Scope};
use crate::lexical::{cosine, split_identifier};
use crate::mir::{LabeledProgram, Program};
use crate::numerics::{glorot, sigmoid, stream_key, AdamState, ParamStore, Tape, Tensor, Var};
use crate::pretrain::updatable;
use crate::{invalid, Error, Result};

pub const HEAD: &str = "head";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SolutionClass,
    Clone,
    NamePred,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::SolutionClass => "solution_class",
            Task::Clone => "clone",
            Task::NamePred => "name_pred",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "solution_class" | "solution" => Ok(Task::SolutionClass),
            "clone" => Ok(Task::Clone),
            "name_pred" | "names" => Ok(Task::NamePred),
            _ => invalid(format!("unknown task `{s}` (expected solution_class, clone or name_pred)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Target {
    Class(String),
    Clone(bool),
    /// Lowercased subwords of the method name.
    Names(Vec<String>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    /// One program, or two for clone pairs.
    pub programs: Vec<Program>,
    pub target: Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    pub examples: Vec<Example>,
}

/// Lowercased identifier pieces of a method name.
pub fn name_subwords(name: &str) -> Vec<String> {
    split_identifier(name).into_iter().map(|p| p.to_lowercase()).collect()
}

fn stable_hash(text: &str) -> u64 {
    let d = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Records whose id hashes into the last fifth form the held-out split.
pub fn is_held_out(id: &str) -> bool {
    stable_hash(id) % 5 == 0
}

impl Dataset {
    pub fn classification(records: &[LabeledProgram]) -> Result<Dataset> {
        let examples = records
            .iter()
            .map(|r| {
                let label = r
                    .label
                    .clone()
                    .ok_or_else(|| Error::Invalid(format!("record `{}` has no label", r.id)))?;
                Ok(Example {
                    id: r.id.clone(),
                    programs: vec![r.program.clone()],
                    target: Target::Class(label),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            task: Task::SolutionClass,
            examples,
        })
    }

    /// Method-name prediction over single-method programs; the label (or the
    /// method name when absent) supplies the target subwords.
    pub fn names(records: &[LabeledProgram]) -> Result<Dataset> {
        let examples = records
            .iter()
            .map(|r| {
                let [m] = r.program.methods.as_slice() else {
                    return invalid(format!("record `{}`: name prediction needs exactly one method", r.id));
                };
                let name = r.label.clone().unwrap_or_else(|| m.name.clone());
                Ok(Example {
                    id: r.id.clone(),
                    programs: vec![r.program.clone()],
                    target: Target::Names(name_subwords(&name)),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            task: Task::NamePred,
            examples,
        })
    }

    /// Clone pairs from group ids: every within-group pair is positive; each
    /// positive is matched by one negative pairing its first member with a
    /// program from another group.
    pub fn clone_pairs(records: &[LabeledProgram]) -> Result<Dataset> {
        let mut groups: BTreeMap<&str, Vec<&LabeledProgram>> = BTreeMap::new();
        for r in records {
            let g = r
                .group
                .as_deref()
                .ok_or_else(|| Error::Invalid(format!("record `{}` has no clone group", r.id)))?;
            groups.entry(g).or_default().push(r);
        }
        let mut examples = Vec::new();
        let pair = |a: &LabeledProgram, b: &LabeledProgram, clone: bool| Example {
            id: format!("{}|{}", a.id, b.id),
            programs: vec![a.program.clone(), b.program.clone()],
            target: Target::Clone(clone),
        };
        for (g, members) in &groups {
            for i in 0..members.len() {
                for j in i + 1..members.len() {
                    let (a, b) = (members[i], members[j]);
                    examples.push(pair(a, b, true));
                    let others: Vec<&LabeledProgram> = records.iter().filter(|r| r.group.as_deref() != Some(g)).collect();
                    if let Some(o) = others.get((stable_hash(&format!("{}|{}", a.id, b.id)) % others.len().max(1) as u64) as usize) {
                        examples.push(pair(a, o, false));
                    }
                }
            }
        }
        Ok(Dataset {
            task: Task::Clone,
            examples,
        })
    }

    pub fn for_task(task: Task, records: &[LabeledProgram]) -> Result<Dataset> {
        match task {
            Task::SolutionClass => Dataset::classification(records),
            Task::Clone => Dataset::clone_pairs(records),
            Task::NamePred => Dataset::names(records),
        }
    }

    pub fn split(&self) -> (Vec<&Example>, Vec<&Example>) {
        self.examples.iter().partition(|e| !is_held_out(&e.id))
    }
}

/// A single linear decision layer over the code embedding (or clone pair
/// features `[e1; e2; |e1-e2|; e1*e2]`).
#[derive(Clone, Debug)]
pub struct Head {
    pub task: Task,
    /// Class names (solution classes, name subwords); empty for clones.
    pub labels: Vec<String>,
    pub input: usize,
    pub params: ParamStore,
}

impl Head {
    pub fn new(task: Task, labels: Vec<String>, embedding_width: usize, seed: u64) -> Head {
        let input = if task == Task::Clone { 4 * embedding_width } else { embedding_width };
        let out = if task == Task::Clone { 1 } else { labels.len() };
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(&[seed, 0x6865_6164]));
        let mut params = ParamStore::new();
        params.insert(format!("{HEAD}.w"), glorot(input, out, &mut rng));
        params.insert(format!("{HEAD}.b"), Tensor::zeros(&[1, out]));
        Head {
            task,
            labels,
            input,
            params,
        }
    }

    pub fn outputs(&self) -> usize {
        if self.task == Task::Clone {
            1
        } else {
            self.labels.len()
        }
    }

    /// Logits for `[n, input]` features; head parameters are read from `store`.
    pub fn logits(&self, tape: &mut Tape, store: &ParamStore, features: Var) -> Result<Var> {
        let w = tape.param(store, &format!("{HEAD}.w"))?;
        let b = tape.param(store, &format!("{HEAD}.b"))?;
        let z = tape.matmul(features, w)?;
        Ok(tape.add(z, b)?)
    }
}

/// `[e1; e2; |e1-e2|; e1*e2]` per row.
pub fn pair_features(tape: &mut Tape, e1: Var, e2: Var) -> Result<Var> {
    let d = tape.sub(e1, e2)?;
    let ad = tape.abs(d);
    let prod = tape.mul(e1, e2)?;
    Ok(tape.concat(&[e1, e2, ad, prod], 1)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    pub mode: EmbedMode,
    pub epochs: usize,
    pub seed: u64,
    /// Step size for the decision layer and the lexical encoder.
    pub lr: f64,
    /// Step size for the message-passing stack and readout.
    pub gnn_lr: f64,
    pub batch: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            mode: EmbedMode::Both,
            epochs: 20,
            seed: 0,
            lr: 1e-3,
            gnn_lr: 1e-4,
            batch: 8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub head: Head,
    pub report: MetricsReport,
    pub epoch_losses: Vec<f64>,
}

struct Prepped<'a> {
    example: &'a Example,
    preps: Vec<Prepared>,
}

fn prepare_examples<'a>(model: &Model, examples: &[&'a Example]) -> Result<Vec<Prepped<'a>>> {
    examples
        .iter()
        .map(|e| {
            let preps = e
                .programs
                .iter()
                .map(|p| model.prepare(Scope::Program(p)))
                .collect::<Result<_>>()?;
            Ok(Prepped { example: e, preps })
        })
        .collect()
}

/// Head inputs for a group of examples.
fn features(tape: &mut Tape, model: &Model, group: &[&Prepped<'_>], task: Task, mode: EmbedMode, dropout: Dropout) -> Result<Var> {
    let preps: Vec<&Prepared> = group.iter().flat_map(|p| p.preps.iter()).collect();
    let emb = model.forward_batch(tape, &Batch::new(&preps), mode, dropout)?;
    if task != Task::Clone {
        return Ok(emb);
    }
    let first: Vec<usize> = (0..group.len()).map(|i| 2 * i).collect();
    let second: Vec<usize> = (0..group.len()).map(|i| 2 * i + 1).collect();
    let e1 = tape.gather_rows(emb, &first)?;
    let e2 = tape.gather_rows(emb, &second)?;
    pair_features(tape, e1, e2)
}

/// Target matrix: one-hot classes, ±1 clone signs, or ±1 per name subword.
fn targets(head: &Head, group: &[&Prepped<'_>]) -> Tensor {
    let out = head.outputs();
    let mut t = Tensor::zeros(&[group.len(), out]);
    for (r, p) in group.iter().enumerate() {
        let row = &mut t.data_mut()[r * out..(r + 1) * out];
        match &p.example.target {
            Target::Class(c) => {
                if let Some(k) = head.labels.iter().position(|l| l == c) {
                    row[k] = 1.0;
                }
            }
            Target::Clone(y) => row[0] = if *y { 1.0 } else { -1.0 },
            Target::Names(words) => {
                for (k, l) in head.labels.iter().enumerate() {
                    row[k] = if words.contains(l) { 1.0 } else { -1.0 };
                }
            }
        }
    }
    t
}

/// Mean per-example loss: cross-entropy, binary cross-entropy, or summed
/// per-subword binary cross-entropy.
fn task_loss(tape: &mut Tape, task: Task, logits: Var, target: Tensor) -> Result<Var> {
    let n = target.rows() as f64;
    let y = tape.constant(target);
    let total = match task {
        Task::SolutionClass => {
            let lp = tape.log_softmax(logits, 1)?;
            let picked = tape.mul(lp, y)?;
            tape.sum(picked, None)?
        }
        Task::Clone | Task::NamePred => {
            let signed = tape.mul(logits, y)?;
            let ll = tape.log_sigmoid(signed);
            tape.sum(ll, None)?
        }
    };
    Ok(tape.scale(total, -1.0 / n))
}

fn label_space(task: Task, train: &[&Example], test: &[&Example]) -> Result<Vec<String>> {
    let collect = |xs: &[&Example]| -> BTreeSet<String> {
        xs.iter()
            .flat_map(|e| match &e.target {
                Target::Class(c) => vec![c.clone()],
                Target::Clone(y) => vec![y.to_string()],
                Target::Names(w) => w.clone(),
            })
            .collect()
    };
    let seen = collect(train);
    let missing: Vec<String> = collect(test).difference(&seen).cloned().collect();
    if !missing.is_empty() {
        return invalid(format!("labels absent from the training split: {}", missing.join(", ")));
    }
    if task != Task::NamePred && seen.len() < 2 {
        return invalid(format!("degenerate label space: training split has only {:?}", seen));
    }
    Ok(if task == Task::Clone { Vec::new() } else { seen.into_iter().collect() })
}

/// Fine-tunes the whole model (except the frozen subword matrix) together
/// with a fresh head, then scores the held-out split.
pub fn finetune(dataset: &Dataset, model: &mut Model, cfg: &FinetuneConfig) -> Result<FinetuneOutcome> {
    let (train, test) = dataset.split();
    if train.is_empty() || test.is_empty() {
        return invalid(format!(
            "dataset of {} examples leaves an empty split ({} train, {} held out)",
            dataset.examples.len(),
            train.len(),
            test.len()
        ));
    }
    let labels = label_space(dataset.task, &train, &test)?;
    let mut head = Head::new(dataset.task, labels, model.config.embedding_width(), cfg.seed);
    let train_p = prepare_examples(model, &train)?;
    let test_p = prepare_examples(model, &test)?;

    for (name, p) in head.params.iter() {
        model.params.insert(name, p.value.clone());
    }
    let mut adam = AdamState::new(cfg.lr);
    let mut gnn_adam = AdamState::new(cfg.gnn_lr);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(&[cfg.seed, 0x6674, epoch as u64]));
        let mut order: Vec<usize> = (0..train_p.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch.max(1)) {
            step += 1;
            let group: Vec<&Prepped<'_>> = chunk.iter().map(|&i| &train_p[i]).collect();
            let mut tape = Tape::new();
            let dropout = model.dropout(true, stream_key(&[cfg.seed, 0x6664, step]));
            let x = features(&mut tape, model, &group, dataset.task, cfg.mode, dropout)?;
            let logits = head.logits(&mut tape, &model.params, x)?;
            let loss = task_loss(&mut tape, dataset.task, logits, targets(&head, &group))?;
            total += tape.value(loss).data()[0] * group.len() as f64;
            tape.backward(loss, &mut model.params)?;
            let (gnn, rest): (Vec<String>, Vec<String>) =
                updatable(&model.params).into_iter().partition(|n| n.starts_with("gnn."));
            adam.step(&mut model.params, &rest)?;
            gnn_adam.step(&mut model.params, &gnn)?;
            model.params.zero_grads();
        }
        epoch_losses.push(total / train_p.len() as f64);
    }
    for name in [format!("{HEAD}.w"), format!("{HEAD}.b")] {
        let p = model.params.remove(&name).expect("head registered");
        head.params.get_mut(&name).expect("head param").value = p.value;
    }
    let report = evaluate(model, &head, &test_p, cfg)?;
    Ok(FinetuneOutcome {
        head,
        report,
        epoch_losses,
    })
}

fn evaluate(model: &Model, head: &Head, test: &[Prepped<'_>], cfg: &FinetuneConfig) -> Result<MetricsReport> {
    let mut scores: Vec<Vec<f64>> = Vec::with_capacity(test.len());
    for chunk in test.chunks(16) {
        let group: Vec<&Prepped<'_>> = chunk.iter().collect();
        let mut tape = Tape::new();
        let x = features(&mut tape, model, &group, head.task, cfg.mode, Dropout::OFF)?;
        let logits = head.logits(&mut tape, &head.params, x)?;
        let t = tape.value(logits);
        scores.extend((0..t.rows()).map(|i| t.row_slice(i).to_vec()));
    }
    let mut report = match head.task {
        Task::SolutionClass => {
            let pred: Vec<String> = scores.iter().map(|s| head.labels[argmax(s)].clone()).collect();
            let truth: Vec<String> = test
                .iter()
                .map(|p| match &p.example.target {
                    Target::Class(c) => c.clone(),
                    _ => unreachable!("classification target"),
                })
                .collect();
            multiclass_metrics(&pred, &truth)
        }
        Task::Clone => {
            let pred: Vec<bool> = scores.iter().map(|s| sigmoid(s[0]) > 0.5).collect();
            let truth: Vec<bool> = test
                .iter()
                .map(|p| matches!(p.example.target, Target::Clone(true)))
                .collect();
            binary_metrics(&pred, &truth)
        }
        Task::NamePred => {
            let pred: Vec<Vec<String>> = scores
                .iter()
                .map(|s| {
                    s.iter()
                        .zip(&head.labels)
                        .filter(|(z, _)| sigmoid(**z) > 0.5)
                        .map(|(_, l)| l.clone())
                        .collect()
                })
                .collect();
            let truth: Vec<Vec<String>> = test
                .iter()
                .map(|p| match &p.example.target {
                    Target::Names(w) => w.clone(),
                    _ => unreachable!("name target"),
                })
                .collect();
            multilabel_metrics(&pred, &truth)
        }
    };
    report.task = head.task.name().to_string();
    report.mode = cfg.mode.name().to_string();
    report.seed = cfg.seed;
    Ok(report)
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Cosine of the two code embeddings, or the supervised clone probability
/// when a clone head is given.
pub fn clone_score(p1: &Program, p2: &Program, model: &Model, head: Option<&Head>) -> Result<f64> {
    let preps = [model.prepare(Scope::Program(p1))?, model.prepare(Scope::Program(p2))?];
    match head {
        None => {
            let e = model.embed_many(&preps, EmbedMode::Both, 2)?;
            Ok(cosine(e[0].data(), e[1].data()))
        }
        Some(h) => {
            if h.task != Task::Clone {
                return invalid(format!("clone_score needs a clone head, got {}", h.task));
            }
            let refs: Vec<&Prepared> = preps.iter().collect();
            let mut tape = Tape::new();
            let emb = model.forward_batch(&mut tape, &Batch::new(&refs), EmbedMode::Both, Dropout::OFF)?;
            let e1 = tape.slice(emb, 0, 0, 1)?;
            let e2 = tape.slice(emb, 0, 1, 1)?;
            let f = pair_features(&mut tape, e1, e2)?;
            let z = h.logits(&mut tape, &h.params, f)?;
            Ok(sigmoid(tape.value(z).data()[0]))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub feature: EmbedMode,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            feature: EmbedMode::Both,
            seed: 0,
            epochs: 300,
            lr: 1e-2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeReport {
    pub feature: String,
    pub width: usize,
    pub accuracy: f64,
    pub train_accuracy: f64,
    pub held_out: usize,
    pub fingerprint_before: String,
    pub fingerprint_after: String,
}

/// Frozen embeddings of every example, in dataset order.
pub fn frozen_embeddings(model: &Model, dataset: &Dataset) -> Result<Vec<Tensor>> {
    let preps: Vec<Prepared> = dataset
        .examples
        .iter()
        .map(|e| match e.programs.as_slice() {
            [p] => model.prepare(Scope::Program(p)),
            _ => invalid("probing needs single-program examples"),
        })
        .collect::<Result<_>>()?;
    model.embed_many(&preps, EmbedMode::Both, 16)
}

/// Columns of the full embedding used by a probe feature.
pub fn feature_columns(model: &Model, feature: EmbedMode) -> std::ops::Range<usize> {
    let (w, total) = (model.config.width(), model.config.embedding_width());
    match feature {
        EmbedMode::Both => 0..total,
        EmbedMode::Lexical => 0..w,
        EmbedMode::Dependence => w..total,
    }
}

/// Trains a linear softmax classifier on frozen, standardized embedding
/// features and reports held-out accuracy. The model is never modified.
pub fn probe(model: &Model, dataset: &Dataset, cfg: &ProbeConfig) -> Result<ProbeReport> {
    let before = model.params.fingerprint();
    let embeddings = frozen_embeddings(model, dataset)?;
    let report = probe_embeddings(model, dataset, &embeddings, cfg, before.clone())?;
    Ok(ProbeReport {
        fingerprint_after: model.params.fingerprint(),
        ..report
    })
}

/// Probe over precomputed embeddings (rows aligned with `dataset.examples`).
pub fn probe_embeddings(
    model: &Model,
    dataset: &Dataset,
    embeddings: &[Tensor],
    cfg: &ProbeConfig,
    fingerprint: String,
) -> Result<ProbeReport> {
    if dataset.task != Task::SolutionClass {
        return invalid("probing needs a classification dataset");
    }
    let cols = feature_columns(model, cfg.feature);
    let width = cols.len();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, e) in dataset.examples.iter().enumerate() {
        if is_held_out(&e.id) {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    let train_ex: Vec<&Example> = train.iter().map(|&i| &dataset.examples[i]).collect();
    let test_ex: Vec<&Example> = test.iter().map(|&i| &dataset.examples[i]).collect();
    if train_ex.is_empty() || test_ex.is_empty() {
        return invalid("probing dataset leaves an empty split");
    }
    let labels = label_space(Task::SolutionClass, &train_ex, &test_ex)?;

    let rows = |idx: &[usize]| -> Tensor {
        let data: Vec<f64> = idx.iter().flat_map(|&i| embeddings[i].data()[cols.clone()].to_vec()).collect();
        Tensor::new(vec![idx.len(), width], data).expect("feature rows")
    };
    let (mut xtr, mut xte) = (rows(&train), rows(&test));
    standardize(&mut xtr, &mut xte);
    let label_of = |i: usize| match &dataset.examples[i].target {
        Target::Class(c) => labels.iter().position(|l| l == c).expect("label in space"),
        _ => unreachable!("classification target"),
    };
    let ytr: Vec<usize> = train.iter().map(|&i| label_of(i)).collect();
    let yte: Vec<usize> = test.iter().map(|&i| label_of(i)).collect();

    let k = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_key(&[cfg.seed, 0x7072_6f62]));
    let mut store = ParamStore::new();
    store.insert("probe.w", glorot(width, k, &mut rng));
    store.insert("probe.b", Tensor::zeros(&[1, k]));
    let mut onehot = Tensor::zeros(&[ytr.len(), k]);
    for (r, &y) in ytr.iter().enumerate() {
        onehot.data_mut()[r * k + y] = 1.0;
    }
    let mut adam = AdamState::new(cfg.lr);
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let x = tape.constant(xtr.clone());
        let w = tape.param(&store, "probe.w")?;
        let b = tape.param(&store, "probe.b")?;
        let z = tape.matmul(x, w)?;
        let z = tape.add(z, b)?;
        let loss = task_loss(&mut tape, Task::SolutionClass, z, onehot.clone())?;
        tape.backward(loss, &mut store)?;
        adam.step(&mut store, &["probe.w", "probe.b"])?;
    }
    let accuracy_on = |x: &Tensor, y: &[usize]| -> Result<f64> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = tape.param(&store, "probe.w")?;
        let b = tape.param(&store, "probe.b")?;
        let z = tape.matmul(xv, w)?;
        let z = tape.add(z, b)?;
        let z = tape.value(z);
        let hits = (0..y.len()).filter(|&r| argmax(z.row_slice(r)) == y[r]).count();
        Ok(hits as f64 / y.len() as f64)
    };
    Ok(ProbeReport {
        feature: cfg.feature.name().to_string(),
        width,
        accuracy: accuracy_on(&xte, &yte)?,
        train_accuracy: accuracy_on(&xtr, &ytr)?,
        held_out: yte.len(),
        fingerprint_before: fingerprint.clone(),
        fingerprint_after: fingerprint,
    })
}

/// Scales columns to zero mean and unit variance using training statistics;
/// constant columns become zero.
fn standardize(train: &mut Tensor, test: &mut Tensor) {
    let (n, d) = (train.rows(), train.cols());
    for j in 0..d {
        let mean = (0..n).map(|i| train.data()[i * d + j]).sum::<f64>() / n as f64;
        let var = (0..n).map(|i| (train.data()[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var > 1e-24 { 1.0 / var.sqrt() } else { 0.0 };
        for t in [&mut *train, &mut *test] {
            let rows = t.rows();
            for i in 0..rows {
                let v = &mut t.data_mut()[i * d + j];
                *v = (*v - mean) * scale;
            }
        }
    }
}
