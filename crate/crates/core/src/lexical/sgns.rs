//! Skip-gram with negative sampling over per-instruction subword sequences.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bpe::{SubwordVocab, PAD};
use crate::numerics::{stream_key, uniform, AdamState, ParamStore, Tape, Tensor, Var};
use crate::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SgnsConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub seed: u64,
    pub lr: f64,
    /// Instruction sequences per optimizer step.
    pub batch: usize,
}

impl Default for SgnsConfig {
    fn default() -> Self {
        SgnsConfig {
            dim: 100,
            window: 8,
            negatives: 5,
            epochs: 10,
            seed: 0,
            lr: 3e-3,
            batch: 16,
        }
    }
}

/// Input matrix `e` (the embedding) and output matrix `o`, both `|C| x d`.
#[derive(Clone, Debug)]
pub struct EmbeddingMatrix {
    pub e: Tensor,
    pub o: Tensor,
    /// Mean per-pair loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Index lists for one batch of skip-gram pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairBatch {
    pub centers: Vec<usize>,
    pub contexts: Vec<usize>,
    pub neg_centers: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl PairBatch {
    fn push_sequence(&mut self, seq: &[u32], cfg: &SgnsConfig, sampler: &mut impl FnMut() -> usize) {
        for (t, &w) in seq.iter().enumerate() {
            let lo = t.saturating_sub(cfg.window);
            let hi = (t + cfg.window + 1).min(seq.len());
            for (p, &c) in seq.iter().enumerate().take(hi).skip(lo) {
                if p == t {
                    continue;
                }
                self.centers.push(w as usize);
                self.contexts.push(c as usize);
                for _ in 0..cfg.negatives {
                    let n = sampler();
                    if n != c as usize {
                        self.neg_centers.push(w as usize);
                        self.negatives.push(n);
                    }
                }
            }
        }
    }
}

/// Summed loss `-log σ(e_t·o_p) - Σ log σ(-e_t·o_n)` divided by the number of
/// positive pairs.
pub fn sgns_loss(tape: &mut Tape, e: Var, o: Var, batch: &PairBatch) -> Result<Var> {
    let ec = tape.gather_rows(e, &batch.centers)?;
    let oc = tape.gather_rows(o, &batch.contexts)?;
    let prod = tape.mul(ec, oc)?;
    let pos = tape.sum(prod, Some(1))?;
    let lpos = tape.log_sigmoid(pos);
    let mut total = tape.sum(lpos, None)?;
    if !batch.negatives.is_empty() {
        let en = tape.gather_rows(e, &batch.neg_centers)?;
        let on = tape.gather_rows(o, &batch.negatives)?;
        let prod = tape.mul(en, on)?;
        let dot = tape.sum(prod, Some(1))?;
        let neg = tape.scale(dot, -1.0);
        let lneg = tape.log_sigmoid(neg);
        let sneg = tape.sum(lneg, None)?;
        total = tape.add(total, sneg)?;
    }
    Ok(tape.scale(total, -1.0 / batch.centers.len().max(1) as f64))
}

/// Trains SGNS with Adam. Windows never cross sequence boundaries.
pub fn train_sgns(corpus: &[Vec<u32>], vocab_size: usize, cfg: &SgnsConfig) -> Result<EmbeddingMatrix> {
    let total: usize = corpus.iter().map(Vec::len).sum();
    if total < 2 {
        return invalid(format!("train_sgns: corpus has {total} tokens, need at least 2"));
    }
    let mut counts = vec![0f64; vocab_size];
    for &id in corpus.iter().flatten() {
        let slot = counts
            .get_mut(id as usize)
            .ok_or_else(|| Error::Invalid(format!("train_sgns: token id {id} outside vocab of {vocab_size}")))?;
        *slot += 1.0;
    }
    if let Some(c) = counts.get_mut(PAD as usize) {
        *c = 0.0;
    }
    let weights: Vec<f64> = counts.iter().map(|c| c.powf(0.75)).collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::Invalid(format!("train_sgns: {e}")))?;

    let mut init = ChaCha8Rng::seed_from_u64(stream_key(&[cfg.seed, 0x5165]));
    let bound = 0.5 / cfg.dim as f64;
    let mut store = ParamStore::new();
    store.insert("e", uniform(&[vocab_size, cfg.dim], bound, &mut init));
    store.insert("o", uniform(&[vocab_size, cfg.dim], bound, &mut init));
    let names = ["e", "o"];
    let mut adam = AdamState::new(cfg.lr);

    let usable: Vec<&Vec<u32>> = corpus.iter().filter(|s| s.len() >= 2).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_key(&[cfg.seed, 0x5166, epoch as u64]));
        let mut order: Vec<usize> = (0..usable.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let (mut loss_sum, mut pairs) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch.max(1)) {
            let mut batch = PairBatch::default();
            let mut sampler = || dist.sample(&mut rng);
            for &i in chunk {
                batch.push_sequence(usable[i], cfg, &mut sampler);
            }
            let mut tape = Tape::new();
            let e = tape.param(&store, "e")?;
            let o = tape.param(&store, "o")?;
            let loss = sgns_loss(&mut tape, e, o, &batch)?;
            loss_sum += tape.value(loss).data()[0] * batch.centers.len() as f64;
            pairs += batch.centers.len();
            tape.backward(loss, &mut store)?;
            adam.step(&mut store, &names)?;
        }
        epoch_losses.push(if pairs > 0 { loss_sum / pairs as f64 } else { 0.0 });
    }
    let e = store.value("e")?.clone();
    let o = store.value("o")?.clone();
    Ok(EmbeddingMatrix { e, o, epoch_losses })
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Top-`k` tokens by cosine to `token`'s row of `e`, excluding the query and
/// the special tokens. Ties keep ascending id order.
pub fn nearest_neighbors(token: &str, k: usize, vocab: &SubwordVocab, e: &Tensor) -> Result<Vec<(String, f64)>> {
    let q = vocab
        .id(token)
        .ok_or_else(|| Error::Invalid(format!("nearest_neighbors: unknown token `{token}`")))? as usize;
    let query = e.row_slice(q);
    let mut scored: Vec<(usize, f64)> = (2..vocab.len().min(e.rows()))
        .filter(|&i| i != q)
        .map(|i| (i, cosine(query, e.row_slice(i))))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(i, c)| (vocab.token(i as u32).unwrap_or_default().to_string(), c))
        .collect())
}
