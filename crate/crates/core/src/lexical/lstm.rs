//! Bidirectional LSTM over subword embeddings, batched across sequences.

use rand_chacha::ChaCha8Rng;

use super::bpe::PAD;
use crate::numerics::{uniform, ParamStore, Tape, Tensor, Var};
use crate::{invalid, Result};

pub const FORWARD: &str = "lstm.fwd";
pub const BACKWARD: &str = "lstm.bwd";

/// Registers `{dir}.wx [d,4H]`, `{dir}.wh [H,4H]` and `{dir}.b [1,4H]` for both
/// directions. Gate column blocks are ordered input, forget, cell, output.
pub fn init_bilstm(store: &mut ParamStore, input: usize, hidden: usize, rng: &mut ChaCha8Rng) {
    let bound = 1.0 / (hidden as f64).sqrt();
    for dir in [FORWARD, BACKWARD] {
        store.insert(format!("{dir}.wx"), uniform(&[input, 4 * hidden], bound, rng));
        store.insert(format!("{dir}.wh"), uniform(&[hidden, 4 * hidden], bound, rng));
        let mut b = Tensor::zeros(&[1, 4 * hidden]);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        store.insert(format!("{dir}.b"), b);
    }
}

pub fn hidden_size(store: &ParamStore) -> Result<usize> {
    Ok(store.value(&format!("{FORWARD}.wh"))?.rows())
}

struct Cell {
    wx: Var,
    wh: Var,
    b: Var,
    hidden: usize,
}

impl Cell {
    fn bind(tape: &mut Tape, store: &ParamStore, dir: &str) -> Result<Self> {
        let hidden = store.value(&format!("{dir}.wh"))?.rows();
        Ok(Cell {
            wx: tape.param(store, &format!("{dir}.wx"))?,
            wh: tape.param(store, &format!("{dir}.wh"))?,
            b: tape.param(store, &format!("{dir}.b"))?,
            hidden,
        })
    }

    /// Final hidden states `[B,H]`. Rows whose sequence has ended keep their
    /// state through a 0/1 mask, which is exact in floating point.
    fn run(&self, tape: &mut Tape, embed: Var, seqs: &[Vec<u32>]) -> Result<Var> {
        let b = seqs.len();
        let hdim = self.hidden;
        let max_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut h = tape.constant(Tensor::zeros(&[b, hdim]));
        let mut c = tape.constant(Tensor::zeros(&[b, hdim]));
        for t in 0..max_len {
            let ids: Vec<usize> = seqs.iter().map(|s| s.get(t).copied().unwrap_or(PAD) as usize).collect();
            let x = tape.gather_rows(embed, &ids)?;
            let xw = tape.matmul(x, self.wx)?;
            let gates = if t == 0 {
                xw
            } else {
                let hw = tape.matmul(h, self.wh)?;
                tape.add(xw, hw)?
            };
            let gates = tape.add(gates, self.b)?;
            let gi = tape.slice(gates, 1, 0, hdim)?;
            let gf = tape.slice(gates, 1, hdim, hdim)?;
            let gg = tape.slice(gates, 1, 2 * hdim, hdim)?;
            let go = tape.slice(gates, 1, 3 * hdim, hdim)?;
            let i = tape.sigmoid(gi);
            let f = tape.sigmoid(gf);
            let g = tape.tanh(gg);
            let o = tape.sigmoid(go);
            let ig = tape.mul(i, g)?;
            let c_new = if t == 0 {
                ig
            } else {
                let fc = tape.mul(f, c)?;
                tape.add(fc, ig)?
            };
            let tc = tape.tanh(c_new);
            let h_new = tape.mul(o, tc)?;
            if seqs.iter().all(|s| s.len() > t) {
                h = h_new;
                c = c_new;
            } else {
                let mask: Vec<f64> = seqs.iter().map(|s| if s.len() > t { 1.0 } else { 0.0 }).collect();
                let keep: Vec<f64> = mask.iter().map(|m| 1.0 - m).collect();
                let m = tape.constant(Tensor::new(vec![b, 1], mask)?);
                let k = tape.constant(Tensor::new(vec![b, 1], keep)?);
                h = blend(tape, m, k, h_new, h)?;
                c = blend(tape, m, k, c_new, c)?;
            }
        }
        Ok(h)
    }
}

fn blend(tape: &mut Tape, m: Var, k: Var, new: Var, old: Var) -> Result<Var> {
    let a = tape.mul(new, m)?;
    let b = tape.mul(old, k)?;
    Ok(tape.add(a, b)?)
}

/// Encodes each id sequence to `[→h_T ; ←h_1]`, giving a `[B, 2H]` matrix.
/// `embed` is the `|C| x d` subword matrix.
pub fn encode_sequences(tape: &mut Tape, store: &ParamStore, embed: Var, seqs: &[Vec<u32>]) -> Result<Var> {
    if seqs.is_empty() {
        return invalid("encode_sequences: no sequences");
    }
    if seqs.iter().any(Vec::is_empty) {
        return invalid("encode_sequences: empty subword sequence");
    }
    let fwd = Cell::bind(tape, store, FORWARD)?.run(tape, embed, seqs)?;
    let reversed: Vec<Vec<u32>> = seqs.iter().map(|s| s.iter().rev().copied().collect()).collect();
    let bwd = Cell::bind(tape, store, BACKWARD)?.run(tape, embed, &reversed)?;
    Ok(tape.concat(&[fwd, bwd], 1)?)
}

/// Single-sequence convenience returning the `2H` vector.
pub fn encode_instruction(store: &ParamStore, ids: &[u32], embed: &Tensor) -> Result<Tensor> {
    if ids.is_empty() {
        return invalid("encode_instruction: empty subword sequence");
    }
    let mut tape = Tape::new();
    let e = tape.constant(embed.clone());
    let out = encode_sequences(&mut tape, store, e, &[ids.to_vec()])?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::check_param_gradients;
    use rand::SeedableRng;

    fn setup(d: usize, h: usize, vocab: usize, seed: u64) -> (ParamStore, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        init_bilstm(&mut store, d, h, &mut rng);
        let e = uniform(&[vocab, d], 1.0, &mut rng);
        (store, e)
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let (mut store, e) = setup(4, 3, 6, 0);
        let names: Vec<String> = store.names().map(String::from).collect();
        for n in names {
            let shape = store.value(&n).unwrap().shape().to_vec();
            store.get_mut(&n).unwrap().value = Tensor::zeros(&shape);
        }
        let out = encode_instruction(&store, &[2, 3, 4], &e).unwrap();
        assert_eq!(out.shape(), &[1, 6]);
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shared_cells_symmetric_on_single_token() {
        let (mut store, e) = setup(4, 3, 6, 1);
        for p in ["wx", "wh", "b"] {
            let v = store.value(&format!("{FORWARD}.{p}")).unwrap().clone();
            store.get_mut(&format!("{BACKWARD}.{p}")).unwrap().value = v;
        }
        let out = encode_instruction(&store, &[3], &e).unwrap();
        assert_eq!(&out.data()[..3], &out.data()[3..]);
    }

    #[test]
    fn batched_matches_unbatched() {
        let (store, e) = setup(5, 4, 8, 2);
        let seqs = vec![vec![2, 3, 4, 5], vec![6], vec![7, 2]];
        let mut tape = Tape::new();
        let ev = tape.constant(e.clone());
        let all = encode_sequences(&mut tape, &store, ev, &seqs).unwrap();
        for (i, s) in seqs.iter().enumerate() {
            let one = encode_instruction(&store, s, &e).unwrap();
            assert_eq!(tape.value(all).row_slice(i), one.data());
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let (store, e) = setup(4, 3, 6, 0);
        assert!(encode_instruction(&store, &[], &e).is_err());
    }

    #[test]
    fn long_input_stays_finite() {
        let (store, e) = setup(8, 6, 10, 4);
        let ids: Vec<u32> = (0..512).map(|i| 2 + (i % 8)).collect();
        assert!(encode_instruction(&store, &ids, &e).unwrap().is_finite());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mut store, e) = setup(4, 3, 6, 5);
        store.insert("embed", e);
        let names: Vec<String> = store.names().map(String::from).collect();
        let seqs = vec![vec![2u32, 3, 4], vec![5, 2]];
        let checks = check_param_gradients(&mut store, &names, 64, 0, |s, tape| {
            let ev = tape.param(s, "embed")?;
            let out = encode_sequences(tape, s, ev, &seqs)?;
            let sq = tape.mul(out, out)?;
            Ok(tape.sum(sq, None)?)
        })
        .unwrap();
        for c in checks {
            assert!(c.rel_error < 1e-4, "{} {}", c.param, c.rel_error);
        }
    }
}
