//! Dense tensors, a reverse-mode computation record, Adam, and a
//! central-difference gradient oracle.
//!
//! All arithmetic is `f64` and single-threaded; reductions run in ascending
//! index order so identical inputs produce bit-identical outputs.

mod tape;
mod tensor;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use tape::{broadcastable, log_sigmoid, sigmoid, Primitive, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("tensor of shape {shape:?} cannot hold {len} values")]
    Construct { shape: Vec<usize>, len: usize },
    #[error("{op}: numeric-domain error on input value {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("{op}: unsupported axis {axis}")]
    Axis { op: &'static str, axis: usize },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("slice of {shape:?} along axis {axis} at {start}+{len} is out of bounds")]
    Slice {
        shape: Vec<usize>,
        axis: usize,
        start: usize,
        len: usize,
    },
    #[error("{op}: index {index} out of bounds for {bound} rows")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}

/// A named model tensor together with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    /// `None` until a backward pass touches the parameter.
    pub grad: Option<Tensor>,
    pub trainable: bool,
}

/// Every model parameter, keyed by name. Iteration order is the name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(
            name.into(),
            Param {
                value,
                grad: None,
                trainable: true,
            },
        );
    }

    pub fn insert_frozen(&mut self, name: impl Into<String>, value: Tensor) {
        self.params.insert(
            name.into(),
            Param {
                value,
                grad: None,
                trainable: false,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor, NumericsError> {
        self.get(name)
            .map(|p| &p.value)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Param> {
        self.params.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<(), NumericsError> {
        self.params
            .get_mut(name)
            .map(|p| p.trainable = trainable)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor) -> Result<(), NumericsError> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))?;
        match &mut p.grad {
            Some(g) => g.add_assign(grad),
            slot @ None => *slot = Some(grad.clone()),
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// Trainable parameter names whose name starts with any of `prefixes`.
    pub fn trainable_with_prefix(&self, prefixes: &[&str]) -> Vec<String> {
        self.params
            .iter()
            .filter(|(k, p)| p.trainable && prefixes.iter().any(|pre| k.starts_with(pre)))
            .map(|(k, _)| k.clone())
            .collect()
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.params {
            h.update(name.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Rounds every value through `f32`.
    pub fn round_to_f32(&mut self) {
        for p in self.params.values_mut() {
            p.value = p.value.round_to_f32();
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new(1e-3)
    }
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    /// Updates the named parameters from their gradients and clears those
    /// gradients.
    pub fn step<S: AsRef<str>>(&mut self, store: &mut ParamStore, names: &[S]) -> Result<(), NumericsError> {
        for name in names {
            let name = name.as_ref();
            let p = store
                .get(name)
                .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))?;
            if p.grad.is_none() {
                return Err(NumericsError::MissingGrad(name.to_string()));
            }
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for name in names {
            let name = name.as_ref();
            let p = store.get_mut(name).expect("checked above");
            let grad = p.grad.take().expect("checked above");
            let shape = p.value.shape().to_vec();
            let m = self.first.entry(name.to_string()).or_insert_with(|| Tensor::zeros(&shape));
            let v = self.second.entry(name.to_string()).or_insert_with(|| Tensor::zeros(&shape));
            let (b1, b2) = (self.beta1, self.beta2);
            for (((w, g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Central-difference estimate of `df/dθ` at `params`, one coordinate at a time.
pub fn finite_difference_gradient(mut f: impl FnMut(&Tensor) -> f64, params: &Tensor) -> Tensor {
    finite_difference_at(&mut f, params, &(0..params.numel()).collect::<Vec<_>>())
}

pub const FD_STEP: f64 = 1e-5;

/// Central differences restricted to the listed coordinates; other entries are
/// left at zero.
pub fn finite_difference_at(f: &mut impl FnMut(&Tensor) -> f64, params: &Tensor, coords: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(params.shape());
    let mut probe = params.clone();
    for &i in coords {
        let base = probe.data()[i];
        probe.data_mut()[i] = base + FD_STEP;
        let up = f(&probe);
        probe.data_mut()[i] = base - FD_STEP;
        let down = f(&probe);
        probe.data_mut()[i] = base;
        out.data_mut()[i] = (up - down) / (2.0 * FD_STEP);
    }
    out
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-10)
}

/// Result of comparing analytic and numeric gradients for one parameter.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub param: String,
    pub rel_error: f64,
    pub coords: usize,
}

/// Compares the tape gradient of `loss_fn` with central differences on every
/// named parameter. At most `max_coords` coordinates per tensor are probed,
/// chosen by a seeded shuffle.
pub fn check_param_gradients(
    store: &mut ParamStore,
    names: &[String],
    max_coords: usize,
    seed: u64,
    mut loss_fn: impl FnMut(&ParamStore, &mut Tape) -> Result<Var, crate::Error>,
) -> Result<Vec<GradCheck>, crate::Error> {
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = loss_fn(store, &mut tape)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Tensor> = names
        .iter()
        .map(|n| {
            let p = store.get(n).ok_or_else(|| NumericsError::UnknownParam(n.clone()))?;
            Ok(p.grad.clone().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
        })
        .collect::<Result<_, NumericsError>>()?;
    store.zero_grads();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, grad) in names.iter().zip(analytic) {
        let original = store.value(name)?.clone();
        let n = original.numel();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > max_coords {
            for i in 0..max_coords {
                let j = rng.random_range(i..n);
                coords.swap(i, j);
            }
            coords.truncate(max_coords);
        }
        let mut failure = None;
        let mut eval = |t: &Tensor| -> f64 {
            store.get_mut(name).expect("present").value = t.clone();
            let mut tape = Tape::new();
            match loss_fn(store, &mut tape) {
                Ok(l) => tape.value(l).data()[0],
                Err(e) => {
                    failure = Some(e);
                    f64::NAN
                }
            }
        };
        let numeric = finite_difference_at(&mut eval, &original, &coords);
        store.get_mut(name).expect("present").value = original;
        if let Some(e) = failure {
            return Err(e);
        }
        let a: Vec<f64> = coords.iter().map(|&i| grad.data()[i]).collect();
        let b: Vec<f64> = coords.iter().map(|&i| numeric.data()[i]).collect();
        out.push(GradCheck {
            param: name.clone(),
            rel_error: relative_error(&a, &b),
            coords: coords.len(),
        });
    }
    Ok(out)
}

/// Mixes a global seed with stream coordinates into one 64-bit key
/// (splitmix64 finalizer over each component).
pub fn stream_key(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Uniform `U(-bound, bound)` initialization from a seeded stream.
pub fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape product")
}

/// Glorot-style uniform initialization for a `fan_in x fan_out` matrix.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(&[fan_in, fan_out], bound, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_of_square_and_cube() {
        let g = finite_difference_gradient(|t| t.data()[0] * t.data()[0], &Tensor::scalar(3.0));
        assert!((g.data()[0] - 6.0).abs() < 1e-6);
        let g = finite_difference_gradient(|t| t.data()[0].powi(3), &Tensor::scalar(1.0));
        assert!((g.data()[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::row(vec![1.0, -2.0]));
        store.accumulate_grad("w", &Tensor::zeros(&[1, 2])).unwrap();
        let mut adam = AdamState::default();
        adam.step(&mut store, &["w"]).unwrap();
        assert_eq!(store.value("w").unwrap().data(), &[1.0, -2.0]);
        assert!(store.get("w").unwrap().grad.is_none());
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::row(vec![1.0, 1.0]));
        store.accumulate_grad("w", &Tensor::row(vec![0.5, -3.0])).unwrap();
        let mut adam = AdamState::default();
        adam.step(&mut store, &["w"]).unwrap();
        let w = store.value("w").unwrap().data();
        assert!((w[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((w[1] - (1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn adam_missing_grad_names_param() {
        let mut store = ParamStore::new();
        store.insert("encoder.w", Tensor::scalar(1.0));
        let err = AdamState::default().step(&mut store, &["encoder.w"]).unwrap_err();
        assert_eq!(err, NumericsError::MissingGrad("encoder.w".into()));
        assert!(err.to_string().contains("encoder.w"));
    }

    #[test]
    fn adam_descends_on_square() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0));
        let mut adam = AdamState::default();
        let mut prev = f64::INFINITY;
        for _ in 0..100 {
            let mut tape = Tape::new();
            let w = tape.param(&store, "w").unwrap();
            let sq = tape.mul(w, w).unwrap();
            let loss = tape.sum(sq, None).unwrap();
            let f = tape.value(loss).data()[0];
            assert!(f < prev);
            prev = f;
            tape.backward(loss, &mut store).unwrap();
            adam.step(&mut store, &["w"]).unwrap();
        }
        assert!(store.value("w").unwrap().data()[0].abs() < 0.95);
    }

    #[test]
    fn frozen_params_get_no_grad() {
        let mut store = ParamStore::new();
        store.insert_frozen("e", Tensor::scalar(2.0));
        store.insert("w", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let e = tape.param(&store, "e").unwrap();
        let w = tape.param(&store, "w").unwrap();
        let p = tape.mul(e, w).unwrap();
        tape.backward(p, &mut store).unwrap();
        assert!(store.get("e").unwrap().grad.is_none());
        assert_eq!(store.get("w").unwrap().grad.as_ref().unwrap().data(), &[2.0]);
    }

    #[test]
    fn fingerprint_tracks_bits() {
        let mut a = ParamStore::new();
        a.insert("w", Tensor::scalar(0.1));
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.get_mut("w").unwrap().value.data_mut()[0] = 0.1 + 1e-17_f64.max(f64::EPSILON);
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn stream_keys_differ_per_component() {
        assert_ne!(stream_key(&[0, 1, 2]), stream_key(&[0, 2, 1]));
        assert_eq!(stream_key(&[5, 5]), stream_key(&[5, 5]));
    }
}
