//! Reverse-mode differentiation over a linear record of primitive applications.
//!
//! Values are computed eagerly while the record is built. Every node keeps its
//! output so that the backward sweep can read saved activations directly. Nodes
//! that do not depend on any trainable leaf carry no backward rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{dims2, matmul_at_into, matmul_bt_into, matmul_into};
use super::{NumericsError, ParamStore, Tensor};

/// Handle to a node in a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive identifiers accepted by [`Tape::apply`].
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    AddScalar(f64),
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    Sum { axis: Option<usize> },
    Mean { axis: Option<usize> },
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Abs,
    LogSigmoid,
    Softmax { axis: usize },
    LogSoftmax { axis: usize },
    Dropout { p: f64, key: u64, train: bool },
    GatherRows(Vec<usize>),
    ScatterAddRows { index: Vec<usize>, rows: usize },
    SegmentSoftmax { segments: Vec<usize>, count: usize },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::AddScalar(_) => "add_scalar",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Sum { .. } => "sum",
            Primitive::Mean { .. } => "mean",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Relu => "relu",
            Primitive::LeakyRelu(_) => "leaky_relu",
            Primitive::Abs => "abs",
            Primitive::LogSigmoid => "log_sigmoid",
            Primitive::Softmax { .. } => "softmax",
            Primitive::LogSoftmax { .. } => "log_softmax",
            Primitive::Dropout { .. } => "dropout",
            Primitive::GatherRows(_) => "gather_rows",
            Primitive::ScatterAddRows { .. } => "scatter_add_rows",
            Primitive::SegmentSoftmax { .. } => "segment_softmax",
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Sum(Var, Option<usize>),
    Mean(Var, Option<usize>),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Abs(Var),
    LogSigmoid(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Dropout(Var, Vec<f64>),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

/// The computation record. Nodes are appended in evaluation order, so every
/// input precedes its consumer.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false, None)
    }

    /// A free leaf that participates in differentiation but is not bound to a
    /// stored parameter. Its gradient is returned by [`Tape::backward_leaves`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true, None)
    }

    /// Binds a named parameter. Trainable parameters receive gradients on
    /// [`Tape::backward`]; frozen ones behave as constants.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var, NumericsError> {
        let p = store
            .get(name)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))?;
        let requires = p.trainable;
        Ok(self.push(p.value.clone(), Op::Leaf, requires, Some(name.to_string())))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, param: Option<String>) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires { op } else { Op::Leaf };
        self.push(value, op, requires, None)
    }

    /// Dispatches a primitive by identifier.
    pub fn apply(&mut self, prim: &Primitive, inputs: &[Var]) -> Result<Var, NumericsError> {
        let arity = match prim {
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul => 2,
            Primitive::Concat { .. } => inputs.len().max(1),
            _ => 1,
        };
        if inputs.len() != arity {
            return Err(NumericsError::Arity {
                op: prim.name(),
                expected: arity,
                got: inputs.len(),
            });
        }
        let x = inputs[0];
        match prim {
            Primitive::MatMul => self.matmul(x, inputs[1]),
            Primitive::Add => self.add(x, inputs[1]),
            Primitive::Sub => self.sub(x, inputs[1]),
            Primitive::Mul => self.mul(x, inputs[1]),
            Primitive::Scale(s) => Ok(self.scale(x, *s)),
            Primitive::AddScalar(s) => Ok(self.add_scalar(x, *s)),
            Primitive::Concat { axis } => self.concat(inputs, *axis),
            Primitive::Slice { axis, start, len } => self.slice(x, *axis, *start, *len),
            Primitive::Sum { axis } => self.sum(x, *axis),
            Primitive::Mean { axis } => self.mean(x, *axis),
            Primitive::Exp => Ok(self.exp(x)),
            Primitive::Log => self.log(x),
            Primitive::Tanh => Ok(self.tanh(x)),
            Primitive::Sigmoid => Ok(self.sigmoid(x)),
            Primitive::Relu => Ok(self.relu(x)),
            Primitive::LeakyRelu(s) => Ok(self.leaky_relu(x, *s)),
            Primitive::Abs => Ok(self.abs(x)),
            Primitive::LogSigmoid => Ok(self.log_sigmoid(x)),
            Primitive::Softmax { axis } => self.softmax(x, *axis),
            Primitive::LogSoftmax { axis } => self.log_softmax(x, *axis),
            Primitive::Dropout { p, key, train } => self.dropout(x, *p, *key, *train),
            Primitive::GatherRows(idx) => self.gather_rows(x, idx),
            Primitive::ScatterAddRows { index, rows } => self.scatter_add_rows(x, index, *rows),
            Primitive::SegmentSoftmax { segments, count } => {
                self.segment_softmax(x, segments, *count)
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        Ok(self.record(t, Op::MatMul(a, b), &[a, b]))
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        let (m, n) = self.value(a).dims2();
        let (bm, bn) = self.value(b).dims2();
        if (bm == m || bm == 1) && (bn == n || bn == 1) {
            Ok(())
        } else {
            Err(self.shape_err(op, a, b))
        }
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value(a);
        let bv = self.value(b);
        let (m, n) = av.dims2();
        let (bm, bn) = bv.dims2();
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let bi = if bm == 1 { 0 } else { i };
            for j in 0..n {
                let bj = if bn == 1 { 0 } else { j };
                out.push(f(av.data()[i * n + j], bv.data()[bi * bn + bj]));
            }
        }
        Tensor::new(av.shape().to_vec(), out).expect("shape preserved")
    }

    /// Elementwise `a + b`; `b` may broadcast along rows, columns, or both.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.broadcast_check("add", a, b)?;
        let t = self.binary(a, b, |x, y| x + y);
        Ok(self.record(t, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.broadcast_check("sub", a, b)?;
        let t = self.binary(a, b, |x, y| x - y);
        Ok(self.record(t, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.broadcast_check("mul", a, b)?;
        let t = self.binary(a, b, |x, y| x * y);
        Ok(self.record(t, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        self.record(t, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x + s);
        self.record(t, Op::AddScalar(a), &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NumericsError> {
        if parts.is_empty() || axis > 1 {
            return Err(NumericsError::Arity {
                op: "concat",
                expected: 1,
                got: 0,
            });
        }
        let (m0, n0) = self.value(parts[0]).dims2();
        for &p in &parts[1..] {
            let (m, n) = self.value(p).dims2();
            if (axis == 0 && n != n0) || (axis == 1 && m != m0) {
                return Err(self.shape_err("concat", parts[0], p));
            }
        }
        let t = if axis == 0 {
            let mut data = Vec::new();
            let mut rows = 0;
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
                rows += self.value(p).rows();
            }
            Tensor::new(vec![rows, n0], data)?
        } else {
            let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(m0 * total);
            for i in 0..m0 {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row_slice(i));
                }
            }
            Tensor::new(vec![m0, total], data)?
        };
        Ok(self.record(t, Op::Concat(parts.to_vec(), axis), parts))
    }

    /// `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (m, n) = self.value(a).dims2();
        let extent = if axis == 0 { m } else { n };
        if axis > 1 || start + len > extent {
            return Err(NumericsError::Slice {
                shape: self.value(a).shape().to_vec(),
                axis,
                start,
                len,
            });
        }
        let src = self.value(a).data();
        let t = if axis == 0 {
            Tensor::new(vec![len, n], src[start * n..(start + len) * n].to_vec())?
        } else {
            let mut data = Vec::with_capacity(m * len);
            for i in 0..m {
                data.extend_from_slice(&src[i * n + start..i * n + start + len]);
            }
            Tensor::new(vec![m, len], data)?
        };
        Ok(self.record(t, Op::Slice(a, axis, start), &[a]))
    }

    fn reduce(&self, a: Var, axis: Option<usize>, op: &'static str) -> Result<Tensor, NumericsError> {
        let v = self.value(a);
        let (m, n) = v.dims2();
        let d = v.data();
        match axis {
            None => Ok(Tensor::scalar(d.iter().sum())),
            Some(0) => {
                let mut out = vec![0.0; n];
                for i in 0..m {
                    for (o, x) in out.iter_mut().zip(&d[i * n..(i + 1) * n]) {
                        *o += x;
                    }
                }
                Tensor::new(vec![1, n], out)
            }
            Some(1) => {
                let out = (0..m).map(|i| d[i * n..(i + 1) * n].iter().sum()).collect();
                Tensor::new(vec![m, 1], out)
            }
            Some(axis) => Err(NumericsError::Axis { op, axis }),
        }
    }

    /// Sum over all elements (`None`, result `1x1`), rows (`0`) or columns (`1`).
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var, NumericsError> {
        let t = self.reduce(a, axis, "sum")?;
        Ok(self.record(t, Op::Sum(a, axis), &[a]))
    }

    pub fn mean(&mut self, a: Var, axis: Option<usize>) -> Result<Var, NumericsError> {
        let (m, n) = self.value(a).dims2();
        let count = match axis {
            None => m * n,
            Some(0) => m,
            _ => n,
        };
        let t = self.reduce(a, axis, "mean")?;
        let t = t.map(|x| x / count.max(1) as f64);
        Ok(self.record(t, Op::Mean(a, axis), &[a]))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        self.record(t, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumericsError> {
        if let Some(bad) = self.value(a).data().iter().find(|x| !x.is_finite() || **x <= 0.0) {
            return Err(NumericsError::Domain {
                op: "log",
                value: *bad,
            });
        }
        let t = self.value(a).map(f64::ln);
        Ok(self.record(t, Op::Log(a), &[a]))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.record(t, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.record(t, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x.max(0.0));
        self.record(t, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let t = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.record(t, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::abs);
        self.record(t, Op::Abs(a), &[a])
    }

    /// `log σ(x)`, computed without overflow for large `|x|`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(log_sigmoid);
        self.record(t, Op::LogSigmoid(a), &[a])
    }

    fn check_finite(&self, a: Var, op: &'static str) -> Result<(), NumericsError> {
        match self.value(a).data().iter().find(|x| !x.is_finite()) {
            Some(bad) => Err(NumericsError::Domain { op, value: *bad }),
            None => Ok(()),
        }
    }

    fn softmax_values(&self, a: Var, axis: usize, log: bool) -> Result<Tensor, NumericsError> {
        let v = self.value(a);
        let (m, n) = v.dims2();
        let mut out = v.data().to_vec();
        let lanes: Vec<Vec<usize>> = match axis {
            1 => (0..m).map(|i| (0..n).map(|j| i * n + j).collect()).collect(),
            0 => (0..n).map(|j| (0..m).map(|i| i * n + j).collect()).collect(),
            _ => {
                return Err(NumericsError::Axis {
                    op: "softmax",
                    axis,
                })
            }
        };
        for lane in lanes {
            let max = lane.iter().map(|&i| out[i]).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = lane.iter().map(|&i| (out[i] - max).exp()).sum();
            let lz = z.ln();
            for &i in &lane {
                out[i] = if log {
                    out[i] - max - lz
                } else {
                    (out[i] - max).exp() / z
                };
            }
        }
        Tensor::new(v.shape().to_vec(), out)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        self.check_finite(a, "softmax")?;
        let t = self.softmax_values(a, axis, false)?;
        Ok(self.record(t, Op::Softmax(a, axis), &[a]))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        self.check_finite(a, "log_softmax")?;
        let t = self.softmax_values(a, axis, true)?;
        Ok(self.record(t, Op::LogSoftmax(a, axis), &[a]))
    }

    /// Inverted dropout. The mask stream is fully determined by `key`; in
    /// evaluation mode (or with `p == 0`) this is the identity.
    pub fn dropout(&mut self, a: Var, p: f64, key: u64, train: bool) -> Result<Var, NumericsError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NumericsError::Domain {
                op: "dropout",
                value: p,
            });
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(a).numel())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let v = self.value(a);
        let data = v.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let t = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.record(t, Op::Dropout(a, mask), &[a]))
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, NumericsError> {
        let v = self.value(a);
        let (m, n) = v.dims2();
        let mut data = Vec::with_capacity(index.len() * n);
        for &r in index {
            if r >= m {
                return Err(NumericsError::Index {
                    op: "gather_rows",
                    index: r,
                    bound: m,
                });
            }
            data.extend_from_slice(v.row_slice(r));
        }
        let t = Tensor::new(vec![index.len(), n], data)?;
        Ok(self.record(t, Op::GatherRows(a, index.to_vec()), &[a]))
    }

    /// Adds row `i` of `a` into output row `index[i]`; output has `rows` rows.
    /// Contributions are accumulated in ascending `i`.
    pub fn scatter_add_rows(&mut self, a: Var, index: &[usize], rows: usize) -> Result<Var, NumericsError> {
        let v = self.value(a);
        let (m, n) = v.dims2();
        if index.len() != m {
            return Err(NumericsError::Shape {
                op: "scatter_add_rows",
                lhs: v.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        let mut data = vec![0.0; rows * n];
        for (i, &r) in index.iter().enumerate() {
            if r >= rows {
                return Err(NumericsError::Index {
                    op: "scatter_add_rows",
                    index: r,
                    bound: rows,
                });
            }
            for (o, x) in data[r * n..(r + 1) * n].iter_mut().zip(v.row_slice(i)) {
                *o += x;
            }
        }
        let t = Tensor::new(vec![rows, n], data)?;
        Ok(self.record(t, Op::ScatterAddRows(a, index.to_vec()), &[a]))
    }

    /// Softmax of a column of scores within groups: entries sharing a segment id
    /// are normalized together.
    pub fn segment_softmax(&mut self, a: Var, segments: &[usize], count: usize) -> Result<Var, NumericsError> {
        self.check_finite(a, "segment_softmax")?;
        let v = self.value(a);
        let (m, n) = v.dims2();
        if n != 1 || segments.len() != m {
            return Err(NumericsError::Shape {
                op: "segment_softmax",
                lhs: v.shape().to_vec(),
                rhs: vec![segments.len()],
            });
        }
        if let Some(&bad) = segments.iter().find(|&&s| s >= count) {
            return Err(NumericsError::Index {
                op: "segment_softmax",
                index: bad,
                bound: count,
            });
        }
        let x = v.data();
        let mut max = vec![f64::NEG_INFINITY; count];
        for (&s, &xi) in segments.iter().zip(x) {
            max[s] = max[s].max(xi);
        }
        let e: Vec<f64> = segments.iter().zip(x).map(|(&s, &xi)| (xi - max[s]).exp()).collect();
        let mut z = vec![0.0; count];
        for (&s, &ei) in segments.iter().zip(&e) {
            z[s] += ei;
        }
        let out = segments.iter().zip(&e).map(|(&s, &ei)| ei / z[s]).collect();
        let t = Tensor::new(vec![m, 1], out)?;
        Ok(self.record(t, Op::SegmentSoftmax(a, segments.to_vec(), count), &[a]))
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> NumericsError {
        NumericsError::Shape {
            op,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        }
    }

    /// Back-propagates from a scalar `loss`, accumulating into the gradients of
    /// every trainable parameter bound on this record. Bound parameters that do
    /// not influence the loss receive an explicit zero gradient.
    pub fn backward(self, loss: Var, store: &mut ParamStore) -> Result<(), NumericsError> {
        let (grads, nodes) = self.sweep(loss)?;
        for (node, grad) in nodes.into_iter().zip(grads) {
            if let (Some(name), true) = (node.param, node.requires_grad) {
                let grad = grad.unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                store.accumulate_grad(&name, &grad)?;
            }
        }
        Ok(())
    }

    /// Like [`Tape::backward`] but returns the gradients of the requested
    /// leaves instead of writing to a store.
    pub fn backward_leaves(self, loss: Var, leaves: &[Var]) -> Result<Vec<Tensor>, NumericsError> {
        let shapes: Vec<Vec<usize>> = leaves.iter().map(|&v| self.value(v).shape().to_vec()).collect();
        let (mut grads, _) = self.sweep(loss)?;
        Ok(leaves
            .iter()
            .zip(shapes)
            .map(|(v, s)| grads[v.0].take().unwrap_or_else(|| Tensor::zeros(&s)))
            .collect())
    }

    fn sweep(self, loss: Var) -> Result<(Vec<Option<Tensor>>, Vec<Node>), NumericsError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NumericsError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok((grads, self.nodes))
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reduces a gradient of the broadcast output back to the shape of `b`.
    fn unbroadcast(&self, b: Var, g: &Tensor) -> Tensor {
        let bv = self.value(b);
        let (bm, bn) = bv.dims2();
        let (m, n) = g.dims2();
        if bm == m && bn == n {
            return Tensor::new(bv.shape().to_vec(), g.data().to_vec()).expect("same size");
        }
        let mut out = vec![0.0; bm * bn];
        for i in 0..m {
            let bi = if bm == 1 { 0 } else { i };
            for j in 0..n {
                let bj = if bn == 1 { 0 } else { j };
                out[bi * bn + bj] += g.data()[i * n + j];
            }
        }
        Tensor::new(bv.shape().to_vec(), out).expect("same size")
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[idx].value;
        let like = |v: Var, data: Vec<f64>| {
            Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient shape")
        };
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let n = self.value(*b).cols();
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * k];
                    matmul_bt_into(g.data(), self.value(*b).data(), &mut da, m, k, n);
                    self.accumulate(grads, *a, like(*a, da));
                }
                if self.requires_grad(*b) {
                    let mut db = vec![0.0; k * n];
                    matmul_at_into(self.value(*a).data(), g.data(), &mut db, m, k, n);
                    self.accumulate(grads, *b, like(*b, db));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, like(*a, g.data().to_vec()));
                if self.requires_grad(*b) {
                    let gb = self.unbroadcast(*b, g);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, like(*a, g.data().to_vec()));
                if self.requires_grad(*b) {
                    let gb = self.unbroadcast(*b, &g.map(|x| -x));
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, n) = av.dims2();
                let (bm, bn) = bv.dims2();
                let bidx = |i: usize, j: usize| {
                    (if bm == 1 { 0 } else { i }) * bn + if bn == 1 { 0 } else { j }
                };
                if self.requires_grad(*a) {
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            da[i * n + j] = g.data()[i * n + j] * bv.data()[bidx(i, j)];
                        }
                    }
                    self.accumulate(grads, *a, like(*a, da));
                }
                if self.requires_grad(*b) {
                    let mut prod = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            prod[i * n + j] = g.data()[i * n + j] * av.data()[i * n + j];
                        }
                    }
                    let full = Tensor::new(vec![m, n], prod).expect("shape");
                    let gb = self.unbroadcast(*b, &full);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, like(*a, g.data().iter().map(|x| x * s).collect())),
            Op::AddScalar(a) => self.accumulate(grads, *a, like(*a, g.data().to_vec())),
            Op::Concat(parts, axis) => {
                let (m, total) = g.dims2();
                let mut offset = 0;
                for &p in parts {
                    let (pm, pn) = self.value(p).dims2();
                    let data = if *axis == 0 {
                        g.data()[offset * total..(offset + pm) * total].to_vec()
                    } else {
                        let mut d = Vec::with_capacity(m * pn);
                        for i in 0..m {
                            d.extend_from_slice(&g.data()[i * total + offset..i * total + offset + pn]);
                        }
                        d
                    };
                    offset += if *axis == 0 { pm } else { pn };
                    self.accumulate(grads, p, like(p, data));
                }
            }
            Op::Slice(a, axis, start) => {
                let (m, n) = self.value(*a).dims2();
                let mut da = vec![0.0; m * n];
                let (gm, gn) = g.dims2();
                for i in 0..gm {
                    for j in 0..gn {
                        let (si, sj) = if *axis == 0 { (i + start, j) } else { (i, j + start) };
                        da[si * n + sj] = g.data()[i * gn + j];
                    }
                }
                self.accumulate(grads, *a, like(*a, da));
            }
            Op::Sum(a, axis) | Op::Mean(a, axis) => {
                let (m, n) = self.value(*a).dims2();
                let denom = if matches!(self.nodes[idx].op, Op::Mean(..)) {
                    match axis {
                        None => (m * n) as f64,
                        Some(0) => m as f64,
                        _ => n as f64,
                    }
                } else {
                    1.0
                };
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        let gi = match axis {
                            None => 0,
                            Some(0) => j,
                            _ => i,
                        };
                        da[i * n + j] = g.data()[gi] / denom;
                    }
                }
                self.accumulate(grads, *a, like(*a, da));
            }
            Op::Exp(a) => {
                let d = zip_map(g, out, |gi, yi| gi * yi);
                self.accumulate(grads, *a, like(*a, d));
            }
            Op::Log(a) => {
                let d = zip_map(g, self.value(*a), |gi, xi| gi / xi);
                self.accumulate(grads, *a, like(*a, d));
            }
            Op::Tanh(a) => {
                let d = zip_map(g, out, |gi, yi| gi * (1.0 - yi * yi));
                self.accumulate(grads, *a, like(*a, d));
            }
            Op::Sigmoid(a) => {
                let d = zip_map(g, out, |gi, yi| gi * yi * (1.0 - yi));
                self.accumulate(grads, *a, like(*a, d));
            }
            Op::Relu(a) => {
                let d = zip_map(g, self.value(*a), |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                self.accumulate(grads, *a, like(*a, d));
            }
            Op::LeakyRelu(a, s) => {
                let d = zip_map(g, self.value(*a), |gi, xi| if xi > 0.0 { gi } else { s * gi });
                self.accumulate(grads, *a, like(*a, d));
            }
            Op::Abs(a) => {
                let d = zip_map(g, self.value(*a), |gi, xi| gi * xi.signum() * (xi != 0.0) as u8 as f64);
                self.accumulate(grads, *a, like(*a, d));
            }
            Op::LogSigmoid(a) => {
                let d = zip_map(g, self.value(*a), |gi, xi| gi * sigmoid(-xi));
                self.accumulate(grads, *a, like(*a, d));
            }
            Op::Softmax(a, axis) | Op::LogSoftmax(a, axis) => {
                let is_log = matches!(self.nodes[idx].op, Op::LogSoftmax(..));
                let (m, n) = out.dims2();
                let mut da = vec![0.0; m * n];
                let lanes: Vec<Vec<usize>> = if *axis == 1 {
                    (0..m).map(|i| (0..n).map(|j| i * n + j).collect()).collect()
                } else {
                    (0..n).map(|j| (0..m).map(|i| i * n + j).collect()).collect()
                };
                let y = out.data();
                let gd = g.data();
                for lane in lanes {
                    if is_log {
                        let gsum: f64 = lane.iter().map(|&i| gd[i]).sum();
                        for &i in &lane {
                            da[i] = gd[i] - y[i].exp() * gsum;
                        }
                    } else {
                        let dot: f64 = lane.iter().map(|&i| gd[i] * y[i]).sum();
                        for &i in &lane {
                            da[i] = y[i] * (gd[i] - dot);
                        }
                    }
                }
                self.accumulate(grads, *a, like(*a, da));
            }
            Op::Dropout(a, mask) => {
                let d = g.data().iter().zip(mask).map(|(gi, mi)| gi * mi).collect();
                self.accumulate(grads, *a, like(*a, d));
            }
            Op::GatherRows(a, index) => {
                let (m, n) = self.value(*a).dims2();
                let mut da = vec![0.0; m * n];
                for (i, &r) in index.iter().enumerate() {
                    for (o, x) in da[r * n..(r + 1) * n].iter_mut().zip(&g.data()[i * n..(i + 1) * n]) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *a, like(*a, da));
            }
            Op::ScatterAddRows(a, index) => {
                let n = g.cols();
                let mut da = Vec::with_capacity(index.len() * n);
                for &r in index {
                    da.extend_from_slice(&g.data()[r * n..(r + 1) * n]);
                }
                self.accumulate(grads, *a, like(*a, da));
            }
            Op::SegmentSoftmax(a, segments, count) => {
                let y = out.data();
                let gd = g.data();
                let mut dot = vec![0.0; *count];
                for ((&s, yi), gi) in segments.iter().zip(y).zip(gd) {
                    dot[s] += yi * gi;
                }
                let da = segments
                    .iter()
                    .zip(y)
                    .zip(gd)
                    .map(|((&s, yi), gi)| yi * (gi - dot[s]))
                    .collect();
                self.accumulate(grads, *a, like(*a, da));
            }
        }
    }
}

fn zip_map(g: &Tensor, x: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.data().iter().zip(x.data()).map(|(&a, &b)| f(a, b)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Checks the rank-2 view of two shapes for a broadcastable elementwise op.
pub fn broadcastable(a: &[usize], b: &[usize]) -> bool {
    let (m, n) = dims2(a);
    let (bm, bn) = dims2(b);
    (bm == m || bm == 1) && (bn == n || bn == 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(t: &mut Tape, shape: &[usize], data: &[f64]) -> Var {
        t.leaf(Tensor::new(shape.to_vec(), data.to_vec()).unwrap())
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::scalar(0.0));
        let y = t.sigmoid(x);
        assert_eq!(t.value(y).data(), &[0.5]);
    }

    #[test]
    fn matmul_shape_rule_and_error() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 3]));
        let b = t.constant(Tensor::zeros(&[3, 1]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).shape(), &[2, 1]);
        let err = t.matmul(a, a).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(vec![1.0, 1.0, 1.0]));
        let y = t.softmax(x, 1).unwrap();
        for v in t.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn log_and_softmax_reject_non_finite() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(vec![1.0, f64::NAN]));
        assert!(matches!(t.log(x), Err(NumericsError::Domain { op: "log", .. })));
        assert!(matches!(t.softmax(x, 1), Err(NumericsError::Domain { .. })));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let w = leaf(&mut t, &[3], &[0.3, -1.0, 2.0]);
        let l = t.sum(w, None).unwrap();
        let g = t.backward_leaves(l, &[w]).unwrap();
        assert_eq!(g[0].data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_is_twice_input() {
        let mut t = Tape::new();
        let w = leaf(&mut t, &[2], &[2.0, -1.0]);
        let sq = t.mul(w, w).unwrap();
        let l = t.sum(sq, None).unwrap();
        let g = t.backward_leaves(l, &[w]).unwrap();
        assert_eq!(g[0].data(), &[4.0, -2.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let w = leaf(&mut t, &[2], &[1.0, 2.0]);
        assert!(matches!(
            t.backward_leaves(w, &[w]),
            Err(NumericsError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn constants_are_not_recorded_for_backward() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::row(vec![1.0]));
        let b = t.exp(a);
        assert!(!t.requires_grad(b));
    }

    #[test]
    fn dropout_is_keyed_and_identity_in_eval() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::ones(&[4, 8]));
        let y1 = t.dropout(x, 0.2, 7, true).unwrap();
        let y2 = t.dropout(x, 0.2, 7, true).unwrap();
        assert_eq!(t.value(y1), t.value(y2));
        assert!(t.value(y1).data().iter().any(|&v| v == 0.0));
        let e = t.dropout(x, 0.2, 7, false).unwrap();
        assert_eq!(e, x);
    }

    #[test]
    fn segment_softmax_normalizes_each_segment() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![5, 1], vec![0.3, -2.0, 5.0, 1.0, 1.0]).unwrap());
        let y = t.segment_softmax(x, &[0, 1, 0, 1, 2], 3).unwrap();
        let v = t.value(y).data();
        assert!((v[0] + v[2] - 1.0).abs() < 1e-15);
        assert!((v[1] + v[3] - 1.0).abs() < 1e-15);
        assert_eq!(v[4], 1.0);
    }

    #[test]
    fn scatter_accumulates_in_order() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap());
        let y = t.scatter_add_rows(x, &[1, 0, 1], 2).unwrap();
        assert_eq!(t.value(y).data(), &[2.0, 4.0]);
    }
}
