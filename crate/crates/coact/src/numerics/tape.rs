//! Operation tape for reverse-mode gradient computation.
//!
//! The forward pass records primitive operations into a linear tape; replaying
//! the tape in exact reverse order accumulates gradients of a scalar loss into
//! every parameter leaf. Accumulation order is fixed (ascending index within a
//! node, reverse node order across nodes) so gradients are bit-reproducible.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

/// Standard SeLU alpha constant.
pub const SELU_ALPHA: f64 = 1.6732632423543772;
/// Standard SeLU lambda (scale) constant.
pub const SELU_LAMBDA: f64 = 1.0507009873554805;

/// Floor applied to probabilities before taking logs in the cross-entropy op.
pub const PROB_CLAMP: f64 = 1e-12;

/// Element-wise activation functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    SeLU,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::SeLU => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative with respect to the pre-activation input.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::SeLU => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Identifier of a parameter tensor inside a `ParameterStore`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Addresses either a whole parameter tensor or a single row of a table.
/// Gradient flow from an embedding lookup touches exactly one row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKey {
    Dense(ParamId),
    Row(ParamId, usize),
}

impl ParamKey {
    pub fn param_id(&self) -> ParamId {
        match self {
            ParamKey::Dense(id) | ParamKey::Row(id, _) => *id,
        }
    }
}

/// Handle to a value node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Expr {
    /// Input constant; no gradient is reported for it.
    Input,
    /// Parameter leaf; gradients accumulate under its key.
    Param(ParamKey),
    /// y = W x + b with W: [out, in], x: [in], b: [out].
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Activate { kind: Activation, x: NodeId },
    /// Element-wise sum of same-shaped tensors (pooling, multi-order sums).
    SumElems { parts: Vec<NodeId> },
    /// Scalar sum of all elements.
    SumAll { x: NodeId },
    Concat { parts: Vec<NodeId> },
    /// Contiguous sub-range of a 1-D node, reinterpreted under `shape`.
    Slice { x: NodeId, offset: usize },
    /// Element-wise integer power x^c, c >= 1.
    PowInt { x: NodeId, exponent: u32 },
    /// Scalar inner product of two equal-length vectors.
    Dot { a: NodeId, b: NodeId },
    Softmax { x: NodeId },
    /// Scalar pick of one element.
    Index { x: NodeId, at: usize },
    /// Cross-entropy of a probability against a binary label.
    CrossEntropy { p: NodeId, label: f64 },
    /// Mean of scalar nodes (batch loss).
    MeanScalars { parts: Vec<NodeId> },
}

struct Node {
    value: Tensor,
    expr: Expr,
}

/// Gradients keyed by parameter leaf, produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct GradStore {
    grads: HashMap<ParamKey, Tensor>,
}

impl GradStore {
    pub fn get(&self, key: &ParamKey) -> Option<&Tensor> {
        self.grads.get(key)
    }

    /// Gradient for a key, or zeros of `shape` when the parameter was unused.
    pub fn get_or_zeros(&self, key: &ParamKey, shape: &[usize]) -> Tensor {
        self.grads
            .get(key)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape.to_vec()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ParamKey, &Tensor)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    fn accumulate(&mut self, key: ParamKey, shape: &[usize], grad: &[f64]) {
        let entry = self
            .grads
            .entry(key)
            .or_insert_with(|| Tensor::zeros(shape.to_vec()));
        for (dst, src) in entry.data_mut().iter_mut().zip(grad) {
            *dst += src;
        }
    }
}

/// Records operations during a forward pass and replays them backward.
#[derive(Default)]
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, expr: Expr) -> NodeId {
        self.nodes.push(Node { value, expr });
        NodeId(self.nodes.len() - 1)
    }

    /// Registers an input constant (no gradient reported).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Expr::Input)
    }

    /// Registers a parameter leaf; gradients accumulate under `key`.
    pub fn param(&mut self, key: ParamKey, value: Tensor) -> NodeId {
        self.push(value, Expr::Param(key))
    }

    /// y = W x + b.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xs, ws, bs) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        if ws.len() != 2 || xs != [ws[1]] || bs != [ws[0]] {
            return Err(Error::dimension(
                "affine",
                format!("W [out,in], x [{}], b [{}]", ws.get(1).unwrap_or(&0), ws.first().unwrap_or(&0)),
                format!("W {:?}, x {:?}, b {:?}", ws, xs, bs),
            ));
        }
        let (out, n_in) = (ws[0], ws[1]);
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(b).data();
        let mut y = vec![0.0; out];
        for o in 0..out {
            let mut acc = bv[o];
            let row = &wv[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                acc += row[i] * xv[i];
            }
            y[o] = acc;
        }
        Ok(self.push(Tensor::vector(&y), Expr::Affine { x, w, b }))
    }

    pub fn activate(&mut self, kind: Activation, x: NodeId) -> NodeId {
        let data: Vec<f64> = self.value(x).data().iter().map(|&v| kind.apply(v)).collect();
        let shape = self.value(x).shape().to_vec();
        self.push(
            Tensor::new(shape, data).expect("shape preserved"),
            Expr::Activate { kind, x },
        )
    }

    /// Element-wise sum of same-shaped nodes. Empty input is a usage error;
    /// callers represent empty pools with an explicit zero input node.
    pub fn sum_elems(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Usage("sum_elems over no nodes".into()))?;
        let shape = self.value(first).shape().to_vec();
        let mut acc = self.value(first).data().to_vec();
        for &p in &parts[1..] {
            if self.value(p).shape() != shape.as_slice() {
                return Err(Error::dimension(
                    "sum_elems",
                    format!("{:?}", shape),
                    format!("{:?}", self.value(p).shape()),
                ));
            }
            for (a, b) in acc.iter_mut().zip(self.value(p).data()) {
                *a += b;
            }
        }
        Ok(self.push(
            Tensor::new(shape, acc).expect("shape preserved"),
            Expr::SumElems {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Scalar sum of all elements of `x`.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Expr::SumAll { x })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Usage("concat of no nodes".into()));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(
            Tensor::vector(&data),
            Expr::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Sub-range `[offset, offset + product(shape))` of a node, viewed as `shape`.
    pub fn slice(&mut self, x: NodeId, offset: usize, shape: Vec<usize>) -> Result<NodeId> {
        let len: usize = shape.iter().product();
        let total = self.value(x).len();
        if offset + len > total {
            return Err(Error::dimension(
                "slice",
                format!("range [{}, {}) within {} elements", offset, offset + len, total),
                format!("source of {} elements", total),
            ));
        }
        let data = self.value(x).data()[offset..offset + len].to_vec();
        Ok(self.push(
            Tensor::new(shape, data).expect("length checked"),
            Expr::Slice { x, offset },
        ))
    }

    /// Element-wise x^c for integer c >= 1.
    pub fn pow_int(&mut self, x: NodeId, exponent: u32) -> Result<NodeId> {
        if exponent == 0 {
            return Err(Error::Usage("pow_int exponent must be >= 1".into()));
        }
        let data: Vec<f64> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v.powi(exponent as i32))
            .collect();
        let shape = self.value(x).shape().to_vec();
        Ok(self.push(
            Tensor::new(shape, data).expect("shape preserved"),
            Expr::PowInt { x, exponent },
        ))
    }

    /// Scalar inner product of two equal-length vectors.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb {
            return Err(Error::dimension(
                "dot",
                format!("vectors of equal length {}", la),
                format!("lengths {} and {}", la, lb),
            ));
        }
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Tensor::scalar(s), Expr::Dot { a, b }))
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x).data();
        let max = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xv.iter().map(|&v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let probs: Vec<f64> = exps.iter().map(|&e| e / z).collect();
        self.push(Tensor::vector(&probs), Expr::Softmax { x })
    }

    pub fn index(&mut self, x: NodeId, at: usize) -> Result<NodeId> {
        if at >= self.value(x).len() {
            return Err(Error::Usage(format!(
                "index {} out of bounds for node of length {}",
                at,
                self.value(x).len()
            )));
        }
        let v = self.value(x).data()[at];
        Ok(self.push(Tensor::scalar(v), Expr::Index { x, at }))
    }

    /// -y log(p) - (1-y) log(1-p) for a scalar probability node.
    pub fn cross_entropy(&mut self, p: NodeId, label: u8) -> Result<NodeId> {
        let pv = self.value(p).item()?;
        if !(0.0..=1.0).contains(&pv) || !pv.is_finite() {
            return Err(Error::Numeric(format!(
                "cross_entropy expects a probability in (0,1), got {}",
                pv
            )));
        }
        let pc = pv.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let y = label as f64;
        let loss = -y * pc.ln() - (1.0 - y) * (1.0 - pc).ln();
        Ok(self.push(Tensor::scalar(loss), Expr::CrossEntropy { p, label: y }))
    }

    /// Mean of scalar nodes.
    pub fn mean_scalars(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Usage("mean of no nodes".into()));
        }
        let mut s = 0.0;
        for &p in parts {
            s += self.value(p).item()?;
        }
        Ok(self.push(
            Tensor::scalar(s / parts.len() as f64),
            Expr::MeanScalars {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Reverse pass from a scalar loss node. Returns gradients for every
    /// parameter leaf reached; parameters never touched by the forward pass
    /// simply have no entry (queried as zeros via [`GradStore::get_or_zeros`]).
    pub fn backward(&mut self, loss: NodeId) -> Result<GradStore> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Usage("loss node is not on this tape".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }

        let mut adjoints: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoints[loss.0] = Some(vec![1.0]);
        let mut store = GradStore::default();

        for i in (0..=loss.0).rev() {
            let grad = match adjoints[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].expr {
                Expr::Input => {}
                Expr::Param(key) => {
                    store.accumulate(*key, self.nodes[i].value.shape(), &grad);
                }
                Expr::Affine { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let shape_w = self.nodes[w.0].value.shape();
                    let (out, n_in) = (shape_w[0], shape_w[1]);
                    let xv = self.nodes[x.0].value.data().to_vec();
                    let wv = self.nodes[w.0].value.data().to_vec();
                    {
                        let gx = ensure(&mut adjoints, x, n_in);
                        for o in 0..out {
                            let row = &wv[o * n_in..(o + 1) * n_in];
                            for i2 in 0..n_in {
                                gx[i2] += row[i2] * grad[o];
                            }
                        }
                    }
                    {
                        let gw = ensure(&mut adjoints, w, out * n_in);
                        for o in 0..out {
                            for i2 in 0..n_in {
                                gw[o * n_in + i2] += grad[o] * xv[i2];
                            }
                        }
                    }
                    {
                        let gb = ensure(&mut adjoints, b, out);
                        for o in 0..out {
                            gb[o] += grad[o];
                        }
                    }
                }
                Expr::Activate { kind, x } => {
                    let (kind, x) = (*kind, *x);
                    let xv = self.nodes[x.0].value.data().to_vec();
                    let gx = ensure(&mut adjoints, x, xv.len());
                    for (j, &v) in xv.iter().enumerate() {
                        gx[j] += kind.derivative(v) * grad[j];
                    }
                }
                Expr::SumElems { parts } => {
                    for &p in &parts.clone() {
                        let gp = ensure(&mut adjoints, p, grad.len());
                        for (a, g) in gp.iter_mut().zip(&grad) {
                            *a += g;
                        }
                    }
                }
                Expr::SumAll { x } => {
                    let x = *x;
                    let n = self.nodes[x.0].value.len();
                    let gx = ensure(&mut adjoints, x, n);
                    for a in gx.iter_mut() {
                        *a += grad[0];
                    }
                }
                Expr::Concat { parts } => {
                    let mut offset = 0;
                    for &p in &parts.clone() {
                        let n = self.nodes[p.0].value.len();
                        let gp = ensure(&mut adjoints, p, n);
                        for j in 0..n {
                            gp[j] += grad[offset + j];
                        }
                        offset += n;
                    }
                }
                Expr::Slice { x, offset } => {
                    let (x, offset) = (*x, *offset);
                    let n = self.nodes[x.0].value.len();
                    let gx = ensure(&mut adjoints, x, n);
                    for (j, g) in grad.iter().enumerate() {
                        gx[offset + j] += g;
                    }
                }
                Expr::PowInt { x, exponent } => {
                    let (x, c) = (*x, *exponent);
                    let xv = self.nodes[x.0].value.data().to_vec();
                    let gx = ensure(&mut adjoints, x, xv.len());
                    for (j, &v) in xv.iter().enumerate() {
                        gx[j] += c as f64 * v.powi(c as i32 - 1) * grad[j];
                    }
                }
                Expr::Dot { a, b } => {
                    let (a, b) = (*a, *b);
                    let av = self.nodes[a.0].value.data().to_vec();
                    let bv = self.nodes[b.0].value.data().to_vec();
                    {
                        let ga = ensure(&mut adjoints, a, av.len());
                        for (j, &v) in bv.iter().enumerate() {
                            ga[j] += v * grad[0];
                        }
                    }
                    {
                        let gb = ensure(&mut adjoints, b, bv.len());
                        for (j, &v) in av.iter().enumerate() {
                            gb[j] += v * grad[0];
                        }
                    }
                }
                Expr::Softmax { x } => {
                    let x = *x;
                    let y = self.nodes[i].value.data().to_vec();
                    let inner: f64 = y.iter().zip(&grad).map(|(yi, gi)| yi * gi).sum();
                    let gx = ensure(&mut adjoints, x, y.len());
                    for j in 0..y.len() {
                        gx[j] += y[j] * (grad[j] - inner);
                    }
                }
                Expr::Index { x, at } => {
                    let (x, at) = (*x, *at);
                    let n = self.nodes[x.0].value.len();
                    let gx = ensure(&mut adjoints, x, n);
                    gx[at] += grad[0];
                }
                Expr::CrossEntropy { p, label } => {
                    let (p, y) = (*p, *label);
                    let pv = self.nodes[p.0].value.data()[0].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                    let gp = ensure(&mut adjoints, p, 1);
                    gp[0] += grad[0] * ((1.0 - y) / (1.0 - pv) - y / pv);
                }
                Expr::MeanScalars { parts } => {
                    let n = parts.len() as f64;
                    for &p in &parts.clone() {
                        let gp = ensure(&mut adjoints, p, 1);
                        gp[0] += grad[0] / n;
                    }
                }
            }
        }
        Ok(store)
    }
}

fn ensure(adjoints: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    let slot = &mut adjoints[id.0];
    if slot.is_none() {
        *slot = Some(vec![0.0; len]);
    }
    slot.as_mut().unwrap()
}
