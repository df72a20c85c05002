//! The co-action unit.
//!
//! A weight-side vector is sliced into the weights and biases of a micro-MLP,
//! which is applied to an input-side vector (optionally enhanced with
//! element-wise powers up to order C) and sum-pooled over sequences. All
//! operations record on the tape, so gradients flow into both sides — the
//! weight-side vector is a trainable parameter *and* a per-ID dynamic network.

use crate::error::{Error, Result};
use crate::numerics::{Activation, NodeId, Tape, Tensor};

/// Layer dimensions of the micro-MLP, as (in, out) pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpCanSpec {
    layers: Vec<(usize, usize)>,
}

impl MlpCanSpec {
    pub fn new(layers: Vec<(usize, usize)>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("micro-MLP needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].1 != w[1].0 {
                return Err(Error::Config(format!(
                    "inconsistent micro-MLP layer dims: layer output {} feeds layer input {}",
                    w[0].1, w[1].0
                )));
            }
        }
        if layers.iter().any(|&(i, o)| i == 0 || o == 0) {
            return Err(Error::Config("micro-MLP layer dims must be positive".into()));
        }
        Ok(MlpCanSpec { layers })
    }

    /// Chain of layer widths, e.g. `[4, 4, 4]` is two 4->4 layers.
    pub fn from_dims(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(
                "micro-MLP dims need at least an input and an output width".into(),
            ));
        }
        MlpCanSpec::new(dims.windows(2).map(|w| (w[0], w[1])).collect())
    }

    /// `depth` layers of constant width `dim`.
    pub fn uniform(depth: usize, dim: usize) -> Result<Self> {
        MlpCanSpec::new(vec![(dim, dim); depth.max(1)])
    }

    pub fn layers(&self) -> &[(usize, usize)] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].1
    }

    /// Total parameter length: sum over layers of in*out + out.
    pub fn param_len(&self) -> usize {
        self.layers.iter().map(|&(i, o)| i * o + o).sum()
    }

    /// Width chain `[in_0, out_0, out_1, ...]`; inverse of [`Self::from_dims`].
    pub fn dims_chain(&self) -> Vec<usize> {
        let mut chain = vec![self.layers[0].0];
        chain.extend(self.layers.iter().map(|&(_, o)| o));
        chain
    }

    /// Flat offset of layer `i`'s weight block under the documented layout
    /// (per layer: row-major weight, then bias).
    pub fn layer_offset(&self, i: usize) -> usize {
        self.layers[..i].iter().map(|&(li, lo)| li * lo + lo).sum()
    }
}

/// Activation rule: SeLU for first-order co-action, Tanh once higher-order
/// terms could blow up numerically.
pub fn activation_for_orders(orders: u32) -> Activation {
    if orders <= 1 {
        Activation::SeLU
    } else {
        Activation::Tanh
    }
}

/// Per-layer weight and bias nodes carved out of one weight-side vector.
#[derive(Debug, Clone)]
pub struct SlicedMlp {
    pub weights: Vec<NodeId>,
    pub biases: Vec<NodeId>,
}

/// Slices a weight-side vector into micro-MLP layers. Layer i's weight
/// occupies the segment at `spec.layer_offset(i)`, row-major, followed by
/// its bias.
pub fn slice_params(tape: &mut Tape, p_item: NodeId, spec: &MlpCanSpec) -> Result<SlicedMlp> {
    let actual = tape.value(p_item).len();
    let expected = spec.param_len();
    if actual != expected {
        return Err(Error::dimension(
            "slice_params",
            format!("{expected}"),
            format!("{actual}"),
        ));
    }
    let mut weights = Vec::with_capacity(spec.depth());
    let mut biases = Vec::with_capacity(spec.depth());
    for (i, &(n_in, n_out)) in spec.layers().iter().enumerate() {
        let offset = spec.layer_offset(i);
        weights.push(tape.slice(p_item, offset, vec![n_out, n_in])?);
        biases.push(tape.slice(p_item, offset + n_in * n_out, vec![n_out])?);
    }
    Ok(SlicedMlp { weights, biases })
}

/// Runs the micro-MLP: h0 = x, h_{i} = act(w_{i-1} h_{i-1} + b_{i-1}),
/// activation applied at every layer including the last.
pub fn apply_mlp_can(
    tape: &mut Tape,
    mlp: &SlicedMlp,
    x: NodeId,
    activation: Activation,
) -> Result<NodeId> {
    let mut h = x;
    for (w, b) in mlp.weights.iter().zip(&mlp.biases) {
        let pre = tape.affine(h, *w, *b)?;
        h = tape.activate(activation, pre);
    }
    Ok(h)
}

/// Polynomial input enhancement: sum over c = 1..=C of the element-wise
/// c-th power of the input-side vector.
pub fn multi_order_input(tape: &mut Tape, p_user: NodeId, orders: u32) -> Result<NodeId> {
    if orders == 0 {
        return Err(Error::Config("order count must be >= 1".into()));
    }
    if orders == 1 {
        return Ok(p_user);
    }
    let mut terms = vec![p_user];
    for c in 2..=orders {
        terms.push(tape.pow_int(p_user, c)?);
    }
    tape.sum_elems(&terms)
}

/// Single-forward form: micro-MLP applied once to the polynomial input sum.
/// With a nonlinear activation this approximates the per-order sum form.
pub fn coaction_shared(
    tape: &mut Tape,
    p_item: NodeId,
    p_user: NodeId,
    spec: &MlpCanSpec,
    orders: u32,
) -> Result<NodeId> {
    let mlp = slice_params(tape, p_item, spec)?;
    let x = multi_order_input(tape, p_user, orders)?;
    apply_mlp_can(tape, &mlp, x, activation_for_orders(orders))
}

/// Exact per-order sum: one micro-MLP forward per order, summed. Supply one
/// shared segment, or exactly C segments when orders are independent.
pub fn coaction_sum_form(
    tape: &mut Tape,
    p_item_segments: &[NodeId],
    p_user: NodeId,
    spec: &MlpCanSpec,
    orders: u32,
) -> Result<NodeId> {
    if orders == 0 {
        return Err(Error::Config("order count must be >= 1".into()));
    }
    let mlps = slice_segments(tape, p_item_segments, spec, orders)?;
    let act = activation_for_orders(orders);
    let mut outputs = Vec::with_capacity(orders as usize);
    for c in 1..=orders {
        let x = if c == 1 {
            p_user
        } else {
            tape.pow_int(p_user, c)?
        };
        let mlp = &mlps[if mlps.len() == 1 { 0 } else { (c - 1) as usize }];
        outputs.push(apply_mlp_can(tape, mlp, x, act)?);
    }
    tape.sum_elems(&outputs)
}

/// Sum-pooled co-action over a behaviour sequence: the full micro-MLP runs
/// per step, pooling happens after. Empty sequences pool to the zero vector.
pub fn coaction_sequence(
    tape: &mut Tape,
    p_item_segments: &[NodeId],
    sequence: &[NodeId],
    spec: &MlpCanSpec,
    orders: u32,
) -> Result<NodeId> {
    if sequence.is_empty() {
        return Ok(tape.input(Tensor::zeros(vec![spec.output_dim()])));
    }
    let mlps = slice_segments(tape, p_item_segments, spec, orders)?;
    let act = activation_for_orders(orders);
    let mut outputs = Vec::with_capacity(sequence.len());
    for &step in sequence {
        if mlps.len() == 1 {
            // Shared segment: approximation path, one forward per step.
            let x = multi_order_input(tape, step, orders)?;
            outputs.push(apply_mlp_can(tape, &mlps[0], x, act)?);
        } else {
            let mut per_order = Vec::with_capacity(orders as usize);
            for c in 1..=orders {
                let x = if c == 1 { step } else { tape.pow_int(step, c)? };
                per_order.push(apply_mlp_can(tape, &mlps[(c - 1) as usize], x, act)?);
            }
            outputs.push(tape.sum_elems(&per_order)?);
        }
    }
    tape.sum_elems(&outputs)
}

fn slice_segments(
    tape: &mut Tape,
    segments: &[NodeId],
    spec: &MlpCanSpec,
    orders: u32,
) -> Result<Vec<SlicedMlp>> {
    if segments.len() != 1 && segments.len() != orders as usize {
        return Err(Error::Config(format!(
            "expected 1 shared segment or {} per-order segments, got {}",
            orders,
            segments.len()
        )));
    }
    segments
        .iter()
        .map(|&s| slice_params(tape, s, spec))
        .collect()
}
