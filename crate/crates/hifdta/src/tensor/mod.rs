//! Reverse-mode autodiff on a flat tape of f64 tensors.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it once in reverse and returns per-node gradients. Tensors are dense
//! row-major with shapes up to rank 4. All math is f64; there is no implicit
//! casting anywhere.
//!
//! Design points that matter for correctness:
//! - every op validates shapes and returns a dimension error naming the op;
//! - every op checks its output for NaN/Inf and fails loudly rather than
//!   letting poison propagate;
//! - stochastic ops (dropout) store a counter-based RNG key so the backward
//!   pass regenerates the identical mask instead of storing it.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod linalg;
pub mod ops;
pub mod params;
pub mod recurrent;
pub mod rng;

use std::sync::Arc;

use crate::error::{Error, Result};
use rng::StreamRng;

pub type TensorId = usize;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Value {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Value {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, data.len(), "shape {shape:?} vs {} elements", data.len());
        Value { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Value { shape, data: vec![0.0; numel] }
    }

    pub fn scalar(x: f64) -> Self {
        Value { shape: vec![1], data: vec![x] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Scalar extraction; panics if not a single element.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// One recorded operation. Payloads hold input ids plus whatever constant
/// structure (indices, masks, RNG keys) the backward pass needs.
#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    Matmul(TensorId, TensorId),
    Bmm(TensorId, TensorId),
    Transpose2(TensorId),
    Transpose12(TensorId),
    Reshape(TensorId),
    Concat { parts: Vec<TensorId>, axis: usize },
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    /// Division defining 0/0 := 0; used where a ratio is provably absent
    /// (e.g. cluster cut loss on an edgeless graph).
    DivGuarded(TensorId, TensorId),
    Scale(TensorId, f64),
    Relu(TensorId),
    Sigmoid(TensorId),
    Tanh(TensorId),
    Exp(TensorId),
    Softplus(TensorId),
    Sqrt(TensorId),
    SumAll(TensorId),
    MeanAll(TensorId),
    SumAxis { x: TensorId, axis: usize },
    Softmax { x: TensorId, axis: usize, mask: Option<Arc<Vec<bool>>> },
    LayerNorm { x: TensorId, gain: TensorId, bias: TensorId },
    Dropout { x: TensorId, p: f64, key: u64 },
    SegmentSum { x: TensorId, ids: Arc<Vec<usize>> },
    SegmentMean { x: TensorId, ids: Arc<Vec<usize>>, nseg: usize },
    SegmentMax { x: TensorId, ids: Arc<Vec<usize>>, nseg: usize },
    SegmentMin { x: TensorId, ids: Arc<Vec<usize>>, nseg: usize },
    SegmentStd { x: TensorId, ids: Arc<Vec<usize>>, nseg: usize },
    SegmentSoftmax { x: TensorId, ids: Arc<Vec<usize>>, nseg: usize },
    GatherRows { x: TensorId, idx: Arc<Vec<usize>> },
    LstmPacked {
        x: TensorId,
        w_ih: TensorId,
        w_hh: TensorId,
        b: TensorId,
        offsets: Arc<Vec<usize>>,
        reverse: bool,
        aux: recurrent::LstmAux,
    },
    SsmScan {
        x: TensorId,
        delta: TensorId,
        b_in: TensorId,
        c_in: TensorId,
        a: TensorId,
        d_skip: TensorId,
        mask: Arc<Vec<bool>>,
        aux: recurrent::SsmAux,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Matmul(..) => "matmul",
            Op::Bmm(..) => "bmm",
            Op::Transpose2(..) => "transpose2",
            Op::Transpose12(..) => "transpose12",
            Op::Reshape(..) => "reshape",
            Op::Concat { .. } => "concat",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::DivGuarded(..) => "div_guarded",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Softplus(..) => "softplus",
            Op::Sqrt(..) => "sqrt",
            Op::SumAll(..) => "sum_all",
            Op::MeanAll(..) => "mean_all",
            Op::SumAxis { .. } => "sum_axis",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Dropout { .. } => "dropout",
            Op::SegmentSum { .. } => "segment_sum",
            Op::SegmentMean { .. } => "segment_mean",
            Op::SegmentMax { .. } => "segment_max",
            Op::SegmentMin { .. } => "segment_min",
            Op::SegmentStd { .. } => "segment_std",
            Op::SegmentSoftmax { .. } => "segment_softmax",
            Op::GatherRows { .. } => "gather_rows",
            Op::LstmPacked { .. } => "lstm_packed",
            Op::SsmScan { .. } => "ssm_scan",
        }
    }

    fn inputs(&self, out: &mut Vec<TensorId>) {
        out.clear();
        match self {
            Op::Leaf => {}
            Op::Matmul(a, b) | Op::Bmm(a, b) => out.extend([*a, *b]),
            Op::Transpose2(a)
            | Op::Transpose12(a)
            | Op::Reshape(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Softplus(a)
            | Op::Sqrt(a)
            | Op::SumAll(a)
            | Op::MeanAll(a) => out.push(*a),
            Op::Concat { parts, .. } => out.extend(parts.iter().copied()),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::DivGuarded(a, b) => {
                out.extend([*a, *b])
            }
            Op::SumAxis { x, .. }
            | Op::Softmax { x, .. }
            | Op::Dropout { x, .. }
            | Op::SegmentSum { x, .. }
            | Op::SegmentMean { x, .. }
            | Op::SegmentMax { x, .. }
            | Op::SegmentMin { x, .. }
            | Op::SegmentStd { x, .. }
            | Op::SegmentSoftmax { x, .. }
            | Op::GatherRows { x, .. } => out.push(*x),
            Op::LayerNorm { x, gain, bias } => out.extend([*x, *gain, *bias]),
            Op::LstmPacked { x, w_ih, w_hh, b, .. } => out.extend([*x, *w_ih, *w_hh, *b]),
            Op::SsmScan { x, delta, b_in, c_in, a, d_skip, .. } => {
                out.extend([*x, *delta, *b_in, *c_in, *a, *d_skip])
            }
        }
    }
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Value,
    pub(crate) needs_grad: bool,
}

pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    /// Training mode: dropout active. Eval mode: dropout is identity.
    pub train: bool,
    pub(crate) rng: StreamRng,
    /// Per-pass salt mixed into stochastic op keys (caller sets it from
    /// epoch/batch counters so masks differ across steps but replay exactly).
    pub(crate) salt: u64,
}

impl Tape {
    pub fn new(seed: u64, salt: u64, train: bool) -> Self {
        Tape { nodes: Vec::with_capacity(256), train, rng: StreamRng::new(seed), salt }
    }

    /// Constant input: participates in forward only.
    pub fn constv(&mut self, v: Value) -> TensorId {
        self.push_unchecked(Op::Leaf, v, false)
    }

    /// Differentiable input (parameter or anything we want gradients for).
    pub fn leaf(&mut self, v: Value) -> TensorId {
        self.push_unchecked(Op::Leaf, v, true)
    }

    pub fn val(&self, id: TensorId) -> &Value {
        &self.nodes[id].value
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        self.nodes[id].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_unchecked(&mut self, op: Op, value: Value, needs_grad: bool) -> TensorId {
        self.nodes.push(Node { op, value, needs_grad });
        self.nodes.len() - 1
    }

    /// Record an op node, propagating needs_grad from inputs and rejecting
    /// non-finite outputs.
    pub(crate) fn push(&mut self, op: Op, value: Value) -> Result<TensorId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let mut ins = Vec::new();
        op.inputs(&mut ins);
        let needs = ins.iter().any(|&i| self.nodes[i].needs_grad);
        Ok(self.push_unchecked(op, value, needs))
    }

    /// Reverse pass from a scalar root. Returns one gradient slot per node;
    /// slots stay `None` for nodes the root does not depend on (or that were
    /// recorded as constants).
    pub fn backward(&self, root: TensorId) -> Result<Grads> {
        let rv = &self.nodes[root].value;
        if rv.numel() != 1 {
            return Err(Error::dim("backward", format!("root must be scalar, got shape {:?}", rv.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[root].needs_grad {
            return Ok(Grads { grads, shapes: self.collect_shapes() });
        }
        grads[root] = Some(vec![1.0]);
        for i in (0..=root).rev() {
            if grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let gy = grads[i].take().unwrap();
            ops::backward_op(self, i, &gy, &mut grads)?;
            // Leaf gradients must survive for the caller; interior grads were
            // taken above and dropped to bound memory.
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(gy);
            }
        }
        Ok(Grads { grads, shapes: self.collect_shapes() })
    }

    fn collect_shapes(&self) -> Vec<Vec<usize>> {
        self.nodes.iter().map(|n| n.value.shape().to_vec()).collect()
    }

    pub(crate) fn dropout_key(&self, stream_id: u64) -> u64 {
        // Node count makes keys unique within a pass, salt across passes.
        stream_id ^ self.salt.rotate_left(23) ^ (self.nodes.len() as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
    }
}

pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Grads {
    pub fn get(&self, id: TensorId) -> Option<&[f64]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    /// Gradient for `id`, zero-filled if the root never touched it.
    pub fn get_or_zeros(&self, id: TensorId) -> Vec<f64> {
        match self.get(id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.shapes[id].iter().product()],
        }
    }
}

/// Accumulation access used by backward_op: it must add into input slots
/// while reading the output gradient, so it works on the raw vec.
pub(crate) fn grad_slot(grads: &mut [Option<Vec<f64>>], id: TensorId, numel: usize) -> &mut [f64] {
    grads[id].get_or_insert_with(|| vec![0.0; numel])
}
