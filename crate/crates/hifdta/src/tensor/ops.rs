//! Forward builders and the reverse-mode dispatch for every tape op.
//!
//! Binary arithmetic broadcasts numpy-style (shapes right-aligned, each dim
//! equal or 1). The gradient of a broadcast input is reduced back to its own
//! shape. Hot layouts (same shape, scalar, trailing bias, column vector) take
//! specialized loops; anything else goes through a generic odometer walk.

use std::sync::Arc;

use super::{grad_slot, linalg, Op, Tape, TensorId, Value};
use crate::error::{Error, Result};

/// Denominators at or below this magnitude count as "absent" in guarded
/// division and trigger the 0/0 := 0 convention.
pub const DIV_GUARD_EPS: f64 = 1e-12;

fn product(dims: &[usize]) -> usize {
    dims.iter().product()
}

/// outer, axis length, inner strides for reductions along `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = product(&shape[..axis]);
    let len = shape[axis];
    let inner = product(&shape[axis + 1..]);
    (outer, len, inner)
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db {
            out[i] = da;
        } else if da == 1 {
            out[i] = db;
        } else if db == 1 {
            out[i] = da;
        } else {
            return None;
        }
    }
    Some(out)
}

/// Row-major strides padded to `rank`, with 0 stride on broadcast dims.
fn bcast_strides(shape: &[usize], rank: usize, out_shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; rank];
    let offset = rank - shape.len();
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let s = if shape[i] == 1 { 0 } else { acc };
        strides[offset + i] = s;
        acc *= shape[i];
    }
    // Dims missing on the left broadcast with stride 0 (already zeroed).
    debug_assert_eq!(out_shape.len(), rank);
    strides
}

enum BinLayout {
    Same,
    ScalarRhs,
    ScalarLhs,
    /// rhs is rank-1 matching the last dim of lhs (bias over rows).
    TrailRhs,
    /// rhs shape == lhs shape except last dim is 1 (per-row scalar).
    ColRhs,
    General,
}

fn bin_layout(a: &[usize], b: &[usize]) -> BinLayout {
    if a == b {
        return BinLayout::Same;
    }
    if product(b) == 1 {
        return BinLayout::ScalarRhs;
    }
    if product(a) == 1 {
        return BinLayout::ScalarLhs;
    }
    if b.len() == 1 && !a.is_empty() && b[0] == a[a.len() - 1] {
        return BinLayout::TrailRhs;
    }
    if a.len() == b.len() && b[b.len() - 1] == 1 && a[..a.len() - 1] == b[..b.len() - 1] {
        return BinLayout::ColRhs;
    }
    BinLayout::General
}

fn bin_forward<F: Fn(f64, f64) -> f64>(
    op: &'static str,
    av: &Value,
    bv: &Value,
    f: F,
) -> Result<Value> {
    let out_shape = broadcast_shape(av.shape(), bv.shape())
        .ok_or_else(|| Error::dim(op, format!("cannot broadcast {:?} with {:?}", av.shape(), bv.shape())))?;
    let a = av.data();
    let b = bv.data();
    let n = product(&out_shape);
    let mut out = vec![0.0; n];
    match bin_layout(av.shape(), bv.shape()) {
        BinLayout::Same => {
            for i in 0..n {
                out[i] = f(a[i], b[i]);
            }
        }
        BinLayout::ScalarRhs => {
            let s = b[0];
            for i in 0..n {
                out[i] = f(a[i], s);
            }
        }
        BinLayout::ScalarLhs => {
            let s = a[0];
            for i in 0..n {
                out[i] = f(s, b[i]);
            }
        }
        BinLayout::TrailRhs => {
            let d = b.len();
            for (row, chunk) in out.chunks_mut(d).enumerate() {
                let ar = &a[row * d..(row + 1) * d];
                for j in 0..d {
                    chunk[j] = f(ar[j], b[j]);
                }
            }
        }
        BinLayout::ColRhs => {
            let d = av.shape()[av.shape().len() - 1];
            for (row, chunk) in out.chunks_mut(d).enumerate() {
                let s = b[row];
                let ar = &a[row * d..(row + 1) * d];
                for j in 0..d {
                    chunk[j] = f(ar[j], s);
                }
            }
        }
        BinLayout::General => {
            let rank = out_shape.len();
            let sa = bcast_strides(av.shape(), rank, &out_shape);
            let sb = bcast_strides(bv.shape(), rank, &out_shape);
            let mut coord = vec![0usize; rank];
            for slot in out.iter_mut() {
                let mut ia = 0;
                let mut ib = 0;
                for d in 0..rank {
                    ia += coord[d] * sa[d];
                    ib += coord[d] * sb[d];
                }
                *slot = f(a[ia], b[ib]);
                for d in (0..rank).rev() {
                    coord[d] += 1;
                    if coord[d] < out_shape[d] {
                        break;
                    }
                    coord[d] = 0;
                }
            }
        }
    }
    Ok(Value::new(out_shape, out))
}

/// Accumulate broadcast-aware gradients for a binary op.
/// `fa(a,b)` and `fb(a,b)` are the local partials dOut/dA and dOut/dB.
#[allow(clippy::too_many_arguments)]
fn bin_backward<FA, FB>(
    av: &Value,
    bv: &Value,
    out_shape: &[usize],
    gy: &[f64],
    mut ga: Option<&mut [f64]>,
    mut gb: Option<&mut [f64]>,
    fa: FA,
    fb: FB,
) where
    FA: Fn(f64, f64) -> f64,
    FB: Fn(f64, f64) -> f64,
{
    let a = av.data();
    let b = bv.data();
    match bin_layout(av.shape(), bv.shape()) {
        BinLayout::Same => {
            if let Some(ga) = ga.as_deref_mut() {
                for i in 0..gy.len() {
                    ga[i] += gy[i] * fa(a[i], b[i]);
                }
            }
            if let Some(gb) = gb.as_deref_mut() {
                for i in 0..gy.len() {
                    gb[i] += gy[i] * fb(a[i], b[i]);
                }
            }
        }
        BinLayout::ScalarRhs => {
            let s = b[0];
            if let Some(ga) = ga.as_deref_mut() {
                for i in 0..gy.len() {
                    ga[i] += gy[i] * fa(a[i], s);
                }
            }
            if let Some(gb) = gb.as_deref_mut() {
                let mut acc = 0.0;
                for i in 0..gy.len() {
                    acc += gy[i] * fb(a[i], s);
                }
                gb[0] += acc;
            }
        }
        BinLayout::ScalarLhs => {
            let s = a[0];
            if let Some(ga) = ga.as_deref_mut() {
                let mut acc = 0.0;
                for i in 0..gy.len() {
                    acc += gy[i] * fa(s, b[i]);
                }
                ga[0] += acc;
            }
            if let Some(gb) = gb.as_deref_mut() {
                for i in 0..gy.len() {
                    gb[i] += gy[i] * fb(s, b[i]);
                }
            }
        }
        BinLayout::TrailRhs => {
            let d = b.len();
            let rows = gy.len() / d;
            for row in 0..rows {
                let off = row * d;
                if let Some(ga) = ga.as_deref_mut() {
                    for j in 0..d {
                        ga[off + j] += gy[off + j] * fa(a[off + j], b[j]);
                    }
                }
                if let Some(gb) = gb.as_deref_mut() {
                    for j in 0..d {
                        gb[j] += gy[off + j] * fb(a[off + j], b[j]);
                    }
                }
            }
        }
        BinLayout::ColRhs => {
            let d = av.shape()[av.shape().len() - 1];
            let rows = gy.len() / d;
            for row in 0..rows {
                let off = row * d;
                let s = b[row];
                if let Some(ga) = ga.as_deref_mut() {
                    for j in 0..d {
                        ga[off + j] += gy[off + j] * fa(a[off + j], s);
                    }
                }
                if let Some(gb) = gb.as_deref_mut() {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += gy[off + j] * fb(a[off + j], s);
                    }
                    gb[row] += acc;
                }
            }
        }
        BinLayout::General => {
            let rank = out_shape.len();
            let sa = bcast_strides(av.shape(), rank, out_shape);
            let sb = bcast_strides(bv.shape(), rank, out_shape);
            let mut coord = vec![0usize; rank];
            for &g in gy.iter() {
                let mut ia = 0;
                let mut ib = 0;
                for d in 0..rank {
                    ia += coord[d] * sa[d];
                    ib += coord[d] * sb[d];
                }
                if let Some(ga) = ga.as_deref_mut() {
                    ga[ia] += g * fa(a[ia], b[ib]);
                }
                if let Some(gb) = gb.as_deref_mut() {
                    gb[ib] += g * fb(a[ia], b[ib]);
                }
                for d in (0..rank).rev() {
                    coord[d] += 1;
                    if coord[d] < out_shape[d] {
                        break;
                    }
                    coord[d] = 0;
                }
            }
        }
    }
}

impl Tape {
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (s1, s2) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if s1.len() != 2 || s2.len() != 2 || s1[1] != s2[0] {
            return Err(Error::dim("matmul", format!("{s1:?} x {s2:?}")));
        }
        let (m, k, n) = (s1[0], s1[1], s2[1]);
        let mut out = vec![0.0; m * n];
        linalg::matmul_nn(self.val(a).data(), self.val(b).data(), m, k, n, &mut out);
        self.push(Op::Matmul(a, b), Value::new(vec![m, n], out))
    }

    pub fn bmm(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (s1, s2) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if s1.len() != 3 || s2.len() != 3 || s1[0] != s2[0] || s1[2] != s2[1] {
            return Err(Error::dim("bmm", format!("{s1:?} x {s2:?}")));
        }
        let (bsz, m, k, n) = (s1[0], s1[1], s1[2], s2[2]);
        let mut out = vec![0.0; bsz * m * n];
        for i in 0..bsz {
            linalg::matmul_nn(
                &self.val(a).data()[i * m * k..(i + 1) * m * k],
                &self.val(b).data()[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        self.push(Op::Bmm(a, b), Value::new(vec![bsz, m, n], out))
    }

    pub fn transpose2(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("transpose2", format!("want rank 2, got {s:?}")));
        }
        let mut out = Vec::new();
        linalg::transpose(self.val(x).data(), s[0], s[1], &mut out);
        self.push(Op::Transpose2(x), Value::new(vec![s[1], s[0]], out))
    }

    /// Swap the last two axes of a rank-3 tensor.
    pub fn transpose12(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::dim("transpose12", format!("want rank 3, got {s:?}")));
        }
        let (b, m, n) = (s[0], s[1], s[2]);
        let src = self.val(x).data();
        let mut out = vec![0.0; b * m * n];
        for i in 0..b {
            let sb = &src[i * m * n..(i + 1) * m * n];
            let ob = &mut out[i * m * n..(i + 1) * m * n];
            for r in 0..m {
                for c in 0..n {
                    ob[c * m + r] = sb[r * n + c];
                }
            }
        }
        self.push(Op::Transpose12(x), Value::new(vec![b, n, m], out))
    }

    pub fn reshape(&mut self, x: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let old = self.shape(x);
        if product(&shape) != product(old) {
            return Err(Error::dim("reshape", format!("{old:?} -> {shape:?}")));
        }
        let v = Value::new(shape, self.val(x).data().to_vec());
        self.push(Op::Reshape(x), v)
    }

    pub fn concat(&mut self, parts: &[TensorId], axis: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::dim("concat", "no inputs".to_string()));
        }
        let first = self.shape(parts[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for {first:?}")));
        }
        let mut axis_total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len()
                || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i])
            {
                return Err(Error::dim("concat", format!("incompatible {s:?} vs {first:?} on axis {axis}")));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let outer = product(&first[..axis]);
        let inner = product(&first[axis + 1..]);
        let out_block = axis_total * inner;
        let mut out = vec![0.0; outer * out_block];
        let mut at = 0;
        for &p in parts {
            let s = self.shape(p);
            let block = s[axis] * inner;
            let data = self.val(p).data();
            for o in 0..outer {
                out[o * out_block + at..o * out_block + at + block]
                    .copy_from_slice(&data[o * block..(o + 1) * block]);
            }
            at += block;
        }
        self.push(Op::Concat { parts: parts.to_vec(), axis }, Value::new(out_shape, out))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let v = bin_forward("add", self.val(a), self.val(b), |x, y| x + y)?;
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let v = bin_forward("sub", self.val(a), self.val(b), |x, y| x - y)?;
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let v = bin_forward("mul", self.val(a), self.val(b), |x, y| x * y)?;
        self.push(Op::Mul(a, b), v)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let v = bin_forward("div", self.val(a), self.val(b), |x, y| x / y)?;
        self.push(Op::Div(a, b), v)
    }

    /// Division that treats a vanishing denominator as an absent term:
    /// |b| <= 1e-12 yields 0 with zero gradient to both sides.
    pub fn div_guarded(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let v = bin_forward("div_guarded", self.val(a), self.val(b), |x, y| {
            if y.abs() <= DIV_GUARD_EPS {
                0.0
            } else {
                x / y
            }
        })?;
        self.push(Op::DivGuarded(a, b), v)
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> Result<TensorId> {
        let v = Value::new(self.shape(x).to_vec(), self.val(x).data().iter().map(|&t| t * c).collect());
        self.push(Op::Scale(x, c), v)
    }

    pub fn relu(&mut self, x: TensorId) -> Result<TensorId> {
        let v = Value::new(self.shape(x).to_vec(), self.val(x).data().iter().map(|&t| t.max(0.0)).collect());
        self.push(Op::Relu(x), v)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> Result<TensorId> {
        let v = Value::new(self.shape(x).to_vec(), self.val(x).data().iter().map(|&t| sigmoid(t)).collect());
        self.push(Op::Sigmoid(x), v)
    }

    pub fn tanh_t(&mut self, x: TensorId) -> Result<TensorId> {
        let v = Value::new(self.shape(x).to_vec(), self.val(x).data().iter().map(|&t| t.tanh()).collect());
        self.push(Op::Tanh(x), v)
    }

    pub fn exp_t(&mut self, x: TensorId) -> Result<TensorId> {
        let v = Value::new(self.shape(x).to_vec(), self.val(x).data().iter().map(|&t| t.exp()).collect());
        self.push(Op::Exp(x), v)
    }

    pub fn softplus(&mut self, x: TensorId) -> Result<TensorId> {
        let v = Value::new(self.shape(x).to_vec(), self.val(x).data().iter().map(|&t| softplus(t)).collect());
        self.push(Op::Softplus(x), v)
    }

    pub fn sqrt_t(&mut self, x: TensorId) -> Result<TensorId> {
        let v = Value::new(self.shape(x).to_vec(), self.val(x).data().iter().map(|&t| t.sqrt()).collect());
        self.push(Op::Sqrt(x), v)
    }

    pub fn sum_all(&mut self, x: TensorId) -> Result<TensorId> {
        let s: f64 = self.val(x).data().iter().sum();
        self.push(Op::SumAll(x), Value::scalar(s))
    }

    pub fn mean_all(&mut self, x: TensorId) -> Result<TensorId> {
        let n = self.val(x).numel();
        if n == 0 {
            return Err(Error::dim("mean_all", "empty tensor".to_string()));
        }
        let s: f64 = self.val(x).data().iter().sum();
        self.push(Op::MeanAll(x), Value::scalar(s / n as f64))
    }

    /// Sum along one axis, keeping it as size 1.
    pub fn sum_axis(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::dim("sum_axis", format!("axis {axis} out of range for {s:?}")));
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let data = self.val(x).data();
        let mut out_shape = s.clone();
        out_shape[axis] = 1;
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += data[base + i];
                }
            }
        }
        self.push(Op::SumAxis { x, axis }, Value::new(out_shape, out))
    }

    /// Softmax along `axis`. `mask` (same numel as x, true = valid) excludes
    /// positions; a lane with no valid position comes out all zero.
    pub fn softmax(&mut self, x: TensorId, axis: usize, mask: Option<Arc<Vec<bool>>>) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::dim("softmax", format!("axis {axis} out of range for {s:?}")));
        }
        if let Some(m) = &mask {
            if m.len() != product(&s) {
                return Err(Error::dim("softmax", format!("mask len {} vs tensor {s:?}", m.len())));
            }
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let data = self.val(x).data();
        let mut out = vec![0.0; data.len()];
        let valid = |idx: usize| mask.as_ref().map_or(true, |m| m[idx]);
        for o in 0..outer {
            for i in 0..inner {
                let mut mx = f64::NEG_INFINITY;
                for l in 0..len {
                    let idx = (o * len + l) * inner + i;
                    if valid(idx) {
                        mx = mx.max(data[idx]);
                    }
                }
                if mx == f64::NEG_INFINITY {
                    continue; // no valid entries: lane stays zero
                }
                let mut denom = 0.0;
                for l in 0..len {
                    let idx = (o * len + l) * inner + i;
                    if valid(idx) {
                        let e = (data[idx] - mx).exp();
                        out[idx] = e;
                        denom += e;
                    }
                }
                for l in 0..len {
                    let idx = (o * len + l) * inner + i;
                    if valid(idx) {
                        out[idx] /= denom;
                    }
                }
            }
        }
        self.push(Op::Softmax { x, axis, mask }, Value::new(s, out))
    }

    /// Normalize over the last axis: (x - mean) / sqrt(var + 1e-5) * gain + bias.
    /// Variance is the population variance, so constant rows normalize to 0.
    pub fn layer_norm(&mut self, x: TensorId, gain: TensorId, bias: TensorId) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        let d = *s.last().ok_or_else(|| Error::dim("layer_norm", "rank 0 input".to_string()))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::dim(
                "layer_norm",
                format!("gain {:?} bias {:?} vs last dim {d}", self.shape(gain), self.shape(bias)),
            ));
        }
        let data = self.val(x).data();
        let g = self.val(gain).data();
        let bb = self.val(bias).data();
        let rows = data.len() / d;
        let mut out = vec![0.0; data.len()];
        for r in 0..rows {
            let row = &data[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            let orow = &mut out[r * d..(r + 1) * d];
            for j in 0..d {
                orow[j] = (row[j] - mean) * inv * g[j] + bb[j];
            }
        }
        self.push(Op::LayerNorm { x, gain, bias }, Value::new(s, out))
    }

    /// Inverted dropout: keeps with probability 1-p and scales by 1/(1-p).
    /// In eval mode this is the identity (no node recorded). The mask is a
    /// pure function of (tape seed, stream, node position), so backward
    /// regenerates it exactly.
    pub fn dropout(&mut self, x: TensorId, p: f64, stream_id: u64) -> Result<TensorId> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::dim("dropout", format!("p = {p} outside [0, 1)")));
        }
        if !self.train || p == 0.0 {
            return Ok(x);
        }
        let key = self.dropout_key(stream_id);
        let inv = 1.0 / (1.0 - p);
        let data = self.val(x).data();
        let mut out = vec![0.0; data.len()];
        for (i, slot) in out.iter_mut().enumerate() {
            if self.rng.uniform(key, i as u64) >= p {
                *slot = data[i] * inv;
            }
        }
        let v = Value::new(self.shape(x).to_vec(), out);
        self.push(Op::Dropout { x, p, key }, v)
    }

    fn seg_validate(&self, op: &'static str, x: TensorId, ids: &[usize], nseg: usize) -> Result<(usize, usize)> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dim(op, format!("want rank 2, got {s:?}")));
        }
        if ids.len() != s[0] {
            return Err(Error::dim(op, format!("{} ids for {} rows", ids.len(), s[0])));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= nseg) {
            return Err(Error::dim(op, format!("segment id {bad} >= {nseg}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn seg_sum(&mut self, x: TensorId, ids: Arc<Vec<usize>>, nseg: usize) -> Result<TensorId> {
        let (n, d) = self.seg_validate("segment_sum", x, &ids, nseg)?;
        let data = self.val(x).data();
        let mut out = vec![0.0; nseg * d];
        for r in 0..n {
            linalg::axpy(&mut out[ids[r] * d..(ids[r] + 1) * d], 1.0, &data[r * d..(r + 1) * d]);
        }
        self.push(Op::SegmentSum { x, ids }, Value::new(vec![nseg, d], out))
    }

    /// Mean per segment; empty segments give zero rows.
    pub fn seg_mean(&mut self, x: TensorId, ids: Arc<Vec<usize>>, nseg: usize) -> Result<TensorId> {
        let (n, d) = self.seg_validate("segment_mean", x, &ids, nseg)?;
        let data = self.val(x).data();
        let mut out = vec![0.0; nseg * d];
        let mut counts = vec![0usize; nseg];
        for r in 0..n {
            counts[ids[r]] += 1;
            linalg::axpy(&mut out[ids[r] * d..(ids[r] + 1) * d], 1.0, &data[r * d..(r + 1) * d]);
        }
        for s in 0..nseg {
            if counts[s] > 0 {
                let inv = 1.0 / counts[s] as f64;
                for v in &mut out[s * d..(s + 1) * d] {
                    *v *= inv;
                }
            }
        }
        self.push(Op::SegmentMean { x, ids, nseg }, Value::new(vec![nseg, d], out))
    }

    /// Max per segment; empty segments give zero rows (not -inf).
    pub fn seg_max(&mut self, x: TensorId, ids: Arc<Vec<usize>>, nseg: usize) -> Result<TensorId> {
        self.seg_extreme(x, ids, nseg, true)
    }

    pub fn seg_min(&mut self, x: TensorId, ids: Arc<Vec<usize>>, nseg: usize) -> Result<TensorId> {
        self.seg_extreme(x, ids, nseg, false)
    }

    fn seg_extreme(&mut self, x: TensorId, ids: Arc<Vec<usize>>, nseg: usize, is_max: bool) -> Result<TensorId> {
        let opn = if is_max { "segment_max" } else { "segment_min" };
        let (n, d) = self.seg_validate(opn, x, &ids, nseg)?;
        let data = self.val(x).data();
        let init = if is_max { f64::NEG_INFINITY } else { f64::INFINITY };
        let mut out = vec![init; nseg * d];
        let mut seen = vec![false; nseg];
        for r in 0..n {
            seen[ids[r]] = true;
            let orow = &mut out[ids[r] * d..(ids[r] + 1) * d];
            let xrow = &data[r * d..(r + 1) * d];
            for j in 0..d {
                if is_max {
                    orow[j] = orow[j].max(xrow[j]);
                } else {
                    orow[j] = orow[j].min(xrow[j]);
                }
            }
        }
        for s in 0..nseg {
            if !seen[s] {
                out[s * d..(s + 1) * d].fill(0.0);
            }
        }
        let op = if is_max {
            Op::SegmentMax { x, ids, nseg }
        } else {
            Op::SegmentMin { x, ids, nseg }
        };
        self.push(op, Value::new(vec![nseg, d], out))
    }

    /// Population standard deviation per segment; empty and singleton
    /// segments give zero. The backward pass treats a vanishing deviation
    /// as flat (zero gradient) instead of dividing by it.
    pub fn seg_std(&mut self, x: TensorId, ids: Arc<Vec<usize>>, nseg: usize) -> Result<TensorId> {
        let (n, d) = self.seg_validate("segment_std", x, &ids, nseg)?;
        let data = self.val(x).data();
        let mut mean = vec![0.0; nseg * d];
        let mut counts = vec![0usize; nseg];
        for r in 0..n {
            counts[ids[r]] += 1;
            linalg::axpy(&mut mean[ids[r] * d..(ids[r] + 1) * d], 1.0, &data[r * d..(r + 1) * d]);
        }
        for s in 0..nseg {
            if counts[s] > 0 {
                let inv = 1.0 / counts[s] as f64;
                for v in &mut mean[s * d..(s + 1) * d] {
                    *v *= inv;
                }
            }
        }
        let mut var = vec![0.0; nseg * d];
        for r in 0..n {
            let mrow = &mean[ids[r] * d..(ids[r] + 1) * d];
            let xrow = &data[r * d..(r + 1) * d];
            let vrow = &mut var[ids[r] * d..(ids[r] + 1) * d];
            for j in 0..d {
                let dlt = xrow[j] - mrow[j];
                vrow[j] += dlt * dlt;
            }
        }
        let mut out = vec![0.0; nseg * d];
        for s in 0..nseg {
            if counts[s] > 0 {
                let inv = 1.0 / counts[s] as f64;
                for j in 0..d {
                    out[s * d + j] = (var[s * d + j] * inv).sqrt();
                }
            }
        }
        self.push(Op::SegmentStd { x, ids, nseg }, Value::new(vec![nseg, d], out))
    }

    /// Column-wise softmax across the rows of each segment. Output keeps the
    /// input shape; each (segment, column) lane sums to 1.
    pub fn seg_softmax(&mut self, x: TensorId, ids: Arc<Vec<usize>>, nseg: usize) -> Result<TensorId> {
        let (n, d) = self.seg_validate("segment_softmax", x, &ids, nseg)?;
        let data = self.val(x).data();
        let mut mx = vec![f64::NEG_INFINITY; nseg * d];
        for r in 0..n {
            let mrow = &mut mx[ids[r] * d..(ids[r] + 1) * d];
            let xrow = &data[r * d..(r + 1) * d];
            for j in 0..d {
                mrow[j] = mrow[j].max(xrow[j]);
            }
        }
        let mut denom = vec![0.0; nseg * d];
        let mut out = vec![0.0; n * d];
        for r in 0..n {
            let seg = ids[r];
            for j in 0..d {
                let e = (data[r * d + j] - mx[seg * d + j]).exp();
                out[r * d + j] = e;
                denom[seg * d + j] += e;
            }
        }
        for r in 0..n {
            let seg = ids[r];
            for j in 0..d {
                out[r * d + j] /= denom[seg * d + j];
            }
        }
        self.push(Op::SegmentSoftmax { x, ids, nseg }, Value::new(vec![n, d], out))
    }

    pub fn gather_rows(&mut self, x: TensorId, idx: Arc<Vec<usize>>) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("gather_rows", format!("want rank 2, got {s:?}")));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= s[0]) {
            return Err(Error::dim("gather_rows", format!("row {bad} >= {}", s[0])));
        }
        let d = s[1];
        let data = self.val(x).data();
        let mut out = vec![0.0; idx.len() * d];
        for (g, &r) in idx.iter().enumerate() {
            out[g * d..(g + 1) * d].copy_from_slice(&data[r * d..(r + 1) * d]);
        }
        let rows = idx.len();
        self.push(Op::GatherRows { x, idx }, Value::new(vec![rows, d], out))
    }
}

const LN_EPS: f64 = 1e-5;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Reverse step for node `i`: scatter `gy` into the gradients of its inputs.
pub(crate) fn backward_op(tape: &Tape, i: usize, gy: &[f64], grads: &mut Vec<Option<Vec<f64>>>) -> Result<()> {
    let node = &tape.nodes[i];
    let needs = |t: TensorId| tape.nodes[t].needs_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (av, bv) = (tape.val(*a), tape.val(*b));
            let (m, k) = (av.shape()[0], av.shape()[1]);
            let n = bv.shape()[1];
            if needs(*a) {
                let ga = grad_slot(grads, *a, m * k);
                linalg::matmul_nt_acc(gy, bv.data(), m, n, k, ga);
            }
            if needs(*b) {
                let gb = grad_slot(grads, *b, k * n);
                linalg::matmul_tn_acc(av.data(), gy, m, k, n, gb);
            }
        }
        Op::Bmm(a, b) => {
            let (av, bv) = (tape.val(*a), tape.val(*b));
            let (bsz, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
            let n = bv.shape()[2];
            if needs(*a) {
                let ga = grad_slot(grads, *a, bsz * m * k);
                for s in 0..bsz {
                    linalg::matmul_nt_acc(
                        &gy[s * m * n..(s + 1) * m * n],
                        &bv.data()[s * k * n..(s + 1) * k * n],
                        m,
                        n,
                        k,
                        &mut ga[s * m * k..(s + 1) * m * k],
                    );
                }
            }
            if needs(*b) {
                let gb = grad_slot(grads, *b, bsz * k * n);
                for s in 0..bsz {
                    linalg::matmul_tn_acc(
                        &av.data()[s * m * k..(s + 1) * m * k],
                        &gy[s * m * n..(s + 1) * m * n],
                        m,
                        k,
                        n,
                        &mut gb[s * k * n..(s + 1) * k * n],
                    );
                }
            }
        }
        Op::Transpose2(x) => {
            if needs(*x) {
                let s = node.value.shape(); // (n, m)
                let (n, m) = (s[0], s[1]);
                let gx = grad_slot(grads, *x, m * n);
                for r in 0..n {
                    for c in 0..m {
                        gx[c * n + r] += gy[r * m + c];
                    }
                }
            }
        }
        Op::Transpose12(x) => {
            if needs(*x) {
                let s = node.value.shape(); // (b, n, m)
                let (b, n, m) = (s[0], s[1], s[2]);
                let gx = grad_slot(grads, *x, b * m * n);
                for i2 in 0..b {
                    let gyb = &gy[i2 * m * n..(i2 + 1) * m * n];
                    let gxb = &mut gx[i2 * m * n..(i2 + 1) * m * n];
                    for r in 0..n {
                        for c in 0..m {
                            gxb[c * n + r] += gyb[r * m + c];
                        }
                    }
                }
            }
        }
        Op::Reshape(x) => {
            if needs(*x) {
                let gx = grad_slot(grads, *x, gy.len());
                for (g, &v) in gx.iter_mut().zip(gy.iter()) {
                    *g += v;
                }
            }
        }
        Op::Concat { parts, axis } => {
            let out_shape = node.value.shape();
            let outer = product(&out_shape[..*axis]);
            let inner = product(&out_shape[*axis + 1..]);
            let out_block = out_shape[*axis] * inner;
            let mut at = 0;
            for &p in parts {
                let s = tape.val(p).shape();
                let block = s[*axis] * inner;
                if needs(p) {
                    let gp = grad_slot(grads, p, tape.val(p).numel());
                    for o in 0..outer {
                        let src = &gy[o * out_block + at..o * out_block + at + block];
                        linalg::axpy(&mut gp[o * block..(o + 1) * block], 1.0, src);
                    }
                }
                at += block;
            }
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::DivGuarded(a, b) => {
            let shape = node.value.shape().to_vec();
            match &node.op {
                Op::Add(..) => run_bin(tape, grads, *a, *b, &shape, gy, |_, _| 1.0, |_, _| 1.0),
                Op::Sub(..) => run_bin(tape, grads, *a, *b, &shape, gy, |_, _| 1.0, |_, _| -1.0),
                Op::Mul(..) => run_bin(tape, grads, *a, *b, &shape, gy, |_, y| y, |x, _| x),
                Op::Div(..) => run_bin(tape, grads, *a, *b, &shape, gy, |_, y| 1.0 / y, |x, y| -x / (y * y)),
                Op::DivGuarded(..) => run_bin(
                    tape,
                    grads,
                    *a,
                    *b,
                    &shape,
                    gy,
                    |_, y| if y.abs() <= DIV_GUARD_EPS { 0.0 } else { 1.0 / y },
                    |x, y| if y.abs() <= DIV_GUARD_EPS { 0.0 } else { -x / (y * y) },
                ),
                _ => unreachable!(),
            }
        }
        Op::Scale(x, c) => {
            if needs(*x) {
                let gx = grad_slot(grads, *x, gy.len());
                for (g, &v) in gx.iter_mut().zip(gy.iter()) {
                    *g += v * c;
                }
            }
        }
        Op::Relu(x) => {
            if needs(*x) {
                let xd = tape.val(*x).data();
                let gx = grad_slot(grads, *x, gy.len());
                for i2 in 0..gy.len() {
                    if xd[i2] > 0.0 {
                        gx[i2] += gy[i2];
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            if needs(*x) {
                let y = node.value.data();
                let gx = grad_slot(grads, *x, gy.len());
                for i2 in 0..gy.len() {
                    gx[i2] += gy[i2] * y[i2] * (1.0 - y[i2]);
                }
            }
        }
        Op::Tanh(x) => {
            if needs(*x) {
                let y = node.value.data();
                let gx = grad_slot(grads, *x, gy.len());
                for i2 in 0..gy.len() {
                    gx[i2] += gy[i2] * (1.0 - y[i2] * y[i2]);
                }
            }
        }
        Op::Exp(x) => {
            if needs(*x) {
                let y = node.value.data();
                let gx = grad_slot(grads, *x, gy.len());
                for i2 in 0..gy.len() {
                    gx[i2] += gy[i2] * y[i2];
                }
            }
        }
        Op::Softplus(x) => {
            if needs(*x) {
                let xd = tape.val(*x).data();
                let gx = grad_slot(grads, *x, gy.len());
                for i2 in 0..gy.len() {
                    gx[i2] += gy[i2] * sigmoid(xd[i2]);
                }
            }
        }
        Op::Sqrt(x) => {
            if needs(*x) {
                let y = node.value.data();
                let gx = grad_slot(grads, *x, gy.len());
                for i2 in 0..gy.len() {
                    // clamp keeps sqrt(0) from poisoning the pass; anything
                    // that small is numerically flat anyway
                    gx[i2] += gy[i2] * 0.5 / y[i2].max(1e-12);
                }
            }
        }
        Op::SumAll(x) => {
            if needs(*x) {
                let n = tape.val(*x).numel();
                let gx = grad_slot(grads, *x, n);
                for g in gx.iter_mut() {
                    *g += gy[0];
                }
            }
        }
        Op::MeanAll(x) => {
            if needs(*x) {
                let n = tape.val(*x).numel();
                let gx = grad_slot(grads, *x, n);
                let v = gy[0] / n as f64;
                for g in gx.iter_mut() {
                    *g += v;
                }
            }
        }
        Op::SumAxis { x, axis } => {
            if needs(*x) {
                let s = tape.val(*x).shape().to_vec();
                let (outer, len, inner) = axis_split(&s, *axis);
                let gx = grad_slot(grads, *x, product(&s));
                for o in 0..outer {
                    for l in 0..len {
                        let base = (o * len + l) * inner;
                        for i2 in 0..inner {
                            gx[base + i2] += gy[o * inner + i2];
                        }
                    }
                }
            }
        }
        Op::Softmax { x, axis, mask } => {
            if needs(*x) {
                let s = node.value.shape().to_vec();
                let (outer, len, inner) = axis_split(&s, *axis);
                let y = node.value.data();
                let gx = grad_slot(grads, *x, y.len());
                let valid = |idx: usize| mask.as_ref().map_or(true, |m| m[idx]);
                for o in 0..outer {
                    for i2 in 0..inner {
                        let mut dot = 0.0;
                        for l in 0..len {
                            let idx = (o * len + l) * inner + i2;
                            dot += gy[idx] * y[idx];
                        }
                        for l in 0..len {
                            let idx = (o * len + l) * inner + i2;
                            if valid(idx) {
                                gx[idx] += y[idx] * (gy[idx] - dot);
                            }
                        }
                    }
                }
            }
        }
        Op::LayerNorm { x, gain, bias } => {
            let xv = tape.val(*x);
            let d = *xv.shape().last().unwrap();
            let rows = xv.numel() / d;
            let xd = xv.data();
            let g = tape.val(*gain).data();
            let (wx, wg, wb) = (needs(*x), needs(*gain), needs(*bias));
            let mut gxv = if wx { Some(vec![0.0; xd.len()]) } else { None };
            let mut ggv = if wg { Some(vec![0.0; d]) } else { None };
            let mut gbv = if wb { Some(vec![0.0; d]) } else { None };
            let mut xhat = vec![0.0; d];
            for r in 0..rows {
                let row = &xd[r * d..(r + 1) * d];
                let gyr = &gy[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let inv = 1.0 / (var + LN_EPS).sqrt();
                for j in 0..d {
                    xhat[j] = (row[j] - mean) * inv;
                }
                if let Some(gg) = ggv.as_deref_mut() {
                    for j in 0..d {
                        gg[j] += gyr[j] * xhat[j];
                    }
                }
                if let Some(gb) = gbv.as_deref_mut() {
                    for j in 0..d {
                        gb[j] += gyr[j];
                    }
                }
                if let Some(gx) = gxv.as_deref_mut() {
                    let mut m1 = 0.0;
                    let mut m2 = 0.0;
                    for j in 0..d {
                        let t = g[j] * gyr[j];
                        m1 += t;
                        m2 += t * xhat[j];
                    }
                    m1 /= d as f64;
                    m2 /= d as f64;
                    let gxr = &mut gx[r * d..(r + 1) * d];
                    for j in 0..d {
                        let t = g[j] * gyr[j];
                        gxr[j] += inv * (t - m1 - xhat[j] * m2);
                    }
                }
            }
            if let Some(v) = gxv {
                linalg::axpy(grad_slot(grads, *x, xd.len()), 1.0, &v);
            }
            if let Some(v) = ggv {
                linalg::axpy(grad_slot(grads, *gain, d), 1.0, &v);
            }
            if let Some(v) = gbv {
                linalg::axpy(grad_slot(grads, *bias, d), 1.0, &v);
            }
        }
        Op::Dropout { x, p, key } => {
            if needs(*x) {
                let inv = 1.0 / (1.0 - p);
                let gx = grad_slot(grads, *x, gy.len());
                for i2 in 0..gy.len() {
                    if tape.rng.uniform(*key, i2 as u64) >= *p {
                        gx[i2] += gy[i2] * inv;
                    }
                }
            }
        }
        Op::SegmentSum { x, ids, .. } => {
            if needs(*x) {
                let d = node.value.shape()[1];
                let gx = grad_slot(grads, *x, ids.len() * d);
                for r in 0..ids.len() {
                    linalg::axpy(&mut gx[r * d..(r + 1) * d], 1.0, &gy[ids[r] * d..(ids[r] + 1) * d]);
                }
            }
        }
        Op::SegmentMean { x, ids, nseg } => {
            if needs(*x) {
                let d = node.value.shape()[1];
                let mut counts = vec![0usize; *nseg];
                for &s in ids.iter() {
                    counts[s] += 1;
                }
                let gx = grad_slot(grads, *x, ids.len() * d);
                for r in 0..ids.len() {
                    let inv = 1.0 / counts[ids[r]] as f64;
                    linalg::axpy(&mut gx[r * d..(r + 1) * d], inv, &gy[ids[r] * d..(ids[r] + 1) * d]);
                }
            }
        }
        Op::SegmentMax { x, ids, nseg } | Op::SegmentMin { x, ids, nseg } => {
            if needs(*x) {
                let d = node.value.shape()[1];
                let xd = tape.val(*x).data();
                let y = node.value.data();
                // first row attaining the extreme takes the gradient
                let mut taken = vec![false; nseg * d];
                let gx = grad_slot(grads, *x, ids.len() * d);
                for r in 0..ids.len() {
                    let seg = ids[r];
                    for j in 0..d {
                        let slot = seg * d + j;
                        if !taken[slot] && xd[r * d + j] == y[slot] {
                            taken[slot] = true;
                            gx[r * d + j] += gy[slot];
                        }
                    }
                }
            }
        }
        Op::SegmentStd { x, ids, nseg } => {
            if needs(*x) {
                let d = node.value.shape()[1];
                let xd = tape.val(*x).data();
                let y = node.value.data();
                let mut counts = vec![0usize; *nseg];
                let mut mean = vec![0.0; nseg * d];
                for r in 0..ids.len() {
                    counts[ids[r]] += 1;
                    linalg::axpy(&mut mean[ids[r] * d..(ids[r] + 1) * d], 1.0, &xd[r * d..(r + 1) * d]);
                }
                for s in 0..*nseg {
                    if counts[s] > 0 {
                        let inv = 1.0 / counts[s] as f64;
                        for v in &mut mean[s * d..(s + 1) * d] {
                            *v *= inv;
                        }
                    }
                }
                let gx = grad_slot(grads, *x, ids.len() * d);
                for r in 0..ids.len() {
                    let seg = ids[r];
                    let k = counts[seg] as f64;
                    for j in 0..d {
                        let std = y[seg * d + j];
                        if std > 1e-12 {
                            gx[r * d + j] += gy[seg * d + j] * (xd[r * d + j] - mean[seg * d + j]) / (k * std);
                        }
                    }
                }
            }
        }
        Op::SegmentSoftmax { x, ids, nseg } => {
            if needs(*x) {
                let d = node.value.shape()[1];
                let y = node.value.data();
                let mut dot = vec![0.0; nseg * d];
                for r in 0..ids.len() {
                    let seg = ids[r];
                    for j in 0..d {
                        dot[seg * d + j] += gy[r * d + j] * y[r * d + j];
                    }
                }
                let gx = grad_slot(grads, *x, ids.len() * d);
                for r in 0..ids.len() {
                    let seg = ids[r];
                    for j in 0..d {
                        gx[r * d + j] += y[r * d + j] * (gy[r * d + j] - dot[seg * d + j]);
                    }
                }
            }
        }
        Op::GatherRows { x, idx } => {
            if needs(*x) {
                let d = node.value.shape()[1];
                let gx = grad_slot(grads, *x, tape.val(*x).numel());
                for (g, &r) in idx.iter().enumerate() {
                    linalg::axpy(&mut gx[r * d..(r + 1) * d], 1.0, &gy[g * d..(g + 1) * d]);
                }
            }
        }
        Op::LstmPacked { x, w_ih, w_hh, b, offsets, reverse, aux } => {
            super::recurrent::lstm_backward(tape, node, *x, *w_ih, *w_hh, *b, offsets, *reverse, aux, gy, grads);
        }
        Op::SsmScan { x, delta, b_in, c_in, a, d_skip, mask, aux } => {
            super::recurrent::ssm_backward(
                tape, node, *x, *delta, *b_in, *c_in, *a, *d_skip, mask, aux, gy, grads,
            );
        }
    }
    Ok(())
}

/// Run one binary op's backward, handling the case where the same tensor
/// feeds both sides (x*x etc.): each partial then accumulates separately
/// into the single shared slot.
#[allow(clippy::too_many_arguments)]
fn run_bin<FA, FB>(
    tape: &Tape,
    grads: &mut [Option<Vec<f64>>],
    a: TensorId,
    b: TensorId,
    out_shape: &[usize],
    gy: &[f64],
    fa: FA,
    fb: FB,
) where
    FA: Fn(f64, f64) -> f64,
    FB: Fn(f64, f64) -> f64,
{
    let (av, bv) = (tape.val(a), tape.val(b));
    let (wa, wb) = (tape.nodes[a].needs_grad, tape.nodes[b].needs_grad);
    if a == b {
        if wa {
            let mut buf = grads[a].take().unwrap_or_else(|| vec![0.0; av.numel()]);
            bin_backward(av, bv, out_shape, gy, Some(&mut buf), None, &fa, &fb);
            bin_backward(av, bv, out_shape, gy, None, Some(&mut buf), &fa, &fb);
            grads[a] = Some(buf);
        }
        return;
    }
    let mut ga_buf = if wa { Some(grads[a].take().unwrap_or_else(|| vec![0.0; av.numel()])) } else { None };
    let mut gb_buf = if wb { Some(grads[b].take().unwrap_or_else(|| vec![0.0; bv.numel()])) } else { None };
    bin_backward(av, bv, out_shape, gy, ga_buf.as_deref_mut(), gb_buf.as_deref_mut(), &fa, &fb);
    if let Some(v) = ga_buf {
        grads[a] = Some(v);
    }
    if let Some(v) = gb_buf {
        grads[b] = Some(v);
    }
}
