//! Small reusable layers over the tape: parameter binding context, linear
//! layers, MLPs, layer norm, and the PNA message-passing round shared by the
//! drug and protein encoders.

use std::collections::HashMap;
use std::sync::Arc;

use crate::tensor::params::{Init, ParamStore};
use crate::tensor::rng::stream;
use crate::tensor::{Tape, TensorId, Value};
use crate::Result;

/// Per-forward binding of store parameters onto the tape. Each parameter is
/// leafed at most once per tape; `binds` feeds ParamStore::absorb_grads after
/// backward.
pub struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a ParamStore,
    pub binds: Vec<(String, TensorId)>,
    seen: HashMap<String, TensorId>,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore) -> Self {
        Ctx { tape, store, binds: Vec::new(), seen: HashMap::new() }
    }

    /// Trainable parameter leaf.
    pub fn p(&mut self, name: &str) -> Result<TensorId> {
        if let Some(&id) = self.seen.get(name) {
            return Ok(id);
        }
        let id = self.store.leaf(self.tape, name)?;
        self.seen.insert(name.to_string(), id);
        self.binds.push((name.to_string(), id));
        Ok(id)
    }

    /// Constant tensor (inputs, masks, precomputed scalers).
    pub fn cval(&mut self, v: Value) -> TensorId {
        self.tape.constv(v)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub din: usize,
    pub dout: usize,
    pub bias: bool,
}

impl Linear {
    pub fn def(store: &mut ParamStore, name: &str, din: usize, dout: usize, bias: bool) -> Result<Self> {
        store.def(&format!("{name}.w"), &[din, dout], Init::HeUniform { fan_in: din })?;
        if bias {
            store.def(&format!("{name}.b"), &[dout], Init::Zeros)?;
        }
        Ok(Linear { name: name.to_string(), din, dout, bias })
    }

    pub fn fwd(&self, ctx: &mut Ctx, x: TensorId) -> Result<TensorId> {
        let w = ctx.p(&format!("{}.w", self.name))?;
        let y = ctx.tape.matmul(x, w)?;
        if self.bias {
            let b = ctx.p(&format!("{}.b", self.name))?;
            ctx.tape.add(y, b)
        } else {
            Ok(y)
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub name: String,
}

impl LayerNorm {
    pub fn def(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        store.def(&format!("{name}.g"), &[d], Init::Ones)?;
        store.def(&format!("{name}.b"), &[d], Init::Zeros)?;
        Ok(LayerNorm { name: name.to_string() })
    }

    pub fn fwd(&self, ctx: &mut Ctx, x: TensorId) -> Result<TensorId> {
        let g = ctx.p(&format!("{}.g", self.name))?;
        let b = ctx.p(&format!("{}.b", self.name))?;
        ctx.tape.layer_norm(x, g, b)
    }
}

/// Linear -> ReLU -> ... -> Linear. No activation after the last layer;
/// optional dropout after each interior ReLU (train mode only).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub dropout: f64,
}

impl Mlp {
    pub fn def(store: &mut ParamStore, name: &str, widths: &[usize], dropout: f64) -> Result<Self> {
        assert!(widths.len() >= 2);
        let mut layers = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            layers.push(Linear::def(store, &format!("{name}.{i}"), w[0], w[1], true)?);
        }
        Ok(Mlp { layers, dropout })
    }

    pub fn fwd(&self, ctx: &mut Ctx, x: TensorId) -> Result<TensorId> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.fwd(ctx, h)?;
            if i < last {
                h = ctx.tape.relu(h)?;
                if self.dropout > 0.0 {
                    h = ctx.tape.dropout(h, self.dropout, stream(&format!("{}.drop{i}", layer.name)))?;
                }
            }
        }
        Ok(h)
    }
}

/// Sparse graph view shared by both encoders: directed edges (both
/// orientations), per-edge features, per-node in-degree.
#[derive(Debug, Clone)]
pub struct GraphRef<'g> {
    pub n_nodes: usize,
    pub src: &'g Arc<Vec<usize>>,
    pub dst: &'g Arc<Vec<usize>>,
    pub edge_feats: &'g Value,
    pub degree: &'g [usize],
}

/// One principal-neighborhood-aggregation round.
///
/// Messages m = MLP_pre([x_dst || x_src || phi(e)]) are pooled per receiving
/// node with {mean, min, max, std}, each block scaled by {1, log(deg+1)/d_amp,
/// deg/d_lin}, and the 12d result is mixed back through MLP_post and W.
/// Isolated nodes aggregate to zeros.
#[derive(Debug, Clone)]
pub struct PnaRound {
    pub edge: Linear,
    pub pre: Mlp,
    pub post: Mlp,
    pub w: Linear,
    /// Buffer name holding [d_amp, d_lin], the training-fold degree scales.
    pub stats: String,
}

impl PnaRound {
    pub fn def(store: &mut ParamStore, name: &str, d: usize, edge_dim: usize, stats: &str) -> Result<Self> {
        Ok(PnaRound {
            edge: Linear::def(store, &format!("{name}.edge"), edge_dim, d, true)?,
            pre: Mlp::def(store, &format!("{name}.pre"), &[3 * d, d, d], 0.0)?,
            post: Mlp::def(store, &format!("{name}.post"), &[13 * d, d, d], 0.0)?,
            w: Linear::def(store, &format!("{name}.w"), d, d, false)?,
            stats: stats.to_string(),
        })
    }

    pub fn fwd(&self, ctx: &mut Ctx, x: TensorId, g: &GraphRef) -> Result<TensorId> {
        let n = g.n_nodes;
        let stats = ctx.store.get(&self.stats)?.value.data();
        let (d_amp, d_lin) = (stats[0].max(1e-6), stats[1].max(1e-6));

        let agg = if g.src.is_empty() {
            let d_hidden = self.pre.layers.last().unwrap().dout;
            ctx.cval(Value::zeros(vec![n, 4 * d_hidden]))
        } else {
            let x_dst = ctx.tape.gather_rows(x, Arc::clone(g.dst))?;
            let x_src = ctx.tape.gather_rows(x, Arc::clone(g.src))?;
            let e = ctx.cval(g.edge_feats.clone());
            let phi = self.edge.fwd(ctx, e)?;
            let m_in = ctx.tape.concat(&[x_dst, x_src, phi], 1)?;
            let m = self.pre.fwd(ctx, m_in)?;
            let mean = ctx.tape.seg_mean(m, Arc::clone(g.dst), n)?;
            let min = ctx.tape.seg_min(m, Arc::clone(g.dst), n)?;
            let max = ctx.tape.seg_max(m, Arc::clone(g.dst), n)?;
            let std = ctx.tape.seg_std(m, Arc::clone(g.dst), n)?;
            ctx.tape.concat(&[mean, min, max, std], 1)?
        };

        let amp: Vec<f64> = g.degree.iter().map(|&dg| ((dg + 1) as f64).ln() / d_amp).collect();
        let lin: Vec<f64> = g.degree.iter().map(|&dg| dg as f64 / d_lin).collect();
        let amp = ctx.cval(Value::new(vec![n, 1], amp));
        let lin = ctx.cval(Value::new(vec![n, 1], lin));
        let scaled_amp = ctx.tape.mul(agg, amp)?;
        let scaled_lin = ctx.tape.mul(agg, lin)?;
        let h = ctx.tape.concat(&[agg, scaled_amp, scaled_lin], 1)?;

        let mixed_in = ctx.tape.concat(&[x, h], 1)?;
        let mixed = self.post.fwd(ctx, mixed_in)?;
        self.w.fwd(ctx, mixed)
    }
}

/// d-wide stack of PNA rounds.
#[derive(Debug, Clone)]
pub struct PnaStack {
    pub rounds: Vec<PnaRound>,
}

impl PnaStack {
    pub fn def(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        edge_dim: usize,
        rounds: usize,
        stats: &str,
    ) -> Result<Self> {
        let rounds = (0..rounds)
            .map(|r| PnaRound::def(store, &format!("{name}{r}"), d, edge_dim, stats))
            .collect::<Result<Vec<_>>>()?;
        Ok(PnaStack { rounds })
    }

    pub fn fwd(&self, ctx: &mut Ctx, x: TensorId, g: &GraphRef) -> Result<TensorId> {
        let mut h = x;
        for round in &self.rounds {
            h = round.fwd(ctx, h, g)?;
        }
        Ok(h)
    }
}

/// Pathway fusion used on both sides: Norm(ReLU(W [a || b] + bias)).
#[derive(Debug, Clone)]
pub struct FusePaths {
    pub lin: Linear,
    pub norm: LayerNorm,
}

impl FusePaths {
    pub fn def(store: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(FusePaths {
            lin: Linear::def(store, &format!("{name}.lin"), 2 * d, d, true)?,
            norm: LayerNorm::def(store, &format!("{name}.norm"), d)?,
        })
    }

    pub fn fwd(&self, ctx: &mut Ctx, a: TensorId, b: TensorId) -> Result<TensorId> {
        let cat = ctx.tape.concat(&[a, b], 1)?;
        let h = self.lin.fwd(ctx, cat)?;
        let h = ctx.tape.relu(h)?;
        self.norm.fwd(ctx, h)
    }
}
