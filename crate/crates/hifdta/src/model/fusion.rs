//! Multi-head bilinear cross-attention between residue clusters and each
//! enabled drug scale, with residual updates on both sides, plus the
//! configurable combiner (gated softmax average, concatenation, or addition)
//! that merges the per-scale cluster updates.

use std::sync::Arc;

use super::batch::Batch;
use super::drug::DrugOut;
use super::nn::{Ctx, Linear};
use super::{FusionKind, ModelConfig};
use crate::tensor::params::{Init, ParamStore};
use crate::tensor::{TensorId, Value};
use crate::Result;

/// Drug-side tensors after cross-attention, in the sparse layouts the
/// predictor consumes. Disabled scales pass the encoder output through.
pub struct DrugUpdated {
    /// n_atoms x d.
    pub atom: TensorId,
    /// n_clusters x d.
    pub sub: TensorId,
    /// B x d.
    pub mol: TensorId,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum ScaleKind {
    Atom,
    Sub,
    Mol,
}

struct Scale {
    kind: ScaleKind,
    name: String,
}

pub struct FusionBlock {
    d: usize,
    heads: usize,
    k: usize,
    scales: Vec<Scale>,
    kind: FusionKind,
    cat: Option<Linear>,
}

impl FusionBlock {
    pub fn def(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let (d, k) = (cfg.d, cfg.k_bilinear);
        let ab = cfg.ablation;
        let mut scales = Vec::new();
        for (kind, name, on) in [
            (ScaleKind::Atom, "fusion.atom", ab.use_atom),
            (ScaleKind::Sub, "fusion.sub", ab.use_sub),
            (ScaleKind::Mol, "fusion.mol", ab.use_mol),
        ] {
            if !on {
                continue;
            }
            for j in 0..cfg.heads_fusion {
                Linear::def(store, &format!("{name}.h{j}.wv"), d, d * k, false)?;
                Linear::def(store, &format!("{name}.h{j}.wr"), d, d * k, false)?;
                store.def(
                    &format!("{name}.h{j}.w"),
                    &[d * k],
                    Init::HeUniform { fan_in: d * k },
                )?;
                store.def(&format!("{name}.h{j}.b"), &[1], Init::Zeros)?;
            }
            scales.push(Scale { kind, name: name.to_string() });
        }
        let mut cat = None;
        match ab.fusion {
            FusionKind::Gated => {
                store.def("fusion.gate", &[scales.len()], Init::Zeros)?;
            }
            FusionKind::Concat => {
                cat = Some(Linear::def(store, "fusion.cat", scales.len() * d, d, true)?);
            }
            FusionKind::Add => {}
        }
        Ok(FusionBlock { d, heads: cfg.heads_fusion, k, scales, kind: ab.fusion, cat })
    }

    /// Returns the combined cluster features (B x cl x d) and the updated
    /// drug tensors.
    pub fn fwd(
        &self,
        ctx: &mut Ctx,
        batch: &Batch,
        drug: &DrugOut,
        clusters: TensorId,
    ) -> Result<(TensorId, DrugUpdated)> {
        let d = self.d;
        let bsz = batch.b;
        let n_r = ctx.tape.shape(clusters)[1];
        let mut upd = DrugUpdated { atom: drug.atom, sub: drug.sub, mol: drug.mol };
        let mut r_parts = Vec::with_capacity(self.scales.len());

        for scale in &self.scales {
            let dg = &batch.drug;
            // Dense drug view (B, n_v, d) plus its validity mask.
            let (v, n_v, mask) = match scale.kind {
                ScaleKind::Atom => {
                    let dense = dense_view(ctx, drug.atom, &dg.atom_dense_gather, bsz, dg.a_max, d)?;
                    (dense, dg.a_max, Some(&dg.atom_mask))
                }
                ScaleKind::Sub => {
                    let dense =
                        dense_view(ctx, drug.sub, &dg.cluster_dense_gather, bsz, dg.c_max, d)?;
                    (dense, dg.c_max, Some(&dg.cluster_mask))
                }
                ScaleKind::Mol => (ctx.tape.reshape(drug.mol, vec![bsz, 1, d])?, 1, None),
            };
            // Weights for the cluster update normalize over the drug axis, so
            // padded drug slots need masking; the transposed scores have
            // layout (b, r, v).
            let alpha_mask = mask.map(|m| {
                let mut full = Vec::with_capacity(bsz * n_r * n_v);
                for b in 0..bsz {
                    for _ in 0..n_r {
                        full.extend_from_slice(&m[b * n_v..(b + 1) * n_v]);
                    }
                }
                Arc::new(full)
            });

            let v2 = ctx.tape.reshape(v, vec![bsz * n_v, d])?;
            let r2 = ctx.tape.reshape(clusters, vec![bsz * n_r, d])?;
            let mut v_acc = None;
            let mut r_acc = None;
            for j in 0..self.heads {
                let wv = Linear {
                    name: format!("{}.h{j}.wv", scale.name),
                    din: d,
                    dout: d * self.k,
                    bias: false,
                };
                let wr = Linear {
                    name: format!("{}.h{j}.wr", scale.name),
                    din: d,
                    dout: d * self.k,
                    bias: false,
                };
                let vhat = wv.fwd(ctx, v2)?;
                let rhat = wr.fwd(ctx, r2)?;
                let vhat3 = ctx.tape.reshape(vhat, vec![bsz, n_v, d * self.k])?;
                let rhat3 = ctx.tape.reshape(rhat, vec![bsz, n_r, d * self.k])?;
                let w = ctx.p(&format!("{}.h{j}.w", scale.name))?;
                let b = ctx.p(&format!("{}.h{j}.b", scale.name))?;
                let vw = ctx.tape.mul(vhat3, w)?;
                let rt = ctx.tape.transpose12(rhat3)?;
                let s = ctx.tape.bmm(vw, rt)?;
                let s = ctx.tape.add(s, b)?;

                // Drug update: weights over clusters (all valid).
                let beta = ctx.tape.softmax(s, 2, None)?;
                let v_upd = ctx.tape.bmm(beta, clusters)?;
                v_acc = Some(match v_acc {
                    None => v_upd,
                    Some(acc) => ctx.tape.add(acc, v_upd)?,
                });

                // Cluster update: weights over drug slots, padding masked.
                let st = ctx.tape.transpose12(s)?;
                let alpha = ctx.tape.softmax(st, 2, alpha_mask.clone())?;
                let r_upd = ctx.tape.bmm(alpha, v)?;
                r_acc = Some(match r_acc {
                    None => r_upd,
                    Some(acc) => ctx.tape.add(acc, r_upd)?,
                });
            }
            let inv_h = 1.0 / self.heads as f64;
            let v_mean = ctx.tape.scale(v_acc.unwrap(), inv_h)?;
            let v_tilde = ctx.tape.add(v, v_mean)?;
            let r_mean = ctx.tape.scale(r_acc.unwrap(), inv_h)?;
            r_parts.push(ctx.tape.add(clusters, r_mean)?);

            // Back to the sparse layout for the predictor.
            let vt2 = ctx.tape.reshape(v_tilde, vec![bsz * n_v, d])?;
            match scale.kind {
                ScaleKind::Atom => {
                    upd.atom = ctx.tape.gather_rows(vt2, Arc::clone(&dg.atom_dense_slot))?;
                }
                ScaleKind::Sub => {
                    upd.sub = ctx.tape.gather_rows(vt2, Arc::clone(&dg.cluster_dense_slot))?;
                }
                ScaleKind::Mol => {
                    upd.mol = ctx.tape.reshape(v_tilde, vec![bsz, d])?;
                }
            }
        }

        let combined = match self.kind {
            FusionKind::Gated => {
                let g = ctx.p("fusion.gate")?;
                let sm = ctx.tape.softmax(g, 0, None)?;
                let sm = ctx.tape.reshape(sm, vec![self.scales.len(), 1])?;
                let mut acc = None;
                for (i, &part) in r_parts.iter().enumerate() {
                    let wi = ctx.tape.gather_rows(sm, Arc::new(vec![i]))?;
                    let term = ctx.tape.mul(part, wi)?;
                    acc = Some(match acc {
                        None => term,
                        Some(prev) => ctx.tape.add(prev, term)?,
                    });
                }
                acc.unwrap()
            }
            FusionKind::Concat => {
                let flat: Vec<TensorId> = r_parts
                    .iter()
                    .map(|&p| ctx.tape.reshape(p, vec![bsz * n_r, d]))
                    .collect::<Result<_>>()?;
                let cat = ctx.tape.concat(&flat, 1)?;
                let mixed = self.cat.as_ref().unwrap().fwd(ctx, cat)?;
                ctx.tape.reshape(mixed, vec![bsz, n_r, d])?
            }
            FusionKind::Add => {
                let mut acc = r_parts[0];
                for &p in &r_parts[1..] {
                    acc = ctx.tape.add(acc, p)?;
                }
                acc
            }
        };
        Ok((combined, upd))
    }
}

/// Sparse rows -> (B, n_max, d) dense view. The gather table points padded
/// slots at an appended zero row.
fn dense_view(
    ctx: &mut Ctx,
    x: TensorId,
    gather: &Arc<Vec<usize>>,
    bsz: usize,
    n_max: usize,
    d: usize,
) -> Result<TensorId> {
    let zrow = ctx.cval(Value::zeros(vec![1, d]));
    let padded = ctx.tape.concat(&[x, zrow], 0)?;
    let rows = ctx.tape.gather_rows(padded, Arc::clone(gather))?;
    ctx.tape.reshape(rows, vec![bsz, n_max, d])
}
