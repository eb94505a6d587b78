//! Protein encoder: fused residue features projected to width d, a global
//! pathway (degree sort, dense batching, selective state-space scan, unsort),
//! a local PNA pathway over the contact graph, and a three-level GCN + mincut
//! pooling hierarchy producing residue clusters and auxiliary losses.

use std::sync::Arc;

use super::batch::{Batch, PROT_IN_DIM};
use super::nn::{Ctx, FusePaths, GraphRef, Linear, PnaStack};
use super::{ModelConfig, PROT_DEG_STATS};
use crate::protein::N_RBF;
use crate::tensor::params::{Init, ParamStore};
use crate::tensor::{TensorId, Value};
use crate::Result;

pub struct ProtOut {
    /// B x r_max x d residue features in original order, padded with zeros.
    pub dense: TensorId,
    /// B x cl_last x d final cluster features.
    pub clusters: TensorId,
    /// Assignment matrices per level: (B, r_max, cl1), (B, cl1, cl2), ...
    pub assign: Vec<TensorId>,
    /// Scalars, summed over levels.
    pub l_cut: TensorId,
    pub l_ortho: TensorId,
}

pub struct ProtEncoder {
    d: usize,
    proj: Linear,
    /// Local pathway; absent under the global-only ablation.
    pna: Option<PnaStack>,
    /// Global pathway projections; absent under the local-only ablation.
    ssm: Option<SsmParams>,
    fuse: FusePaths,
    pools: Vec<PoolLevel>,
}

struct SsmParams {
    wd: Linear,
    wb: Linear,
    wc: Linear,
}

struct PoolLevel {
    gcn1: Linear,
    gcn2: Linear,
    cl: usize,
}

impl ProtEncoder {
    pub fn def(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d;
        let ab = cfg.ablation;
        let proj = Linear::def(store, "prot.proj", PROT_IN_DIM, d, true)?;
        let pna = if ab.prot_global_only {
            None
        } else {
            Some(PnaStack::def(store, "prot.pna", d, N_RBF, cfg.layers, PROT_DEG_STATS)?)
        };
        let ssm = if ab.prot_local_only {
            None
        } else {
            let n = cfg.ssm_state;
            store.def("prot.ssm.a_log", &[d, n], Init::SsmALog)?;
            store.def("prot.ssm.d", &[d], Init::Ones)?;
            Some(SsmParams {
                wd: Linear::def(store, "prot.ssm.wd", d, d, true)?,
                wb: Linear::def(store, "prot.ssm.wb", d, n, false)?,
                wc: Linear::def(store, "prot.ssm.wc", d, n, false)?,
            })
        };
        let fuse = FusePaths::def(store, "prot.fuse", d)?;
        let pools = cfg
            .cluster_sizes
            .iter()
            .enumerate()
            .map(|(l, &cl)| {
                Ok(PoolLevel {
                    gcn1: Linear::def(store, &format!("prot.pool{l}.gcn1"), d, d, true)?,
                    gcn2: Linear::def(store, &format!("prot.pool{l}.gcn2"), d, cl, true)?,
                    cl,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProtEncoder { d, proj, pna, ssm, fuse, pools })
    }

    pub fn fwd(&self, ctx: &mut Ctx, batch: &Batch) -> Result<ProtOut> {
        let pg = &batch.prot;
        let d = self.d;
        let x = ctx.cval(pg.feats.clone());
        let h0 = self.proj.fwd(ctx, x)?;

        let local = match &self.pna {
            Some(p) => {
                let g = GraphRef {
                    n_nodes: pg.n_res,
                    src: &pg.edge_src,
                    dst: &pg.edge_dst,
                    edge_feats: &pg.edge_feats,
                    degree: &pg.degree,
                };
                p.fwd(ctx, h0, &g)?
            }
            None => ctx.cval(Value::zeros(vec![pg.n_res, d])),
        };

        let global = match &self.ssm {
            Some(ssm) => {
                // Degree-sorted dense layout; the appended zero row feeds the
                // padded slots.
                let zrow = ctx.cval(Value::zeros(vec![1, d]));
                let padded = ctx.tape.concat(&[h0, zrow], 0)?;
                let sorted = ctx.tape.gather_rows(padded, Arc::clone(&pg.sort_gather))?;
                let delta = ssm.wd.fwd(ctx, sorted)?;
                let delta = ctx.tape.softplus(delta)?;
                let b_in = ssm.wb.fwd(ctx, sorted)?;
                let c_in = ssm.wc.fwd(ctx, sorted)?;
                let n = ctx.tape.shape(b_in)[1];
                let x3 = ctx.tape.reshape(sorted, vec![batch.b, pg.r_max, d])?;
                let delta3 = ctx.tape.reshape(delta, vec![batch.b, pg.r_max, d])?;
                let b3 = ctx.tape.reshape(b_in, vec![batch.b, pg.r_max, n])?;
                let c3 = ctx.tape.reshape(c_in, vec![batch.b, pg.r_max, n])?;
                let a_log = ctx.p("prot.ssm.a_log")?;
                let a_exp = ctx.tape.exp_t(a_log)?;
                let a = ctx.tape.scale(a_exp, -1.0)?;
                let d_skip = ctx.p("prot.ssm.d")?;
                let y = ctx
                    .tape
                    .ssm_scan(x3, delta3, b3, c3, a, d_skip, Arc::clone(&pg.ssm_mask))?;
                let y2 = ctx.tape.reshape(y, vec![batch.b * pg.r_max, d])?;
                ctx.tape.gather_rows(y2, Arc::clone(&pg.unsort_gather))?
            }
            None => ctx.cval(Value::zeros(vec![pg.n_res, d])),
        };

        let residue = self.fuse.fwd(ctx, local, global)?;

        // Original-order dense view for pooling and attention.
        let zrow = ctx.cval(Value::zeros(vec![1, d]));
        let padded = ctx.tape.concat(&[residue, zrow], 0)?;
        let dense2 = ctx.tape.gather_rows(padded, Arc::clone(&pg.dense_gather))?;
        let dense = ctx.tape.reshape(dense2, vec![batch.b, pg.r_max, d])?;

        let mut x = dense;
        let mut a = ctx.cval(pg.adj.clone());
        let mut ahat = ctx.cval(pg.ahat.clone());
        let mut mask: Option<&[bool]> = Some(&pg.res_mask);
        let mut assign = Vec::with_capacity(self.pools.len());
        let mut l_cut = None;
        let mut l_ortho = None;
        for level in &self.pools {
            let out = cluster_level(ctx, &level.gcn1, &level.gcn2, x, a, ahat, mask, level.cl)?;
            assign.push(out.m);
            x = out.x_next;
            a = out.a_next;
            ahat = out.ahat_next;
            mask = None; // pooled levels have no padding
            l_cut = Some(match l_cut {
                None => out.l_cut,
                Some(acc) => ctx.tape.add(acc, out.l_cut)?,
            });
            l_ortho = Some(match l_ortho {
                None => out.l_ortho,
                Some(acc) => ctx.tape.add(acc, out.l_ortho)?,
            });
        }

        Ok(ProtOut {
            dense,
            clusters: x,
            assign,
            l_cut: l_cut.unwrap(),
            l_ortho: l_ortho.unwrap(),
        })
    }
}

struct LevelOut {
    m: TensorId,
    x_next: TensorId,
    a_next: TensorId,
    ahat_next: TensorId,
    l_cut: TensorId,
    l_ortho: TensorId,
}

/// One pooling level: two GCN layers score cluster logits, a masked softmax
/// yields the assignment M (padded rows all zero), features and adjacency are
/// pooled, and the mincut losses are averaged over the batch. The returned
/// adjacency has its diagonal zeroed and rows renormalized, with the matching
/// symmetric normalization for the next level's GCN.
#[allow(clippy::too_many_arguments)]
fn cluster_level(
    ctx: &mut Ctx,
    gcn1: &Linear,
    gcn2: &Linear,
    x: TensorId,
    a: TensorId,
    ahat: TensorId,
    mask: Option<&[bool]>,
    cl: usize,
) -> Result<LevelOut> {
    let shape = ctx.tape.shape(x).to_vec();
    let (bsz, n, d) = (shape[0], shape[1], shape[2]);

    let ax = ctx.tape.bmm(ahat, x)?;
    let ax2 = ctx.tape.reshape(ax, vec![bsz * n, d])?;
    let h = gcn1.fwd(ctx, ax2)?;
    let h = ctx.tape.relu(h)?;
    let h3 = ctx.tape.reshape(h, vec![bsz, n, d])?;
    let ah = ctx.tape.bmm(ahat, h3)?;
    let ah2 = ctx.tape.reshape(ah, vec![bsz * n, d])?;
    let logits = gcn2.fwd(ctx, ah2)?;
    let logits3 = ctx.tape.reshape(logits, vec![bsz, n, cl])?;
    let mask_rep = mask.map(|m| {
        Arc::new(m.iter().flat_map(|&v| std::iter::repeat(v).take(cl)).collect::<Vec<bool>>())
    });
    let m = ctx.tape.softmax(logits3, 2, mask_rep)?;

    let mt = ctx.tape.transpose12(m)?;
    let x_next = ctx.tape.bmm(mt, x)?;
    let am = ctx.tape.bmm(a, m)?;
    let a_pool = ctx.tape.bmm(mt, am)?;

    let eye = ctx.cval(identity(cl));
    // L_cut = -mean_b Tr(M'AM) / Tr(M'DM); Tr(M'DM) = sum_ic d_i M_ic^2.
    let diag = ctx.tape.mul(a_pool, eye)?;
    let num = ctx.tape.sum_axis(diag, 2)?;
    let num = ctx.tape.sum_axis(num, 1)?;
    let dvec = ctx.tape.sum_axis(a, 2)?;
    let msq = ctx.tape.mul(m, m)?;
    let msq_d = ctx.tape.mul(msq, dvec)?;
    let den = ctx.tape.sum_axis(msq_d, 2)?;
    let den = ctx.tape.sum_axis(den, 1)?;
    let ratio = ctx.tape.div_guarded(num, den)?;
    let mean_ratio = ctx.tape.mean_all(ratio)?;
    let l_cut = ctx.tape.scale(mean_ratio, -1.0)?;

    // L_ortho = mean_b || M'M/||M'M||_F - I/sqrt(cl) ||_F.
    let mtm = ctx.tape.bmm(mt, m)?;
    let sq = ctx.tape.mul(mtm, mtm)?;
    let fro2 = ctx.tape.sum_axis(sq, 2)?;
    let fro2 = ctx.tape.sum_axis(fro2, 1)?;
    let fro = ctx.tape.sqrt_t(fro2)?;
    let normed = ctx.tape.div(mtm, fro)?;
    let target = ctx.cval(scaled_identity(cl, 1.0 / (cl as f64).sqrt()));
    let diff = ctx.tape.sub(normed, target)?;
    let dsq = ctx.tape.mul(diff, diff)?;
    let t = ctx.tape.sum_axis(dsq, 2)?;
    let t = ctx.tape.sum_axis(t, 1)?;
    let per = ctx.tape.sqrt_t(t)?;
    let l_ortho = ctx.tape.mean_all(per)?;

    // Pooled adjacency: zero diagonal, row-normalized (guarded for isolated
    // clusters), then Ahat = D~^{-1/2}(A+I)D~^{-1/2}.
    let offdiag = ctx.cval(ones_minus_identity(cl));
    let a_zero = ctx.tape.mul(a_pool, offdiag)?;
    let rowsum = ctx.tape.sum_axis(a_zero, 2)?;
    let a_next = ctx.tape.div_guarded(a_zero, rowsum)?;
    let atil = ctx.tape.add(a_next, eye)?;
    let dtil = ctx.tape.sum_axis(atil, 2)?;
    let dsqrt = ctx.tape.sqrt_t(dtil)?;
    let one = ctx.cval(Value::scalar(1.0));
    let inv = ctx.tape.div(one, dsqrt)?;
    let scaled = ctx.tape.mul(atil, inv)?;
    let inv_row = ctx.tape.transpose12(inv)?;
    let ahat_next = ctx.tape.mul(scaled, inv_row)?;

    Ok(LevelOut { m, x_next, a_next, ahat_next, l_cut, l_ortho })
}

fn identity(n: usize) -> Value {
    scaled_identity(n, 1.0)
}

fn scaled_identity(n: usize, s: f64) -> Value {
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        data[i * n + i] = s;
    }
    Value::new(vec![n, n], data)
}

fn ones_minus_identity(n: usize) -> Value {
    let mut data = vec![1.0; n * n];
    for i in 0..n {
        data[i * n + i] = 0.0;
    }
    Value::new(vec![n, n], data)
}
