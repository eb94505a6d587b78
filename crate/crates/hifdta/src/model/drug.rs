//! Drug encoder: shared atom embedding, a global BiLSTM pathway over SMILES
//! token order, a local PNA pathway over the bond graph, and the three output
//! scales (atoms, substructures, whole molecule).

use std::sync::Arc;

use super::batch::Batch;
use super::nn::{Ctx, FusePaths, GraphRef, LayerNorm, Linear, Mlp, PnaStack};
use super::{ModelConfig, DRUG_DEG_STATS};
use crate::chem::features::{ATOM_FEATURES, BOND_FEATURES};
use crate::chem::junction::CLUSTER_VOCAB;
use crate::tensor::params::{Init, ParamStore};
use crate::tensor::rng::stream;
use crate::tensor::{TensorId, Value};
use crate::Result;

pub struct DrugOut {
    /// n_atoms x d fused atom features.
    pub atom: TensorId,
    /// n_clusters x d substructure features.
    pub sub: TensorId,
    /// B x d molecule features.
    pub mol: TensorId,
}

pub struct DrugEncoder {
    d: usize,
    heads: usize,
    dropout: f64,
    embed1: Linear,
    embed2: Linear,
    embed_norm: LayerNorm,
    /// Global pathway; absent under the local-only ablation.
    has_lstm: bool,
    /// Local pathway; absent under the global-only ablation.
    pna: Option<PnaStack>,
    fuse: FusePaths,
    sub_w: Linear,
    /// Per-head cluster scorers for molecule-level attention.
    att: Vec<Mlp>,
}

impl DrugEncoder {
    pub fn def(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d;
        let ab = cfg.ablation;
        let embed1 = Linear::def(store, "drug.embed.l1", ATOM_FEATURES, d, true)?;
        let embed2 = Linear::def(store, "drug.embed.l2", d, d, true)?;
        let embed_norm = LayerNorm::def(store, "drug.embed.norm", d)?;
        let has_lstm = !ab.drug_local_only;
        if has_lstm {
            let h = d / 2;
            for dir in ["f", "b"] {
                store.def(
                    &format!("drug.lstm.{dir}.w_ih"),
                    &[d, 4 * h],
                    Init::HeUniform { fan_in: d },
                )?;
                store.def(
                    &format!("drug.lstm.{dir}.w_hh"),
                    &[h, 4 * h],
                    Init::OrthogonalGates { hidden: h },
                )?;
                store.def(&format!("drug.lstm.{dir}.b"), &[4 * h], Init::Zeros)?;
            }
        }
        let pna = if ab.drug_global_only {
            None
        } else {
            Some(PnaStack::def(store, "drug.pna", d, BOND_FEATURES, cfg.layers, DRUG_DEG_STATS)?)
        };
        let fuse = FusePaths::def(store, "drug.fuse", d)?;
        store.def("drug.sub.table", &[CLUSTER_VOCAB, d], Init::Normal { std: 0.02 })?;
        let sub_w = Linear::def(store, "drug.sub.w", d, d, false)?;
        let dh = d / cfg.heads_drug;
        let att = (0..cfg.heads_drug)
            .map(|j| Mlp::def(store, &format!("drug.att.h{j}"), &[dh, dh, 1], 0.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(DrugEncoder {
            d,
            heads: cfg.heads_drug,
            dropout: cfg.dropout,
            embed1,
            embed2,
            embed_norm,
            has_lstm,
            pna,
            fuse,
            sub_w,
            att,
        })
    }

    pub fn fwd(&self, ctx: &mut Ctx, batch: &Batch) -> Result<DrugOut> {
        let dg = &batch.drug;
        let x = ctx.cval(dg.atom_feats.clone());
        let h = self.embed1.fwd(ctx, x)?;
        let h = ctx.tape.relu(h)?;
        let h = self.embed2.fwd(ctx, h)?;
        let h = ctx.tape.relu(h)?;
        let h0 = self.embed_norm.fwd(ctx, h)?;

        let local = match &self.pna {
            Some(p) => {
                let g = GraphRef {
                    n_nodes: dg.n_atoms,
                    src: &dg.edge_src,
                    dst: &dg.edge_dst,
                    edge_feats: &dg.edge_feats,
                    degree: &dg.degree,
                };
                p.fwd(ctx, h0, &g)?
            }
            None => ctx.cval(Value::zeros(vec![dg.n_atoms, self.d])),
        };
        let global = if self.has_lstm {
            let mut dirs = Vec::with_capacity(2);
            for (dir, rev) in [("f", false), ("b", true)] {
                let w_ih = ctx.p(&format!("drug.lstm.{dir}.w_ih"))?;
                let w_hh = ctx.p(&format!("drug.lstm.{dir}.w_hh"))?;
                let b = ctx.p(&format!("drug.lstm.{dir}.b"))?;
                dirs.push(ctx.tape.lstm_packed(
                    h0,
                    w_ih,
                    w_hh,
                    b,
                    Arc::clone(&dg.lstm_offsets),
                    rev,
                )?);
            }
            ctx.tape.concat(&dirs, 1)?
        } else {
            ctx.cval(Value::zeros(vec![dg.n_atoms, self.d]))
        };
        let atom = self.fuse.fwd(ctx, local, global)?;

        // Substructures: mean over member atoms, residual on a type embedding.
        let member = ctx.tape.gather_rows(atom, Arc::clone(&dg.member_atom))?;
        let pooled = ctx.tape.seg_mean(member, Arc::clone(&dg.member_cluster), dg.n_clusters)?;
        let table = ctx.p("drug.sub.table")?;
        let h_group = ctx.tape.gather_rows(table, Arc::clone(&dg.cluster_types))?;
        let lin = self.sub_w.fwd(ctx, pooled)?;
        let lin = ctx.tape.relu(lin)?;
        let sub = ctx.tape.add(h_group, lin)?;

        // Molecule: per-head scored attention over each molecule's clusters.
        // Row c of the (C*heads, d/heads) reshape holds cluster c/heads, head
        // c%heads, so head j occupies rows c*heads+j over the original column
        // block [j*dh, (j+1)*dh).
        let dh = self.d / self.heads;
        let resh = ctx.tape.reshape(sub, vec![dg.n_clusters * self.heads, dh])?;
        let mut parts = Vec::with_capacity(self.heads);
        for (j, mlp) in self.att.iter().enumerate() {
            let idx: Vec<usize> = (0..dg.n_clusters).map(|c| c * self.heads + j).collect();
            let slice = ctx.tape.gather_rows(resh, Arc::new(idx))?;
            let score = mlp.fwd(ctx, slice)?;
            let score = ctx.tape.dropout(
                score,
                self.dropout,
                stream(&format!("drug.att.h{j}.drop")),
            )?;
            let a = ctx.tape.seg_softmax(score, Arc::clone(&dg.cluster_mol), batch.b)?;
            let weighted = ctx.tape.mul(slice, a)?;
            parts.push(ctx.tape.seg_sum(weighted, Arc::clone(&dg.cluster_mol), batch.b)?);
        }
        let mol = ctx.tape.concat(&parts, 1)?;
        Ok(DrugOut { atom, sub, mol })
    }
}
