//! Prediction head: residue attention driven by cluster scores composed back
//! through the assignment chain, multi-scale atomic attention on the drug
//! side, and the final regression MLP on the concatenated pair.

use std::sync::Arc;

use super::batch::Batch;
use super::fusion::DrugUpdated;
use super::nn::{Ctx, Linear, Mlp};
use super::prot::ProtOut;
use super::ModelConfig;
use crate::tensor::params::ParamStore;
use crate::tensor::TensorId;
use crate::Result;

pub struct Predictor {
    cluster_score: Linear,
    prot_mlp: Mlp,
    atom_score: Mlp,
    drug_mlp: Mlp,
    head: Mlp,
}

impl Predictor {
    pub fn def(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d;
        let p = cfg.dropout;
        Ok(Predictor {
            cluster_score: Linear::def(store, "pred.cluster_score", d, 1, true)?,
            prot_mlp: Mlp::def(store, "pred.prot_mlp", &[d, d, d], p)?,
            atom_score: Mlp::def(store, "pred.atom_score", &[3 * d, d, 1], p)?,
            drug_mlp: Mlp::def(store, "pred.drug_mlp", &[d, d, d], p)?,
            head: Mlp::def(store, "pred.head", &[2 * d, d, d / 2, 1], p)?,
        })
    }

    /// B x 1 affinity predictions.
    pub fn fwd(
        &self,
        ctx: &mut Ctx,
        batch: &Batch,
        r_final: TensorId,
        prot: &ProtOut,
        drug: &DrugUpdated,
    ) -> Result<TensorId> {
        let shape = ctx.tape.shape(r_final).to_vec();
        let (bsz, ncl, d) = (shape[0], shape[1], shape[2]);

        // Protein pooling: score the final clusters, push the scores back to
        // residues through the assignment chain, softmax over valid residues.
        let r2 = ctx.tape.reshape(r_final, vec![bsz * ncl, d])?;
        let w = self.cluster_score.fwd(ctx, r2)?;
        let mut s = ctx.tape.reshape(w, vec![bsz, ncl, 1])?;
        for m in prot.assign.iter().rev() {
            s = ctx.tape.bmm(*m, s)?;
        }
        let mask = Arc::new(batch.prot.res_mask.clone());
        let a_res = ctx.tape.softmax(s, 1, Some(mask))?;
        let at = ctx.tape.transpose12(a_res)?;
        let pooled = ctx.tape.bmm(at, prot.dense)?;
        let pooled = ctx.tape.reshape(pooled, vec![bsz, d])?;
        let p = self.prot_mlp.fwd(ctx, pooled)?;

        // Drug pooling: per-atom scores from all three scales, softmax per
        // molecule, weighted sum of the atom-scale features.
        let dg = &batch.drug;
        let v_sub = ctx.tape.gather_rows(drug.sub, Arc::clone(&dg.atom_first_cluster))?;
        let v_mol = ctx.tape.gather_rows(drug.mol, Arc::clone(&dg.atom_mol))?;
        let cat = ctx.tape.concat(&[drug.atom, v_sub, v_mol], 1)?;
        let score = self.atom_score.fwd(ctx, cat)?;
        let a_atom = ctx.tape.seg_softmax(score, Arc::clone(&dg.atom_mol), bsz)?;
        let weighted = ctx.tape.mul(drug.atom, a_atom)?;
        let q0 = ctx.tape.seg_sum(weighted, Arc::clone(&dg.atom_mol), bsz)?;
        let q = self.drug_mlp.fwd(ctx, q0)?;

        let pq = ctx.tape.concat(&[p, q], 1)?;
        self.head.fwd(ctx, pq)
    }
}
