//! The affinity model: dual-pathway drug and protein encoders, hierarchical
//! residue clustering, bilinear cross-attention fusion, and the regression
//! head. Parameters live in a name-keyed store; each forward pass binds them
//! onto a fresh tape.

pub mod batch;
pub mod check;
pub mod drug;
pub mod fusion;
pub mod nn;
pub mod predict;
pub mod prot;

use batch::Batch;
use nn::Ctx;

use crate::tensor::params::ParamStore;
use crate::tensor::{Tape, TensorId, Value};
use crate::{Error, Result};

pub const DRUG_DEG_STATS: &str = "drug.pna.deg_stats";
pub const PROT_DEG_STATS: &str = "prot.pna.deg_stats";
pub const PHYSCHEM_MEAN: &str = "prot.physchem.mean";
pub const PHYSCHEM_STD: &str = "prot.physchem.std";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionKind {
    /// Softmax-gated weighted average of the per-scale cluster updates.
    Gated,
    /// Concatenate per-scale updates and project back to d.
    Concat,
    /// Plain elementwise sum.
    Add,
}

/// Architecture switches for the published ablations. Pathway flags drop the
/// other pathway's parameters entirely (the fused input gets zeros); scale
/// flags restrict which drug scales enter the cross-attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ablation {
    pub drug_global_only: bool,
    pub drug_local_only: bool,
    pub prot_global_only: bool,
    pub prot_local_only: bool,
    pub use_atom: bool,
    pub use_sub: bool,
    pub use_mol: bool,
    pub fusion: FusionKind,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            drug_global_only: false,
            drug_local_only: false,
            prot_global_only: false,
            prot_local_only: false,
            use_atom: true,
            use_sub: true,
            use_mol: true,
            fusion: FusionKind::Gated,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d: usize,
    pub heads_drug: usize,
    pub heads_fusion: usize,
    /// Low-rank width multiplier of the bilinear score projections.
    pub k_bilinear: usize,
    /// Message-passing rounds in each encoder.
    pub layers: usize,
    pub dropout: f64,
    /// Residue cluster counts per pooling level, coarsening left to right.
    pub cluster_sizes: Vec<usize>,
    pub ssm_state: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 200,
            heads_drug: 4,
            heads_fusion: 4,
            k_bilinear: 1,
            layers: 3,
            dropout: 0.2,
            cluster_sizes: vec![20, 10, 5],
            ssm_state: 16,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.d % 2 != 0 {
            return bad(format!("hidden width {} must be even and positive", self.d));
        }
        if self.heads_drug == 0 || self.d % self.heads_drug != 0 {
            return bad(format!("{} heads must divide d={}", self.heads_drug, self.d));
        }
        if self.heads_fusion == 0 || self.k_bilinear == 0 || self.layers == 0 || self.ssm_state == 0
        {
            return bad("heads, k, layers, and state size must be positive".to_string());
        }
        if self.cluster_sizes.is_empty() || self.cluster_sizes.windows(2).any(|w| w[1] > w[0]) {
            return bad(format!("cluster sizes {:?} must coarsen", self.cluster_sizes));
        }
        let a = &self.ablation;
        if a.drug_global_only && a.drug_local_only {
            return bad("drug pathway flags are mutually exclusive".to_string());
        }
        if a.prot_global_only && a.prot_local_only {
            return bad("protein pathway flags are mutually exclusive".to_string());
        }
        if !(a.use_atom || a.use_sub || a.use_mol) {
            return bad("at least one drug scale must stay enabled".to_string());
        }
        Ok(())
    }
}

pub struct Forward {
    /// B x 1 predicted affinities.
    pub pred: TensorId,
    /// Scalar mincut losses summed over pooling levels.
    pub l_cut: TensorId,
    pub l_ortho: TensorId,
    pub binds: Vec<(String, TensorId)>,
}

pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    drug: drug::DrugEncoder,
    prot: prot::ProtEncoder,
    fusion: fusion::FusionBlock,
    pred: predict::Predictor,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut store = ParamStore::new(seed);
        // Degree scalers and physchem normalization are training-fold
        // statistics carried in the checkpoint; neutral until fitted.
        store.def_buffer(DRUG_DEG_STATS, &[2], vec![1.0, 1.0])?;
        store.def_buffer(PROT_DEG_STATS, &[2], vec![1.0, 1.0])?;
        store.def_buffer(PHYSCHEM_MEAN, &[12], vec![0.0; 12])?;
        store.def_buffer(PHYSCHEM_STD, &[12], vec![1.0; 12])?;
        let drug = drug::DrugEncoder::def(&mut store, &cfg)?;
        let prot = prot::ProtEncoder::def(&mut store, &cfg)?;
        let fusion = fusion::FusionBlock::def(&mut store, &cfg)?;
        let pred = predict::Predictor::def(&mut store, &cfg)?;
        Ok(Model { cfg, store, drug, prot, fusion, pred })
    }

    /// Physchem z-scoring statistics for batch assembly, from the buffers.
    pub fn physchem_stats(&self) -> batch::PhyschemStats {
        batch::PhyschemStats {
            mean: self.store.get(PHYSCHEM_MEAN).unwrap().value.data().to_vec(),
            std: self.store.get(PHYSCHEM_STD).unwrap().value.data().to_vec(),
        }
    }

    pub fn set_buffer(&mut self, name: &str, vals: Vec<f64>) -> Result<()> {
        let p = self.store.get_mut(name)?;
        if p.value.numel() != vals.len() {
            return Err(Error::Config(format!(
                "buffer {name} holds {} values, got {}",
                p.value.numel(),
                vals.len()
            )));
        }
        p.value.data_mut().copy_from_slice(&vals);
        Ok(())
    }

    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<Forward> {
        let mut ctx = Ctx::new(tape, &self.store);
        let drug_out = self.drug.fwd(&mut ctx, batch)?;
        let prot_out = self.prot.fwd(&mut ctx, batch)?;
        let (r_final, drug_upd) = self.fusion.fwd(&mut ctx, batch, &drug_out, prot_out.clusters)?;
        let pred = self.pred.fwd(&mut ctx, batch, r_final, &prot_out, &drug_upd)?;
        Ok(Forward {
            pred,
            l_cut: prot_out.l_cut,
            l_ortho: prot_out.l_ortho,
            binds: ctx.binds,
        })
    }

    /// Training objective: MSE(pred, labels) + lambda * (L_cut + L_ortho).
    pub fn loss(&self, tape: &mut Tape, batch: &Batch, lambda: f64) -> Result<(TensorId, Forward)> {
        let fwd = self.forward(tape, batch)?;
        let y = tape.constv(Value::new(vec![batch.b, 1], batch.labels.clone()));
        let diff = tape.sub(fwd.pred, y)?;
        let sq = tape.mul(diff, diff)?;
        let mse = tape.mean_all(sq)?;
        let aux = tape.add(fwd.l_cut, fwd.l_ortho)?;
        let aux = tape.scale(aux, lambda)?;
        let loss = tape.add(mse, aux)?;
        Ok((loss, fwd))
    }
}

#[cfg(test)]
mod tests {
    use super::batch::{DrugFeat, PhyschemStats, ProtFeat};
    use super::*;
    use crate::protein::store::{stub_contacts, stub_embedding};

    fn toy_prot(id: &str, seq: &str) -> ProtFeat {
        let esm: Vec<f64> = stub_embedding(7, id, seq).into_iter().map(|v| v as f64).collect();
        let contacts: Vec<f64> =
            stub_contacts(7, id, seq.len()).into_iter().map(|v| v as f64).collect();
        ProtFeat::new(id, seq, esm, &contacts, 0.5).unwrap()
    }

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            d: 16,
            heads_drug: 4,
            heads_fusion: 2,
            k_bilinear: 1,
            layers: 1,
            dropout: 0.2,
            cluster_sizes: vec![4, 3, 2],
            ssm_state: 4,
            ablation: Ablation::default(),
        }
    }

    fn toy_pairs() -> (Vec<DrugFeat>, Vec<ProtFeat>) {
        let drugs = vec![
            DrugFeat::from_smiles("CCO").unwrap(),
            DrugFeat::from_smiles("CC(=O)Nc1ccccc1").unwrap(),
        ];
        let prots = vec![toy_prot("pa", "MKVLATGRES"), toy_prot("pb", "GGSWYN")];
        (drugs, prots)
    }

    #[test]
    fn forward_produces_finite_scalars_per_sample() {
        let (drugs, prots) = toy_pairs();
        let batch = Batch::build(
            &[(&drugs[0], &prots[0], 5.1), (&drugs[1], &prots[1], 7.3)],
            &PhyschemStats::default(),
        )
        .unwrap();
        let model = Model::new(small_cfg(), 11).unwrap();
        let mut tape = Tape::new(11, 0, false);
        let fwd = model.forward(&mut tape, &batch).unwrap();
        assert_eq!(tape.shape(fwd.pred), [2, 1]);
        assert!(tape.val(fwd.pred).data().iter().all(|v| v.is_finite()));
        assert_eq!(tape.val(fwd.l_cut).numel(), 1);
        assert_eq!(tape.val(fwd.l_ortho).numel(), 1);
        // The cut ratio lives in [0, 1] per sample, so its negation is in
        // [-1, 0]; orthogonality distance is a norm.
        let lc = tape.val(fwd.l_cut).item();
        let lo = tape.val(fwd.l_ortho).item();
        assert!((-3.0..=0.0).contains(&lc), "l_cut {lc}");
        assert!(lo >= 0.0 && lo.is_finite(), "l_ortho {lo}");
    }

    #[test]
    fn predictions_ignore_batch_composition() {
        let (drugs, prots) = toy_pairs();
        let stats = PhyschemStats::default();
        let both = Batch::build(
            &[(&drugs[0], &prots[0], 5.1), (&drugs[1], &prots[1], 7.3)],
            &stats,
        )
        .unwrap();
        let model = Model::new(small_cfg(), 3).unwrap();
        let mut tape = Tape::new(3, 0, false);
        let fwd = model.forward(&mut tape, &both).unwrap();
        let joint = tape.val(fwd.pred).data().to_vec();

        for i in 0..2 {
            let solo = Batch::build(&[(&drugs[i], &prots[i], 1.0)], &stats).unwrap();
            let mut t2 = Tape::new(3, 0, false);
            let f2 = model.forward(&mut t2, &solo).unwrap();
            let alone = t2.val(f2.pred).data()[0];
            assert!(
                (alone - joint[i]).abs() < 1e-12,
                "pair {i}: solo {alone} vs batched {}",
                joint[i]
            );
        }
    }

    #[test]
    fn training_loss_is_reproducible_bitwise() {
        let (drugs, prots) = toy_pairs();
        let batch = Batch::build(
            &[(&drugs[0], &prots[0], 5.1), (&drugs[1], &prots[1], 7.3)],
            &PhyschemStats::default(),
        )
        .unwrap();
        let run = || {
            let model = Model::new(small_cfg(), 42).unwrap();
            let mut tape = Tape::new(42, 9, true);
            let (loss, fwd) = model.loss(&mut tape, &batch, 1.0).unwrap();
            let grads = tape.backward(loss).unwrap();
            let mut m = model;
            m.store.absorb_grads(&grads, &fwd.binds);
            let g: Vec<f64> = m
                .store
                .iter()
                .filter_map(|p| p.grad.as_ref())
                .flat_map(|g| g.iter().copied())
                .collect();
            (tape.val(loss).item(), g)
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1.len(), g2.len());
        assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn every_trainable_parameter_reaches_the_loss() {
        let (drugs, prots) = toy_pairs();
        let batch = Batch::build(
            &[(&drugs[0], &prots[0], 5.1), (&drugs[1], &prots[1], 7.3)],
            &PhyschemStats::default(),
        )
        .unwrap();
        let mut model = Model::new(small_cfg(), 5).unwrap();
        let mut tape = Tape::new(5, 1, true);
        let (loss, fwd) = model.loss(&mut tape, &batch, 1.0).unwrap();
        let grads = tape.backward(loss).unwrap();
        model.store.absorb_grads(&grads, &fwd.binds);
        let dead: Vec<&str> = model
            .store
            .iter()
            .filter(|p| p.trainable && p.grad.is_none())
            .map(|p| p.name.as_str())
            .collect();
        assert!(dead.is_empty(), "no gradient for {dead:?}");
    }

    #[test]
    fn ablation_switches_change_parameter_counts_as_expected() {
        let count = |f: &dyn Fn(&mut ModelConfig)| {
            let mut cfg = small_cfg();
            f(&mut cfg);
            Model::new(cfg, 1).unwrap().store.n_trainable()
        };
        let full = count(&|_| {});
        let drug_global = count(&|c| c.ablation.drug_global_only = true);
        let drug_local = count(&|c| c.ablation.drug_local_only = true);
        let prot_global = count(&|c| c.ablation.prot_global_only = true);
        let prot_local = count(&|c| c.ablation.prot_local_only = true);
        // Removing a pathway always sheds parameters, by different amounts.
        for (name, n) in [
            ("drug_global", drug_global),
            ("drug_local", drug_local),
            ("prot_global", prot_global),
            ("prot_local", prot_local),
        ] {
            assert!(n < full, "{name}: {n} !< {full}");
        }
        assert_ne!(drug_global, drug_local);
        assert_ne!(prot_global, prot_local);

        let atom_only = count(&|c| {
            c.ablation.use_sub = false;
            c.ablation.use_mol = false;
        });
        assert!(atom_only < full);
        let concat = count(&|c| c.ablation.fusion = FusionKind::Concat);
        let add = count(&|c| c.ablation.fusion = FusionKind::Add);
        let d = small_cfg().d;
        assert_eq!(concat, full - 3 + 3 * d * d + d); // gate out, projection in
        assert_eq!(add, full - 3); // gate out
    }

    #[test]
    fn config_validation_rejects_contradictions() {
        let mut cfg = small_cfg();
        cfg.d = 15;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.ablation.drug_global_only = true;
        cfg.ablation.drug_local_only = true;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.ablation.use_atom = false;
        cfg.ablation.use_sub = false;
        cfg.ablation.use_mol = false;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.cluster_sizes = vec![2, 4];
        assert!(cfg.validate().is_err());
    }
}
