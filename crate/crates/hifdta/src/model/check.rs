//! Finite-difference verification of the composed model blocks. Each case
//! flattens one block's parameters, reduces the block's outputs to a scalar
//! with fixed pseudorandom weights, and compares tape gradients against
//! central differences. Dropout stays off so both sides see one function.

use std::cell::RefCell;

use crate::error::Result;
use crate::model::batch::{Batch, DrugFeat, PhyschemStats, ProtFeat};
use crate::model::nn::Ctx;
use crate::model::{Ablation, Model, ModelConfig};
use crate::protein::store::{stub_contacts, stub_embedding};
use crate::tensor::gradcheck::{check_fn, run_case, standard_suite, CheckReport, DEFAULT_H};
use crate::tensor::rng::StreamRng;
use crate::tensor::{Tape, TensorId, Value};

fn toy_config() -> ModelConfig {
    ModelConfig {
        d: 16,
        heads_drug: 2,
        heads_fusion: 2,
        k_bilinear: 1,
        layers: 1,
        dropout: 0.0,
        cluster_sizes: vec![4, 3, 2],
        ssm_state: 4,
        ablation: Ablation::default(),
    }
}

fn toy_prot(id: &str, seq: &str) -> Result<ProtFeat> {
    let esm: Vec<f64> = stub_embedding(3, id, seq).into_iter().map(f64::from).collect();
    let contacts: Vec<f64> = stub_contacts(3, id, seq.len()).into_iter().map(f64::from).collect();
    ProtFeat::new(id, seq, esm, &contacts, 0.5)
}

/// Two uneven pairs: a chain and a fused ring system, sequence lengths 11/14.
fn toy_batch() -> Result<Batch> {
    let d1 = DrugFeat::from_smiles("CCOC(=O)N")?;
    let d2 = DrugFeat::from_smiles("CC1=CC2=C(C=C1)NC(=O)C2")?;
    let p1 = toy_prot("chk1", "MKVLITAGPTR")?;
    let p2 = toy_prot("chk2", "GDSEEVQKAWLNRH")?;
    let rows = p1.len + p2.len;
    let stats =
        PhyschemStats::from_rows(p1.physchem.iter().chain(p2.physchem.iter()).copied(), rows);
    Batch::build(&[(&d1, &p1, 6.3), (&d2, &p2, 7.8)], &stats)
}

type RunFn = fn(&Model, &mut Tape, &Batch) -> Result<(Vec<TensorId>, Vec<(String, TensorId)>)>;

struct ModuleCase {
    name: &'static str,
    /// Selects which trainable parameters are perturbed and compared.
    filter: fn(&str) -> bool,
    run: RunFn,
}

fn module_cases() -> Vec<ModuleCase> {
    vec![
        ModuleCase {
            name: "module: drug encoder",
            filter: |n| n.starts_with("drug."),
            run: |m, tape, batch| {
                let mut ctx = Ctx::new(tape, &m.store);
                let out = m.drug.fwd(&mut ctx, batch)?;
                Ok((vec![out.atom, out.sub, out.mol], ctx.binds))
            },
        },
        ModuleCase {
            name: "module: state-space scan",
            filter: |n| n.starts_with("prot.ssm."),
            run: |m, tape, batch| {
                let mut ctx = Ctx::new(tape, &m.store);
                let out = m.prot.fwd(&mut ctx, batch)?;
                Ok((vec![out.dense], ctx.binds))
            },
        },
        ModuleCase {
            name: "module: cluster pooling",
            filter: |n| n.starts_with("prot.pool"),
            run: |m, tape, batch| {
                let mut ctx = Ctx::new(tape, &m.store);
                let out = m.prot.fwd(&mut ctx, batch)?;
                Ok((vec![out.clusters, out.l_cut, out.l_ortho], ctx.binds))
            },
        },
        ModuleCase {
            name: "module: bilinear fusion",
            filter: |n| n.starts_with("fusion."),
            run: |m, tape, batch| {
                let mut ctx = Ctx::new(tape, &m.store);
                let drug = m.drug.fwd(&mut ctx, batch)?;
                let prot = m.prot.fwd(&mut ctx, batch)?;
                let (r_final, upd) = m.fusion.fwd(&mut ctx, batch, &drug, prot.clusters)?;
                Ok((vec![r_final, upd.atom, upd.sub, upd.mol], ctx.binds))
            },
        },
        ModuleCase {
            name: "module: predictor",
            filter: |n| n.starts_with("pred."),
            run: |m, tape, batch| {
                let fwd = m.forward(tape, batch)?;
                Ok((vec![fwd.pred], fwd.binds))
            },
        },
        ModuleCase {
            name: "module: full loss",
            filter: |_| true,
            run: |m, tape, batch| {
                let (loss, fwd) = m.loss(tape, batch, 1.0)?;
                Ok((vec![loss], fwd.binds))
            },
        },
    ]
}

/// Weighted scalar over the case outputs plus the bound gradient per
/// parameter name. Unbound names get zeros, matching a parameter the
/// outputs provably do not depend on.
fn scalar_of(
    model: &Model,
    batch: &Batch,
    case: &ModuleCase,
    weights: &mut Vec<Value>,
    names: &[String],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new(0x6e57, 0, false);
    let (outs, binds) = (case.run)(model, &mut tape, batch)?;
    if weights.is_empty() {
        let wrng = StreamRng::new(0x17ea5);
        for (k, &out) in outs.iter().enumerate() {
            let shape = tape.shape(out).to_vec();
            let n: usize = shape.iter().product();
            let data: Vec<f64> =
                (0..n).map(|i| wrng.uniform_in(k as u64, i as u64, 0.5, 1.5)).collect();
            weights.push(Value::new(shape, data));
        }
    }
    let mut acc = None;
    for (&out, w) in outs.iter().zip(weights.iter()) {
        let wid = tape.constv(w.clone());
        let prod = tape.mul(out, wid)?;
        let s = tape.sum_all(prod)?;
        acc = Some(match acc {
            None => s,
            Some(a) => tape.add(a, s)?,
        });
    }
    let total = acc.expect("every case produces at least one output");
    let value = tape.val(total).item();
    let grads = tape.backward(total)?;
    let analytic = names
        .iter()
        .map(|name| match binds.iter().find(|(n, _)| n == name) {
            Some(&(_, id)) => grads.get_or_zeros(id),
            None => vec![0.0; model.store.get(name).unwrap().value.numel()],
        })
        .collect();
    Ok((value, analytic))
}

fn run_module_case(case: &ModuleCase, max_coords: usize) -> Result<CheckReport> {
    let batch = toy_batch()?;
    let model = RefCell::new(Model::new(toy_config(), 0xc4ec)?);
    let names: Vec<String> = model
        .borrow()
        .store
        .iter()
        .filter(|p| p.trainable && (case.filter)(&p.name))
        .map(|p| p.name.clone())
        .collect();
    let x0: Vec<Value> = {
        let m = model.borrow();
        names.iter().map(|n| m.store.get(n).unwrap().value.clone()).collect()
    };
    let mut weights = Vec::new();
    let (_, analytic) = scalar_of(&model.borrow(), &batch, case, &mut weights, &names)?;

    let f = |xs: &[Value]| -> Result<f64> {
        let mut m = model.borrow_mut();
        for (name, x) in names.iter().zip(xs) {
            m.store.get_mut(name)?.value = x.clone();
        }
        let (v, _) = scalar_of(&m, &batch, case, &mut weights.clone(), &names)?;
        Ok(v)
    };
    let mut report = check_fn(&f, &x0, &analytic, DEFAULT_H, max_coords)?;
    report.name = case.name.to_string();
    Ok(report)
}

/// Run the op-level suite plus the composed-module cases. `max_coords` caps
/// the coordinates sampled per tensor (0 checks everything).
pub fn gradient_suite(max_coords: usize) -> Result<Vec<CheckReport>> {
    let mut reports = Vec::new();
    for case in standard_suite() {
        reports.push(run_case(&case, DEFAULT_H, max_coords)?);
    }
    for case in module_cases() {
        reports.push(run_module_case(&case, max_coords)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::PASS_TOL;

    #[test]
    fn composed_modules_match_central_differences() {
        for case in module_cases() {
            let report = run_module_case(&case, 3).unwrap();
            assert!(
                report.max_rel_err < PASS_TOL,
                "{}: max rel err {:.3e} over {} coords",
                report.name,
                report.max_rel_err,
                report.coords_checked
            );
            assert!(report.coords_checked > 0, "{}: nothing checked", report.name);
        }
    }
}
