//! Featurized pair artifacts and dense/sparse batch assembly.
//!
//! A batch concatenates every molecule's atoms (and every protein's residues)
//! into flat row blocks, keeping segment ids for per-entity reductions plus
//! gather tables for the dense views (SSM scan, mincut pooling, cross
//! attention). Appending one zero row to a sparse matrix and gathering with
//! out-of-range slots pointed at it produces the padded dense layout without
//! a dedicated padding op.

use std::sync::Arc;

use crate::chem::features::{featurize_atoms, featurize_bonds, ATOM_FEATURES, BOND_FEATURES};
use crate::chem::junction::tree_decompose;
use crate::chem::parse::parse_smiles;
use crate::protein::{
    build_prot_graph, onehot, physchem_raw, ESM_DIM, N_RBF, ONEHOT_DIM, PHYSCHEM_DIM,
};
use crate::tensor::Value;
use crate::{Error, Result};

pub const PROT_IN_DIM: usize = ESM_DIM + ONEHOT_DIM + PHYSCHEM_DIM;

/// Featurized drug, independent of batch position.
#[derive(Debug, Clone)]
pub struct DrugFeat {
    pub n_atoms: usize,
    /// n_atoms x 43, atoms in SMILES token order.
    pub atom_feats: Vec<f64>,
    /// Undirected bonds with their 5-dim features.
    pub bonds: Vec<(usize, usize, [f64; BOND_FEATURES])>,
    /// Junction clusters as sorted atom lists, plus their type ids.
    pub clusters: Vec<Vec<usize>>,
    pub cluster_types: Vec<usize>,
}

impl DrugFeat {
    pub fn from_smiles(smiles: &str) -> Result<Self> {
        let mol = parse_smiles(smiles)?;
        let atom_feats = featurize_atoms(&mol);
        let bond_feats = featurize_bonds(&mol);
        let bonds = mol
            .bonds
            .iter()
            .zip(bond_feats.chunks(BOND_FEATURES))
            .map(|(b, f)| (b.a, b.b, <[f64; BOND_FEATURES]>::try_from(f).unwrap()))
            .collect();
        let tree = tree_decompose(&mol);
        Ok(DrugFeat {
            n_atoms: mol.atoms.len(),
            atom_feats,
            bonds,
            clusters: tree.clusters,
            cluster_types: tree.types,
        })
    }
}

/// Featurized protein: raw feature blocks plus the thresholded contact graph.
#[derive(Debug, Clone)]
pub struct ProtFeat {
    pub id: String,
    pub len: usize,
    /// len x 1280.
    pub esm: Vec<f64>,
    /// len x 21.
    pub onehot: Vec<f64>,
    /// len x 12, unscaled; z-scoring happens at batch assembly.
    pub physchem: Vec<f64>,
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    /// E x 16.
    pub edge_feats: Vec<f64>,
    pub degree: Vec<usize>,
}

impl ProtFeat {
    pub fn new(id: &str, seq: &str, esm: Vec<f64>, contacts: &[f64], tau: f64) -> Result<Self> {
        let len = seq.len();
        if esm.len() != len * ESM_DIM {
            return Err(Error::Protein {
                id: id.to_string(),
                detail: format!("embedding rows {} vs sequence {len}", esm.len() / ESM_DIM),
            });
        }
        let g = build_prot_graph(contacts, len, tau);
        Ok(ProtFeat {
            id: id.to_string(),
            len,
            esm,
            onehot: onehot(seq),
            physchem: physchem_raw(seq),
            edge_src: g.src,
            edge_dst: g.dst,
            edge_feats: g.edge_feats,
            degree: g.degree,
        })
    }
}

/// Column means and stds of the 12 physicochemical descriptors over the
/// training fold's residues.
#[derive(Debug, Clone)]
pub struct PhyschemStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Default for PhyschemStats {
    fn default() -> Self {
        PhyschemStats { mean: vec![0.0; PHYSCHEM_DIM], std: vec![1.0; PHYSCHEM_DIM] }
    }
}

impl PhyschemStats {
    pub fn from_rows(rows: impl Iterator<Item = f64>, n_rows: usize) -> Self {
        let vals: Vec<f64> = rows.collect();
        assert_eq!(vals.len(), n_rows * PHYSCHEM_DIM);
        let mut mean = vec![0.0; PHYSCHEM_DIM];
        for r in vals.chunks(PHYSCHEM_DIM) {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n_rows.max(1) as f64;
        }
        let mut var = vec![0.0; PHYSCHEM_DIM];
        for r in vals.chunks(PHYSCHEM_DIM) {
            for (s, (v, m)) in var.iter_mut().zip(r.iter().zip(&mean)) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|&s| (s / n_rows.max(1) as f64).sqrt()).collect();
        PhyschemStats { mean, std }
    }
}

#[derive(Debug, Clone)]
pub struct DrugSide {
    pub n_atoms: usize,
    pub n_clusters: usize,
    pub atom_feats: Value,
    pub atom_mol: Arc<Vec<usize>>,
    pub lstm_offsets: Arc<Vec<usize>>,
    pub edge_src: Arc<Vec<usize>>,
    pub edge_dst: Arc<Vec<usize>>,
    pub edge_feats: Value,
    pub degree: Vec<usize>,
    pub member_atom: Arc<Vec<usize>>,
    pub member_cluster: Arc<Vec<usize>>,
    pub cluster_mol: Arc<Vec<usize>>,
    pub cluster_types: Arc<Vec<usize>>,
    pub atom_first_cluster: Arc<Vec<usize>>,
    pub a_max: usize,
    pub atom_dense_gather: Arc<Vec<usize>>,
    pub atom_mask: Vec<bool>,
    pub atom_dense_slot: Arc<Vec<usize>>,
    pub c_max: usize,
    pub cluster_dense_gather: Arc<Vec<usize>>,
    pub cluster_mask: Vec<bool>,
    pub cluster_dense_slot: Arc<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct ProtSide {
    pub n_res: usize,
    /// n_res x 1313 fused rows, physchem block z-scored.
    pub feats: Value,
    pub res_prot: Arc<Vec<usize>>,
    pub edge_src: Arc<Vec<usize>>,
    pub edge_dst: Arc<Vec<usize>>,
    pub edge_feats: Value,
    pub degree: Vec<usize>,
    pub r_max: usize,
    /// Degree-sorted dense layout for the state-space scan.
    pub sort_gather: Arc<Vec<usize>>,
    pub ssm_mask: Arc<Vec<bool>>,
    pub unsort_gather: Arc<Vec<usize>>,
    /// Original-order dense layout for pooling and cross attention.
    pub dense_gather: Arc<Vec<usize>>,
    pub res_mask: Vec<bool>,
    /// B x r_max x r_max binary contact adjacency.
    pub adj: Value,
    /// B x r_max x r_max symmetric-normalized adjacency with self loops,
    /// zero on padded slots.
    pub ahat: Value,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub b: usize,
    pub drug: DrugSide,
    pub prot: ProtSide,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn build(
        pairs: &[(&DrugFeat, &ProtFeat, f64)],
        stats: &PhyschemStats,
    ) -> Result<Batch> {
        if pairs.is_empty() {
            return Err(Error::Data("empty batch".to_string()));
        }
        let b = pairs.len();
        let drug = build_drug_side(pairs)?;
        let prot = build_prot_side(pairs, stats);
        let labels = pairs.iter().map(|p| p.2).collect();
        Ok(Batch { b, drug, prot, labels })
    }
}

fn build_drug_side(pairs: &[(&DrugFeat, &ProtFeat, f64)]) -> Result<DrugSide> {
    let b = pairs.len();
    let n_atoms: usize = pairs.iter().map(|p| p.0.n_atoms).sum();
    let n_clusters: usize = pairs.iter().map(|p| p.0.clusters.len()).sum();
    let a_max = pairs.iter().map(|p| p.0.n_atoms).max().unwrap();
    let c_max = pairs.iter().map(|p| p.0.clusters.len()).max().unwrap();

    let mut atom_feats = Vec::with_capacity(n_atoms * ATOM_FEATURES);
    let mut atom_mol = Vec::with_capacity(n_atoms);
    let mut lstm_offsets = vec![0usize];
    let mut edge_src = Vec::new();
    let mut edge_dst = Vec::new();
    let mut edge_feats = Vec::new();
    let mut degree = vec![0usize; n_atoms];
    let mut member_atom = Vec::new();
    let mut member_cluster = Vec::new();
    let mut cluster_mol = Vec::new();
    let mut cluster_types = Vec::new();
    let mut atom_first_cluster = vec![usize::MAX; n_atoms];
    let mut atom_dense_gather = vec![n_atoms; b * a_max];
    let mut atom_mask = vec![false; b * a_max];
    let mut atom_dense_slot = Vec::with_capacity(n_atoms);
    let mut cluster_dense_gather = vec![n_clusters; b * c_max];
    let mut cluster_mask = vec![false; b * c_max];
    let mut cluster_dense_slot = Vec::with_capacity(n_clusters);

    let mut atom_off = 0;
    let mut cluster_off = 0;
    for (bi, (d, _, _)) in pairs.iter().enumerate() {
        if d.n_atoms == 0 {
            return Err(Error::Data("molecule with zero atoms in batch".to_string()));
        }
        atom_feats.extend_from_slice(&d.atom_feats);
        for local in 0..d.n_atoms {
            atom_mol.push(bi);
            atom_dense_gather[bi * a_max + local] = atom_off + local;
            atom_mask[bi * a_max + local] = true;
            atom_dense_slot.push(bi * a_max + local);
        }
        for &(a1, a2, f) in &d.bonds {
            for (s, t) in [(a1, a2), (a2, a1)] {
                edge_src.push(atom_off + s);
                edge_dst.push(atom_off + t);
                edge_feats.extend_from_slice(&f);
                degree[atom_off + t] += 1;
            }
        }
        for (ci, members) in d.clusters.iter().enumerate() {
            let gc = cluster_off + ci;
            for &a in members {
                member_atom.push(atom_off + a);
                member_cluster.push(gc);
                let slot = &mut atom_first_cluster[atom_off + a];
                if *slot == usize::MAX {
                    *slot = gc; // clusters visited in id order, so first hit is lowest
                }
            }
            cluster_mol.push(bi);
            cluster_dense_gather[bi * c_max + ci] = gc;
            cluster_mask[bi * c_max + ci] = true;
            cluster_dense_slot.push(bi * c_max + ci);
        }
        cluster_types.extend_from_slice(&d.cluster_types);
        atom_off += d.n_atoms;
        cluster_off += d.clusters.len();
        lstm_offsets.push(atom_off);
    }
    debug_assert!(atom_first_cluster.iter().all(|&c| c != usize::MAX), "uncovered atom");

    let n_edges = edge_src.len();
    Ok(DrugSide {
        n_atoms,
        n_clusters,
        atom_feats: Value::new(vec![n_atoms, ATOM_FEATURES], atom_feats),
        atom_mol: Arc::new(atom_mol),
        lstm_offsets: Arc::new(lstm_offsets),
        edge_src: Arc::new(edge_src),
        edge_dst: Arc::new(edge_dst),
        edge_feats: Value::new(vec![n_edges, BOND_FEATURES], edge_feats),
        degree,
        member_atom: Arc::new(member_atom),
        member_cluster: Arc::new(member_cluster),
        cluster_mol: Arc::new(cluster_mol),
        cluster_types: Arc::new(cluster_types),
        atom_first_cluster: Arc::new(atom_first_cluster),
        a_max,
        atom_dense_gather: Arc::new(atom_dense_gather),
        atom_mask,
        atom_dense_slot: Arc::new(atom_dense_slot),
        c_max,
        cluster_dense_gather: Arc::new(cluster_dense_gather),
        cluster_mask,
        cluster_dense_slot: Arc::new(cluster_dense_slot),
    })
}

fn build_prot_side(pairs: &[(&DrugFeat, &ProtFeat, f64)], stats: &PhyschemStats) -> ProtSide {
    let b = pairs.len();
    let n_res: usize = pairs.iter().map(|p| p.1.len).sum();
    let r_max = pairs.iter().map(|p| p.1.len).max().unwrap();

    let mut feats = Vec::with_capacity(n_res * PROT_IN_DIM);
    let mut res_prot = Vec::with_capacity(n_res);
    let mut edge_src = Vec::new();
    let mut edge_dst = Vec::new();
    let mut edge_feats = Vec::new();
    let mut degree = vec![0usize; n_res];
    let mut sort_gather = vec![n_res; b * r_max];
    let mut ssm_mask = vec![false; b * r_max];
    let mut unsort_gather = vec![0usize; n_res];
    let mut dense_gather = vec![n_res; b * r_max];
    let mut res_mask = vec![false; b * r_max];
    let mut adj = vec![0.0; b * r_max * r_max];
    let mut ahat = vec![0.0; b * r_max * r_max];

    let mut off = 0;
    for (bi, (_, p, _)) in pairs.iter().enumerate() {
        for r in 0..p.len {
            feats.extend_from_slice(&p.esm[r * ESM_DIM..(r + 1) * ESM_DIM]);
            feats.extend_from_slice(&p.onehot[r * ONEHOT_DIM..(r + 1) * ONEHOT_DIM]);
            for c in 0..PHYSCHEM_DIM {
                let z = (p.physchem[r * PHYSCHEM_DIM + c] - stats.mean[c]) / stats.std[c].max(1e-8);
                feats.push(z);
            }
            res_prot.push(bi);
            dense_gather[bi * r_max + r] = off + r;
            res_mask[bi * r_max + r] = true;
        }
        for (&s, &t) in p.edge_src.iter().zip(&p.edge_dst) {
            edge_src.push(off + s);
            edge_dst.push(off + t);
            degree[off + t] += 1;
        }
        edge_feats.extend_from_slice(&p.edge_feats);

        // Stable degree order: (degree, original index) ascending.
        let mut order: Vec<usize> = (0..p.len).collect();
        order.sort_by_key(|&r| (p.degree[r], r));
        for (pos, &r) in order.iter().enumerate() {
            sort_gather[bi * r_max + pos] = off + r;
            ssm_mask[bi * r_max + pos] = true;
            unsort_gather[off + r] = bi * r_max + pos;
        }

        // Dense adjacency block plus its symmetric normalization with self
        // loops; the padded remainder stays zero.
        let base = bi * r_max * r_max;
        for (&s, &t) in p.edge_src.iter().zip(&p.edge_dst) {
            adj[base + s * r_max + t] = 1.0;
        }
        let inv_sqrt: Vec<f64> =
            (0..p.len).map(|r| 1.0 / ((p.degree[r] + 1) as f64).sqrt()).collect();
        for i in 0..p.len {
            for j in 0..p.len {
                let a_ij = if i == j { 1.0 } else { adj[base + i * r_max + j] };
                if a_ij != 0.0 {
                    ahat[base + i * r_max + j] = a_ij * inv_sqrt[i] * inv_sqrt[j];
                }
            }
        }
        off += p.len;
    }

    let n_edges = edge_src.len();
    ProtSide {
        n_res,
        feats: Value::new(vec![n_res, PROT_IN_DIM], feats),
        res_prot: Arc::new(res_prot),
        edge_src: Arc::new(edge_src),
        edge_dst: Arc::new(edge_dst),
        edge_feats: Value::new(vec![n_edges, N_RBF], edge_feats),
        degree,
        r_max,
        sort_gather: Arc::new(sort_gather),
        ssm_mask: Arc::new(ssm_mask),
        unsort_gather: Arc::new(unsort_gather),
        dense_gather: Arc::new(dense_gather),
        res_mask,
        adj: Value::new(vec![b, r_max, r_max], adj),
        ahat: Value::new(vec![b, r_max, r_max], ahat),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protein::store::{stub_contacts, stub_embedding};

    fn toy_prot(id: &str, seq: &str) -> ProtFeat {
        let esm: Vec<f64> =
            stub_embedding(7, id, seq).into_iter().map(|v| v as f64).collect();
        let contacts: Vec<f64> =
            stub_contacts(7, id, seq.len()).into_iter().map(|v| v as f64).collect();
        ProtFeat::new(id, seq, esm, &contacts, 0.5).unwrap()
    }

    fn toy_batch() -> Batch {
        let d1 = DrugFeat::from_smiles("CCO").unwrap();
        let d2 = DrugFeat::from_smiles("c1ccccc1C(=O)O").unwrap();
        let p1 = toy_prot("pa", "MKVLAT");
        let p2 = toy_prot("pb", "GGSW");
        Batch::build(
            &[(&d1, &p1, 5.0), (&d2, &p2, 7.2)],
            &PhyschemStats::default(),
        )
        .unwrap()
    }

    #[test]
    fn drug_side_indexing_is_consistent() {
        let b = toy_batch();
        let d = &b.drug;
        // CCO has 3 heavy atoms, the benzoate 9 (6 ring + C + 2 O).
        assert_eq!(d.n_atoms, 3 + 9);
        assert_eq!(d.lstm_offsets.as_ref(), &vec![0, 3, 12]);
        assert_eq!(d.atom_mol[0..3], [0, 0, 0]);
        assert!(d.atom_mol[3..].iter().all(|&m| m == 1));
        // Every directed edge has its reverse.
        for (i, (&s, &t)) in d.edge_src.iter().zip(d.edge_dst.iter()).enumerate() {
            assert!(
                d.edge_src.iter().zip(d.edge_dst.iter()).any(|(&s2, &t2)| s2 == t && t2 == s),
                "edge {i} lacks a reverse"
            );
            assert_eq!(d.atom_mol[s], d.atom_mol[t], "edge crosses molecules");
        }
        // Degrees match edge counts.
        let mut deg = vec![0usize; d.n_atoms];
        for &t in d.edge_dst.iter() {
            deg[t] += 1;
        }
        assert_eq!(deg, d.degree);
        // Membership covers every atom; first-cluster is minimal.
        for a in 0..d.n_atoms {
            let containing: Vec<usize> = d
                .member_atom
                .iter()
                .zip(d.member_cluster.iter())
                .filter(|(&ma, _)| ma == a)
                .map(|(_, &c)| c)
                .collect();
            assert!(!containing.is_empty());
            assert_eq!(d.atom_first_cluster[a], *containing.iter().min().unwrap());
        }
        // Dense round trip: slot of atom i gathers atom i.
        for a in 0..d.n_atoms {
            assert_eq!(d.atom_dense_gather[d.atom_dense_slot[a]], a);
            assert!(d.atom_mask[d.atom_dense_slot[a]]);
        }
        let padded = d.atom_mask.iter().filter(|&&m| !m).count();
        assert_eq!(padded, 2 * d.a_max - d.n_atoms);
    }

    #[test]
    fn prot_side_sort_and_dense_are_inverse() {
        let b = toy_batch();
        let p = &b.prot;
        assert_eq!(p.n_res, 10);
        assert_eq!(p.r_max, 6);
        // sort_gather hits every residue exactly once; unsort points back.
        let mut seen = vec![false; p.n_res];
        for (slot, &g) in p.sort_gather.iter().enumerate() {
            if g < p.n_res {
                assert!(!seen[g]);
                seen[g] = true;
                assert_eq!(p.unsort_gather[g], slot);
                assert!(p.ssm_mask[slot]);
            } else {
                assert!(!p.ssm_mask[slot]);
            }
        }
        assert!(seen.iter().all(|&s| s));
        // Degrees ascend within each protein's sorted run.
        for bi in 0..2 {
            let degs: Vec<usize> = (0..p.r_max)
                .filter(|t| p.ssm_mask[bi * p.r_max + t])
                .map(|t| p.degree[p.sort_gather[bi * p.r_max + t]])
                .collect();
            assert!(degs.windows(2).all(|w| w[0] <= w[1]), "{degs:?}");
        }
        // Adjacency is symmetric, zero diagonal, zero in padding.
        let a = p.adj.data();
        for bi in 0..2 {
            for i in 0..p.r_max {
                assert_eq!(a[bi * p.r_max * p.r_max + i * p.r_max + i], 0.0);
                for j in 0..p.r_max {
                    let ij = a[bi * p.r_max * p.r_max + i * p.r_max + j];
                    let ji = a[bi * p.r_max * p.r_max + j * p.r_max + i];
                    assert_eq!(ij, ji);
                }
            }
        }
        // Second protein has 4 residues: slots 4,5 padded.
        for t in 4..6 {
            assert!(!p.res_mask[p.r_max + t]);
            assert_eq!(p.dense_gather[p.r_max + t], p.n_res);
        }
    }

    #[test]
    fn ahat_rows_match_hand_normalization() {
        let b = toy_batch();
        let p = &b.prot;
        let (rm, a, ah) = (p.r_max, p.adj.data(), p.ahat.data());
        // Spot-check one entry of protein 0: ahat_ij = a~_ij/sqrt(d~_i d~_j).
        for i in 0..6 {
            for j in 0..6 {
                let atil = if i == j { 1.0 } else { a[i * rm + j] };
                let di: f64 = (0..6).map(|k| a[i * rm + k]).sum::<f64>() + 1.0;
                let dj: f64 = (0..6).map(|k| a[j * rm + k]).sum::<f64>() + 1.0;
                let want = atil / (di * dj).sqrt();
                assert!((ah[i * rm + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn physchem_zscore_applied() {
        let d = DrugFeat::from_smiles("C").unwrap();
        let p = toy_prot("pz", "AA");
        let stats = PhyschemStats {
            mean: vec![1.0; PHYSCHEM_DIM],
            std: vec![2.0; PHYSCHEM_DIM],
        };
        let b = Batch::build(&[(&d, &p, 1.0)], &stats).unwrap();
        let row = &b.prot.feats.data()[ESM_DIM + ONEHOT_DIM..PROT_IN_DIM];
        // Alanine hydropathy 1.8 -> (1.8-1)/2 = 0.4.
        assert!((row[0] - 0.4).abs() < 1e-12);
    }
}
