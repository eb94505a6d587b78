//! Atom and bond feature matrices.

use super::{BondOrder, MolGraph};

pub const ATOM_FEATURES: usize = 43;
pub const BOND_FEATURES: usize = 5;

const ELEMENTS: [&str; 14] = [
    "C", "N", "O", "S", "F", "Cl", "Br", "I", "P", "B", "Si", "Se", "As", "Sn",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hybrid {
    Sp,
    Sp2,
    Sp3,
    Other,
}

/// Rule-based hybridization: sp for a triple bond or cumulated doubles,
/// sp2 for any double/aromatic involvement, sp3 for the remaining organic
/// centers, "other" for everything outside C/N/O/S.
pub fn hybridization(g: &MolGraph, atom: usize) -> Hybrid {
    let mut doubles = 0;
    let mut triples = 0;
    let mut aromatic = g.atoms[atom].aromatic;
    for &(_, e) in &g.adj[atom] {
        match g.bonds[e].order {
            BondOrder::Double => doubles += 1,
            BondOrder::Triple => triples += 1,
            BondOrder::Aromatic => aromatic = true,
            BondOrder::Single => {}
        }
    }
    if triples > 0 || doubles >= 2 {
        return Hybrid::Sp;
    }
    if doubles > 0 || aromatic {
        return Hybrid::Sp2;
    }
    if matches!(g.atoms[atom].symbol.as_str(), "C" | "N" | "O" | "S") {
        Hybrid::Sp3
    } else {
        Hybrid::Other
    }
}

/// One-hot write with clamp-to-last-bucket for out-of-range values.
fn one_hot(row: &mut [f64], base: usize, width: usize, value: usize, what: &str) {
    let slot = if value < width {
        value
    } else {
        log::warn!("{what} = {value} clamped to bucket {}", width - 1);
        width - 1
    };
    row[base + slot] = 1.0;
}

/// N x 43 row-major feature matrix; every block is a clean one-hot.
pub fn featurize_atoms(g: &MolGraph) -> Vec<f64> {
    let n = g.atoms.len();
    let mut out = vec![0.0; n * ATOM_FEATURES];
    for (i, atom) in g.atoms.iter().enumerate() {
        let row = &mut out[i * ATOM_FEATURES..(i + 1) * ATOM_FEATURES];
        // Element block: 14 named, then "other", then the wildcard '*'.
        let e = if atom.symbol == "*" {
            15
        } else {
            ELEMENTS.iter().position(|&s| s == atom.symbol).unwrap_or(14)
        };
        row[e] = 1.0;
        one_hot(row, 16, 6, g.degree(i), "degree");
        one_hot(row, 22, 5, atom.total_h() as usize, "hydrogen count");
        // Implicit valence: hydrogens the valence model added itself.
        one_hot(row, 27, 6, atom.implicit_h as usize, "implicit valence");
        let charge_slot = (atom.charge + 2).clamp(0, 4) as usize;
        if !(-2..=2).contains(&atom.charge) {
            log::warn!("formal charge {} clamped", atom.charge);
        }
        row[32 + charge_slot] = 1.0;
        let h = match hybridization(g, i) {
            Hybrid::Sp => 0,
            Hybrid::Sp2 => 1,
            Hybrid::Sp3 => 2,
            Hybrid::Other => 3,
        };
        row[37 + h] = 1.0;
        row[42] = if atom.aromatic { 1.0 } else { 0.0 };
    }
    out
}

/// E x 5: bond order one-hot [single, double, triple, aromatic] + ring flag.
pub fn featurize_bonds(g: &MolGraph) -> Vec<f64> {
    let mut out = vec![0.0; g.bonds.len() * BOND_FEATURES];
    for (i, bond) in g.bonds.iter().enumerate() {
        let row = &mut out[i * BOND_FEATURES..(i + 1) * BOND_FEATURES];
        let o = match bond.order {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        };
        row[o] = 1.0;
        row[4] = if bond.in_ring { 1.0 } else { 0.0 };
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    fn row(feats: &[f64], i: usize) -> &[f64] {
        &feats[i * ATOM_FEATURES..(i + 1) * ATOM_FEATURES]
    }

    #[test]
    fn methane_features() {
        let g = parse_smiles("C").unwrap();
        let f = featurize_atoms(&g);
        let r = row(&f, 0);
        assert_eq!(r[0], 1.0, "element C");
        assert_eq!(r[16], 1.0, "degree 0");
        assert_eq!(r[22 + 4], 1.0, "4 hydrogens");
        assert_eq!(r[37 + 2], 1.0, "sp3");
        assert_eq!(r[42], 0.0, "not aromatic");
    }

    #[test]
    fn benzene_carbon_is_sp2_aromatic() {
        let g = parse_smiles("c1ccccc1").unwrap();
        let f = featurize_atoms(&g);
        for i in 0..6 {
            let r = row(&f, i);
            assert_eq!(r[37 + 1], 1.0, "sp2");
            assert_eq!(r[42], 1.0, "aromatic bit");
            assert_eq!(r[16 + 2], 1.0, "degree 2");
        }
    }

    #[test]
    fn hybridization_rules() {
        let g = parse_smiles("C#N").unwrap();
        assert_eq!(hybridization(&g, 0), Hybrid::Sp);
        assert_eq!(hybridization(&g, 1), Hybrid::Sp);
        let g = parse_smiles("O=C=O").unwrap();
        assert_eq!(hybridization(&g, 1), Hybrid::Sp, "cumulated doubles");
        assert_eq!(hybridization(&g, 0), Hybrid::Sp2);
        let g = parse_smiles("CC=C").unwrap();
        assert_eq!(hybridization(&g, 0), Hybrid::Sp3);
        assert_eq!(hybridization(&g, 1), Hybrid::Sp2);
        let g = parse_smiles("[Fe]").unwrap();
        assert_eq!(hybridization(&g, 0), Hybrid::Other);
    }

    #[test]
    fn every_block_sums_to_one() {
        // Block structure must hold for a messy molecule with charges,
        // brackets, rings and heteroatoms.
        let g = parse_smiles("C[N+](C)(C)Cc1ccc(cc1)C(=O)[O-]").unwrap();
        let f = featurize_atoms(&g);
        let blocks = [(0usize, 16usize), (16, 6), (22, 5), (27, 6), (32, 5), (37, 4)];
        for i in 0..g.atoms.len() {
            let r = row(&f, i);
            for (base, w) in blocks {
                let s: f64 = r[base..base + w].iter().sum();
                assert_eq!(s, 1.0, "atom {i} block at {base}");
            }
            assert!(r[42] == 0.0 || r[42] == 1.0);
        }
    }

    #[test]
    fn unknown_elements_fall_into_other_bucket() {
        let g = parse_smiles("[Pt](Cl)(Cl)[NH3]").unwrap();
        let f = featurize_atoms(&g);
        assert_eq!(row(&f, 0)[14], 1.0, "Pt -> other");
        assert_eq!(row(&f, 1)[5], 1.0, "Cl stays Cl");
    }

    #[test]
    fn bond_features_match_order_and_ring() {
        let g = parse_smiles("CC").unwrap();
        assert_eq!(featurize_bonds(&g), vec![1.0, 0.0, 0.0, 0.0, 0.0]);
        let g = parse_smiles("C=C").unwrap();
        assert_eq!(featurize_bonds(&g), vec![0.0, 1.0, 0.0, 0.0, 0.0]);
        let g = parse_smiles("c1ccccc1").unwrap();
        let f = featurize_bonds(&g);
        for b in 0..6 {
            assert_eq!(&f[b * 5..b * 5 + 5], &[0.0, 0.0, 0.0, 1.0, 1.0]);
        }
    }

    #[test]
    fn wildcard_atom_has_its_own_slot() {
        let g = parse_smiles("*C").unwrap();
        let f = featurize_atoms(&g);
        assert_eq!(row(&f, 0)[15], 1.0);
    }
}
