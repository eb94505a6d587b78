//! Residue features and contact graphs.

pub mod store;

pub const ESM_DIM: usize = 1280;
pub const ONEHOT_DIM: usize = 21;
pub const PHYSCHEM_DIM: usize = 12;
pub const N_RBF: usize = 16;
pub const RBF_WIDTH: f64 = 0.05;

/// Canonical residue order; everything else (X, B, Z, ...) is class 20.
pub const RESIDUES: &str = "ARNDCQEGHILKMFPSTWYV";

/// Per-residue descriptor table, 20 rows x 12 columns:
/// hydropathy (Kyte-Doolittle), bulkiness (Zimmerman), polarity (Grantham),
/// isoelectric point, helix/sheet/turn propensities (Chou-Fasman), molecular
/// weight, net charge at pH 7, H-bond donors, H-bond acceptors, aliphatic.
/// Raw values; z-scoring over the training fold happens downstream.
#[rustfmt::skip]
pub const PHYSCHEM: [[f64; PHYSCHEM_DIM]; 20] = [
    // hydro  bulk   polar  pI     Pa    Pb    Pt    MW      chg   don  acc  ali
    [ 1.8, 11.50,  8.1,  6.00, 1.42, 0.83, 0.66,  89.09,  0.0, 0.0, 0.0, 1.0], // A
    [-4.5, 14.28, 10.5, 10.76, 0.98, 0.93, 0.95, 174.20,  1.0, 3.0, 0.0, 0.0], // R
    [-3.5, 12.82, 11.6,  5.41, 0.67, 0.89, 1.56, 132.12,  0.0, 1.0, 1.0, 0.0], // N
    [-3.5, 11.68, 13.0,  2.77, 1.01, 0.54, 1.46, 133.10, -1.0, 0.0, 2.0, 0.0], // D
    [ 2.5, 13.46,  5.5,  5.07, 0.70, 1.19, 1.19, 121.16,  0.0, 1.0, 0.0, 0.0], // C
    [-3.5, 14.45, 10.5,  5.65, 1.11, 1.10, 0.98, 146.15,  0.0, 1.0, 1.0, 0.0], // Q
    [-3.5, 13.57, 12.3,  3.22, 1.51, 0.37, 0.74, 147.13, -1.0, 0.0, 2.0, 0.0], // E
    [-0.4,  3.40,  9.0,  5.97, 0.57, 0.75, 1.56,  75.07,  0.0, 0.0, 0.0, 1.0], // G
    [-3.2, 13.69, 10.4,  7.59, 1.00, 0.87, 0.95, 155.16,  0.1, 1.0, 1.0, 0.0], // H
    [ 4.5, 21.40,  5.2,  6.02, 1.08, 1.60, 0.47, 131.17,  0.0, 0.0, 0.0, 1.0], // I
    [ 3.8, 21.40,  4.9,  5.98, 1.21, 1.30, 0.59, 131.17,  0.0, 0.0, 0.0, 1.0], // L
    [-3.9, 15.71, 11.3,  9.74, 1.16, 0.74, 1.01, 146.19,  1.0, 1.0, 0.0, 0.0], // K
    [ 1.9, 16.25,  5.7,  5.74, 1.45, 1.05, 0.60, 149.21,  0.0, 0.0, 0.0, 0.0], // M
    [ 2.8, 19.80,  5.2,  5.48, 1.13, 1.38, 0.60, 165.19,  0.0, 0.0, 0.0, 0.0], // F
    [-1.6, 17.43,  8.0,  6.30, 0.57, 0.55, 1.52, 115.13,  0.0, 0.0, 0.0, 1.0], // P
    [-0.8,  9.47,  9.2,  5.68, 0.77, 0.75, 1.43, 105.09,  0.0, 1.0, 1.0, 0.0], // S
    [-0.7, 15.77,  8.6,  5.60, 0.83, 1.19, 0.96, 119.12,  0.0, 1.0, 1.0, 0.0], // T
    [-0.9, 21.67,  5.4,  5.89, 1.08, 1.37, 0.96, 204.23,  0.0, 1.0, 0.0, 0.0], // W
    [-1.3, 18.03,  6.2,  5.66, 0.69, 1.47, 1.14, 181.19,  0.0, 1.0, 1.0, 0.0], // Y
    [ 4.2, 21.57,  5.9,  5.96, 1.06, 1.70, 0.50, 117.15,  0.0, 0.0, 0.0, 1.0], // V
];

pub fn residue_class(letter: u8) -> usize {
    RESIDUES
        .bytes()
        .position(|b| b == letter.to_ascii_uppercase())
        .unwrap_or(ONEHOT_DIM - 1)
}

/// R x 21 one-hot rows; unknown letters land in the final class.
pub fn onehot(seq: &str) -> Vec<f64> {
    let mut out = vec![0.0; seq.len() * ONEHOT_DIM];
    for (i, b) in seq.bytes().enumerate() {
        out[i * ONEHOT_DIM + residue_class(b)] = 1.0;
    }
    out
}

/// R x 12 raw descriptor rows; unknown letters get all-zero descriptors.
pub fn physchem_raw(seq: &str) -> Vec<f64> {
    let mut out = vec![0.0; seq.len() * PHYSCHEM_DIM];
    for (i, b) in seq.bytes().enumerate() {
        let c = residue_class(b);
        if c < 20 {
            out[i * PHYSCHEM_DIM..(i + 1) * PHYSCHEM_DIM].copy_from_slice(&PHYSCHEM[c]);
        }
    }
    out
}

/// Gaussian expansion of a contact probability over 16 centers evenly spaced
/// on [tau, 1.0].
pub fn rbf_expand(p: f64, tau: f64, out: &mut [f64]) {
    debug_assert_eq!(out.len(), N_RBF);
    for (k, slot) in out.iter_mut().enumerate() {
        let c = tau + (1.0 - tau) * k as f64 / (N_RBF - 1) as f64;
        let d = p - c;
        *slot = (-d * d / (2.0 * RBF_WIDTH * RBF_WIDTH)).exp();
    }
}

/// Residue contact graph: directed edge pairs for every i != j with
/// p_ij >= tau, each carrying the RBF expansion of its probability.
#[derive(Debug, Clone)]
pub struct ProtGraph {
    pub len: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// E x 16 row-major, aligned with src/dst.
    pub edge_feats: Vec<f64>,
    pub degree: Vec<usize>,
}

pub fn build_prot_graph(contacts: &[f64], len: usize, tau: f64) -> ProtGraph {
    assert_eq!(contacts.len(), len * len, "contact matrix shape");
    let mut g = ProtGraph {
        len,
        src: Vec::new(),
        dst: Vec::new(),
        edge_feats: Vec::new(),
        degree: vec![0; len],
    };
    let mut feat = [0.0; N_RBF];
    for i in 0..len {
        for j in 0..len {
            if i == j {
                continue;
            }
            let p = contacts[i * len + j];
            if p >= tau {
                rbf_expand(p, tau, &mut feat);
                g.src.push(i);
                g.dst.push(j);
                g.edge_feats.extend_from_slice(&feat);
                g.degree[i] += 1;
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn onehot_rows_are_clean() {
        let f = onehot("AXR");
        assert_eq!(f.len(), 3 * ONEHOT_DIM);
        assert_eq!(f[0], 1.0, "A is class 0");
        assert_eq!(f[ONEHOT_DIM + 20], 1.0, "X falls in the unknown class");
        assert_eq!(f[2 * ONEHOT_DIM + 1], 1.0, "R is class 1");
        for r in 0..3 {
            let s: f64 = f[r * ONEHOT_DIM..(r + 1) * ONEHOT_DIM].iter().sum();
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn physchem_spot_values() {
        let i = residue_class(b'I');
        assert_eq!(PHYSCHEM[i][0], 4.5, "isoleucine hydropathy");
        let d = residue_class(b'D');
        assert_eq!(PHYSCHEM[d][8], -1.0, "aspartate charge");
        assert_eq!(PHYSCHEM[d][10], 2.0, "aspartate acceptors");
        let r = residue_class(b'R');
        assert_eq!(PHYSCHEM[r][9], 3.0, "arginine donors");
        let g = residue_class(b'G');
        assert_eq!(PHYSCHEM[g][11], 1.0, "glycine aliphatic");
        let w = residue_class(b'W');
        assert_eq!(PHYSCHEM[w][7], 204.23, "tryptophan weight");
        // Lowercase input maps like uppercase.
        assert_eq!(residue_class(b'a'), 0);
        let x = physchem_raw("X");
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rbf_peaks_at_centers_and_stays_in_range() {
        let tau = 0.5;
        let mut f = [0.0; N_RBF];
        rbf_expand(0.5, tau, &mut f);
        assert_eq!(f[0], 1.0, "p equals the first center");
        rbf_expand(1.0, tau, &mut f);
        assert_eq!(f[N_RBF - 1], 1.0, "p equals the last center");
        rbf_expand(0.73, tau, &mut f);
        for &v in &f {
            assert!(v > 0.0 && v <= 1.0);
        }
    }

    #[test]
    fn graph_respects_threshold_and_symmetry() {
        let len = 4;
        let mut c = vec![0.0; 16];
        let set = |i: usize, j: usize, p: f64, c: &mut Vec<f64>| {
            c[i * len + j] = p;
            c[j * len + i] = p;
        };
        set(0, 1, 0.9, &mut c);
        set(1, 2, 0.49, &mut c); // below threshold
        set(2, 3, 0.5, &mut c); // exactly at threshold: included
        for i in 0..len {
            c[i * len + i] = 1.0; // self contacts must be ignored
        }
        let g = build_prot_graph(&c, len, 0.5);
        assert_eq!(g.src.len(), 4, "two undirected edges, both directions");
        assert!(g.src.iter().zip(&g.dst).all(|(a, b)| a != b));
        assert_eq!(g.degree, vec![1, 1, 1, 1]);
        // Both directions of an edge carry identical features.
        let e01 = g.src.iter().zip(&g.dst).position(|(&s, &d)| (s, d) == (0, 1)).unwrap();
        let e10 = g.src.iter().zip(&g.dst).position(|(&s, &d)| (s, d) == (1, 0)).unwrap();
        assert_eq!(
            &g.edge_feats[e01 * N_RBF..(e01 + 1) * N_RBF],
            &g.edge_feats[e10 * N_RBF..(e10 + 1) * N_RBF]
        );
    }

    #[test]
    fn empty_graph_when_all_below_threshold() {
        let c = vec![0.1; 9];
        let g = build_prot_graph(&c, 3, 0.5);
        assert!(g.src.is_empty());
        assert_eq!(g.degree, vec![0, 0, 0]);
    }
}
