//! Junction-tree decomposition: ring systems, single bonds and isolated
//! atoms become substructure clusters, connected into a forest.

use std::collections::{BTreeMap, HashSet, VecDeque};

use super::{BondOrder, MolGraph};
use crate::tensor::rng::fnv1a;

/// Label-embedding vocabulary size for cluster types.
pub const CLUSTER_VOCAB: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterKind {
    Ring,
    Bond(BondOrder),
    Atom,
}

#[derive(Debug, Clone)]
pub struct JunctionTree {
    /// Sorted atom indices per cluster.
    pub clusters: Vec<Vec<usize>>,
    pub kinds: Vec<ClusterKind>,
    /// Vocabulary id per cluster, in [0, CLUSTER_VOCAB).
    pub types: Vec<usize>,
    /// Atom -> sorted list of clusters containing it.
    pub atom_clusters: Vec<Vec<usize>>,
    /// Maximum-spanning-tree edges of the cluster graph (a < b).
    pub tree_edges: Vec<(usize, usize)>,
}

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        if self.0[x] != x {
            let r = self.find(self.0[x]);
            self.0[x] = r;
        }
        self.0[x]
    }
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Shortest cycle through ring bond `e`: BFS between its endpoints with the
/// bond itself removed. Returns sorted atom indices.
fn shortest_cycle_through(g: &MolGraph, e: usize) -> Option<Vec<usize>> {
    let (src, dst) = (g.bonds[e].a, g.bonds[e].b);
    let mut parent = vec![usize::MAX; g.atoms.len()];
    let mut seen = vec![false; g.atoms.len()];
    let mut q = VecDeque::new();
    seen[src] = true;
    q.push_back(src);
    while let Some(v) = q.pop_front() {
        if v == dst {
            break;
        }
        for &(w, be) in &g.adj[v] {
            if be == e || seen[w] {
                continue;
            }
            seen[w] = true;
            parent[w] = v;
            q.push_back(w);
        }
    }
    if !seen[dst] {
        return None; // bond was a bridge after all; caller skips
    }
    let mut atoms = vec![dst];
    let mut v = dst;
    while v != src {
        v = parent[v];
        atoms.push(v);
    }
    atoms.sort_unstable();
    Some(atoms)
}

pub fn tree_decompose(g: &MolGraph) -> JunctionTree {
    // Ring collection: one shortest cycle per ring bond, deduplicated. Using
    // every ring bond (not just BFS non-tree edges) guarantees each ring
    // bond's atom pair lands inside at least one ring cluster.
    let mut rings: Vec<Vec<usize>> = Vec::new();
    let mut seen_rings: HashSet<Vec<usize>> = HashSet::new();
    for e in 0..g.bonds.len() {
        if !g.bonds[e].in_ring {
            continue;
        }
        if let Some(cycle) = shortest_cycle_through(g, e) {
            if seen_rings.insert(cycle.clone()) {
                rings.push(cycle);
            }
        }
    }

    // Fused and bridged ring systems (sharing a bond or more, i.e. >= 2
    // atoms) merge into one cluster; spiro pairs (1 shared atom) stay apart.
    // This keeps every bond in exactly one cluster.
    let mut ds = DisjointSet::new(rings.len());
    for i in 0..rings.len() {
        for j in i + 1..rings.len() {
            let shared = intersection_size(&rings[i], &rings[j]);
            if shared >= 2 {
                ds.union(i, j);
            }
        }
    }
    let mut merged: BTreeMap<usize, HashSet<usize>> = BTreeMap::new();
    for (i, ring) in rings.iter().enumerate() {
        merged.entry(ds.find(i)).or_default().extend(ring.iter().copied());
    }
    let mut ring_clusters: Vec<Vec<usize>> = merged
        .into_values()
        .map(|set| {
            let mut v: Vec<usize> = set.into_iter().collect();
            v.sort_unstable();
            v
        })
        .collect();
    ring_clusters.sort();

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut kinds: Vec<ClusterKind> = Vec::new();
    for rc in ring_clusters {
        clusters.push(rc);
        kinds.push(ClusterKind::Ring);
    }
    for bond in &g.bonds {
        if !bond.in_ring {
            let mut pair = vec![bond.a, bond.b];
            pair.sort_unstable();
            clusters.push(pair);
            kinds.push(ClusterKind::Bond(bond.order));
        }
    }
    for (i, _) in g.atoms.iter().enumerate() {
        if g.degree(i) == 0 {
            clusters.push(vec![i]);
            kinds.push(ClusterKind::Atom);
        }
    }

    let mut atom_clusters: Vec<Vec<usize>> = vec![Vec::new(); g.atoms.len()];
    for (c, atoms) in clusters.iter().enumerate() {
        for &a in atoms {
            atom_clusters[a].push(c);
        }
    }

    // Cluster-graph edges weighted by intersection size; maximum spanning
    // forest via descending-weight Kruskal with index tie-breaks.
    let mut weights: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for list in &atom_clusters {
        for i in 0..list.len() {
            for j in i + 1..list.len() {
                *weights.entry((list[i], list[j])).or_insert(0) += 1;
            }
        }
    }
    let mut edges: Vec<(usize, usize, usize)> =
        weights.into_iter().map(|((a, b), w)| (a, b, w)).collect();
    edges.sort_by(|x, y| y.2.cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let mut forest = DisjointSet::new(clusters.len());
    let mut tree_edges = Vec::new();
    for (a, b, _) in edges {
        if forest.union(a, b) {
            tree_edges.push((a, b));
        }
    }
    tree_edges.sort_unstable();

    let types = clusters
        .iter()
        .zip(&kinds)
        .map(|(atoms, kind)| cluster_type_id(atoms, *kind, g))
        .collect();

    JunctionTree { clusters, kinds, types, atom_clusters, tree_edges }
}

fn intersection_size(a: &[usize], b: &[usize]) -> usize {
    // Both sorted.
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Stable vocabulary id: the signature is the cluster kind tag (ring size,
/// bond order, or lone atom) plus the sorted multiset of (element, aromatic)
/// pairs, hashed seed-free.
pub fn cluster_type_id(atoms: &[usize], kind: ClusterKind, g: &MolGraph) -> usize {
    let tag = match kind {
        ClusterKind::Ring => format!("r{}", atoms.len()),
        ClusterKind::Bond(o) => format!("b{}", o.symbol()),
        ClusterKind::Atom => "i".to_string(),
    };
    let mut parts: Vec<String> = atoms
        .iter()
        .map(|&a| format!("{}{}", g.atoms[a].symbol, u8::from(g.atoms[a].aromatic)))
        .collect();
    parts.sort();
    let sig = format!("{tag}|{}", parts.join(","));
    (fnv1a(sig.as_bytes()) % CLUSTER_VOCAB as u64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    fn decompose(s: &str) -> (MolGraph, JunctionTree) {
        let g = parse_smiles(s).unwrap();
        let jt = tree_decompose(&g);
        (g, jt)
    }

    /// Coverage and forest invariants that must hold for any molecule.
    fn assert_invariants(g: &MolGraph, jt: &JunctionTree) {
        for (a, list) in jt.atom_clusters.iter().enumerate() {
            assert!(!list.is_empty(), "atom {a} in no cluster");
        }
        for bond in &g.bonds {
            let joint = jt
                .clusters
                .iter()
                .filter(|c| c.binary_search(&bond.a).is_ok() && c.binary_search(&bond.b).is_ok())
                .count();
            assert_eq!(joint, 1, "bond {}-{} in {joint} clusters", bond.a, bond.b);
        }
        // Forest: edge count = clusters - components, and Kruskal already
        // guarantees acyclicity; recheck it independently here.
        let mut ds = DisjointSet::new(jt.clusters.len());
        for &(a, b) in &jt.tree_edges {
            assert!(ds.union(a, b), "tree edge {a}-{b} closes a cycle");
            assert!(
                intersection_size(&jt.clusters[a], &jt.clusters[b]) >= 1,
                "tree edge joins disjoint clusters"
            );
        }
        assert_eq!(
            jt.tree_edges.len(),
            jt.clusters.len() - g.components().len(),
            "one tree per molecular component"
        );
        for &t in &jt.types {
            assert!(t < CLUSTER_VOCAB);
        }
    }

    #[test]
    fn ethane_is_one_cluster() {
        let (g, jt) = decompose("CC");
        assert_eq!(jt.clusters, vec![vec![0, 1]]);
        assert!(jt.tree_edges.is_empty());
        assert_invariants(&g, &jt);
    }

    #[test]
    fn toluene_is_ring_plus_bond() {
        let (g, jt) = decompose("Cc1ccccc1");
        assert_eq!(jt.clusters.len(), 2);
        let ring = jt.kinds.iter().position(|k| *k == ClusterKind::Ring).unwrap();
        assert_eq!(jt.clusters[ring].len(), 6);
        assert_eq!(jt.tree_edges.len(), 1);
        let (a, b) = jt.tree_edges[0];
        assert_eq!(intersection_size(&jt.clusters[a], &jt.clusters[b]), 1);
        assert_invariants(&g, &jt);
    }

    #[test]
    fn caffeine_covers_all_atoms_and_bonds() {
        let (g, jt) = decompose("CN1C=NC2=C1C(=O)N(C(=O)N2C)C");
        assert_invariants(&g, &jt);
        // Fused 5+6 bicycle merges into a single 9-atom ring cluster.
        let ring_sizes: Vec<usize> = jt
            .kinds
            .iter()
            .zip(&jt.clusters)
            .filter(|(k, _)| **k == ClusterKind::Ring)
            .map(|(_, c)| c.len())
            .collect();
        assert_eq!(ring_sizes, vec![9]);
    }

    #[test]
    fn spiro_rings_stay_separate() {
        let (g, jt) = decompose("C1CCC2(CC1)CCCC2");
        assert_invariants(&g, &jt);
        let rings: Vec<&Vec<usize>> = jt
            .kinds
            .iter()
            .zip(&jt.clusters)
            .filter(|(k, _)| **k == ClusterKind::Ring)
            .map(|(_, c)| c)
            .collect();
        assert_eq!(rings.len(), 2, "spiro pair must not merge");
        assert_eq!(intersection_size(rings[0], rings[1]), 1);
    }

    #[test]
    fn fused_naphthalene_merges() {
        let (g, jt) = decompose("c1ccc2ccccc2c1");
        assert_invariants(&g, &jt);
        assert_eq!(jt.clusters.len(), 1);
        assert_eq!(jt.clusters[0].len(), 10);
    }

    #[test]
    fn isolated_atoms_get_singleton_clusters() {
        let (g, jt) = decompose("CCO.[Na+]");
        assert_invariants(&g, &jt);
        assert!(jt.kinds.contains(&ClusterKind::Atom));
        // Disconnected components give a 2-tree forest here.
        assert_eq!(jt.tree_edges.len(), jt.clusters.len() - 2);
    }

    #[test]
    fn type_ids_are_stable_across_molecules() {
        let (g1, jt1) = decompose("c1ccccc1CC");
        let (g2, jt2) = decompose("NCc1ccccc1");
        let ring_type = |jt: &JunctionTree, g: &MolGraph| {
            jt.kinds
                .iter()
                .zip(&jt.clusters)
                .zip(&jt.types)
                .find(|((k, _), _)| **k == ClusterKind::Ring)
                .map(|((_, c), t)| {
                    assert_eq!(c.len(), 6);
                    let _ = g;
                    *t
                })
                .unwrap()
        };
        assert_eq!(ring_type(&jt1, &g1), ring_type(&jt2, &g2), "benzene rings share a type");
    }

    #[test]
    fn bond_order_distinguishes_types() {
        let (_, single) = decompose("CC");
        let (_, double) = decompose("C=C");
        assert_ne!(single.types[0], double.types[0]);
    }

    #[test]
    fn corpus_scale_invariants_hold() {
        // A grab bag of real drug structures with fused systems, spiro
        // centers, charges and heteroaromatics.
        for s in [
            "CC1=C(C=C(C=C1)NC(=O)C2=CC=C(C=C2)CN3CCN(CC3)C)NC4=NC=CC(=N4)C5=CN=CC=C5", // imatinib
            "CN1CCC[C@H]1c1cccnc1",                                            // nicotine
            "CC(=O)Oc1ccccc1C(=O)O",                                           // aspirin
            "C1CC2(C1)CC2",                                                    // spiro bicyclobutane
            "c1ccc2c(c1)ccc1ccccc12",                                          // anthracene-like
            "OC(=O)C1CCN(CC1)S(=O)(=O)c1ccc(F)cc1",
            "C1CN2CCC1CC2",                                                    // quinuclidine (bridged)
            "Nc1ncnc2[nH]cnc12",                                               // adenine
        ] {
            let g = parse_smiles(s).unwrap();
            let jt = tree_decompose(&g);
            assert_invariants(&g, &jt);
        }
    }
}
