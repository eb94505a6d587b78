//! SMILES parsing, molecular graphs, featurization and junction-tree
//! decomposition.

pub mod features;
pub mod junction;
pub mod parse;
pub mod write;

pub use junction::JunctionTree;
pub use parse::parse_smiles;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to the valence sum. Aromatic bonds count 1; the extra
    /// delocalized electron is handled by the aromatic implicit-H rule.
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BondOrder::Single => "-",
            BondOrder::Double => "=",
            BondOrder::Triple => "#",
            BondOrder::Aromatic => ":",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Atom {
    pub symbol: String,
    pub aromatic: bool,
    pub charge: i32,
    /// H count fixed by a bracket annotation; None means derived from valence.
    pub explicit_h: Option<u8>,
    pub implicit_h: u8,
    /// Written in bracket form in the input (suppresses implicit-H rules).
    pub bracket: bool,
}

impl Atom {
    pub fn total_h(&self) -> u8 {
        self.explicit_h.unwrap_or(self.implicit_h)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    pub in_ring: bool,
}

#[derive(Debug, Clone, Default)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// Per atom: (neighbor atom index, bond index).
    pub adj: Vec<Vec<(usize, usize)>>,
}

impl MolGraph {
    pub fn degree(&self, atom: usize) -> usize {
        self.adj[atom].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adj[a].iter().find(|&&(n, _)| n == b).map(|&(_, e)| e)
    }

    /// Connected components as atom-index lists, in first-seen order.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.atoms.len();
        let mut comp = vec![usize::MAX; n];
        let mut out: Vec<Vec<usize>> = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let c = out.len();
            let mut stack = vec![start];
            let mut members = Vec::new();
            comp[start] = c;
            while let Some(v) = stack.pop() {
                members.push(v);
                for &(w, _) in &self.adj[v] {
                    if comp[w] == usize::MAX {
                        comp[w] = c;
                        stack.push(w);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// Mark ring bonds: a bond is in a ring iff it is not a bridge.
    /// Iterative Tarjan lowlink over (vertex, parent-edge) frames.
    pub(crate) fn mark_ring_bonds(&mut self) {
        let n = self.atoms.len();
        let mut disc = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut timer = 0usize;
        let mut is_bridge = vec![false; self.bonds.len()];

        for root in 0..n {
            if disc[root] != usize::MAX {
                continue;
            }
            // Frame: (vertex, edge-from-parent, next adjacency slot).
            let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(&mut (v, pe, ref mut slot)) = stack.last_mut() {
                if *slot < self.adj[v].len() {
                    let (w, e) = self.adj[v][*slot];
                    *slot += 1;
                    if e == pe {
                        continue; // the edge we came in on (parallel edges are rejected at parse)
                    }
                    if disc[w] == usize::MAX {
                        disc[w] = timer;
                        low[w] = timer;
                        timer += 1;
                        stack.push((w, e, 0));
                    } else {
                        low[v] = low[v].min(disc[w]);
                    }
                } else {
                    stack.pop();
                    if let Some(&mut (parent, _, _)) = stack.last_mut() {
                        low[parent] = low[parent].min(low[v]);
                        if low[v] > disc[parent] {
                            is_bridge[pe] = true;
                        }
                    }
                }
            }
        }
        for (i, b) in self.bonds.iter_mut().enumerate() {
            b.in_ring = !is_bridge[i];
        }
        // Degree-0 graphs and trees end with no ring bonds, as expected.
    }
}
