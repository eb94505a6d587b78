//! SMILES emission and graph-isomorphism checking, used to verify that
//! parse -> write -> parse preserves the molecule.

use std::collections::HashMap;

use super::{BondOrder, MolGraph};

/// Hydrogen count the parser would infer for a bare (bracketless) atom, or
/// None when no bare form reproduces the stored state.
fn bare_form_h(symbol: &str, aromatic: bool, bond_sum: u16) -> Option<u8> {
    let vals: &[u8] = match symbol {
        "B" => &[3],
        "C" => &[4],
        "N" => &[3, 5],
        "O" => &[2],
        "P" => &[3, 5],
        "S" => &[2, 4, 6],
        "F" | "Cl" | "Br" | "I" => &[1],
        "*" => return Some(0),
        _ => return None,
    };
    if aromatic && !matches!(symbol, "B" | "C" | "N" | "O" | "P" | "S") {
        return None; // halogens have no aromatic lowercase form
    }
    if bond_sum > *vals.last().unwrap() as u16 {
        return None;
    }
    if aromatic {
        Some((vals[0] as i16 - bond_sum as i16 - 1).max(0) as u8)
    } else {
        let v = *vals.iter().find(|&&v| v as u16 >= bond_sum).unwrap();
        Some(v - bond_sum as u8)
    }
}

/// Bond text inside a SMILES chain. Aromatic bonds between aromatic atoms and
/// plain single bonds are implicit; a single bond between two aromatic atoms
/// must be written out or it would re-parse as aromatic.
fn bond_text(g: &MolGraph, e: usize) -> &'static str {
    let bond = &g.bonds[e];
    let both_aromatic = g.atoms[bond.a].aromatic && g.atoms[bond.b].aromatic;
    match bond.order {
        BondOrder::Single => {
            if both_aromatic {
                "-"
            } else {
                ""
            }
        }
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic => {
            if both_aromatic {
                ""
            } else {
                ":"
            }
        }
    }
}

fn atom_text(g: &MolGraph, i: usize) -> String {
    let atom = &g.atoms[i];
    let bond_sum: u16 = g.adj[i].iter().map(|&(_, e)| g.bonds[e].order.valence() as u16).sum();
    let bare_ok = atom.charge == 0
        && bare_form_h(&atom.symbol, atom.aromatic, bond_sum) == Some(atom.total_h());
    let symbol = if atom.aromatic { atom.symbol.to_lowercase() } else { atom.symbol.clone() };
    if bare_ok {
        return symbol;
    }
    let mut s = String::from("[");
    s.push_str(&symbol);
    match atom.total_h() {
        0 => {}
        1 => s.push('H'),
        n => {
            s.push('H');
            s.push_str(&n.to_string());
        }
    }
    match atom.charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => s.push_str(&format!("+{c}")),
        c => s.push_str(&format!("-{}", -c)),
    }
    s.push(']');
    s
}

/// Emit the graph as SMILES: depth-first from the lowest atom of each
/// component, ring closures numbered in discovery order, components joined
/// with dots. Atom order follows the stored graph, so this is deterministic
/// but makes no canonicalization promise beyond re-parse isomorphism.
pub fn write_smiles(g: &MolGraph) -> String {
    let n = g.atoms.len();
    let back_edges = back_edges_all(g);
    let mut out = String::new();
    let mut ring_digit: HashMap<usize, u16> = HashMap::new(); // bond -> digit
    let mut digit_free: Vec<bool> = vec![true; 100];
    let mut emitted = vec![false; n];
    for root in 0..n {
        if emitted[root] {
            continue;
        }
        if !out.is_empty() {
            out.push('.');
        }
        emit(g, root, usize::MAX, &mut emitted, &back_edges, &mut ring_digit, &mut digit_free, &mut out);
    }
    out
}

/// Bond ids that close rings, keyed by the later-visited endpoint. Computed
/// against the same recursive traversal as `emit`.
fn back_edges_all(g: &MolGraph) -> Vec<Vec<usize>> {
    let n = g.atoms.len();
    let mut visited = vec![false; n];
    let mut back: Vec<Vec<usize>> = vec![Vec::new(); n];
    fn walk(g: &MolGraph, u: usize, parent_edge: usize, visited: &mut [bool], back: &mut [Vec<usize>]) {
        visited[u] = true;
        for &(v, e) in &g.adj[u] {
            if e == parent_edge {
                continue;
            }
            if visited[v] {
                if !back[u].contains(&e) && !back[v].contains(&e) {
                    back[u].push(e);
                }
            } else {
                walk(g, v, e, visited, back);
            }
        }
    }
    for root in 0..n {
        if !visited[root] {
            walk(g, root, usize::MAX, &mut visited, &mut back);
        }
    }
    back
}

#[allow(clippy::too_many_arguments)]
fn emit(
    g: &MolGraph,
    u: usize,
    parent_edge: usize,
    emitted: &mut [bool],
    back_edges: &[Vec<usize>],
    ring_digit: &mut HashMap<usize, u16>,
    digit_free: &mut [bool],
    out: &mut String,
) {
    emitted[u] = true;
    out.push_str(&atom_text(g, u));
    // Ring bonds at this atom: open (first endpoint) or close (second).
    for &(_, e) in &g.adj[u] {
        let is_ring_closure = back_edges[g.bonds[e].a].contains(&e) || back_edges[g.bonds[e].b].contains(&e);
        if !is_ring_closure {
            continue;
        }
        match ring_digit.remove(&e) {
            Some(d) => {
                // Close side: order was written at the open side.
                push_digit(out, d);
                digit_free[d as usize] = true;
            }
            None => {
                let d = (1..100).find(|&d| digit_free[d as usize]).expect("digit pool exhausted") as u16;
                digit_free[d as usize] = false;
                ring_digit.insert(e, d);
                out.push_str(bond_text(g, e));
                push_digit(out, d);
            }
        }
    }
    let children: Vec<(usize, usize)> = g
        .adj[u]
        .iter()
        .copied()
        .filter(|&(v, e)| {
            e != parent_edge
                && !emitted[v]
                && !back_edges[g.bonds[e].a].contains(&e)
                && !back_edges[g.bonds[e].b].contains(&e)
        })
        .collect();
    for (i, (v, e)) in children.iter().enumerate() {
        if emitted[*v] {
            continue; // sibling subtree reached it first through a ring
        }
        let last = i + 1 == children.len();
        if !last {
            out.push('(');
        }
        out.push_str(bond_text(g, *e));
        emit(g, *v, *e, emitted, back_edges, ring_digit, digit_free, out);
        if !last {
            out.push(')');
        }
    }
}

fn push_digit(out: &mut String, d: u16) {
    if d < 10 {
        out.push_str(&d.to_string());
    } else {
        out.push('%');
        out.push_str(&format!("{d:02}"));
    }
}

/// Exact graph isomorphism with atom/bond attribute matching, by pruned
/// backtracking. Intended for test molecules (tens of atoms).
pub fn isomorphic(a: &MolGraph, b: &MolGraph) -> bool {
    if a.atoms.len() != b.atoms.len() || a.bonds.len() != b.bonds.len() {
        return false;
    }
    let key = |g: &MolGraph, i: usize| {
        let at = &g.atoms[i];
        let mut orders: Vec<u8> = g.adj[i].iter().map(|&(_, e)| g.bonds[e].order.valence()).collect();
        orders.sort_unstable();
        (at.symbol.clone(), at.aromatic, at.charge, at.total_h(), g.degree(i), orders)
    };
    let ka: Vec<_> = (0..a.atoms.len()).map(|i| key(a, i)).collect();
    let kb: Vec<_> = (0..b.atoms.len()).map(|i| key(b, i)).collect();
    {
        let mut sa = ka.clone();
        let mut sb = kb.clone();
        sa.sort();
        sb.sort();
        if sa != sb {
            return false;
        }
    }
    // Match most-constrained atoms first: rarest key, then highest degree.
    let mut freq: HashMap<&(String, bool, i32, u8, usize, Vec<u8>), usize> = HashMap::new();
    for k in &ka {
        *freq.entry(k).or_insert(0) += 1;
    }
    let mut order: Vec<usize> = (0..a.atoms.len()).collect();
    order.sort_by_key(|&i| (freq[&ka[i]], usize::MAX - a.degree(i)));

    let mut map = vec![usize::MAX; a.atoms.len()];
    let mut used = vec![false; b.atoms.len()];

    fn bond_order_between(g: &MolGraph, x: usize, y: usize) -> Option<BondOrder> {
        g.bond_between(x, y).map(|e| g.bonds[e].order)
    }

    fn try_assign(
        pos: usize,
        order: &[usize],
        a: &MolGraph,
        b: &MolGraph,
        ka: &[(String, bool, i32, u8, usize, Vec<u8>)],
        kb: &[(String, bool, i32, u8, usize, Vec<u8>)],
        map: &mut [usize],
        used: &mut [bool],
    ) -> bool {
        if pos == order.len() {
            return true;
        }
        let i = order[pos];
        'candidates: for j in 0..b.atoms.len() {
            if used[j] || ka[i] != kb[j] {
                continue;
            }
            // Adjacency consistency against already-mapped neighbors.
            for &(ni, e) in &a.adj[i] {
                if map[ni] != usize::MAX {
                    match bond_order_between(b, j, map[ni]) {
                        Some(o) if o == a.bonds[e].order => {}
                        _ => continue 'candidates,
                    }
                }
            }
            map[i] = j;
            used[j] = true;
            if try_assign(pos + 1, order, a, b, ka, kb, map, used) {
                return true;
            }
            map[i] = usize::MAX;
            used[j] = false;
        }
        false
    }

    try_assign(0, &order, a, b, &ka, &kb, &mut map, &mut used)
}
