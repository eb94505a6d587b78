//! SMILES reader for the benchmark corpora: organic-subset atoms, bracket
//! atoms with isotope/chirality/H/charge/class annotations, branches, ring
//! closures (including %nn), aromatic lowercase notation, bond symbols
//! - = # : / \ and dot-separated components. Stereo marks are consumed and
//! discarded; isotopes and atom classes likewise.

use std::collections::HashMap;

use super::{Atom, Bond, BondOrder, MolGraph};
use crate::error::{Error, Result, SmilesErrorKind as K};

/// Elements readable without brackets, and their implicit-valence lists.
fn valences(symbol: &str) -> &'static [u8] {
    match symbol {
        "B" => &[3],
        "C" => &[4],
        "N" => &[3, 5],
        "O" => &[2],
        "P" => &[3, 5],
        "S" => &[2, 4, 6],
        "F" | "Cl" | "Br" | "I" => &[1],
        _ => &[],
    }
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    g: MolGraph,
    atom_offset: Vec<usize>,
    prev: Option<usize>,
    // Saved attachment points with the '(' offset for error reporting.
    stack: Vec<(Option<usize>, usize)>,
    pending: Option<BondOrder>,
    pending_offset: usize,
    // Open ring bonds: number -> (atom, order at open, byte offset).
    ring: HashMap<u16, (usize, Option<BondOrder>, usize)>,
}

pub fn parse_smiles(s: &str) -> Result<MolGraph> {
    let trimmed = s.trim();
    if trimmed.is_empty() {
        return Err(Error::smiles(0, K::EmptyInput));
    }
    let mut p = Parser {
        bytes: trimmed.as_bytes(),
        pos: 0,
        g: MolGraph::default(),
        atom_offset: Vec::new(),
        prev: None,
        stack: Vec::new(),
        pending: None,
        pending_offset: 0,
        ring: HashMap::new(),
    };
    p.run()?;
    let mut g = p.g;
    g.mark_ring_bonds();
    Ok(g)
}

impl<'a> Parser<'a> {
    fn run(&mut self) -> Result<()> {
        while self.pos < self.bytes.len() {
            let at = self.pos;
            let b = self.bytes[at];
            match b {
                b'A'..=b'Z' => {
                    let sym = self.read_organic(at)?;
                    self.add_atom(at, Atom {
                        symbol: sym,
                        aromatic: false,
                        charge: 0,
                        explicit_h: None,
                        implicit_h: 0,
                        bracket: false,
                    })?;
                }
                b'b' | b'c' | b'n' | b'o' | b'p' | b's' => {
                    self.pos += 1;
                    self.add_atom(at, Atom {
                        symbol: ((b as char).to_ascii_uppercase()).to_string(),
                        aromatic: true,
                        charge: 0,
                        explicit_h: None,
                        implicit_h: 0,
                        bracket: false,
                    })?;
                }
                b'*' => {
                    self.pos += 1;
                    self.add_atom(at, Atom {
                        symbol: "*".to_string(),
                        aromatic: false,
                        charge: 0,
                        explicit_h: None,
                        implicit_h: 0,
                        bracket: false,
                    })?;
                }
                b'[' => {
                    let atom = self.read_bracket(at)?;
                    self.add_atom(at, atom)?;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if self.pending.is_some() {
                        return Err(Error::smiles(at, K::BondWithoutAtom));
                    }
                    self.pending = Some(match b {
                        b'=' => BondOrder::Double,
                        b'#' => BondOrder::Triple,
                        b':' => BondOrder::Aromatic,
                        // Stereo slashes collapse to plain single bonds.
                        _ => BondOrder::Single,
                    });
                    self.pending_offset = at;
                    self.pos += 1;
                }
                b'(' => {
                    if self.pending.is_some() {
                        return Err(Error::smiles(self.pending_offset, K::BondWithoutAtom));
                    }
                    self.stack.push((self.prev, at));
                    self.pos += 1;
                }
                b')' => {
                    if self.pending.is_some() {
                        return Err(Error::smiles(self.pending_offset, K::BondWithoutAtom));
                    }
                    match self.stack.pop() {
                        Some((saved, _)) => self.prev = saved,
                        None => return Err(Error::smiles(at, K::UnmatchedCloseParen)),
                    }
                    self.pos += 1;
                }
                b'.' => {
                    if self.pending.is_some() {
                        return Err(Error::smiles(self.pending_offset, K::BondWithoutAtom));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    self.pos += 1;
                    self.ring_bond(at, (b - b'0') as u16)?;
                }
                b'%' => {
                    if at + 2 >= self.bytes.len()
                        || !self.bytes[at + 1].is_ascii_digit()
                        || !self.bytes[at + 2].is_ascii_digit()
                    {
                        return Err(Error::smiles(at, K::UnknownToken("%".to_string())));
                    }
                    let n = (self.bytes[at + 1] - b'0') as u16 * 10 + (self.bytes[at + 2] - b'0') as u16;
                    self.pos += 3;
                    self.ring_bond(at, n)?;
                }
                _ => {
                    return Err(Error::smiles(at, K::UnknownToken((b as char).to_string())));
                }
            }
        }
        if self.pending.is_some() {
            return Err(Error::smiles(self.pending_offset, K::BondWithoutAtom));
        }
        if let Some(&(_, off)) = self.stack.first() {
            return Err(Error::smiles(off, K::UnmatchedOpenParen));
        }
        if let Some((&n, &(_, _, off))) = self.ring.iter().min_by_key(|(_, &(_, _, off))| off) {
            return Err(Error::smiles(off, K::UnclosedRingBond(n)));
        }
        self.assign_implicit_h()?;
        Ok(())
    }

    fn read_organic(&mut self, at: usize) -> Result<String> {
        let rest = &self.bytes[at..];
        for two in ["Cl", "Br"] {
            if rest.starts_with(two.as_bytes()) {
                self.pos += 2;
                return Ok(two.to_string());
            }
        }
        let c = rest[0] as char;
        if matches!(c, 'B' | 'C' | 'N' | 'O' | 'P' | 'S' | 'F' | 'I') {
            self.pos += 1;
            return Ok(c.to_string());
        }
        Err(Error::smiles(at, K::UnknownToken(c.to_string())))
    }

    fn read_bracket(&mut self, open: usize) -> Result<Atom> {
        let close = self.bytes[open..]
            .iter()
            .position(|&b| b == b']')
            .map(|i| open + i)
            .ok_or_else(|| Error::smiles(open, K::UnclosedBracket))?;
        let inner = &self.bytes[open + 1..close];
        let text = || String::from_utf8_lossy(&self.bytes[open..=close]).into_owned();
        let bad = |_: ()| Error::smiles(open, K::BadBracketAtom(text()));

        let mut i = 0usize;
        // Isotope number: parsed, then discarded.
        while i < inner.len() && inner[i].is_ascii_digit() {
            i += 1;
        }
        let (symbol, aromatic) = read_bracket_symbol(inner, &mut i).map_err(bad)?;
        // Chirality marks: one or two '@', optionally followed by a short
        // alphanumeric class tag (TH1, AL2, ...). All discarded.
        if i < inner.len() && inner[i] == b'@' {
            i += 1;
            if i < inner.len() && inner[i] == b'@' {
                i += 1;
            } else {
                while i < inner.len() && (inner[i].is_ascii_uppercase() || inner[i].is_ascii_digit()) {
                    if inner[i] == b'H' {
                        break; // H here is the hydrogen-count field
                    }
                    i += 1;
                }
            }
        }
        let mut hcount: u8 = 0;
        if i < inner.len() && inner[i] == b'H' {
            i += 1;
            hcount = 1;
            if i < inner.len() && inner[i].is_ascii_digit() {
                hcount = inner[i] - b'0';
                i += 1;
            }
        }
        let mut charge: i32 = 0;
        if i < inner.len() && (inner[i] == b'+' || inner[i] == b'-') {
            let sign: i32 = if inner[i] == b'+' { 1 } else { -1 };
            let mark = inner[i];
            i += 1;
            if i < inner.len() && inner[i].is_ascii_digit() {
                let mut mag = 0i32;
                while i < inner.len() && inner[i].is_ascii_digit() {
                    mag = mag * 10 + (inner[i] - b'0') as i32;
                    i += 1;
                }
                charge = sign * mag;
            } else {
                charge = sign;
                while i < inner.len() && inner[i] == mark {
                    charge += sign;
                    i += 1;
                }
            }
        }
        // Atom class ':n' is an application label; discard.
        if i < inner.len() && inner[i] == b':' {
            i += 1;
            let start = i;
            while i < inner.len() && inner[i].is_ascii_digit() {
                i += 1;
            }
            if i == start {
                return Err(bad(()));
            }
        }
        if i != inner.len() {
            return Err(bad(()));
        }
        self.pos = close + 1;
        Ok(Atom {
            symbol,
            aromatic,
            charge,
            explicit_h: Some(hcount),
            implicit_h: 0,
            bracket: true,
        })
    }

    fn add_atom(&mut self, offset: usize, atom: Atom) -> Result<()> {
        let idx = self.g.atoms.len();
        self.g.atoms.push(atom);
        self.g.adj.push(Vec::new());
        self.atom_offset.push(offset);
        if let Some(p) = self.prev {
            let order = match self.pending.take() {
                Some(o) => o,
                None => {
                    if self.g.atoms[p].aromatic && self.g.atoms[idx].aromatic {
                        BondOrder::Aromatic
                    } else {
                        BondOrder::Single
                    }
                }
            };
            self.add_bond(p, idx, order);
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn add_bond(&mut self, a: usize, b: usize, order: BondOrder) {
        let e = self.g.bonds.len();
        self.g.bonds.push(Bond { a, b, order, in_ring: false });
        self.g.adj[a].push((b, e));
        self.g.adj[b].push((a, e));
    }

    fn ring_bond(&mut self, at: usize, n: u16) -> Result<()> {
        let here = match self.prev {
            Some(p) => p,
            None => return Err(Error::smiles(at, K::UnknownToken("ring digit before any atom".to_string()))),
        };
        match self.ring.remove(&n) {
            None => {
                self.ring.insert(n, (here, self.pending.take(), at));
            }
            Some((other, open_order, _)) => {
                if other == here {
                    return Err(Error::smiles(at, K::SelfRingBond(n)));
                }
                if self.g.bond_between(other, here).is_some() {
                    return Err(Error::smiles(at, K::DuplicateRingBond(n)));
                }
                let close_order = self.pending.take();
                let order = match (open_order, close_order) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(Error::smiles(at, K::RingBondOrderClash(n)))
                    }
                    (Some(o), _) | (None, Some(o)) => o,
                    (None, None) => {
                        if self.g.atoms[other].aromatic && self.g.atoms[here].aromatic {
                            BondOrder::Aromatic
                        } else {
                            BondOrder::Single
                        }
                    }
                };
                self.add_bond(other, here, order);
            }
        }
        Ok(())
    }

    /// Fill `implicit_h` for non-bracket atoms from the valence tables.
    /// Aromatic atoms reserve one valence slot for the delocalized system:
    /// H = V0 - (bond sum with aromatic counted 1) - 1, floored at zero.
    fn assign_implicit_h(&mut self) -> Result<()> {
        for (i, atom) in self.g.atoms.iter_mut().enumerate() {
            if atom.bracket {
                continue;
            }
            let sum: u16 = self.g.adj[i].iter().map(|&(_, e)| self.g.bonds[e].order.valence() as u16).sum();
            let vals = valences(&atom.symbol);
            if vals.is_empty() {
                continue; // wildcard atom: no hydrogens
            }
            let max = *vals.last().unwrap() as u16;
            if sum > max {
                return Err(Error::smiles(
                    self.atom_offset[i],
                    K::ValenceOverflow { symbol: atom.symbol.clone(), total_order: sum.min(255) as u8 },
                ));
            }
            if atom.aromatic {
                let v0 = vals[0] as i16;
                atom.implicit_h = (v0 - sum as i16 - 1).max(0) as u8;
            } else {
                let v = *vals.iter().find(|&&v| v as u16 >= sum).unwrap() as u16;
                atom.implicit_h = (v - sum) as u8;
            }
        }
        Ok(())
    }
}

fn read_bracket_symbol(inner: &[u8], i: &mut usize) -> std::result::Result<(String, bool), ()> {
    if *i >= inner.len() {
        return Err(());
    }
    let b = inner[*i];
    if b == b'*' {
        *i += 1;
        return Ok(("*".to_string(), false));
    }
    if b.is_ascii_uppercase() {
        let mut sym = (b as char).to_string();
        *i += 1;
        // Second letter of a two-letter element, but never the H-count field:
        // only 'H' itself as symbol is single-letter here, and a lowercase
        // letter after an uppercase one always extends the symbol.
        if *i < inner.len() && inner[*i].is_ascii_lowercase() {
            sym.push(inner[*i] as char);
            *i += 1;
        }
        return Ok((sym, false));
    }
    if b.is_ascii_lowercase() {
        // Aromatic bracket symbols.
        for sym in ["se", "as", "si", "te"] {
            if inner[*i..].starts_with(sym.as_bytes()) {
                *i += 2;
                let mut s = sym.to_string();
                s[..1].make_ascii_uppercase();
                return Ok((s, true));
            }
        }
        if matches!(b, b'b' | b'c' | b'n' | b'o' | b'p' | b's') {
            *i += 1;
            return Ok((((b as char).to_ascii_uppercase()).to_string(), true));
        }
    }
    Err(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> MolGraph {
        parse_smiles(s).unwrap()
    }

    fn kind_of(s: &str) -> (usize, K) {
        match parse_smiles(s).unwrap_err() {
            Error::Smiles { offset, kind } => (offset, kind),
            e => panic!("wrong error type: {e}"),
        }
    }

    #[test]
    fn ethanol_is_a_three_atom_chain() {
        let g = parse("CCO");
        assert_eq!(g.atoms.len(), 3);
        assert_eq!(g.bonds.len(), 2);
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Single && !b.in_ring));
        assert_eq!(g.atoms[0].symbol, "C");
        assert_eq!(g.atoms[2].symbol, "O");
        assert_eq!(g.atoms[0].total_h(), 3);
        assert_eq!(g.atoms[1].total_h(), 2);
        assert_eq!(g.atoms[2].total_h(), 1);
    }

    #[test]
    fn cyclopropane_marks_every_bond_as_ring() {
        let g = parse("C1CC1");
        assert_eq!(g.atoms.len(), 3);
        assert_eq!(g.bonds.len(), 3);
        assert!(g.bonds.iter().all(|b| b.in_ring));
        assert!(g.atoms.iter().all(|a| a.total_h() == 2));
    }

    #[test]
    fn benzene_is_aromatic_with_one_h_each() {
        let g = parse("c1ccccc1");
        assert_eq!(g.atoms.len(), 6);
        assert_eq!(g.bonds.len(), 6);
        for a in &g.atoms {
            assert!(a.aromatic);
            assert_eq!(a.total_h(), 1);
        }
        for b in &g.bonds {
            assert_eq!(b.order, BondOrder::Aromatic);
            assert!(b.in_ring);
        }
    }

    #[test]
    fn implicit_h_follows_the_valence_tables() {
        // Ethene, acetylene, ammonia-like N, nitro-style pentavalent N.
        let g = parse("C=C");
        assert!(g.atoms.iter().all(|a| a.total_h() == 2));
        let g = parse("C#C");
        assert!(g.atoms.iter().all(|a| a.total_h() == 1));
        let g = parse("CN");
        assert_eq!(g.atoms[1].total_h(), 2);
        let g = parse("CS(=O)(=O)C"); // hexavalent sulfur
        assert_eq!(g.atoms[1].total_h(), 0);
        let g = parse("N(=O)O");
        assert_eq!(g.atoms[0].total_h(), 0, "trivalent nitrogen with 3 bonds");
    }

    #[test]
    fn aromatic_nitrogen_has_no_h_unless_bracketed() {
        let pyridine = parse("c1ccncc1");
        let n = pyridine.atoms.iter().find(|a| a.symbol == "N").unwrap();
        assert_eq!(n.total_h(), 0);
        let pyrrole = parse("c1cc[nH]c1");
        let n = pyrrole.atoms.iter().find(|a| a.symbol == "N").unwrap();
        assert_eq!(n.total_h(), 1);
    }

    #[test]
    fn branches_attach_to_the_same_atom() {
        let g = parse("CC(C)(C)C"); // neopentane
        assert_eq!(g.degree(1), 4);
        assert_eq!(g.atoms[1].total_h(), 0);
        assert_eq!(g.bonds.len(), 4);
    }

    #[test]
    fn bracket_atoms_carry_charge_and_h() {
        let g = parse("[NH4+]");
        assert_eq!(g.atoms[0].charge, 1);
        assert_eq!(g.atoms[0].total_h(), 4);
        let g = parse("[O-]C");
        assert_eq!(g.atoms[0].charge, -1);
        assert_eq!(g.atoms[0].total_h(), 0);
        let g = parse("[Fe+2]");
        assert_eq!(g.atoms[0].charge, 2);
        assert_eq!(g.atoms[0].symbol, "Fe");
        let g = parse("[Cu++]");
        assert_eq!(g.atoms[0].charge, 2);
        let g = parse("[13CH4]"); // isotope digits are skipped
        assert_eq!(g.atoms[0].symbol, "C");
        assert_eq!(g.atoms[0].total_h(), 4);
        let g = parse("[C@@H](N)(C)O"); // chirality consumed and dropped
        assert_eq!(g.atoms[0].total_h(), 1);
        assert_eq!(g.degree(0), 3);
    }

    #[test]
    fn percent_ring_closures_and_reuse() {
        let g = parse("C%12CCCCC%12");
        assert_eq!(g.bonds.len(), 6);
        // Digit reuse after a pair closes.
        let g = parse("C1CC1C1CC1");
        assert_eq!(g.bonds.len(), 7);
        assert_eq!(g.bonds.iter().filter(|b| b.in_ring).count(), 6);
    }

    #[test]
    fn ring_bond_order_can_sit_on_either_end() {
        for s in ["C=1CCCCC=1", "C=1CCCCC1", "C1CCCCC=1"] {
            let g = parse(s);
            let ring_bond = g.bonds.iter().find(|b| b.a == 0 && b.b == 5).unwrap();
            assert_eq!(ring_bond.order, BondOrder::Double, "{s}");
        }
    }

    #[test]
    fn explicit_single_bond_between_aromatic_atoms_stays_single() {
        let g = parse("c1ccccc1-c1ccccc1"); // biphenyl
        let link = g.bonds.iter().find(|b| !b.in_ring).unwrap();
        assert_eq!(link.order, BondOrder::Single);
        let g2 = parse("c1ccccc1c1ccccc1"); // no symbol: single by the aromatic-pair default? No:
        // both endpoints aromatic, so the default is aromatic order, but the
        // bond is not in a ring. The writer handles this by always emitting
        // '-' between aromatic atoms when the bond is single; here we just
        // document the parse result.
        let link2 = g2.bonds.iter().find(|b| !b.in_ring).unwrap();
        assert_eq!(link2.order, BondOrder::Aromatic);
    }

    #[test]
    fn dots_split_components() {
        let g = parse("CCO.[Na+]");
        assert_eq!(g.components().len(), 2);
        assert_eq!(g.atoms.len(), 4);
        assert_eq!(g.bonds.len(), 2);
    }

    #[test]
    fn error_offsets_point_at_the_problem() {
        assert_eq!(kind_of(""), (0, K::EmptyInput));
        let (off, kind) = kind_of("CC(C");
        assert_eq!(kind, K::UnmatchedOpenParen);
        assert_eq!(off, 2);
        let (off, kind) = kind_of("CC)C");
        assert_eq!(kind, K::UnmatchedCloseParen);
        assert_eq!(off, 2);
        let (off, kind) = kind_of("C1CC");
        assert_eq!(kind, K::UnclosedRingBond(1));
        assert_eq!(off, 1);
        let (off, kind) = kind_of("CQC");
        assert_eq!(kind, K::UnknownToken("Q".to_string()));
        assert_eq!(off, 1);
        let (off, kind) = kind_of("C[NH");
        assert_eq!(kind, K::UnclosedBracket);
        assert_eq!(off, 1);
        let (off, kind) = kind_of("C=");
        assert_eq!(kind, K::BondWithoutAtom);
        assert_eq!(off, 1);
        let (_, kind) = kind_of("C11");
        assert_eq!(kind, K::SelfRingBond(1));
        let (_, kind) = kind_of("C1C1C");
        assert_eq!(kind, K::DuplicateRingBond(1));
        let (_, kind) = kind_of("C12CCC12"); // both closures join the same atom pair
        assert_eq!(kind, K::DuplicateRingBond(2));
    }

    #[test]
    fn valence_overflow_is_reported_with_offset() {
        let (off, kind) = kind_of("C(C)(C)(C)(C)C");
        match kind {
            K::ValenceOverflow { symbol, total_order } => {
                assert_eq!(symbol, "C");
                assert_eq!(total_order, 5);
            }
            k => panic!("wrong kind {k:?}"),
        }
        assert_eq!(off, 0);
        assert!(parse_smiles("O=C=O").is_ok());
        assert!(parse_smiles("O(C)(C)C").is_err(), "trivalent oxygen");
    }

    #[test]
    fn clashing_ring_bond_orders_rejected() {
        let (_, kind) = kind_of("C=1CCCCC#1");
        assert_eq!(kind, K::RingBondOrderClash(1));
    }

    #[test]
    fn caffeine_parses_with_expected_composition() {
        let g = parse("CN1C=NC2=C1C(=O)N(C(=O)N2C)C");
        assert_eq!(g.atoms.len(), 14);
        assert_eq!(g.bonds.len(), 15);
        assert_eq!(g.atoms.iter().filter(|a| a.symbol == "N").count(), 4);
        assert_eq!(g.atoms.iter().filter(|a| a.symbol == "O").count(), 2);
        // Two fused rings: 10 ring bonds (5+6 with one shared).
        assert_eq!(g.bonds.iter().filter(|b| b.in_ring).count(), 10);
    }
}
