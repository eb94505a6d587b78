//! Dataset ingestion, affinity transform, fold splitting, content-addressed
//! feature caching, and the bundled desk-scale corpus generator.
//!
//! TSV schema: header `drug_id\tsmiles\tprotein_id\tsequence\taffinity`, one
//! interaction per line. Davis-style files carry raw K_d in nM and are loaded
//! with the log transform; Metz/KIBA-style scores load as-is.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use sha2::{Digest, Sha256};

use crate::chem::parse::parse_smiles;
use crate::model::batch::{DrugFeat, ProtFeat};
use crate::protein::store::{
    self, cmap_path, emb_path, stub_contacts, stub_embedding, write_contacts, write_embedding,
};
use crate::tensor::rng::{stream, StreamRng};
use crate::{Error, Result};

pub const TSV_HEADER: &str = "drug_id\tsmiles\tprotein_id\tsequence\taffinity";
const SEQ_ALPHABET: &[u8] = b"ACDEFGHIKLMNPQRSTVWYX";

/// One interaction row, affinity already in model units (pK_d or score).
#[derive(Debug, Clone)]
pub struct AffinityRecord {
    pub drug_id: String,
    pub smiles: String,
    pub protein_id: String,
    pub sequence: String,
    pub affinity: f64,
}

/// K_d in nM to pK_d: -log10(kd / 1e9).
pub fn pkd_transform(kd_nm: f64) -> Result<f64> {
    if !(kd_nm > 0.0) || !kd_nm.is_finite() {
        return Err(Error::Data(format!("K_d must be positive and finite, got {kd_nm}")));
    }
    Ok(-(kd_nm / 1e9).log10())
}

/// Loads a TSV interaction table. With `transform`, the affinity column is
/// raw K_d in nM and is converted to pK_d; otherwise it is taken as-is.
///
/// Duplicate (drug_id, protein_id) pairs keep the last value seen, in the
/// position of the first occurrence, with a warning per duplicate.
pub fn load_dataset(path: &Path, transform: bool) -> Result<Vec<AffinityRecord>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TSV_HEADER => {}
        Some((_, h)) => {
            return Err(Error::Data(format!(
                "{}:1: header is {h:?}, expected {TSV_HEADER:?}",
                path.display()
            )))
        }
        None => return Err(Error::Data(format!("{}: empty file", path.display()))),
    }

    let mut records: Vec<AffinityRecord> = Vec::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let at = |msg: String| Error::Data(format!("{}:{lineno}: {msg}", path.display()));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(at(format!("expected 5 tab-separated fields, got {}", fields.len())));
        }
        let (drug_id, smiles, protein_id, sequence, aff_text) =
            (fields[0], fields[1], fields[2], fields[3], fields[4]);
        if drug_id.is_empty() || protein_id.is_empty() {
            return Err(at("empty drug_id or protein_id".to_string()));
        }
        if smiles.is_empty() {
            return Err(at("empty SMILES".to_string()));
        }
        if sequence.is_empty() {
            return Err(at("empty sequence".to_string()));
        }
        if let Some(bad) = sequence.bytes().find(|b| !SEQ_ALPHABET.contains(b)) {
            return Err(at(format!(
                "sequence contains {:?}; allowed letters are the 20 amino acids plus X",
                bad as char
            )));
        }
        let raw: f64 = aff_text
            .parse()
            .map_err(|_| at(format!("affinity {aff_text:?} is not a number")))?;
        if !raw.is_finite() {
            return Err(at(format!("affinity {raw} is not finite")));
        }
        let affinity =
            if transform { pkd_transform(raw).map_err(|e| at(e.to_string()))? } else { raw };

        let rec = AffinityRecord {
            drug_id: drug_id.to_string(),
            smiles: smiles.to_string(),
            protein_id: protein_id.to_string(),
            sequence: sequence.to_string(),
            affinity,
        };
        let key = (rec.drug_id.clone(), rec.protein_id.clone());
        match seen.get(&key) {
            Some(&pos) => {
                warn!(
                    "{}:{lineno}: duplicate pair ({}, {}), keeping the later record",
                    path.display(),
                    rec.drug_id,
                    rec.protein_id
                );
                records[pos] = rec;
            }
            None => {
                seen.insert(key, records.len());
                records.push(rec);
            }
        }
    }
    Ok(records)
}

/// FASTA records as (id, sequence). The id is the first whitespace-separated
/// token after `>`; wrapped sequence lines are joined. Sequences face the
/// same alphabet check as the dataset loader.
pub fn read_fasta(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut records: Vec<(String, String)> = Vec::new();
    let mut ids = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('>') {
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            if id.is_empty() {
                return Err(Error::Data(format!("{}:{lineno}: header without an id", path.display())));
            }
            if !ids.insert(id.clone()) {
                return Err(Error::Data(format!("{}:{lineno}: duplicate id {id}", path.display())));
            }
            records.push((id, String::new()));
        } else {
            let rec = records.last_mut().ok_or_else(|| {
                Error::Data(format!("{}:{lineno}: sequence before any > header", path.display()))
            })?;
            if let Some(bad) = line.bytes().find(|b| !SEQ_ALPHABET.contains(b)) {
                return Err(Error::Data(format!(
                    "{}:{lineno}: sequence contains {:?}; allowed letters are the 20 amino acids plus X",
                    path.display(),
                    bad as char
                )));
            }
            rec.1.push_str(line);
        }
    }
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no FASTA records", path.display())));
    }
    if let Some((id, _)) = records.iter().find(|(_, seq)| seq.is_empty()) {
        return Err(Error::Data(format!("{}: record {id} has no sequence", path.display())));
    }
    Ok(records)
}

/// Seeded k-fold partition of record indices. Folds are contiguous slices of
/// one shuffled permutation, so the split depends only on (seed, n, k).
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    /// All indices outside the held-out fold, in fold order.
    pub fn train_indices(&self, held_out: usize) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != held_out)
            .flat_map(|(_, f)| f.iter().copied())
            .collect()
    }
}

pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::Data(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Data(format!("cannot split {n} records into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    StreamRng::new(seed).shuffle(stream("kfold-permutation"), &mut idx);
    let q = n / k;
    let r = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = q + usize::from(i < r);
        folds.push(idx[start..start + len].to_vec());
        start += len;
    }
    Ok(FoldSplit { seed, folds })
}

// Bumping either constant changes every cache key of that kind, so old
// entries are simply never hit again after a featurizer change.
pub const DRUG_FEAT_VERSION: u32 = 1;
pub const PROT_FEAT_VERSION: u32 = 1;

/// Content-addressed feature store under `<root>/drug/<hash>.bin` and
/// `<root>/prot/<hash>.bin`. Single-process: one writer, counters are plain
/// cells. Files are written via a temp name and renamed so a concurrent
/// reader never sees a half-written entry.
pub struct FeatureCache {
    root: PathBuf,
    hits: Cell<u64>,
    misses: Cell<u64>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn sha_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
        h.update([0x1f]); // field separator so concatenations cannot collide
    }
    hex(&h.finalize())
}

impl FeatureCache {
    pub fn new(root: impl Into<PathBuf>) -> FeatureCache {
        FeatureCache { root: root.into(), hits: Cell::new(0), misses: Cell::new(0) }
    }

    pub fn hits(&self) -> u64 {
        self.hits.get()
    }

    /// Misses count actual featurizations (parses, graph builds).
    pub fn misses(&self) -> u64 {
        self.misses.get()
    }

    fn entry_path(&self, kind: &str, key: &str) -> PathBuf {
        self.root.join(kind).join(format!("{key}.bin"))
    }

    fn load_entry(&self, path: &Path) -> Option<Vec<u8>> {
        fs::read(path).ok()
    }

    fn store_entry(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        let dir = path.parent().expect("entry paths have a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".tmp-{}", std::process::id()));
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Featurized drug for a SMILES string, parsed at most once per content.
    pub fn drug(&self, smiles: &str) -> Result<DrugFeat> {
        let key = sha_hex(&[b"drug", &DRUG_FEAT_VERSION.to_le_bytes(), smiles.as_bytes()]);
        let path = self.entry_path("drug", &key);
        if let Some(bytes) = self.load_entry(&path) {
            match decode_drug(&bytes) {
                Ok(feat) => {
                    self.hits.set(self.hits.get() + 1);
                    return Ok(feat);
                }
                Err(e) => warn!("cache entry {} unreadable ({e}), rebuilding", path.display()),
            }
        }
        self.misses.set(self.misses.get() + 1);
        let feat = DrugFeat::from_smiles(smiles)?;
        self.store_entry(&path, &encode_drug(&feat))?;
        Ok(feat)
    }

    /// Featurized protein from its `.emb`/`.cmap` artifacts. The key covers
    /// the sequence, both artifact digests, the contact threshold, and the
    /// featurizer version, so editing an artifact or changing tau invalidates
    /// exactly the affected entries.
    pub fn protein(&self, id: &str, seq: &str, emb_dir: &Path, tau: f64) -> Result<ProtFeat> {
        let emb_bytes = fs::read(emb_path(emb_dir, id)).map_err(|e| Error::Protein {
            id: id.to_string(),
            detail: format!("cannot read embedding: {e}"),
        })?;
        let cmap_bytes = fs::read(cmap_path(emb_dir, id)).map_err(|e| Error::Protein {
            id: id.to_string(),
            detail: format!("cannot read contact map: {e}"),
        })?;
        let key = sha_hex(&[
            b"prot",
            &PROT_FEAT_VERSION.to_le_bytes(),
            &tau.to_bits().to_le_bytes(),
            id.as_bytes(),
            seq.as_bytes(),
            &Sha256::digest(&emb_bytes),
            &Sha256::digest(&cmap_bytes),
        ]);
        let path = self.entry_path("prot", &key);
        if let Some(bytes) = self.load_entry(&path) {
            match decode_prot(&bytes) {
                Ok(feat) => {
                    self.hits.set(self.hits.get() + 1);
                    return Ok(feat);
                }
                Err(e) => warn!("cache entry {} unreadable ({e}), rebuilding", path.display()),
            }
        }
        self.misses.set(self.misses.get() + 1);
        let esm = store::read_embedding(emb_dir, id, seq.len())?;
        let contacts = store::read_contacts(emb_dir, id, seq.len())?;
        let feat = ProtFeat::new(id, seq, esm, &contacts, tau)?;
        self.store_entry(&path, &encode_prot(&feat))?;
        Ok(feat)
    }
}

// Cache entry encoding: little-endian, length-prefixed vectors. f64 values
// round-trip through to_bits so a hit is bit-identical to the original.

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&u32::try_from(v).expect("cache sizes fit u32").to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, vs: &[f64]) {
    put_u32(buf, vs.len());
    for v in vs {
        buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }
}

fn put_u32s(buf: &mut Vec<u8>, vs: &[usize]) {
    put_u32(buf, vs.len());
    for &v in vs {
        put_u32(buf, v);
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.at + n > self.buf.len() {
            return Err("truncated entry".to_string());
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self) -> std::result::Result<Vec<f64>, String> {
        let n = self.u32()?;
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap()))).collect())
    }

    fn u32s(&mut self) -> std::result::Result<Vec<usize>, String> {
        let n = self.u32()?;
        (0..n).map(|_| self.u32()).collect()
    }

    fn done(&self) -> std::result::Result<(), String> {
        if self.at != self.buf.len() {
            return Err("trailing bytes".to_string());
        }
        Ok(())
    }
}

fn encode_drug(f: &DrugFeat) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(b"HFD1");
    put_u32(&mut buf, f.n_atoms);
    put_f64s(&mut buf, &f.atom_feats);
    put_u32(&mut buf, f.bonds.len());
    for (a, b, feats) in &f.bonds {
        put_u32(&mut buf, *a);
        put_u32(&mut buf, *b);
        put_f64s(&mut buf, feats);
    }
    put_u32(&mut buf, f.clusters.len());
    for c in &f.clusters {
        put_u32s(&mut buf, c);
    }
    put_u32s(&mut buf, &f.cluster_types);
    buf
}

fn decode_drug(bytes: &[u8]) -> std::result::Result<DrugFeat, String> {
    let mut c = Cursor { buf: bytes, at: 0 };
    if c.take(4)? != b"HFD1" {
        return Err("bad magic".to_string());
    }
    let n_atoms = c.u32()?;
    let atom_feats = c.f64s()?;
    let n_bonds = c.u32()?;
    let mut bonds = Vec::with_capacity(n_bonds);
    for _ in 0..n_bonds {
        let a = c.u32()?;
        let b = c.u32()?;
        let feats = c.f64s()?;
        bonds.push((a, b, feats.try_into().map_err(|_| "bond feature width".to_string())?));
    }
    let n_clusters = c.u32()?;
    let clusters = (0..n_clusters).map(|_| c.u32s()).collect::<std::result::Result<_, _>>()?;
    let cluster_types = c.u32s()?;
    c.done()?;
    Ok(DrugFeat { n_atoms, atom_feats, bonds, clusters, cluster_types })
}

fn encode_prot(f: &ProtFeat) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(b"HFP1");
    put_u32(&mut buf, f.id.len());
    buf.extend_from_slice(f.id.as_bytes());
    put_u32(&mut buf, f.len);
    put_f64s(&mut buf, &f.esm);
    put_f64s(&mut buf, &f.onehot);
    put_f64s(&mut buf, &f.physchem);
    put_u32s(&mut buf, &f.edge_src);
    put_u32s(&mut buf, &f.edge_dst);
    put_f64s(&mut buf, &f.edge_feats);
    put_u32s(&mut buf, &f.degree);
    buf
}

fn decode_prot(bytes: &[u8]) -> std::result::Result<ProtFeat, String> {
    let mut c = Cursor { buf: bytes, at: 0 };
    if c.take(4)? != b"HFP1" {
        return Err("bad magic".to_string());
    }
    let id_len = c.u32()?;
    let id = String::from_utf8(c.take(id_len)?.to_vec()).map_err(|_| "id not utf-8".to_string())?;
    let len = c.u32()?;
    let esm = c.f64s()?;
    let onehot = c.f64s()?;
    let physchem = c.f64s()?;
    let edge_src = c.u32s()?;
    let edge_dst = c.u32s()?;
    let edge_feats = c.f64s()?;
    let degree = c.u32s()?;
    c.done()?;
    Ok(ProtFeat { id, len, esm, onehot, physchem, edge_src, edge_dst, edge_feats, degree })
}

/// Bundled drug list for the desk corpus: kinase inhibitors from the Davis
/// panel plus a tail of smaller common drugs for structural variety.
pub const DESK_DRUGS: &[(&str, &str)] = &[
    ("erlotinib", "COCCOc1cc2ncnc(Nc3cccc(C#C)c3)c2cc1OCCOC"),
    ("gefitinib", "COc1cc2ncnc(Nc3ccc(F)c(Cl)c3)c2cc1OCCCN1CCOCC1"),
    ("imatinib", "Cc1ccc(NC(=O)c2ccc(CN3CCN(C)CC3)cc2)cc1Nc1nccc(-c2cccnc2)n1"),
    ("sorafenib", "CNC(=O)c1cc(Oc2ccc(NC(=O)Nc3ccc(Cl)c(C(F)(F)F)c3)cc2)ccn1"),
    ("sunitinib", "CCN(CC)CCNC(=O)c1c(C)[nH]c(/C=C2\\C(=O)Nc3ccc(F)cc32)c1C"),
    ("dasatinib", "Cc1nc(Nc2ncc(C(=O)Nc3c(C)cccc3Cl)s2)cc(N2CCN(CCO)CC2)n1"),
    ("lapatinib", "CS(=O)(=O)CCNCc1ccc(-c2ccc3ncnc(Nc4ccc(OCc5cccc(F)c5)c(Cl)c4)c3c2)o1"),
    ("vandetanib", "COc1cc2c(Nc3ccc(Br)cc3F)ncnc2cc1OCC1CCN(C)CC1"),
    ("axitinib", "CNC(=O)c1ccccc1Sc1ccc2c(/C=C/c3ccccn3)n[nH]c2c1"),
    ("bosutinib", "COc1cc(Nc2c(C#N)cnc3cc(OCCCN4CCN(C)CC4)c(OC)cc23)c(Cl)cc1Cl"),
    ("crizotinib", "CC(Oc1cc(-c2cnn(C3CCNCC3)c2)cnc1N)c1c(Cl)ccc(F)c1Cl"),
    ("nilotinib", "Cc1cn(-c2cc(NC(=O)c3ccc(C)c(Nc4nccc(-c5cccnc5)n4)c3)cc(C(F)(F)F)c2)cn1"),
    ("pazopanib", "Cc1ccc(Nc2nccc(N(C)c3ccc4c(C)n(C)nc4c3)n2)cc1S(N)(=O)=O"),
    ("ruxolitinib", "N#CCC(C1CCCC1)n1cc(-c2ncnc3[nH]ccc23)cn1"),
    ("tofacitinib", "CC1CCN(C(=O)CC#N)CC1N(C)c1ncnc2[nH]ccc12"),
    ("plx4720", "CCCS(=O)(=O)Nc1ccc(F)c(C(=O)c2c[nH]c3ncc(Cl)cc23)c1F"),
    ("seliciclib", "CCC(CO)Nc1nc(NCc2ccccc2)c2ncn(C(C)C)c2n1"),
    ("sb203580", "CS(=O)c1ccc(-c2nc(-c3ccncc3)c(-c3ccc(F)cc3)[nH]2)cc1"),
    ("afatinib", "CN(C)CC=CC(=O)Nc1cc2c(Nc3ccc(F)c(Cl)c3)ncnc2cc1OC1CCOC1"),
    ("vatalanib", "Clc1ccc(Nc2nnc(Cc3ccncc3)c3ccccc23)cc1"),
    ("aspirin", "CC(=O)Oc1ccccc1C(=O)O"),
    ("paracetamol", "CC(=O)Nc1ccc(O)cc1"),
    ("ibuprofen", "CC(C)Cc1ccc(C(C)C(=O)O)cc1"),
    ("naproxen", "COc1ccc2cc(C(C)C(=O)O)ccc2c1"),
    ("caffeine", "CN1C=NC2=C1C(=O)N(C)C(=O)N2C"),
    ("nicotine", "CN1CCCC1c1cccnc1"),
    ("indomethacin", "COc1ccc2c(c1)c(CC(=O)O)c(C)n2C(=O)c1ccc(Cl)cc1"),
    ("warfarin", "CC(=O)CC(c1ccccc1)C1=C(O)c2ccccc2OC1=O"),
    ("celecoxib", "Cc1ccc(-c2cc(C(F)(F)F)nn2-c2ccc(S(N)(=O)=O)cc2)cc1"),
    ("sulfamethoxazole", "Cc1cc(NS(=O)(=O)c2ccc(N)cc2)no1"),
];

pub const DESK_N_PROTEINS: usize = 25;

fn desk_sequences(seed: u64) -> Vec<(String, String)> {
    let rng = StreamRng::new(seed);
    let letters = b"ACDEFGHIKLMNPQRSTVWY";
    (0..DESK_N_PROTEINS)
        .map(|p| {
            let id = format!("prot{:02}", p + 1);
            let s = stream(&format!("desk-seq|{id}"));
            let len = 25 + (rng.u64(s, 0) % 16) as usize; // 25..=40 residues
            let seq: String = (1..=len)
                .map(|i| letters[(rng.u64(s, i as u64) % letters.len() as u64) as usize] as char)
                .collect();
            (id, seq)
        })
        .collect()
}

/// Smooth synthetic affinity for a (drug, protein) pair: additive structure
/// terms from real molecular descriptors plus a mild interaction and a small
/// seeded noise, expressed as raw K_d in nM so the corpus exercises the log
/// transform on load.
fn desk_kd_nm(seed: u64, drug_id: &str, smiles: &str, prot_id: &str, seq: &str) -> f64 {
    let mol = parse_smiles(smiles).expect("desk corpus SMILES are valid");
    let n = mol.atoms.len() as f64;
    let het = mol.atoms.iter().filter(|a| a.symbol != "C").count() as f64 / n;
    let rings = (mol.bonds.len() + 1).saturating_sub(mol.atoms.len()) as f64;

    let len = seq.len() as f64;
    let hydro =
        seq.bytes().filter(|b| b"AVLIMFWY".contains(b)).count() as f64 / len;
    let charged = seq.bytes().filter(|b| b"DEKR".contains(b)).count() as f64 / len;

    let sd = 0.9 * (0.12 * (n - 22.0)).tanh() + 1.1 * (het - 0.25) + 0.5 * (0.8 * (rings - 3.0)).tanh();
    let sp = 0.8 * (0.2 * (len - 32.0)).tanh() + 1.5 * (hydro - 0.4) - (charged - 0.25);
    let inter = 0.6 * (1.3 * sd).sin() * (1.7 * sp).cos();
    let noise = 0.08 * StreamRng::new(seed).normal(stream(&format!("desk-label|{drug_id}|{prot_id}")), 0);
    let pkd = (6.2 + 1.4 * sd + sp + inter + noise).clamp(4.0, 10.0);
    10f64.powf(9.0 - pkd)
}

/// Writes a self-contained Davis-format corpus: `dataset.tsv` with `n_pairs`
/// interactions (a seeded sample of the drug x protein grid) and an
/// `embeddings/` directory with stub `.emb`/`.cmap` artifacts for every
/// protein. Returns (tsv path, embeddings dir).
pub fn write_desk_corpus(dir: &Path, seed: u64, n_pairs: usize) -> Result<(PathBuf, PathBuf)> {
    let prots = desk_sequences(seed);
    let max_pairs = DESK_DRUGS.len() * prots.len();
    if n_pairs == 0 || n_pairs > max_pairs {
        return Err(Error::Data(format!(
            "desk corpus covers 1..={max_pairs} pairs, asked for {n_pairs}"
        )));
    }
    let mut grid: Vec<(usize, usize)> =
        (0..DESK_DRUGS.len()).flat_map(|d| (0..prots.len()).map(move |p| (d, p))).collect();
    StreamRng::new(seed).shuffle(stream("desk-pair-sample"), &mut grid);
    grid.truncate(n_pairs);

    let mut tsv = String::from(TSV_HEADER);
    tsv.push('\n');
    for &(d, p) in &grid {
        let (drug_id, smiles) = DESK_DRUGS[d];
        let (prot_id, seq) = &prots[p];
        let kd = desk_kd_nm(seed, drug_id, smiles, prot_id, seq);
        let _ = writeln!(tsv, "{drug_id}\t{smiles}\t{prot_id}\t{seq}\t{kd:.6e}");
    }
    fs::create_dir_all(dir)?;
    let tsv_path = dir.join("dataset.tsv");
    fs::write(&tsv_path, tsv)?;

    let emb_dir = dir.join("embeddings");
    fs::create_dir_all(&emb_dir)?;
    for (id, seq) in &prots {
        write_embedding(&emb_dir, id, seq.len(), &stub_embedding(seed, id, seq))?;
        write_contacts(&emb_dir, id, seq.len(), &stub_contacts(seed, id, seq.len()))?;
    }
    Ok((tsv_path, emb_dir))
}
