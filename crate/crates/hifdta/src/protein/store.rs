//! On-disk protein artifacts: per-protein embedding matrices and contact
//! maps, plus deterministic stub generators for machines without a GPU
//! language model.
//!
//! `<id>.emb`:  magic "HFE1", rows u32, cols u32 (1280), then rows*cols f32,
//! all little-endian, row-major.
//! `<id>.cmap`: magic "HFC1", rows u32, then rows*rows f32 probabilities.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::tensor::rng::{stream, StreamRng};
use crate::{Error, Result};

use super::ESM_DIM;

const EMB_MAGIC: &[u8; 4] = b"HFE1";
const CMAP_MAGIC: &[u8; 4] = b"HFC1";

pub fn emb_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.emb"))
}

pub fn cmap_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.cmap"))
}

fn prot_err(id: &str, detail: impl Into<String>) -> Error {
    Error::Protein { id: id.to_string(), detail: detail.into() }
}

pub fn write_embedding(dir: &Path, id: &str, rows: usize, data: &[f32]) -> Result<()> {
    assert_eq!(data.len(), rows * ESM_DIM);
    let mut buf = Vec::with_capacity(12 + data.len() * 4);
    buf.extend_from_slice(EMB_MAGIC);
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(ESM_DIM as u32).to_le_bytes());
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(emb_path(dir, id))?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn write_contacts(dir: &Path, id: &str, rows: usize, data: &[f32]) -> Result<()> {
    assert_eq!(data.len(), rows * rows);
    let mut buf = Vec::with_capacity(8 + data.len() * 4);
    buf.extend_from_slice(CMAP_MAGIC);
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    for &v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(cmap_path(dir, id))?;
    f.write_all(&buf)?;
    Ok(())
}

fn read_file(path: &Path, id: &str, kind: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .map_err(|e| prot_err(id, format!("cannot open {kind} file {}: {e}", path.display())))?
        .read_to_end(&mut buf)?;
    Ok(buf)
}

fn read_u32(buf: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(buf[at..at + 4].try_into().unwrap())
}

/// Reads `<id>.emb`, checks shape against the sequence length, returns the
/// matrix as f64 row-major.
pub fn read_embedding(dir: &Path, id: &str, expected_rows: usize) -> Result<Vec<f64>> {
    let path = emb_path(dir, id);
    let buf = read_file(&path, id, "embedding")?;
    if buf.len() < 12 || &buf[0..4] != EMB_MAGIC {
        return Err(prot_err(id, "embedding file lacks the HFE1 magic"));
    }
    let rows = read_u32(&buf, 4) as usize;
    let cols = read_u32(&buf, 8) as usize;
    if rows != expected_rows {
        return Err(prot_err(
            id,
            format!("embedding has {rows} rows but the sequence has {expected_rows} residues"),
        ));
    }
    if cols != ESM_DIM {
        return Err(prot_err(id, format!("embedding width {cols}, expected {ESM_DIM}")));
    }
    if buf.len() != 12 + rows * cols * 4 {
        return Err(prot_err(id, "embedding file truncated"));
    }
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows * cols {
        let v = f32::from_le_bytes(buf[12 + i * 4..16 + i * 4].try_into().unwrap()) as f64;
        if !v.is_finite() {
            return Err(prot_err(id, format!("non-finite embedding value at index {i}")));
        }
        out.push(v);
    }
    Ok(out)
}

/// Reads `<id>.cmap`, validates shape, finiteness, [0,1] range, and symmetry
/// (entries may differ by at most 1e-6; the average of the two halves is
/// returned so downstream code sees an exactly symmetric matrix).
pub fn read_contacts(dir: &Path, id: &str, expected_rows: usize) -> Result<Vec<f64>> {
    let path = cmap_path(dir, id);
    let buf = read_file(&path, id, "contact map")?;
    if buf.len() < 8 || &buf[0..4] != CMAP_MAGIC {
        return Err(prot_err(id, "contact map lacks the HFC1 magic"));
    }
    let rows = read_u32(&buf, 4) as usize;
    if rows != expected_rows {
        return Err(prot_err(
            id,
            format!("contact map is {rows}x{rows} but the sequence has {expected_rows} residues"),
        ));
    }
    if buf.len() != 8 + rows * rows * 4 {
        return Err(prot_err(id, "contact map file truncated"));
    }
    let mut m = Vec::with_capacity(rows * rows);
    for i in 0..rows * rows {
        let v = f32::from_le_bytes(buf[8 + i * 4..12 + i * 4].try_into().unwrap()) as f64;
        if !v.is_finite() {
            return Err(prot_err(id, format!("non-finite contact value at index {i}")));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(prot_err(id, format!("contact value {v} outside [0,1]")));
        }
        m.push(v);
    }
    for i in 0..rows {
        for j in i + 1..rows {
            let a = m[i * rows + j];
            let b = m[j * rows + i];
            if (a - b).abs() > 1e-6 {
                return Err(prot_err(
                    id,
                    format!("contact map asymmetric at ({i},{j}): {a} vs {b}"),
                ));
            }
            let avg = 0.5 * (a + b);
            m[i * rows + j] = avg;
            m[j * rows + i] = avg;
        }
    }
    Ok(m)
}

/// Deterministic placeholder embedding: every value depends only on the
/// protein id, residue position, and residue letter, drawn as standard
/// normals. Two runs with the same seed agree bit for bit.
pub fn stub_embedding(seed: u64, id: &str, seq: &str) -> Vec<f32> {
    let rng = StreamRng::new(seed);
    let mut out = Vec::with_capacity(seq.len() * ESM_DIM);
    for (pos, ch) in seq.bytes().enumerate() {
        let s = stream(&format!("stub-emb|{id}|{pos}|{}", ch as char));
        for k in 0..ESM_DIM {
            out.push(rng.normal(s, k as u64) as f32);
        }
    }
    out
}

/// Deterministic placeholder contact map: symmetric sigmoid-squashed normal
/// logits centred at -3 (so long-range contacts are rare), plus a +0.6
/// probability boost on the near-diagonal band |i-j| <= 2 so every chain has
/// a connected backbone-like neighbourhood. Clamped to [0,1], unit diagonal.
pub fn stub_contacts(seed: u64, id: &str, len: usize) -> Vec<f32> {
    let rng = StreamRng::new(seed);
    let s = stream(&format!("stub-cmap|{id}"));
    let mut m = vec![0.0f32; len * len];
    for i in 0..len {
        m[i * len + i] = 1.0;
        for j in i + 1..len {
            let logit = -3.0 + rng.normal(s, (i * len + j) as u64);
            let mut p = 1.0 / (1.0 + (-logit).exp());
            if j - i <= 2 {
                p += 0.6;
            }
            let p = p.min(1.0) as f32;
            m[i * len + j] = p;
            m[j * len + i] = p;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("hifdta-store-{tag}-{}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn embedding_round_trip() {
        let dir = tmpdir("emb");
        let data: Vec<f32> = (0..3 * ESM_DIM).map(|i| i as f32 * 0.5 - 7.0).collect();
        write_embedding(&dir, "p1", 3, &data).unwrap();
        let back = read_embedding(&dir, "p1", 3).unwrap();
        assert_eq!(back.len(), 3 * ESM_DIM);
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(*a as f64, *b);
        }
    }

    #[test]
    fn embedding_row_mismatch_names_protein() {
        let dir = tmpdir("emb-rows");
        let data = vec![0.0f32; 2 * ESM_DIM];
        write_embedding(&dir, "kinase7", 2, &data).unwrap();
        let err = read_embedding(&dir, "kinase7", 5).unwrap_err().to_string();
        assert!(err.contains("kinase7"), "{err}");
        assert!(err.contains("2 rows") && err.contains("5 residues"), "{err}");
    }

    #[test]
    fn embedding_bad_magic_rejected() {
        let dir = tmpdir("emb-magic");
        let mut f = fs::File::create(emb_path(&dir, "px")).unwrap();
        f.write_all(b"NOPE").unwrap();
        f.write_all(&vec![0u8; 64]).unwrap();
        let err = read_embedding(&dir, "px", 1).unwrap_err().to_string();
        assert!(err.contains("HFE1"), "{err}");
    }

    #[test]
    fn contacts_round_trip_and_checks() {
        let dir = tmpdir("cmap");
        let m = stub_contacts(9, "p2", 6);
        write_contacts(&dir, "p2", 6, &m).unwrap();
        let back = read_contacts(&dir, "p2", 6).unwrap();
        assert_eq!(back.len(), 36);
        for i in 0..6 {
            assert_eq!(back[i * 6 + i], 1.0);
            for j in 0..6 {
                assert_eq!(back[i * 6 + j], back[j * 6 + i]);
            }
        }
        let err = read_contacts(&dir, "p2", 7).unwrap_err().to_string();
        assert!(err.contains("p2") && err.contains("6x6"), "{err}");
    }

    #[test]
    fn asymmetric_contacts_rejected() {
        let dir = tmpdir("cmap-asym");
        let mut m = vec![0.2f32; 9];
        m[1] = 0.9; // (0,1) vs (1,0) differ by far more than 1e-6
        write_contacts(&dir, "asym_prot", 3, &m).unwrap();
        let err = read_contacts(&dir, "asym_prot", 3).unwrap_err().to_string();
        assert!(err.contains("asym_prot") && err.contains("asymmetric"), "{err}");
    }

    #[test]
    fn out_of_range_contact_rejected() {
        let dir = tmpdir("cmap-range");
        let mut m = vec![0.0f32; 4];
        m[1] = 1.5;
        m[2] = 1.5;
        write_contacts(&dir, "hot", 2, &m).unwrap();
        let err = read_contacts(&dir, "hot", 2).unwrap_err().to_string();
        assert!(err.contains("outside [0,1]"), "{err}");
    }

    #[test]
    fn stubs_are_deterministic_and_structured() {
        let a = stub_embedding(42, "prot", "MKV");
        let b = stub_embedding(42, "prot", "MKV");
        assert_eq!(a, b);
        let c = stub_embedding(43, "prot", "MKV");
        assert_ne!(a, c, "seed must matter");
        // Same letter at different positions gets different vectors.
        let d = stub_embedding(42, "prot", "MM");
        assert_ne!(&d[0..ESM_DIM], &d[ESM_DIM..2 * ESM_DIM]);

        let m = stub_contacts(42, "prot", 30);
        assert_eq!(stub_contacts(42, "prot", 30), m);
        // Band entries sit above the 0.5 threshold far more often than
        // long-range ones.
        let mut band = 0;
        let mut band_hi = 0;
        let mut far = 0;
        let mut far_hi = 0;
        for i in 0..30 {
            for j in i + 1..30 {
                let p = m[i * 30 + j];
                if j - i <= 2 {
                    band += 1;
                    band_hi += (p >= 0.5) as usize;
                } else {
                    far += 1;
                    far_hi += (p >= 0.5) as usize;
                }
            }
        }
        assert!(band_hi as f64 / band as f64 > 0.9, "{band_hi}/{band}");
        assert!((far_hi as f64 / far as f64) < 0.05, "{far_hi}/{far}");
    }
}
