//! Versioned binary checkpoints.
//!
//! Layout: magic "HIFD", format version u32, then per parameter
//! (name length u32, UTF-8 name, rank u32, dims u32 x rank, f64 LE payload).
//! All integers little-endian. The stream ends at EOF; a loader that hits a
//! partial record reports a corrupt file rather than guessing.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::Value;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HIFD";
const VERSION: u32 = 1;

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for p in store.iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.value.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read every named tensor in the file.
pub fn load_raw(path: &Path) -> Result<Vec<(String, Value)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint(format!("{}: too short for header", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!("{}: bad magic {magic:?}", path.display())));
    }
    let version = read_u32(&mut r, path, "version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let mut out = Vec::new();
    loop {
        // EOF exactly at a record boundary ends the file.
        let mut len4 = [0u8; 4];
        match r.read(&mut len4)? {
            0 => break,
            4 => {}
            n => {
                r.read_exact(&mut len4[n..])
                    .map_err(|_| Error::Checkpoint(format!("{}: truncated record header", path.display())))?;
            }
        }
        let nlen = u32::from_le_bytes(len4) as usize;
        let mut name = vec![0u8; nlen];
        r.read_exact(&mut name)
            .map_err(|_| Error::Checkpoint(format!("{}: truncated name", path.display())))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint(format!("{}: non-UTF-8 name", path.display())))?;
        let rank = read_u32(&mut r, path, "rank")? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("{}: implausible rank {rank} for {name}", path.display())));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r, path, "dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f64; numel];
        let mut buf = [0u8; 8];
        for v in data.iter_mut() {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint(format!("{}: truncated payload for {name}", path.display())))?;
            *v = f64::from_le_bytes(buf);
        }
        out.push((name, Value::new(shape, data)));
    }
    Ok(out)
}

/// Load into an existing store. Every tensor in the file must match a defined
/// parameter by name and shape, and every store parameter must be present.
pub fn load_into(store: &mut ParamStore, path: &Path) -> Result<()> {
    let tensors = load_raw(path)?;
    let mut seen = std::collections::HashSet::new();
    for (name, value) in tensors {
        let p = store
            .get_mut(&name)
            .map_err(|_| Error::Checkpoint(format!("{}: unknown parameter {name}", path.display())))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: shape mismatch for {name}: file {:?}, model {:?}",
                path.display(),
                value.shape(),
                p.value.shape()
            )));
        }
        p.value = value;
        seen.insert(name);
    }
    for p in store.iter() {
        if !seen.contains(&p.name) {
            return Err(Error::Checkpoint(format!("{}: missing parameter {}", path.display(), p.name)));
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint(format!("{}: truncated {what}", path.display())))?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::params::Init;

    fn store() -> ParamStore {
        let mut s = ParamStore::new(11);
        s.def("enc.w", &[3, 4], Init::Normal { std: 1.0 }).unwrap();
        s.def("enc.b", &[4], Init::Zeros).unwrap();
        s.def_buffer("meta.count", &[1], vec![42.0]).unwrap();
        s
    }

    #[test]
    fn round_trip_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let s = store();
        save(&s, &path).unwrap();
        let mut s2 = store();
        // Perturb, then load back.
        s2.get_mut("enc.w").unwrap().value.data_mut()[0] += 1.0;
        load_into(&mut s2, &path).unwrap();
        assert_eq!(s.get("enc.w").unwrap().value.data(), s2.get("enc.w").unwrap().value.data());
        assert_eq!(s2.get("meta.count").unwrap().value.data()[0], 42.0);
    }

    #[test]
    fn unknown_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&store(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        std::fs::write(&path, &bytes).unwrap();
        let err = load_raw(&path).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(load_raw(&path).is_err());
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&store(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let err = load_raw(&path).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn shape_mismatch_names_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&store(), &path).unwrap();
        let mut other = ParamStore::new(11);
        other.def("enc.w", &[4, 3], Init::Zeros).unwrap();
        other.def("enc.b", &[4], Init::Zeros).unwrap();
        other.def_buffer("meta.count", &[1], vec![0.0]).unwrap();
        let err = load_into(&mut other, &path).unwrap_err().to_string();
        assert!(err.contains("enc.w"), "{err}");
    }

    #[test]
    fn missing_parameter_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut small = ParamStore::new(11);
        small.def("enc.w", &[3, 4], Init::Zeros).unwrap();
        save(&small, &path).unwrap();
        let mut full = store();
        let err = load_into(&mut full, &path).unwrap_err().to_string();
        assert!(err.contains("missing parameter"), "{err}");
    }
}
