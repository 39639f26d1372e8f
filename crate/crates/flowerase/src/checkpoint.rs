//! Binary checkpoint format.
//!
//! Layout: the magic string `FERL1`, then per-tensor records of
//! `{name length (u64 LE), name bytes (UTF-8), rank (u64 LE),
//! dims (u64 LE each), values (f64 LE each)}`. The record order is exactly
//! the order tensors were passed in, so saves are byte-reproducible.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::RealArray;

pub const MAGIC: &[u8; 5] = b"FERL1";

pub fn save_tensors(path: &Path, tensors: &[(String, RealArray)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for (name, t) in tensors {
        let nb = name.as_bytes();
        w.write_all(&(nb.len() as u64).to_le_bytes())?;
        w.write_all(nb)?;
        w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, RealArray)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint(format!("{}: file too short for FERL1 magic", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {:?}, expected \"FERL1\"",
            path.display(),
            magic
        )));
    }
    let mut out = Vec::new();
    loop {
        let mut len8 = [0u8; 8];
        match r.read_exact(&mut len8) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u64::from_le_bytes(len8) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        r.read_exact(&mut len8)?;
        let rank = u64::from_le_bytes(len8) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut len8)?;
            shape.push(u64::from_le_bytes(len8) as usize);
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut len8)?;
            values.push(f64::from_le_bytes(len8));
        }
        out.push((name, RealArray::new(shape, values)?));
    }
    Ok(out)
}

/// Find a tensor by name in a loaded checkpoint.
pub fn find<'a>(tensors: &'a [(String, RealArray)], name: &str) -> Result<&'a RealArray> {
    tensors
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, t)| t)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ferl");
        let tensors = vec![
            ("a".to_string(), RealArray::vector(vec![1.0, -2.5, 1e-300])),
            (
                "b.w".to_string(),
                RealArray::matrix(&[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap(),
            ),
            ("empty".to_string(), RealArray::zeros(vec![0])),
        ];
        save_tensors(&path, &tensors).unwrap();
        let loaded = load_tensors(&path).unwrap();
        assert_eq!(tensors, loaded);
    }

    #[test]
    fn save_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("1.ferl"), dir.path().join("2.ferl"));
        let tensors = vec![("x".to_string(), RealArray::vector(vec![0.5; 7]))];
        save_tensors(&p1, &tensors).unwrap();
        save_tensors(&p2, &tensors).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn bad_magic_names_ferl1() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ferl");
        std::fs::write(&path, b"NOPE!junk").unwrap();
        let err = load_tensors(&path).unwrap_err();
        assert!(format!("{err}").contains("FERL1"));
    }
}
