//! Parameter checkpoint files.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic  b"NDCK"   version u32 = 1   count u32
//! per record:
//!   id_len u32, id bytes (UTF-8)
//!   ndim u32, ndim x u64 dims
//!   prod(dims) x f64 payload
//! ```
//!
//! A plain-text manifest `<path>.manifest` lists one `id<TAB>d0xd1...` line per
//! record.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::array::DenseArray;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NDCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, DenseArray)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, value: DenseArray) {
        let id = id.into();
        match self.entries.iter_mut().find(|(k, _)| *k == id) {
            Some(e) => e.1 = value,
            None => self.entries.push((id, value)),
        }
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = (String, DenseArray)>) {
        for (k, v) in items {
            self.insert(k, v);
        }
    }

    pub fn get(&self, id: &str) -> Option<&DenseArray> {
        self.entries.iter().find(|(k, _)| k == id).map(|(_, v)| v)
    }

    pub fn get_shaped(&self, id: &str, shape: &[usize]) -> Result<&DenseArray> {
        let v = self
            .get(id)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry {id}")))?;
        if v.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "entry {id} has shape {:?}, expected {shape:?}",
                v.shape()
            )));
        }
        Ok(v)
    }

    pub fn entries(&self) -> &[(String, DenseArray)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (id, arr) in &self.entries {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&(arr.shape().len() as u32).to_le_bytes());
            for &d in arr.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in arr.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut ckpt = Checkpoint::new();
        for _ in 0..count {
            let id_len = read_u32(&mut r)? as usize;
            let mut id = vec![0u8; id_len];
            read_exact(&mut r, &mut id)?;
            let id = String::from_utf8(id).map_err(|_| Error::Checkpoint("id not UTF-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let mut b = [0u8; 8];
                read_exact(&mut r, &mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            ckpt.entries.push((id, DenseArray::new(shape, data)?));
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(ckpt)
    }

    pub fn manifest(&self) -> String {
        let mut s = String::new();
        for (id, arr) in &self.entries {
            let dims: Vec<String> = arr.shape().iter().map(|d| d.to_string()).collect();
            s.push_str(&format!("{id}\t{}\n", dims.join("x")));
        }
        s
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("truncated file".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

/// Writes the binary checkpoint and its manifest next to it.
pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&ckpt.to_bytes())?;
    fs::write(manifest_path(path), ckpt.manifest())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_exact() {
        let mut c = Checkpoint::new();
        c.insert("w", DenseArray::matrix(1, 2, vec![1.0, -2.5]));
        let b = c.to_bytes();
        assert_eq!(&b[..4], b"NDCK");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 1);
        assert_eq!(&b[16..17], b"w");
        assert_eq!(u32::from_le_bytes(b[17..21].try_into().unwrap()), 2);
        assert_eq!(b.len(), 21 + 16 + 16);
        assert_eq!(f64::from_le_bytes(b[45..53].try_into().unwrap()), -2.5);
        assert_eq!(c.manifest(), "w\t1x2\n");
    }

    #[test]
    fn truncated_rejected() {
        let mut c = Checkpoint::new();
        c.insert("w", DenseArray::scalar(1.0));
        let b = c.to_bytes();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"XXXX").is_err());
    }

    #[test]
    fn file_roundtrip_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("final.ckpt");
        let mut c = Checkpoint::new();
        c.insert("a.weight", DenseArray::matrix(2, 1, vec![0.1, 0.2]));
        c.insert("a.bias", DenseArray::new(vec![1], vec![3.0]).unwrap());
        write_checkpoint(&path, &c).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), c);
        let m = fs::read_to_string(manifest_path(&path)).unwrap();
        assert_eq!(m, "a.weight\t2x1\na.bias\t1\n");
    }

    proptest! {
        #[test]
        fn bytes_roundtrip(rows in 0usize..4, cols in 1usize..4, seed in any::<u64>(), name in "[a-z.]{1,12}") {
            let data: Vec<f64> = (0..rows * cols).map(|i| (seed.wrapping_mul(i as u64 + 1) as f64).sin()).collect();
            let mut c = Checkpoint::new();
            c.insert(name, DenseArray::matrix(rows, cols, data));
            prop_assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
        }
    }
}
