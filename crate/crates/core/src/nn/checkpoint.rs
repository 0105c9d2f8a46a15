//! Binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "SVTCKPT\0"
//! version  u32      FORMAT_VERSION
//! n_meta   u32      then n_meta x (key: str, value: str)
//! n_tensor u32      then n_tensor x (name: str, ndim: u32, dims: ndim x u64, values: prod(dims) x f64)
//! str      u32 byte length followed by UTF-8 bytes
//! ```
//!
//! Metadata holds model hyperparameters as strings; values are raw `f64`
//! bit patterns so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SVTCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub store: ParamStore,
}

impl Checkpoint {
    pub fn new(store: ParamStore) -> Self {
        Self {
            meta: BTreeMap::new(),
            store,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata key `{key}`")))
    }

    /// Stores a list of floats with round-trip formatting.
    pub fn with_meta_list(self, key: &str, values: &[f64]) -> Self {
        let joined = values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        self.with_meta(key, joined)
    }

    pub fn meta_list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.meta_str(key)?;
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::Checkpoint(format!("metadata `{key}` entry `{v}` is malformed")))
            })
            .collect()
    }

    /// Fails unless the `kind` metadata equals `expected`.
    pub fn expect_kind(&self, expected: &str) -> Result<()> {
        let kind = self.meta_str("kind")?;
        if kind == expected {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!("expected a `{expected}` checkpoint, found `{kind}`")))
        }
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta_str(key)?;
        raw.parse()
            .map_err(|_| Error::Checkpoint(format!("metadata `{key}` = `{raw}` is malformed")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        w.write_u32::<LittleEndian>(self.meta.len() as u32)?;
        for (k, v) in &self.meta {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        let tensors = self.store.tensors();
        w.write_u32::<LittleEndian>(tensors.len() as u32)?;
        for t in tensors {
            write_str(w, &t.name)?;
            w.write_u32::<LittleEndian>(t.shape.len() as u32)?;
            for &d in &t.shape {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
            for &v in &t.values {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut bytes)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let bad = |e: std::io::Error| Error::Checkpoint(format!("truncated checkpoint: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(bad)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a servtime checkpoint".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(bad)?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let n_meta = r.read_u32::<LittleEndian>().map_err(bad)?;
        let mut meta = BTreeMap::new();
        for _ in 0..n_meta {
            let k = read_str(r)?;
            let v = read_str(r)?;
            meta.insert(k, v);
        }
        let n_tensor = r.read_u32::<LittleEndian>().map_err(bad)?;
        let mut store = ParamStore::new();
        for _ in 0..n_tensor {
            let name = read_str(r)?;
            let ndim = r.read_u32::<LittleEndian>().map_err(bad)? as usize;
            if ndim == 0 || ndim > 2 {
                return Err(Error::Checkpoint(format!("tensor `{name}` has rank {ndim}")));
            }
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.read_u64::<LittleEndian>().map_err(bad)? as usize);
            }
            let n: usize = shape.iter().product();
            let mut values = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut values).map_err(bad)?;
            store.add(&name, shape, values)?;
        }
        Ok(Self { meta, store })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::MissingFile {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let bad = |e: std::io::Error| Error::Checkpoint(format!("truncated checkpoint: {e}"));
    let n = r.read_u32::<LittleEndian>().map_err(bad)? as usize;
    if n > 1 << 20 {
        return Err(Error::Checkpoint(format!("string length {n} is implausible")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(bad)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            rows in 1usize..5,
            cols in 1usize..5,
            seed in any::<u64>(),
            tag in "[a-z]{0,12}",
        ) {
            let mut store = ParamStore::new();
            let n = rows * cols;
            let vals: Vec<f64> = (0..n)
                .map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) & 0x7fef_ffff_ffff_ffff))
                .collect();
            store.add("w", vec![rows, cols], vals).unwrap();
            store.add("b", vec![cols], vec![-0.0; cols]).unwrap();
            let ck = Checkpoint::new(store).with_meta("kind", &tag).with_meta("hidden", 8);
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            prop_assert_eq!(back.meta, ck.meta.clone());
            for (a, b) in back.store.tensors().iter().zip(ck.store.tensors()) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(&a.shape, &b.shape);
                let ab: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }

    #[test]
    fn rejects_wrong_magic_and_version() {
        assert!(Checkpoint::from_bytes(b"NOTACKPT\x01\0\0\0").is_err());
        let mut bytes = Checkpoint::default().to_bytes();
        bytes[8] = 99;
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }
}
