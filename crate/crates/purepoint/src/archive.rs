//! A small self-describing container for named n-d arrays, used for model
//! checkpoints and saved adversarial clouds.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"PPAR"
//! u16    format version (currently 1)
//! u32    entry count
//! entry* name_len:u16, name (utf-8), dtype:u8, ndim:u8, dims:u64*,
//!        payload bytes, crc32:u32 of payload
//! ```
//!
//! Entries keep insertion order on disk but are addressed by name. Truncated
//! files, unknown dtypes, and checksum mismatches all surface as
//! [`Error::Archive`] rather than garbage arrays.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayD, IxDyn};

use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"PPAR";
const VERSION: u16 = 1;

const DTYPE_F64: u8 = 0;
const DTYPE_I64: u8 = 1;
const DTYPE_U8: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum ArchiveEntry {
    F64(ArrayD<f64>),
    I64(ArrayD<i64>),
    Bytes(Vec<u8>),
}

impl ArchiveEntry {
    fn dtype(&self) -> u8 {
        match self {
            ArchiveEntry::F64(_) => DTYPE_F64,
            ArchiveEntry::I64(_) => DTYPE_I64,
            ArchiveEntry::Bytes(_) => DTYPE_U8,
        }
    }

    fn dims(&self) -> Vec<u64> {
        match self {
            ArchiveEntry::F64(a) => a.shape().iter().map(|&d| d as u64).collect(),
            ArchiveEntry::I64(a) => a.shape().iter().map(|&d| d as u64).collect(),
            ArchiveEntry::Bytes(b) => vec![b.len() as u64],
        }
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            ArchiveEntry::F64(a) => a.iter().flat_map(|v| v.to_le_bytes()).collect(),
            ArchiveEntry::I64(a) => a.iter().flat_map(|v| v.to_le_bytes()).collect(),
            ArchiveEntry::Bytes(b) => b.clone(),
        }
    }
}

/// An in-memory archive of named arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    entries: BTreeMap<String, ArchiveEntry>,
    order: Vec<String>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(|s| s.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    fn insert_entry(&mut self, name: &str, entry: ArchiveEntry) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Archive(format!("duplicate entry name '{name}'")));
        }
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(Error::Archive("entry name must be 1..=65535 bytes".into()));
        }
        self.order.push(name.to_string());
        self.entries.insert(name.to_string(), entry);
        Ok(())
    }

    pub fn insert_f64<D: ndarray::Dimension>(
        &mut self,
        name: &str,
        arr: ndarray::Array<f64, D>,
    ) -> Result<()> {
        self.insert_entry(name, ArchiveEntry::F64(arr.into_dyn()))
    }

    pub fn insert_i64<D: ndarray::Dimension>(
        &mut self,
        name: &str,
        arr: ndarray::Array<i64, D>,
    ) -> Result<()> {
        self.insert_entry(name, ArchiveEntry::I64(arr.into_dyn()))
    }

    pub fn insert_bytes(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        self.insert_entry(name, ArchiveEntry::Bytes(bytes))
    }

    fn get(&self, name: &str) -> Result<&ArchiveEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Archive(format!("no entry named '{name}'")))
    }

    pub fn get_f64(&self, name: &str) -> Result<&ArrayD<f64>> {
        match self.get(name)? {
            ArchiveEntry::F64(a) => Ok(a),
            other => Err(Error::Archive(format!(
                "entry '{name}' has dtype {:?}, expected f64",
                other.dtype()
            ))),
        }
    }

    pub fn get_i64(&self, name: &str) -> Result<&ArrayD<i64>> {
        match self.get(name)? {
            ArchiveEntry::I64(a) => Ok(a),
            other => Err(Error::Archive(format!(
                "entry '{name}' has dtype {:?}, expected i64",
                other.dtype()
            ))),
        }
    }

    pub fn get_bytes(&self, name: &str) -> Result<&[u8]> {
        match self.get(name)? {
            ArchiveEntry::Bytes(b) => Ok(b),
            other => Err(Error::Archive(format!(
                "entry '{name}' has dtype {:?}, expected bytes",
                other.dtype()
            ))),
        }
    }

    pub fn get_f64_1d(&self, name: &str) -> Result<Array1<f64>> {
        let a = self.get_f64(name)?;
        a.clone()
            .into_dimensionality()
            .map_err(|_| Error::Archive(format!("entry '{name}' is not 1-d")))
    }

    pub fn get_f64_2d(&self, name: &str) -> Result<Array2<f64>> {
        let a = self.get_f64(name)?;
        a.clone()
            .into_dimensionality()
            .map_err(|_| Error::Archive(format!("entry '{name}' is not 2-d")))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for name in &self.order {
            let entry = &self.entries[name];
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[entry.dtype()])?;
            let dims = entry.dims();
            w.write_all(&[dims.len() as u8])?;
            for d in &dims {
                w.write_all(&d.to_le_bytes())?;
            }
            let payload = entry.payload();
            w.write_all(&payload)?;
            w.write_all(&crc32fast::hash(&payload).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        fn take<const K: usize>(r: &mut impl Read, what: &str) -> Result<[u8; K]> {
            let mut buf = [0u8; K];
            r.read_exact(&mut buf)
                .map_err(|_| Error::Archive(format!("truncated archive while reading {what}")))?;
            Ok(buf)
        }

        let magic: [u8; 4] = take(&mut r, "magic")?;
        if magic != MAGIC {
            return Err(Error::Archive("bad magic, not an array archive".into()));
        }
        let version = u16::from_le_bytes(take(&mut r, "version")?);
        if version != VERSION {
            return Err(Error::Archive(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(take(&mut r, "entry count")?) as usize;

        let mut out = Archive::new();
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut r, "name length")?) as usize;
            let mut name_buf = vec![0u8; name_len];
            r.read_exact(&mut name_buf)
                .map_err(|_| Error::Archive("truncated archive while reading name".into()))?;
            let name = String::from_utf8(name_buf)
                .map_err(|_| Error::Archive("entry name is not valid UTF-8".into()))?;

            let dtype = take::<1>(&mut r, "dtype")?[0];
            let ndim = take::<1>(&mut r, "rank")?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(u64::from_le_bytes(take(&mut r, "dimension")?) as usize);
            }
            let count: usize = dims.iter().product();
            let elem = match dtype {
                DTYPE_F64 | DTYPE_I64 => 8,
                DTYPE_U8 => 1,
                other => return Err(Error::Archive(format!("unknown dtype tag {other}"))),
            };
            let mut payload = vec![0u8; count * elem];
            r.read_exact(&mut payload).map_err(|_| {
                Error::Archive(format!("truncated archive while reading '{name}' payload"))
            })?;
            let stored_crc = u32::from_le_bytes(take(&mut r, "checksum")?);
            let actual = crc32fast::hash(&payload);
            if stored_crc != actual {
                return Err(Error::Archive(format!(
                    "checksum mismatch for '{name}': stored {stored_crc:#010x}, computed {actual:#010x}"
                )));
            }

            let entry = match dtype {
                DTYPE_F64 => {
                    let vals: Vec<f64> = payload
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    ArchiveEntry::F64(
                        ArrayD::from_shape_vec(IxDyn(&dims), vals)
                            .map_err(|e| Error::Archive(format!("bad shape for '{name}': {e}")))?,
                    )
                }
                DTYPE_I64 => {
                    let vals: Vec<i64> = payload
                        .chunks_exact(8)
                        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    ArchiveEntry::I64(
                        ArrayD::from_shape_vec(IxDyn(&dims), vals)
                            .map_err(|e| Error::Archive(format!("bad shape for '{name}': {e}")))?,
                    )
                }
                _ => ArchiveEntry::Bytes(payload),
            };
            out.insert_entry(&name, entry)?;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}
