//! Binary checkpoint format: named tensor records with a CRC32 footer.
//!
//! Layout (all little-endian):
//!   magic `ELAS` | u32 version | u32 record count | records... | u32 crc32
//! Each record: u32 name length | name bytes | u8 dtype | u8 ndim |
//! u64 dims... | raw payload. The CRC covers every byte before it.

use crate::error::{ElasError, Result};
use crate::numerics::Matrix;
use std::collections::BTreeMap;
use std::path::Path;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ELAS";
pub const CHECKPOINT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;
const DTYPE_U64: u8 = 2;
const DTYPE_BYTES: u8 = 3;

/// One named value in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum Record {
    F32 { dims: Vec<u64>, data: Vec<f32> },
    F64 { dims: Vec<u64>, data: Vec<f64> },
    U64(u64),
    Bytes(Vec<u8>),
}

impl Record {
    pub fn matrix(m: &Matrix<f32>) -> Record {
        Record::F32 { dims: vec![m.rows() as u64, m.cols() as u64], data: m.data().to_vec() }
    }

    pub fn as_matrix(&self, name: &str) -> Result<Matrix<f32>> {
        match self {
            Record::F32 { dims, data } if dims.len() == 2 => {
                let (rows, cols) = (dims[0] as usize, dims[1] as usize);
                if rows * cols != data.len() {
                    return Err(ElasError::Checkpoint(format!(
                        "record '{name}' payload does not match its dims"
                    )));
                }
                Ok(Matrix::from_vec(rows, cols, data.clone()))
            }
            _ => Err(ElasError::Checkpoint(format!("record '{name}' is not a 2-d f32 tensor"))),
        }
    }

    pub fn as_u64(&self, name: &str) -> Result<u64> {
        match self {
            Record::U64(v) => Ok(*v),
            _ => Err(ElasError::Checkpoint(format!("record '{name}' is not a u64 scalar"))),
        }
    }

    pub fn as_f64(&self, name: &str) -> Result<f64> {
        match self {
            Record::F64 { dims, data } if dims.is_empty() && data.len() == 1 => Ok(data[0]),
            _ => Err(ElasError::Checkpoint(format!("record '{name}' is not an f64 scalar"))),
        }
    }

    pub fn scalar_f64(v: f64) -> Record {
        Record::F64 { dims: vec![], data: vec![v] }
    }
}

/// An ordered set of named records. Order is preserved on disk so
/// identical states serialize byte-identically.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    names: Vec<String>,
    records: BTreeMap<String, Record>,
}

impl Checkpoint {
    pub fn push(&mut self, name: impl Into<String>, record: Record) {
        let name = name.into();
        if self.records.insert(name.clone(), record).is_none() {
            self.names.push(name);
        }
    }

    pub fn get(&self, name: &str) -> Result<&Record> {
        self.records
            .get(name)
            .ok_or_else(|| ElasError::Checkpoint(format!("missing record '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.records.contains_key(name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.names.len() as u32).to_le_bytes());
        for name in &self.names {
            let rec = &self.records[name];
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            match rec {
                Record::F32 { dims, data } => {
                    out.push(DTYPE_F32);
                    push_dims(&mut out, dims);
                    for v in data {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Record::F64 { dims, data } => {
                    out.push(DTYPE_F64);
                    push_dims(&mut out, dims);
                    for v in data {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Record::U64(v) => {
                    out.push(DTYPE_U64);
                    out.push(0);
                    out.extend_from_slice(&v.to_le_bytes());
                }
                Record::Bytes(b) => {
                    out.push(DTYPE_BYTES);
                    out.push(1);
                    out.extend_from_slice(&(b.len() as u64).to_le_bytes());
                    out.extend_from_slice(b);
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Parses and validates an entire checkpoint before returning, so a
    /// truncated or corrupt file can never leave a partially-loaded state.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |what: &str| ElasError::Checkpoint(format!("corrupt checkpoint: {what}"));
        if bytes.len() < 16 {
            return Err(corrupt("file shorter than header"));
        }
        let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(corrupt(&format!("crc mismatch (stored {stored:#010x}, computed {actual:#010x})")));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ElasError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut ckpt = Checkpoint::default();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| corrupt("record name is not utf-8"))?;
            let dtype = r.u8()?;
            let ndim = r.u8()? as usize;
            let record = match dtype {
                DTYPE_F32 | DTYPE_F64 => {
                    let dims: Vec<u64> = (0..ndim).map(|_| r.u64()).collect::<Result<_>>()?;
                    let n = dims.iter().product::<u64>() as usize;
                    if dtype == DTYPE_F32 {
                        let raw = r.take(n * 4)?;
                        let data = raw
                            .chunks_exact(4)
                            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                            .collect();
                        Record::F32 { dims, data }
                    } else {
                        let n = if ndim == 0 { 1 } else { n };
                        let raw = r.take(n * 8)?;
                        let data = raw
                            .chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                            .collect();
                        Record::F64 { dims, data }
                    }
                }
                DTYPE_U64 => Record::U64(r.u64()?),
                DTYPE_BYTES => {
                    let len = r.u64()? as usize;
                    Record::Bytes(r.take(len)?.to_vec())
                }
                other => return Err(corrupt(&format!("unknown dtype tag {other}"))),
            };
            if ckpt.contains(&name) {
                return Err(corrupt(&format!("duplicate record '{name}'")));
            }
            ckpt.push(name, record);
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after last record"));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| ElasError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn push_dims(out: &mut Vec<u8>, dims: &[u64]) {
    out.push(dims.len() as u8);
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(ElasError::Checkpoint("corrupt checkpoint: truncated record".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
