//! Named-tensor archive.
//!
//! Little-endian layout: magic `NTAR`, u32 version, u32 entry count, then per
//! entry a u16-prefixed UTF-8 name, u32 rank, u64 dims and the f64 payload in
//! row-major order. A u64-prefixed UTF-8 JSON metadata document closes the file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NTAR";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub entries: Vec<(String, Tensor)>,
    pub metadata: serde_json::Value,
}

impl Archive {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            entries: Vec::new(),
            metadata,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LE>(VERSION)?;
        w.write_u32::<LE>(self.entries.len() as u32)?;
        for (name, t) in &self.entries {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len()).map_err(|_| TensorError::Format(format!("name too long: {name}")))?;
            w.write_u16::<LE>(len)?;
            w.write_all(bytes)?;
            w.write_u32::<LE>(t.rank() as u32)?;
            for &d in t.shape() {
                w.write_u64::<LE>(d as u64)?;
            }
            for &v in t.data() {
                w.write_f64::<LE>(v)?;
            }
        }
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| TensorError::Format(e.to_string()))?;
        w.write_u64::<LE>(meta.len() as u64)?;
        w.write_all(&meta)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let fmt = |s: &str| TensorError::Format(s.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = r.read_u32::<LE>()?;
        if version != VERSION {
            return Err(TensorError::Format(format!("unsupported version {version}")));
        }
        let count = r.read_u32::<LE>()?;
        let mut entries = Vec::with_capacity(count.min(1 << 16) as usize);
        for _ in 0..count {
            let len = r.read_u16::<LE>()? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| fmt("name is not UTF-8"))?;
            let rank = r.read_u32::<LE>()?;
            if rank > 16 {
                return Err(TensorError::Format(format!("rank {rank} of {name}")));
            }
            let mut shape = Vec::with_capacity(rank as usize);
            for _ in 0..rank {
                shape.push(usize::try_from(r.read_u64::<LE>()?).map_err(|_| fmt("dimension overflow"))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| fmt("size overflow"))?;
            let mut data = Vec::new();
            for _ in 0..n {
                data.push(r.read_f64::<LE>()?);
            }
            entries.push((name, Tensor::new(shape, data)?));
        }
        let meta_len = usize::try_from(r.read_u64::<LE>()?).map_err(|_| fmt("metadata length"))?;
        let mut meta = Vec::new();
        r.take(meta_len as u64).read_to_end(&mut meta)?;
        if meta.len() != meta_len {
            return Err(fmt("truncated metadata"));
        }
        let metadata = serde_json::from_slice(&meta).map_err(|e| TensorError::Format(e.to_string()))?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(fmt("trailing bytes"));
        }
        Ok(Self { entries, metadata })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}
