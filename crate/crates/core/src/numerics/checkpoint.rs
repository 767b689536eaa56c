//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "IVQACKPT"
//! version  u32      = 1
//! seed     u64
//! step     u64
//! count    u32      number of parameters
//! per parameter:
//!   name_len u32, name (utf-8)
//!   dtype    u8     0 = f32, 1 = f64
//!   ndim     u32, dims u64 * ndim
//!   payload  row-major little-endian values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{DType, NumericsError, ParamRegistry, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"IVQACKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ParamRegistry<T>,
    pub seed: u64,
    pub step: u64,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.params.total_len() * T::DTYPE.size_of());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in self.params.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE.tag());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                x.write_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NumericsError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(NumericsError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NumericsError::Checkpoint(format!(
                "unsupported version {version}"
            )));
        }
        let seed = r.u64()?;
        let step = r.u64()?;
        let count = r.u32()?;
        let mut params = ParamRegistry::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| NumericsError::Checkpoint("parameter name is not utf-8".into()))?
                .to_string();
            let dtype = DType::from_tag(r.take(1)?[0])
                .ok_or_else(|| NumericsError::Checkpoint(format!("{name}: unknown dtype")))?;
            if dtype != T::DTYPE {
                return Err(NumericsError::Checkpoint(format!(
                    "{name}: stored as {dtype:?}, requested {:?}",
                    T::DTYPE
                )));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let len: usize = shape.iter().product();
            let size = dtype.size_of();
            let payload = r.take(len * size)?;
            let data = payload.chunks(size).map(T::read_le).collect();
            params.insert(&name, Tensor::new(shape, data)?)?;
        }
        if r.pos != bytes.len() {
            return Err(NumericsError::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { params, seed, step })
    }

    pub fn save(&self, path: &Path) -> Result<(), NumericsError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NumericsError> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NumericsError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| NumericsError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NumericsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, NumericsError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
