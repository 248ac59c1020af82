//! Binary tensor container.
//!
//! Layout: `b"TNSR"`, version `u16`, rank `u16`, `rank` dims as `u64`,
//! dtype code `u8` (1 = f32, 2 = f64), then the row-major payload. All
//! integers and floats are little-endian.

use super::{DType, Element, Tensor};
use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"TNSR";
pub const TENSOR_VERSION: u16 = 1;

fn corrupt<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Corrupt(msg.into()))
}

impl<T: Element> Tensor<T> {
    pub fn write_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rank() as u16).to_le_bytes());
        for &d in self.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(T::DTYPE.code());
        for &x in self.data() {
            x.write_le(out);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + 8 * self.rank() + self.len() * T::DTYPE.size());
        self.write_bytes(&mut out);
        out
    }

    /// Parses one tensor from the front of `bytes`, returning it together
    /// with the number of bytes consumed.
    pub fn read_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != TENSOR_MAGIC {
            return corrupt("bad tensor magic");
        }
        let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
        if version != TENSOR_VERSION {
            return corrupt(format!("unsupported tensor version {version}"));
        }
        let rank = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u64::from_le_bytes(cur.take(8)?.try_into().unwrap());
            if d == 0 || d > usize::MAX as u64 {
                return corrupt(format!("invalid dimension {d}"));
            }
            shape.push(d as usize);
        }
        let code = cur.take(1)?[0];
        let dtype = match DType::from_code(code) {
            Some(d) => d,
            None => return corrupt(format!("unknown dtype code {code}")),
        };
        if dtype != T::DTYPE {
            return corrupt(format!("dtype {dtype:?} where {:?} was expected", T::DTYPE));
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Corrupt("element count overflows".into()))?;
        let payload_len = n
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::Corrupt("payload size overflows".into()))?;
        let payload = cur.take(payload_len)?;
        let data = payload.chunks_exact(dtype.size()).map(T::read_le).collect();
        Ok((Tensor::new(&shape, data)?, cur.pos))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (t, used) = Self::read_bytes(bytes)?;
        if used != bytes.len() {
            return corrupt(format!(
                "{} trailing bytes after tensor",
                bytes.len() - used
            ));
        }
        Ok(t)
    }
}

pub(crate) struct Cursor<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Corrupt(format!("unexpected end of data at byte {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn remaining(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}
