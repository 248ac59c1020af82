//! `HSI1` container: magic, `u32` height, width and bands, a dtype code,
//! then band-major `f32` planes. Everything is little-endian.

use std::fs;
use std::path::Path;

use super::HsiCube;
use crate::error::{Error, Result};
use crate::tensor::serialize::Cursor;
use crate::tensor::{DType, Tensor};

pub const HSI_MAGIC: &[u8; 4] = b"HSI1";
pub const HSI_HEADER_LEN: usize = 17;

impl HsiCube<f32> {
    pub fn to_hsi_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HSI_HEADER_LEN + 4 * self.tensor().len());
        out.extend_from_slice(HSI_MAGIC);
        for d in [self.height(), self.width(), self.bands()] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(DType::F32.code());
        for &v in self.tensor().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_hsi_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        if cur.take(4)? != HSI_MAGIC {
            return Err(Error::Corrupt("bad HSI1 magic".into()));
        }
        let h = cur.u32()? as usize;
        let w = cur.u32()? as usize;
        let c = cur.u32()? as usize;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::Corrupt(format!(
                "zero dimension in header {h}x{w}x{c}"
            )));
        }
        let code = cur.take(1)?[0];
        if code != DType::F32.code() {
            return Err(Error::Corrupt(format!(
                "unsupported HSI1 dtype code {code}"
            )));
        }
        let n = h
            .checked_mul(w)
            .and_then(|v| v.checked_mul(c))
            .ok_or_else(|| Error::Corrupt("header dimensions overflow".into()))?;
        let expected = n
            .checked_mul(4)
            .ok_or_else(|| Error::Corrupt("payload size overflow".into()))?;
        let payload = cur.remaining();
        if payload.len() != expected {
            return Err(Error::Corrupt(format!(
                "payload is {} bytes, header requires {expected}",
                payload.len()
            )));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let t = Tensor::new(&[c, h, w], data)?;
        HsiCube::new(t).map_err(|e| Error::Corrupt(e.to_string()))
    }
}

pub fn write_hsi(path: impl AsRef<Path>, cube: &HsiCube<f32>) -> Result<()> {
    fs::write(path, cube.to_hsi_bytes())?;
    Ok(())
}

pub fn read_hsi(path: impl AsRef<Path>) -> Result<HsiCube<f32>> {
    HsiCube::from_hsi_bytes(&fs::read(path)?)
}
