//! `ADNT` tensor files: magic `ADNT`, `u8` version 1, `u32` rank, rank × `u32`
//! dims, then the little-endian `f32` payload.

use std::fs;
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ADNT";
pub const VERSION: u8 = 1;

pub fn encode(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 4 * t.rank() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Little-endian cursor that reports the byte offset of any failure.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format { offset: self.offset(), message: message.into() }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated: need {n} bytes, {} remain", self.bytes.len() - self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    /// Rank, dims and payload of one tensor body.
    pub fn tensor_body(&mut self) -> Result<Tensor<f32>> {
        let at = self.offset();
        let rank = self.u32()? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format { offset: at, message: format!("implausible rank {rank}") });
        }
        let mut shape = Vec::with_capacity(rank);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let at = self.offset();
            let d = self.u32()? as usize;
            if d == 0 {
                return Err(Error::Format { offset: at, message: "zero dimension".into() });
            }
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::Format { offset: at, message: "element count overflows".into() })?;
            shape.push(d);
        }
        let bytes = numel.checked_mul(4).ok_or_else(|| self.fail("payload size overflows"))?;
        let raw = self.take(bytes)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::new(shape, data).map_err(|e| self.fail(e.to_string()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::Format { offset: 0, message: "bad magic, expected ADNT".into() });
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::Format { offset: 4, message: format!("unsupported version {version}") });
    }
    let t = r.tensor_body()?;
    if !r.is_empty() {
        return Err(r.fail("trailing bytes after payload"));
    }
    Ok(t)
}

pub fn write(path: impl AsRef<Path>, t: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
