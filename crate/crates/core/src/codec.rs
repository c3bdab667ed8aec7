//! Little-endian helpers shared by the binary container formats.

use crate::error::{Error, Result};
use crate::image::Window;

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// Window as `u32` count followed by `(i32 dx, i32 dy)` pairs.
    pub fn window(&mut self, w: &Window) {
        self.u32(w.len() as u32);
        for &(dx, dy) in w.offsets() {
            self.i32(dx);
            self.i32(dy);
        }
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn err(&self, msg: &str) -> Error {
        Error::parse(self.pos, msg)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::parse(
                self.bytes.len(),
                format!("truncated: need {n} bytes at offset {}", self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut a = [0; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    pub fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        let at = self.pos;
        let got = self.take(magic.len()).map_err(|_| Error::parse(at, "missing magic"))?;
        if got != magic {
            return Err(Error::parse(at, "bad magic"));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// A `u64` length that must fit the remaining input.
    pub fn len_u64(&mut self) -> Result<usize> {
        let at = self.pos;
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::parse(at, "length out of range"))
    }

    pub fn window(&mut self) -> Result<Window> {
        let at = self.pos;
        let n = self.u32()? as usize;
        if n > self.remaining() / 8 {
            return Err(Error::parse(at, "window offset count exceeds input"));
        }
        let mut offsets = Vec::with_capacity(n);
        for _ in 0..n {
            offsets.push((self.i32()?, self.i32()?));
        }
        let w = Window::new(offsets.clone()).map_err(|e| Error::parse(at, e.to_string()))?;
        if w.offsets() != offsets.as_slice() {
            return Err(Error::parse(at, "window offsets are not in row-major order"));
        }
        Ok(w)
    }
}
