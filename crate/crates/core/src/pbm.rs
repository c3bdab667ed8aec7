//! Portable bitmap (PBM) reading and writing.
//!
//! Both the plain (`P1`) and raw (`P4`) variants are read; `P4` is written.
//! A set bit in the file is ink and maps to foreground `1`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::BinaryImage;

pub fn read_image(path: impl AsRef<Path>) -> Result<BinaryImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_image(img: &BinaryImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}

/// Raw `P4` encoding with rows padded to whole bytes.
pub fn encode(img: &BinaryImage) -> Vec<u8> {
    let (w, h) = img.dims();
    let stride = w.div_ceil(8);
    let mut out = format!("P4\n{w} {h}\n").into_bytes();
    out.reserve(stride * h);
    for row in img.pixels().chunks(w) {
        let mut packed = vec![0u8; stride];
        for (x, &v) in row.iter().enumerate() {
            if v == 1 {
                packed[x / 8] |= 0x80 >> (x % 8);
            }
        }
        out.extend_from_slice(&packed);
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<BinaryImage> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::parse(0, "missing PBM magic number"));
    }
    let plain = match bytes[1] {
        b'1' => true,
        b'4' => false,
        other => {
            return Err(Error::parse(
                1,
                format!("unsupported format 'P{}'", other as char),
            ))
        }
    };
    cur.pos = 2;
    let width = cur.header_int()?;
    let height = cur.header_int()?;
    if width == 0 || height == 0 {
        return Err(Error::parse(cur.pos, "image dimensions must be positive"));
    }
    let mut pixels = Vec::with_capacity(width * height);
    if plain {
        while pixels.len() < width * height {
            cur.skip_space_and_comments();
            match cur.next() {
                Some(b'0') => pixels.push(0),
                Some(b'1') => pixels.push(1),
                Some(c) => {
                    return Err(Error::parse(
                        cur.pos - 1,
                        format!("unexpected byte {c:#04x} in P1 raster"),
                    ))
                }
                None => return Err(Error::parse(cur.pos, "truncated P1 raster")),
            }
        }
    } else {
        // Exactly one whitespace byte separates the header from the raster.
        match cur.next() {
            Some(c) if c.is_ascii_whitespace() => {}
            _ => return Err(Error::parse(cur.pos, "expected whitespace after P4 header")),
        }
        let stride = width.div_ceil(8);
        let need = stride * height;
        let start = cur.pos;
        if bytes.len() - start < need {
            return Err(Error::parse(
                bytes.len(),
                format!("truncated P4 raster: need {need} bytes, have {}", bytes.len() - start),
            ));
        }
        for row in bytes[start..start + need].chunks(stride) {
            for x in 0..width {
                pixels.push((row[x / 8] >> (7 - x % 8)) & 1);
            }
        }
    }
    BinaryImage::from_pixels(width, height, pixels)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> Option<u8> {
        let b = self.bytes.get(self.pos).copied();
        if b.is_some() {
            self.pos += 1;
        }
        b
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn header_int(&mut self) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::parse(start, "expected a decimal integer in header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(start, "header integer out of range"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag() -> BinaryImage {
        BinaryImage::from_rows(&[&[1, 0], &[0, 1]]).unwrap()
    }

    #[test]
    fn p4_bit_packing() {
        let bytes = encode(&diag());
        assert_eq!(&bytes[..7], b"P4\n2 2\n");
        assert_eq!(&bytes[7..], &[0b1000_0000, 0b0100_0000]);
    }

    #[test]
    fn p1_parse() {
        assert_eq!(decode(b"P1 2 2 1 0 0 1").unwrap(), diag());
        assert_eq!(decode(b"P1\n# comment\n2 2\n10\n01\n").unwrap(), diag());
    }

    #[test]
    fn p4_round_trip_odd_width() {
        let img = BinaryImage::from_rows(&[&[1, 0, 1, 1, 0, 0, 1, 0, 1], &[0; 9]]).unwrap();
        assert_eq!(decode(&encode(&img)).unwrap(), img);
    }

    #[test]
    fn errors_carry_offsets() {
        match decode(b"P5 1 1 255\n\0") {
            Err(Error::Parse { offset: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match decode(b"P4\n9 2\n\xff") {
            Err(Error::Parse { offset: 8, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match decode(b"P1 2 2 1 0 0") {
            Err(Error::Parse { offset: 12, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match decode(b"P1 x") {
            Err(Error::Parse { offset: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(decode(b"P1 2 1 1 7"), Err(Error::Parse { offset: 9, .. })));
        assert!(matches!(decode(b""), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pbm");
        write_image(&diag(), &path).unwrap();
        assert_eq!(read_image(&path).unwrap(), diag());
        assert!(matches!(
            read_image(dir.path().join("missing.pbm")),
            Err(Error::Io { .. })
        ));
    }
}
