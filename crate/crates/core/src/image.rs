//! Binary images, windows and patch extraction.
//!
//! Pixels are `0` (background) or `1` (foreground/ink). Coordinates outside
//! the image support read as background, so patches near the border are
//! always well defined.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite binary image stored row-major.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for BinaryImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BinaryImage {}x{}", self.width, self.height)?;
        if self.width <= 64 && self.height <= 64 {
            for row in self.pixels.chunks(self.width) {
                let line: String = row.iter().map(|&v| if v == 1 { '#' } else { '.' }).collect();
                writeln!(f, "  {line}")?;
            }
        }
        Ok(())
    }
}

impl BinaryImage {
    /// All-background image.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(BinaryImage {
            width,
            height,
            pixels: vec![0; width * height],
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        let mut img = Self::new(width, height)?;
        img.pixels.fill(u8::from(value != 0));
        Ok(img)
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "pixel buffer has {} values, expected {}",
                pixels.len(),
                width * height
            )));
        }
        if let Some(pos) = pixels.iter().position(|&v| v > 1) {
            return Err(Error::invalid(format!(
                "pixel {pos} has value {}, expected 0 or 1",
                pixels[pos]
            )));
        }
        Ok(BinaryImage {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from rows of `0`/`1`; handy in tests.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::from_pixels(width, height, rows.concat())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as u64) < self.width as u64 && (y as u64) < self.height as u64
    }

    /// Pixel at an in-support coordinate. Panics when out of range.
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        assert!(x < self.width && y < self.height, "pixel ({x},{y}) out of range");
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        assert!(x < self.width && y < self.height, "pixel ({x},{y}) out of range");
        self.pixels[y * self.width + x] = u8::from(value != 0);
    }

    /// Pixel value with background padding outside the support.
    #[inline]
    pub fn get_padded(&self, x: i64, y: i64) -> u8 {
        if self.contains(x, y) {
            self.pixels[y as usize * self.width + x as usize]
        } else {
            0
        }
    }

    /// Foreground coordinates in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.pixels
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1)
            .map(move |(i, _)| (i % w, i / w))
    }

    pub fn count_foreground(&self) -> usize {
        self.pixels.iter().filter(|&&v| v == 1).count()
    }

    /// True when every foreground pixel of `self` is also foreground in `other`.
    pub fn is_subset_of(&self, other: &BinaryImage) -> bool {
        self.dims() == other.dims()
            && self
                .pixels
                .iter()
                .zip(&other.pixels)
                .all(|(&a, &b)| a <= b)
    }

    /// Copies `self` into a larger background canvas at offset `(left, top)`.
    pub fn embed(&self, width: usize, height: usize, left: usize, top: usize) -> Result<Self> {
        if left + self.width > width || top + self.height > height {
            return Err(Error::invalid("embedded image does not fit the canvas"));
        }
        let mut out = Self::new(width, height)?;
        for y in 0..self.height {
            let src = &self.pixels[y * self.width..(y + 1) * self.width];
            let start = (top + y) * width + left;
            out.pixels[start..start + self.width].copy_from_slice(src);
        }
        Ok(out)
    }
}

/// A finite set of integer offsets containing the origin, kept sorted
/// row-major by `(dy, dx)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    offsets: Vec<(i32, i32)>,
}

impl Window {
    /// Builds a window from arbitrary `(dx, dy)` offsets. The offsets are
    /// sorted into row-major order; duplicates and a missing origin are
    /// rejected.
    pub fn new(mut offsets: Vec<(i32, i32)>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::invalid("window must be non-empty"));
        }
        offsets.sort_by_key(|&(dx, dy)| (dy, dx));
        if offsets.windows(2).any(|p| p[0] == p[1]) {
            return Err(Error::invalid("window offsets must be unique"));
        }
        if !offsets.contains(&(0, 0)) {
            return Err(Error::invalid("window must contain the origin"));
        }
        Ok(Window { offsets })
    }

    /// Rectangular `w`x`h` window centred on the origin.
    pub fn rect(w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || w % 2 == 0 || h % 2 == 0 {
            return Err(Error::invalid(format!(
                "window dimensions must be odd and positive, got {w}x{h}"
            )));
        }
        let (rx, ry) = ((w / 2) as i32, (h / 2) as i32);
        let offsets = (-ry..=ry)
            .flat_map(|dy| (-rx..=rx).map(move |dx| (dx, dy)))
            .collect();
        Ok(Window { offsets })
    }

    pub fn square(size: usize) -> Result<Self> {
        Self::rect(size, size)
    }

    pub fn offsets(&self) -> &[(i32, i32)] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Bounding box `(min_dx, min_dy, max_dx, max_dy)`.
    pub fn bounds(&self) -> (i32, i32, i32, i32) {
        self.offsets.iter().fold(
            (0, 0, 0, 0),
            |(x0, y0, x1, y1), &(dx, dy)| (x0.min(dx), y0.min(dy), x1.max(dx), y1.max(dy)),
        )
    }

    /// Largest absolute offset along either axis.
    pub fn radius(&self) -> usize {
        let (x0, y0, x1, y1) = self.bounds();
        [x0.abs(), y0.abs(), x1, y1].into_iter().max().unwrap_or(0) as usize
    }

    /// Returns `(w, h)` when the window is a full centred rectangle.
    pub fn rect_dims(&self) -> Option<(usize, usize)> {
        let (x0, y0, x1, y1) = self.bounds();
        if x0 != -x1 || y0 != -y1 {
            return None;
        }
        let (w, h) = ((2 * x1 + 1) as usize, (2 * y1 + 1) as usize);
        (w * h == self.offsets.len()).then_some((w, h))
    }
}

/// Flattened window contents around `(x, y)`, in window offset order.
pub fn extract_patch(img: &BinaryImage, x: usize, y: usize, window: &Window) -> Result<Vec<u8>> {
    if x >= img.width || y >= img.height {
        return Err(Error::invalid(format!(
            "point ({x},{y}) outside {}x{} image",
            img.width, img.height
        )));
    }
    let mut out = vec![0; window.len()];
    fill_patch(img, x, y, window, &mut out);
    Ok(out)
}

/// Writes the patch at `(x, y)` into `out`. The point must be in support and
/// `out.len() == window.len()`.
#[inline]
pub(crate) fn fill_patch(img: &BinaryImage, x: usize, y: usize, window: &Window, out: &mut [u8]) {
    debug_assert_eq!(out.len(), window.len());
    let (x, y) = (x as i64, y as i64);
    for (slot, &(dx, dy)) in out.iter_mut().zip(&window.offsets) {
        *slot = img.get_padded(x + dx as i64, y + dy as i64);
    }
}
