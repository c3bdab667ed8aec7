//! Labelled patch datasets extracted from input/output image pairs.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::image::{fill_patch, BinaryImage, Window};
use crate::rng;
use crate::woperator::ApplyMode;

/// Which pixels produce samples.
pub type Sampling = ApplyMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub image_id: u32,
    pub x: u32,
    pub y: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub total: usize,
    /// Distinct patch bit patterns.
    pub distinct: usize,
    /// Distinct patterns observed with both labels.
    pub conflicting: usize,
}

/// Flattened binary patches with their labels. Patches are stored bit-packed
/// (most significant bit first) and expanded on demand.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchDataset {
    window: Window,
    stride: usize,
    bits: Vec<u8>,
    labels: Vec<u8>,
    provenance: Option<Vec<Provenance>>,
    stats: DatasetStats,
}

fn pack_into(patch: &[u8], out: &mut [u8]) {
    out.fill(0);
    for (i, &v) in patch.iter().enumerate() {
        if v != 0 {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
}

impl PatchDataset {
    fn empty(window: Window) -> Self {
        let stride = window.len().div_ceil(8);
        PatchDataset {
            window,
            stride,
            bits: Vec::new(),
            labels: Vec::new(),
            provenance: None,
            stats: DatasetStats::default(),
        }
    }

    /// Builds a dataset from explicit samples.
    pub fn from_samples(window: Window, patches: &[Vec<u8>], labels: &[u8]) -> Result<Self> {
        if patches.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} patches but {} labels",
                patches.len(),
                labels.len()
            )));
        }
        let mut ds = Self::empty(window);
        ds.bits = vec![0; patches.len() * ds.stride];
        for (i, (p, &l)) in patches.iter().zip(labels).enumerate() {
            if p.len() != ds.window.len() {
                return Err(Error::invalid(format!(
                    "patch {i} has length {}, window has {}",
                    p.len(),
                    ds.window.len()
                )));
            }
            if l > 1 || p.iter().any(|&v| v > 1) {
                return Err(Error::invalid(format!("sample {i} is not binary")));
            }
            pack_into(p, &mut ds.bits[i * ds.stride..(i + 1) * ds.stride]);
        }
        ds.labels = labels.to_vec();
        ds.stats = ds.compute_stats();
        Ok(ds)
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn stats(&self) -> DatasetStats {
        self.stats
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u8 {
        self.labels[i]
    }

    pub fn provenance(&self) -> Option<&[Provenance]> {
        self.provenance.as_deref()
    }

    /// Bytes per packed patch.
    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Packed bit pattern of sample `i`.
    pub fn packed(&self, i: usize) -> &[u8] {
        &self.bits[i * self.stride..(i + 1) * self.stride]
    }

    /// Unpacked patch of sample `i`.
    pub fn patch(&self, i: usize) -> Vec<u8> {
        let mut out = vec![0; self.window.len()];
        self.unpack_into(i, &mut out);
        out
    }

    pub fn unpack_into<T: From<u8>>(&self, i: usize, out: &mut [T]) {
        let packed = self.packed(i);
        for (k, slot) in out.iter_mut().enumerate().take(self.window.len()) {
            *slot = T::from((packed[k / 8] >> (7 - k % 8)) & 1);
        }
    }

    /// All patches unpacked back to back, `len() * window.len()` values.
    pub fn flat_patches(&self) -> Vec<u8> {
        let n = self.window.len();
        let mut out = vec![0u8; self.len() * n];
        for (i, chunk) in out.chunks_mut(n).enumerate() {
            self.unpack_into(i, chunk);
        }
        out
    }

    /// Majority label over all samples, ties resolved to 1.
    pub fn majority_label(&self) -> u8 {
        let ones = self.labels.iter().filter(|&&l| l == 1).count();
        u8::from(2 * ones >= self.labels.len())
    }

    /// New dataset made of the given samples, in the given order.
    pub fn select(&self, indices: &[usize]) -> PatchDataset {
        let mut out = Self::empty(self.window.clone());
        out.bits.reserve(indices.len() * self.stride);
        for &i in indices {
            out.bits.extend_from_slice(self.packed(i));
        }
        out.labels = indices.iter().map(|&i| self.labels[i]).collect();
        out.provenance = self
            .provenance
            .as_ref()
            .map(|p| indices.iter().map(|&i| p[i]).collect());
        out.stats = out.compute_stats();
        out
    }

    /// Concatenates datasets sharing a window.
    pub fn concat(parts: &[PatchDataset]) -> Result<PatchDataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        let mut out = Self::empty(first.window.clone());
        let with_prov = parts.iter().all(|p| p.provenance.is_some());
        let mut prov = Vec::new();
        for p in parts {
            if p.window != first.window {
                return Err(Error::invalid("datasets use different windows"));
            }
            out.bits.extend_from_slice(&p.bits);
            out.labels.extend_from_slice(&p.labels);
            if with_prov {
                prov.extend_from_slice(p.provenance.as_deref().unwrap_or_default());
            }
        }
        out.provenance = with_prov.then_some(prov);
        out.stats = out.compute_stats();
        Ok(out)
    }

    fn compute_stats(&self) -> DatasetStats {
        let mut seen: HashMap<&[u8], u8> = HashMap::new();
        for i in 0..self.len() {
            *seen.entry(self.packed(i)).or_default() |= 1 << self.labels[i];
        }
        DatasetStats {
            total: self.len(),
            distinct: seen.len(),
            conflicting: seen.values().filter(|&&m| m == 0b11).count(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(DATASET_MAGIC);
        w.u32(DATASET_VERSION);
        w.window(&self.window);
        w.u64(self.len() as u64);
        w.u8(u8::from(self.provenance.is_some()));
        w.u64(self.stats.total as u64);
        w.u64(self.stats.distinct as u64);
        w.u64(self.stats.conflicting as u64);
        w.bytes(&self.bits);
        w.bytes(&self.labels);
        if let Some(prov) = &self.provenance {
            for p in prov {
                w.u32(p.image_id);
                w.u32(p.x);
                w.u32(p.y);
            }
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(DATASET_MAGIC)?;
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::parse(4, format!("unsupported dataset version {version}")));
        }
        let window = r.window()?;
        let n = r.len_u64()?;
        let has_prov = r.u8()? != 0;
        let stored = DatasetStats {
            total: r.len_u64()?,
            distinct: r.len_u64()?,
            conflicting: r.len_u64()?,
        };
        let mut ds = Self::empty(window);
        ds.bits = r.take(n.checked_mul(ds.stride).ok_or_else(|| r.err("size overflow"))?)?.to_vec();
        let at = r.pos();
        ds.labels = r.take(n)?.to_vec();
        if let Some(pos) = ds.labels.iter().position(|&l| l > 1) {
            return Err(Error::parse(at + pos, "label is not 0 or 1"));
        }
        if has_prov {
            let mut prov = Vec::with_capacity(n);
            for _ in 0..n {
                prov.push(Provenance {
                    image_id: r.u32()?,
                    x: r.u32()?,
                    y: r.u32()?,
                });
            }
            ds.provenance = Some(prov);
        }
        ds.stats = ds.compute_stats();
        if ds.stats != stored {
            return Err(Error::parse(r.pos(), "stored statistics do not match contents"));
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Disjoint image-id lists for training, validation and testing.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for id in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(id) {
                return Err(Error::data(format!("image '{id}' appears in more than one split")));
            }
        }
        Ok(())
    }

    /// Validation plus the non-empty train/validation requirement of
    /// model selection.
    pub fn validate_for_selection(&self) -> Result<()> {
        self.validate()?;
        if self.train.is_empty() || self.validation.is_empty() {
            return Err(Error::data("selection needs training and validation images"));
        }
        Ok(())
    }
}

pub const DATASET_MAGIC: &[u8; 4] = b"WOPD";
pub const DATASET_VERSION: u32 = 1;

/// One sample per eligible pixel of every pair, labelled with the output
/// pixel at the window centre. Sample order is image order, then row-major.
pub fn extract_dataset(
    pairs: &[(BinaryImage, BinaryImage)],
    window: &Window,
    sampling: Sampling,
) -> Result<PatchDataset> {
    for (i, (input, output)) in pairs.iter().enumerate() {
        if input.dims() != output.dims() {
            return Err(Error::data(format!(
                "pair {i}: input is {:?} but output is {:?}",
                input.dims(),
                output.dims()
            )));
        }
        if sampling == ApplyMode::ForegroundOnly {
            if let Some(k) = output
                .pixels()
                .iter()
                .zip(input.pixels())
                .position(|(&o, &i)| o > i)
            {
                return Err(Error::data(format!(
                    "pair {i}: output pixel ({}, {}) is foreground but input is background",
                    k % input.width(),
                    k / input.width()
                )));
            }
        }
    }

    let parts: Vec<PatchDataset> = pairs
        .par_iter()
        .enumerate()
        .map(|(id, (input, output))| {
            let mut ds = PatchDataset::empty(window.clone());
            let mut patch = vec![0u8; window.len()];
            let mut prov = Vec::new();
            for y in 0..input.height() {
                for x in 0..input.width() {
                    if sampling == ApplyMode::ForegroundOnly && input.get(x, y) == 0 {
                        continue;
                    }
                    fill_patch(input, x, y, window, &mut patch);
                    let start = ds.bits.len();
                    ds.bits.resize(start + ds.stride, 0);
                    pack_into(&patch, &mut ds.bits[start..]);
                    ds.labels.push(output.get(x, y));
                    prov.push(Provenance {
                        image_id: id as u32,
                        x: x as u32,
                        y: y as u32,
                    });
                }
            }
            ds.provenance = Some(prov);
            ds
        })
        .collect();

    if parts.is_empty() {
        let mut ds = PatchDataset::empty(window.clone());
        ds.provenance = Some(Vec::new());
        return Ok(ds);
    }
    PatchDataset::concat(&parts)
}

/// Uniform sample of `n` items without replacement, in random order.
pub fn subsample(ds: &PatchDataset, n: usize, seed: u64) -> Result<PatchDataset> {
    if n > ds.len() {
        return Err(Error::invalid(format!(
            "cannot subsample {n} items from a dataset of {}",
            ds.len()
        )));
    }
    let mut rng = rng::derive(seed, &[rng::TAG_SUBSAMPLE]);
    let idx = rand::seq::index::sample(&mut rng, ds.len(), n).into_vec();
    Ok(ds.select(&idx))
}

/// Index permutation for one epoch.
pub fn epoch_permutation(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(&mut rng::derive(seed, &[rng::TAG_SHUFFLE, epoch as u64]));
    idx
}

/// Mini-batches of sample indices for one epoch. The last batch may be
/// short.
pub fn shuffle_batches(
    ds: &PatchDataset,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<impl Iterator<Item = Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let perm = epoch_permutation(ds.len(), seed, epoch);
    let mut start = 0;
    Ok(std::iter::from_fn(move || {
        if start >= perm.len() {
            return None;
        }
        let end = (start + batch_size).min(perm.len());
        let batch = perm[start..end].to_vec();
        start = end;
        Some(batch)
    }))
}
