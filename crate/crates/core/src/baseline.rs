//! Lookup-table estimate of the local function: for every patch pattern seen
//! in training, predict its most frequent label.

use std::collections::HashMap;

use crate::codec::{Reader, Writer};
use crate::dataset::PatchDataset;
use crate::error::{Error, Result};
use crate::image::Window;
use crate::woperator::{check_flat_len, Classifier};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrequencyTable {
    window: Window,
    /// Packed pattern (MSB first) -> (count of label 0, count of label 1).
    entries: HashMap<Vec<u8>, (u64, u64)>,
    default_label: u8,
}

fn decide(counts: (u64, u64)) -> u8 {
    // Ties keep the pixel.
    u8::from(counts.1 >= counts.0)
}

impl FrequencyTable {
    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn default_label(&self) -> u8 {
        self.default_label
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Label counts recorded for an unpacked pattern.
    pub fn counts(&self, patch: &[u8]) -> Option<(u64, u64)> {
        self.entries.get(&pack(patch)).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (Vec<u8>, (u64, u64))> + '_ {
        let n = self.window.len();
        self.entries.iter().map(move |(k, &v)| (unpack(k, n), v))
    }

    pub fn predict(&self, patch: &[u8]) -> Result<u8> {
        if patch.len() != self.window.len() {
            return Err(Error::invalid(format!(
                "patch has length {}, window has {}",
                patch.len(),
                self.window.len()
            )));
        }
        Ok(self.predict_packed(&pack(patch)))
    }

    fn predict_packed(&self, key: &[u8]) -> u8 {
        self.entries.get(key).map_or(self.default_label, |&c| decide(c))
    }

    /// Fraction of dataset samples the table labels wrongly.
    pub fn error_rate(&self, ds: &PatchDataset) -> f64 {
        if ds.is_empty() {
            return 0.0;
        }
        let wrong = (0..ds.len())
            .filter(|&i| self.predict_packed(ds.packed(i)) != ds.label(i))
            .count();
        wrong as f64 / ds.len() as f64
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.u8(self.default_label);
        w.u64(self.entries.len() as u64);
        let mut keys: Vec<&Vec<u8>> = self.entries.keys().collect();
        keys.sort();
        for k in keys {
            let (c0, c1) = self.entries[k];
            w.bytes(k);
            w.u64(c0);
            w.u64(c1);
        }
    }

    pub(crate) fn decode(r: &mut Reader<'_>, window: Window) -> Result<Self> {
        let stride = window.len().div_ceil(8);
        let at = r.pos();
        let default_label = r.u8()?;
        if default_label > 1 {
            return Err(Error::parse(at, "default label must be 0 or 1"));
        }
        let n = r.len_u64()?;
        if n > r.remaining() / (stride + 16) {
            return Err(r.err("entry count exceeds input"));
        }
        let mut entries = HashMap::with_capacity(n);
        for _ in 0..n {
            let at = r.pos();
            let key = r.take(stride)?.to_vec();
            let counts = (r.u64()?, r.u64()?);
            if counts.0 + counts.1 == 0 {
                return Err(Error::parse(at, "table entry with zero count"));
            }
            if entries.insert(key, counts).is_some() {
                return Err(Error::parse(at, "duplicate table entry"));
            }
        }
        Ok(FrequencyTable {
            window,
            entries,
            default_label,
        })
    }
}

fn pack(patch: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; patch.len().div_ceil(8)];
    for (i, &v) in patch.iter().enumerate() {
        if v != 0 {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

fn unpack(key: &[u8], n: usize) -> Vec<u8> {
    (0..n).map(|i| (key[i / 8] >> (7 - i % 8)) & 1).collect()
}

/// Counts label occurrences for every distinct pattern in `ds`.
pub fn fit_table(ds: &PatchDataset) -> Result<FrequencyTable> {
    if ds.is_empty() {
        return Err(Error::invalid("cannot fit a table to an empty dataset"));
    }
    let mut entries: HashMap<Vec<u8>, (u64, u64)> = HashMap::new();
    for i in 0..ds.len() {
        let e = entries.entry(ds.packed(i).to_vec()).or_default();
        if ds.label(i) == 1 {
            e.1 += 1;
        } else {
            e.0 += 1;
        }
    }
    Ok(FrequencyTable {
        window: ds.window().clone(),
        entries,
        default_label: ds.majority_label(),
    })
}

pub fn predict_table(table: &FrequencyTable, patch: &[u8]) -> Result<u8> {
    table.predict(patch)
}

impl Classifier for FrequencyTable {
    fn input_len(&self) -> usize {
        self.window.len()
    }

    fn predict_flat(&self, patches: &[u8]) -> Result<Vec<u8>> {
        let n = self.window.len();
        check_flat_len(patches.len(), n)?;
        Ok(patches
            .chunks(n)
            .map(|p| self.predict_packed(&pack(p)))
            .collect())
    }
}
