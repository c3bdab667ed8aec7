//! Translation-invariant, locally defined operators built from a local
//! function over a window.
//!
//! The output pixel at `p` is the classifier's decision on the patch seen
//! through the window translated to `p`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{fill_patch, BinaryImage, Window};

/// A predictor from flattened binary patches to `{0,1}`.
///
/// Implementations must be deterministic and safe for concurrent read-only
/// use.
pub trait Classifier: Send + Sync {
    /// Patch length the classifier accepts.
    fn input_len(&self) -> usize;

    /// False for models that have not been fitted yet.
    fn is_trained(&self) -> bool {
        true
    }

    /// Predicts one label per patch. `patches` holds `n * input_len()`
    /// values, one patch after another.
    fn predict_flat(&self, patches: &[u8]) -> Result<Vec<u8>>;
}

/// Adapter turning a closure over a single patch into a [`Classifier`].
pub struct FnClassifier<F> {
    len: usize,
    f: F,
}

impl<F> FnClassifier<F>
where
    F: Fn(&[u8]) -> u8 + Send + Sync,
{
    pub fn new(len: usize, f: F) -> Self {
        FnClassifier { len, f }
    }
}

impl<F> Classifier for FnClassifier<F>
where
    F: Fn(&[u8]) -> u8 + Send + Sync,
{
    fn input_len(&self) -> usize {
        self.len
    }

    fn predict_flat(&self, patches: &[u8]) -> Result<Vec<u8>> {
        check_flat_len(patches.len(), self.len)?;
        Ok(patches.chunks(self.len).map(|p| u8::from((self.f)(p) != 0)).collect())
    }
}

pub(crate) fn check_flat_len(total: usize, len: usize) -> Result<()> {
    if len == 0 || total % len != 0 {
        return Err(Error::invalid(format!(
            "patch buffer of {total} values is not a multiple of the patch length {len}"
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplyMode {
    /// Evaluate every pixel.
    AllPixels,
    /// Evaluate only input-foreground pixels; background stays 0, so the
    /// operator is anti-extensive.
    #[default]
    ForegroundOnly,
}

impl std::str::FromStr for ApplyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "all_pixels" => Ok(ApplyMode::AllPixels),
            "foreground_only" | "foreground" => Ok(ApplyMode::ForegroundOnly),
            other => Err(Error::invalid(format!("unknown mode '{other}'"))),
        }
    }
}

/// Window plus the classifier that decides each output pixel.
#[derive(Clone)]
pub struct LocalFunction {
    window: Window,
    classifier: Arc<dyn Classifier>,
}

impl LocalFunction {
    pub fn new(window: Window, classifier: Arc<dyn Classifier>) -> Result<Self> {
        if classifier.input_len() != window.len() {
            return Err(Error::invalid(format!(
                "classifier expects {} inputs but window has {} offsets",
                classifier.input_len(),
                window.len()
            )));
        }
        Ok(LocalFunction { window, classifier })
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn classifier(&self) -> &dyn Classifier {
        self.classifier.as_ref()
    }
}

// Rows per parallel work item.
const ROWS_PER_CHUNK: usize = 8;

/// Applies the operator induced by `func` to `img`.
pub fn apply(func: &LocalFunction, img: &BinaryImage, mode: ApplyMode) -> Result<BinaryImage> {
    if !func.classifier.is_trained() {
        return Err(Error::State("classifier has not been trained".into()));
    }
    let (w, h) = img.dims();
    let wlen = func.window.len();
    let chunks: Vec<(usize, usize)> = (0..h)
        .step_by(ROWS_PER_CHUNK)
        .map(|y0| (y0, (y0 + ROWS_PER_CHUNK).min(h)))
        .collect();

    let results: Vec<Result<(Vec<usize>, Vec<u8>)>> = chunks
        .par_iter()
        .map(|&(y0, y1)| {
            let mut idx = Vec::new();
            let mut buf = Vec::new();
            for y in y0..y1 {
                for x in 0..w {
                    if mode == ApplyMode::ForegroundOnly && img.get(x, y) == 0 {
                        continue;
                    }
                    idx.push(y * w + x);
                    let start = buf.len();
                    buf.resize(start + wlen, 0);
                    fill_patch(img, x, y, &func.window, &mut buf[start..]);
                }
            }
            if idx.is_empty() {
                return Ok((idx, Vec::new()));
            }
            let labels = func.classifier.predict_flat(&buf)?;
            if labels.len() != idx.len() {
                return Err(Error::State(format!(
                    "classifier returned {} labels for {} patches",
                    labels.len(),
                    idx.len()
                )));
            }
            Ok((idx, labels))
        })
        .collect();

    let mut pixels = vec![0u8; w * h];
    for r in results {
        let (idx, labels) = r?;
        for (i, l) in idx.into_iter().zip(labels) {
            pixels[i] = u8::from(l != 0);
        }
    }
    BinaryImage::from_pixels(w, h, pixels)
}

/// Applies each function in turn, feeding each stage's output to the next.
pub fn compose_apply(
    funcs: &[LocalFunction],
    img: &BinaryImage,
    mode: ApplyMode,
) -> Result<BinaryImage> {
    let (first, rest) = funcs
        .split_first()
        .ok_or_else(|| Error::invalid("compose_apply needs at least one function"))?;
    let mut out = apply(first, img, mode)?;
    for f in rest {
        out = apply(f, &out, mode)?;
    }
    Ok(out)
}
