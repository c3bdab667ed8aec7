//! Mean absolute error and the staff-removal confusion metrics.
//!
//! For staff removal the positive class is a *staff* pixel: an input
//! foreground pixel whose expected output is 0 (removed).
//!
//! | predicted | expected | count |
//! |-----------|----------|-------|
//! | 0         | 0        | TP    |
//! | 1         | 1        | TN    |
//! | 0         | 1        | FP (symbol pixel wrongly removed) |
//! | 1         | 0        | FN (staff pixel kept) |
//!
//! Recall measures staff detection, specificity measures symbol
//! preservation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::BinaryImage;

/// Pixels over which an error is measured.
#[derive(Clone, Copy, Debug)]
pub enum Domain<'a> {
    /// Pixels that are foreground in the corresponding input image.
    ForegroundOf(&'a [BinaryImage]),
    AllPixels,
}

/// Mean absolute pixel difference over the domain, pooled over all pairs.
pub fn mae(predicted: &[BinaryImage], expected: &[BinaryImage], domain: Domain<'_>) -> Result<f64> {
    if predicted.len() != expected.len() {
        return Err(Error::data(format!(
            "{} predicted images but {} expected",
            predicted.len(),
            expected.len()
        )));
    }
    if let Domain::ForegroundOf(inputs) = domain {
        if inputs.len() != predicted.len() {
            return Err(Error::data(format!(
                "{} domain images for {} pairs",
                inputs.len(),
                predicted.len()
            )));
        }
    }
    let mut total = 0usize;
    let mut wrong = 0usize;
    for (i, (p, e)) in predicted.iter().zip(expected).enumerate() {
        if p.dims() != e.dims() {
            return Err(Error::data(format!(
                "pair {i}: predicted {:?} vs expected {:?}",
                p.dims(),
                e.dims()
            )));
        }
        match domain {
            Domain::AllPixels => {
                total += p.pixels().len();
                wrong += p.pixels().iter().zip(e.pixels()).filter(|(a, b)| a != b).count();
            }
            Domain::ForegroundOf(inputs) => {
                let inp = &inputs[i];
                if inp.dims() != p.dims() {
                    return Err(Error::data(format!("pair {i}: domain image size differs")));
                }
                for ((&m, &a), &b) in inp.pixels().iter().zip(p.pixels()).zip(e.pixels()) {
                    if m == 1 {
                        total += 1;
                        wrong += usize::from(a != b);
                    }
                }
            }
        }
    }
    if total == 0 {
        return Err(Error::invalid("MAE domain is empty"));
    }
    Ok(wrong as f64 / total as f64)
}

/// MAE between two label sequences.
pub fn label_mae(predicted: &[u8], expected: &[u8]) -> Result<f64> {
    if predicted.len() != expected.len() {
        return Err(Error::data(format!(
            "{} predictions for {} labels",
            predicted.len(),
            expected.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::invalid("MAE domain is empty"));
    }
    let wrong = predicted.iter().zip(expected).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / predicted.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateFlags {
    pub accuracy: bool,
    pub specificity: bool,
    pub recall: bool,
}

impl DegenerateFlags {
    pub fn any(&self) -> bool {
        self.accuracy || self.specificity || self.recall
    }

    fn render(&self) -> String {
        [
            (self.accuracy, "no_pixels"),
            (self.specificity, "no_symbol_pixels"),
            (self.recall, "no_staff_pixels"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, s)| *s)
        .collect::<Vec<_>>()
        .join("|")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub counts: Confusion,
    pub pixels_evaluated: u64,
    pub accuracy: f64,
    pub specificity: f64,
    pub recall: f64,
    pub mae: f64,
    pub degenerate: DegenerateFlags,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (1.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl EvalResult {
    pub fn from_counts(counts: Confusion) -> Self {
        let total = counts.total();
        let (accuracy, d_acc) = ratio(counts.tp + counts.tn, total);
        let (specificity, d_spec) = ratio(counts.tn, counts.tn + counts.fp);
        let (recall, d_rec) = ratio(counts.tp, counts.tp + counts.fn_);
        let mae = if total == 0 {
            0.0
        } else {
            (counts.fp + counts.fn_) as f64 / total as f64
        };
        EvalResult {
            counts,
            pixels_evaluated: total,
            accuracy,
            specificity,
            recall,
            mae,
            degenerate: DegenerateFlags {
                accuracy: d_acc,
                specificity: d_spec,
                recall: d_rec,
            },
        }
    }
}

/// Confusion metrics over the input's foreground pixels.
pub fn staff_eval(
    input: &BinaryImage,
    predicted: &BinaryImage,
    expected: &BinaryImage,
) -> Result<EvalResult> {
    if input.dims() != predicted.dims() || input.dims() != expected.dims() {
        return Err(Error::data(format!(
            "image sizes differ: input {:?}, predicted {:?}, expected {:?}",
            input.dims(),
            predicted.dims(),
            expected.dims()
        )));
    }
    let mut c = Confusion::default();
    for ((&m, &p), &e) in input.pixels().iter().zip(predicted.pixels()).zip(expected.pixels()) {
        if m == 0 {
            continue;
        }
        match (p, e) {
            (0, 0) => c.tp += 1,
            (1, 1) => c.tn += 1,
            (0, 1) => c.fp += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(EvalResult::from_counts(c))
}

/// Pooled counts over all images, and the unweighted mean of per-image
/// ratios.
pub fn aggregate(results: &[EvalResult]) -> (EvalResult, EvalResult) {
    let mut pooled = Confusion::default();
    for r in results {
        pooled.add(&r.counts);
    }
    let pooled = EvalResult::from_counts(pooled);
    let n = results.len().max(1) as f64;
    let mean = |f: fn(&EvalResult) -> f64| results.iter().map(f).sum::<f64>() / n;
    let means = EvalResult {
        accuracy: mean(|r| r.accuracy),
        specificity: mean(|r| r.specificity),
        recall: mean(|r| r.recall),
        mae: mean(|r| r.mae),
        degenerate: DegenerateFlags {
            accuracy: results.iter().any(|r| r.degenerate.accuracy),
            specificity: results.iter().any(|r| r.degenerate.specificity),
            recall: results.iter().any(|r| r.degenerate.recall),
        },
        ..pooled
    };
    (pooled, means)
}

pub const CSV_HEADER: [&str; 11] = [
    "image_id",
    "pixels",
    "TP",
    "TN",
    "FP",
    "FN",
    "accuracy",
    "specificity",
    "recall",
    "mae",
    "flags",
];

/// One row per image, then `ALL` (pooled counts) and `MEAN` (per-image
/// means).
pub fn write_csv<W: Write>(out: W, rows: &[(String, EvalResult)]) -> Result<()> {
    let io = |e: csv::Error| Error::io("<csv>", std::io::Error::other(e));
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(io)?;
    let results: Vec<EvalResult> = rows.iter().map(|(_, r)| *r).collect();
    let (pooled, means) = aggregate(&results);
    let all = rows
        .iter()
        .map(|(id, r)| (id.as_str(), r))
        .chain([("ALL", &pooled), ("MEAN", &means)]);
    for (id, r) in all {
        w.write_record([
            id.to_string(),
            r.pixels_evaluated.to_string(),
            r.counts.tp.to_string(),
            r.counts.tn.to_string(),
            r.counts.fp.to_string(),
            r.counts.fn_.to_string(),
            format!("{:.6}", r.accuracy),
            format!("{:.6}", r.specificity),
            format!("{:.6}", r.recall),
            format!("{:.6}", r.mae),
            r.degenerate.render(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
