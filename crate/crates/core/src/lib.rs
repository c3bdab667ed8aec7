//! Learning binary image operators from example pairs.
//!
//! A W-operator decides each output pixel from the input pattern seen
//! through a finite window centred on that pixel. This crate extracts
//! labelled window patches from input/output image pairs, fits a pixel
//! classifier to them (a lookup table or a small convolutional network
//! trained from scratch), applies the learned operator to new images and
//! scores it with staff-removal metrics.

pub mod baseline;
pub mod cnn;
mod codec;
pub mod container;
pub mod dataset;
pub mod error;
pub mod image;
pub mod metrics;
pub mod pbm;
pub mod rng;
pub mod selection;
pub mod synth;
pub mod woperator;

pub use baseline::{fit_table, predict_table, FrequencyTable};
pub use container::AnyModel;
pub use dataset::{extract_dataset, shuffle_batches, subsample, PatchDataset};
pub use error::{Error, Result};
pub use image::{extract_patch, BinaryImage, Window};
pub use woperator::{apply, compose_apply, ApplyMode, Classifier, LocalFunction};
