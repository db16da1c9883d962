//! octseg-core — inclusion-defect segmentation for volumetric OCT scans of
//! ceramic parts.
//!
//! The pipeline stages are:
//!
//! 1. **data** – PNG slice-stack loading, bounding-box annotations, volume
//!    splits, synthetic desk-scale volumes, shuffled batch streams.
//! 2. **preprocess** – deterministic pad/crop/normalize transforms applied
//!    identically to image and mask.
//! 3. **model** – depth-5 U-Net (encoder/decoder with skip connections) with
//!    hand-written forward and backward passes and a versioned checkpoint
//!    format.
//! 4. **loss** – BCE, soft Dice, and the five weighted combinations.
//! 5. **train** – Adam optimization with validation-loss checkpointing and
//!    early stopping.
//! 6. **eval** – thresholded prediction, pooled confusion-count metrics per
//!    volume, inference benchmarking.

pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod preprocess;
pub mod train;

pub use error::{Error, Result};
