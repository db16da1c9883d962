//! Volumetric dataset handling: PNG slice-stack loading, bounding-box
//! annotations, mask rasterization, volume-level splits, synthetic volume
//! generation and batch iteration.
//!
//! On-disk layout:
//! ```text
//! <root>/<volume_id>/slices/NNNN.png   grayscale B-scans, ascending numeric order
//! <root>/<volume_id>/masks/NNNN.png    0/255 binary masks (optional)
//! <root>/annotations.json              bounding boxes (optional)
//! ```
//! When both mask PNGs and boxes exist for a volume, the mask PNGs win.

mod batch;
mod synth;

pub use batch::{iterate_batches, Batch, BatchIter};
pub use synth::{generate_synthetic, generate_synthetic_with_boxes, SyntheticSpec};

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Source PNG bit depth. Intensities are scaled by the max code value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BitDepth {
    #[serde(rename = "8")]
    Eight,
    #[serde(rename = "16")]
    Sixteen,
}

/// Ordered stack of grayscale B-scan slices with geometry metadata.
/// Intensities are in [0,1]; slice order is ascending numeric filename order.
#[derive(Debug, Clone)]
pub struct Volume {
    pub id: String,
    /// S x H x W intensities in [0,1].
    pub slices: Array3<f32>,
    pub native_height: usize,
    pub native_width: usize,
}

impl Volume {
    pub fn slice_count(&self) -> usize {
        self.slices.dim().0
    }

    pub fn slice(&self, idx: usize) -> Array2<f32> {
        self.slices.index_axis(ndarray::Axis(0), idx).to_owned()
    }
}

/// Binary per-pixel inclusion labels aligned to a [`Volume`].
#[derive(Debug, Clone)]
pub struct MaskVolume {
    pub volume_id: String,
    /// S x H x W labels, each exactly 0 or 1.
    pub labels: Array3<u8>,
}

impl MaskVolume {
    pub fn slice(&self, idx: usize) -> Array2<f32> {
        self.labels
            .index_axis(ndarray::Axis(0), idx)
            .mapv(|v| v as f32)
    }

    pub fn zeros(volume_id: impl Into<String>, shape: (usize, usize, usize)) -> Self {
        MaskVolume {
            volume_id: volume_id.into(),
            labels: Array3::zeros(shape),
        }
    }
}

/// Axis-aligned box covering an inclusion over a slice range
/// [slice_start, slice_end).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxAnnotation {
    pub volume_id: String,
    pub slice_start: usize,
    pub slice_end: usize,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub class: DefectClass,
}

/// Inclusions are the only segmented class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefectClass {
    Inclusion,
}

impl BoxAnnotation {
    /// Checks the box lies within an S x H x W volume.
    pub fn check_bounds(&self, shape: (usize, usize, usize)) -> Result<()> {
        let (s, h, w) = shape;
        if self.slice_start >= self.slice_end || self.slice_end > s {
            return Err(Error::OutOfBounds {
                dim: "slice",
                detail: format!(
                    "slice range [{}, {}) invalid for {} slices (volume {})",
                    self.slice_start, self.slice_end, s, self.volume_id
                ),
            });
        }
        if self.x + self.w > w {
            return Err(Error::OutOfBounds {
                dim: "width",
                detail: format!(
                    "box x+w = {} exceeds width {} (volume {})",
                    self.x + self.w,
                    w,
                    self.volume_id
                ),
            });
        }
        if self.y + self.h > h {
            return Err(Error::OutOfBounds {
                dim: "height",
                detail: format!(
                    "box y+h = {} exceeds height {} (volume {})",
                    self.y + self.h,
                    h,
                    self.volume_id
                ),
            });
        }
        Ok(())
    }
}

/// Disjoint volume-level partition of the dataset. Splitting is by whole
/// volumes, never by slices, so test parts are unseen during training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    #[serde(rename = "train")]
    pub train_ids: Vec<String>,
    #[serde(rename = "val")]
    pub val_ids: Vec<String>,
    #[serde(rename = "test")]
    pub test_ids: Vec<String>,
}

impl DatasetSplit {
    pub fn section(&self, name: &str) -> Result<&[String]> {
        match name {
            "train" => Ok(&self.train_ids),
            "val" => Ok(&self.val_ids),
            "test" => Ok(&self.test_ids),
            other => Err(Error::Config(format!(
                "unknown split section {other:?}; expected train|val|test"
            ))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn numeric_stem(path: &Path) -> Result<u64> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.parse::<u64>().ok())
        .ok_or_else(|| Error::SliceOrdering(path.to_path_buf()))
}

fn decode_slice(path: &Path, bit_depth: BitDepth) -> Result<Array2<f32>> {
    let img = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let arr = match bit_depth {
        BitDepth::Eight => {
            let gray = img.to_luma8();
            let (w, h) = gray.dimensions();
            Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
                gray.get_pixel(c as u32, r as u32)[0] as f32 / 255.0
            })
        }
        BitDepth::Sixteen => {
            let gray = img.to_luma16();
            let (w, h) = gray.dimensions();
            Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
                gray.get_pixel(c as u32, r as u32)[0] as f32 / 65535.0
            })
        }
    };
    Ok(arr)
}

fn sorted_png_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::Config(format!("no PNG files in {}", dir.display())));
    }
    let mut keyed: Vec<(u64, PathBuf)> = paths
        .into_iter()
        .map(|p| numeric_stem(&p).map(|k| (k, p)))
        .collect::<Result<_>>()?;
    keyed.sort_by_key(|(k, _)| *k);
    Ok(keyed.into_iter().map(|(_, p)| p).collect())
}

/// Load a directory of grayscale PNG slices as a [`Volume`]. Slices are
/// decoded in parallel; the returned order is ascending numeric stem order.
pub fn load_volume(dir: &Path, bit_depth: BitDepth) -> Result<Volume> {
    let paths = sorted_png_paths(dir)?;
    let slices: Vec<Array2<f32>> = paths
        .par_iter()
        .map(|p| decode_slice(p, bit_depth))
        .collect::<Result<_>>()?;
    let (h, w) = slices[0].dim();
    for (i, s) in slices.iter().enumerate() {
        if s.dim() != (h, w) {
            return Err(Error::shape(
                format!("slice {} of {}", paths[i].display(), dir.display()),
                &[h, w],
                &[s.dim().0, s.dim().1],
            ));
        }
    }
    let mut stack = Array3::zeros((slices.len(), h, w));
    for (i, s) in slices.iter().enumerate() {
        stack.index_axis_mut(ndarray::Axis(0), i).assign(s);
    }
    let id = dir
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .unwrap_or("volume")
        .to_string();
    Ok(Volume {
        id,
        slices: stack,
        native_height: h,
        native_width: w,
    })
}

/// Load a mask PNG stack (0/255 gray) aligned to a volume. Any nonzero pixel
/// counts as label 1.
pub fn load_mask_volume(dir: &Path, volume_id: &str) -> Result<MaskVolume> {
    let vol = load_volume(dir, BitDepth::Eight)?;
    let labels = vol.slices.mapv(|v| if v > 0.0 { 1u8 } else { 0u8 });
    Ok(MaskVolume {
        volume_id: volume_id.to_string(),
        labels,
    })
}

/// Parse the canonical JSON annotation file into validated records.
pub fn load_annotations(path: &Path) -> Result<Vec<BoxAnnotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: Vec<serde_json::Value> = serde_json::from_str(&text)?;
    let mut out = Vec::with_capacity(raw.len());
    for (index, value) in raw.into_iter().enumerate() {
        let ann: BoxAnnotation =
            serde_json::from_value(value).map_err(|e| Error::Annotation {
                index,
                reason: e.to_string(),
            })?;
        if ann.slice_start >= ann.slice_end {
            return Err(Error::Annotation {
                index,
                reason: format!(
                    "slice range [{}, {}) is empty",
                    ann.slice_start, ann.slice_end
                ),
            });
        }
        if ann.w == 0 || ann.h == 0 {
            return Err(Error::Annotation {
                index,
                reason: "degenerate box with zero width or height".into(),
            });
        }
        out.push(ann);
    }
    Ok(out)
}

pub fn save_annotations(path: &Path, annotations: &[BoxAnnotation]) -> Result<()> {
    let text = serde_json::to_string_pretty(annotations)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Fill 1s exactly on pixels inside some box on its slice range. Overlapping
/// boxes merge by logical OR.
pub fn rasterize_boxes(
    volume_id: &str,
    annotations: &[BoxAnnotation],
    shape: (usize, usize, usize),
) -> Result<MaskVolume> {
    let mut labels = Array3::zeros(shape);
    for ann in annotations.iter().filter(|a| a.volume_id == volume_id) {
        ann.check_bounds(shape)?;
        for s in ann.slice_start..ann.slice_end {
            labels
                .slice_mut(ndarray::s![s, ann.y..ann.y + ann.h, ann.x..ann.x + ann.w])
                .fill(1u8);
        }
    }
    Ok(MaskVolume {
        volume_id: volume_id.to_string(),
        labels,
    })
}

/// Deterministic volume-level split: shuffle ids under the seed, then deal
/// the first `n_train` to train, the next `n_val` to val, the rest to test.
pub fn split_dataset(
    ids: &[String],
    counts: (usize, usize, usize),
    seed: u64,
) -> Result<DatasetSplit> {
    let (n_train, n_val, n_test) = counts;
    if n_train + n_val + n_test != ids.len() {
        return Err(Error::Config(format!(
            "split counts {}+{}+{} do not cover {} ids",
            n_train,
            n_val,
            n_test,
            ids.len()
        )));
    }
    let mut shuffled: Vec<String> = ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let train_ids = shuffled[..n_train].to_vec();
    let val_ids = shuffled[n_train..n_train + n_val].to_vec();
    let test_ids = shuffled[n_train + n_val..].to_vec();
    Ok(DatasetSplit {
        train_ids,
        val_ids,
        test_ids,
    })
}

/// List volume ids under a dataset root (directories containing `slices/`).
pub fn list_volume_ids(root: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() && path.join("slices").is_dir() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                ids.push(name.to_string());
            }
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::Config(format!(
            "no volume directories under {}",
            root.display()
        )));
    }
    Ok(ids)
}

/// Load aligned image/mask pairs for the given volume ids. Masks come from
/// `masks/` PNG stacks when present, otherwise from rasterized boxes in
/// `<root>/annotations.json`; missing both is an error.
pub fn load_pairs(
    root: &Path,
    ids: &[String],
    bit_depth: BitDepth,
) -> Result<Vec<(Volume, MaskVolume)>> {
    let ann_path = root.join("annotations.json");
    let annotations = if ann_path.is_file() {
        load_annotations(&ann_path)?
    } else {
        Vec::new()
    };
    let mut pairs = Vec::with_capacity(ids.len());
    let mut missing: Vec<String> = Vec::new();
    for id in ids {
        let vol = load_volume(&root.join(id).join("slices"), bit_depth)?;
        let mask_dir = root.join(id).join("masks");
        let shape = vol.slices.dim();
        let mask = if mask_dir.is_dir() {
            let mask = load_mask_volume(&mask_dir, id)?;
            if mask.labels.dim() != shape {
                return Err(Error::shape(
                    format!("mask stack for volume {id}"),
                    &[shape.0, shape.1, shape.2],
                    &[
                        mask.labels.dim().0,
                        mask.labels.dim().1,
                        mask.labels.dim().2,
                    ],
                ));
            }
            mask
        } else if annotations.iter().any(|a| &a.volume_id == id) {
            rasterize_boxes(id, &annotations, shape)?
        } else {
            missing.push(id.clone());
            continue;
        };
        pairs.push((vol, mask));
    }
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "no masks (PNG stack or boxes) for volumes: {}",
            missing.join(", ")
        )));
    }
    Ok(pairs)
}
