//! Thresholded inference metrics: per-volume pooled confusion counts,
//! DSC/Precision/Recall with explicit degenerate-case conventions, macro
//! means over volumes, and a wall-clock inference benchmark.

use std::time::Instant;

use ndarray::{Array, Array4, Dimension};
use serde::{Deserialize, Serialize};

use crate::data::{MaskVolume, Volume};
use crate::error::{Error, Result};
use crate::loss::sigmoid;
use crate::model::layers::{scalar, Scalar};
use crate::model::UNet;
use crate::preprocess::{apply_transform, TransformSpec};

/// Binarize probabilities with the strictly-greater rule: 1 where p > tau.
pub fn binarize<F: Scalar, D: Dimension>(probs: &Array<F, D>, tau: f64) -> Result<Array<u8, D>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!(
            "threshold must lie in [0,1], got {tau}"
        )));
    }
    let t = scalar::<F>(tau);
    Ok(probs.mapv(|p| u8::from(p > t)))
}

/// Pixel-level confusion counts pooled over whatever region they were
/// accumulated from (slice, volume, or split).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }
}

/// Count agreement between a binary prediction and binary ground truth of
/// identical shape.
pub fn confusion_counts<D: Dimension>(
    pred: &Array<u8, D>,
    gt: &Array<u8, D>,
) -> Result<ConfusionCounts> {
    if pred.shape() != gt.shape() {
        return Err(Error::shape(
            "confusion_counts",
            gt.shape(),
            pred.shape(),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        match (p != 0, g != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// (DSC, precision, recall) from pooled counts.
///
/// Conventions: if both prediction and ground truth are empty
/// (tp = fp = fn = 0) all three metrics are 1.0; precision is 0 when tp = 0
/// and fp > 0; recall is 0 when tp = 0 and fn > 0.
pub fn metrics_from_counts(c: &ConfusionCounts) -> (f64, f64, f64) {
    if c.tp == 0 && c.fp == 0 && c.fn_ == 0 {
        return (1.0, 1.0, 1.0);
    }
    let tp = c.tp as f64;
    let fp = c.fp as f64;
    let fn_ = c.fn_ as f64;
    let dsc = 2.0 * tp / (2.0 * tp + fp + fn_);
    let precision = if c.tp + c.fp == 0 { 1.0 } else { tp / (tp + fp) };
    let recall = if c.tp + c.fn_ == 0 { 1.0 } else { tp / (tp + fn_) };
    (dsc, precision, recall)
}

/// Per-volume evaluation row, serialized into `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeMetrics {
    pub volume_id: String,
    pub dsc: f64,
    pub precision: f64,
    pub recall: f64,
    pub slice_count: usize,
    pub seconds_total: f64,
    pub seconds_per_slice: f64,
}

/// Aggregate evaluation report (`metrics.json` schema).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub loss_config_id: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub per_volume: Vec<VolumeMetrics>,
    pub mean_dsc: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
}

/// Run the model slice by slice over one volume, pooling confusion counts
/// across all transformed slices. Timing covers preprocessing, the forward
/// pass, and thresholding for every slice.
pub fn evaluate_volume(
    model: &UNet<f32>,
    volume: &Volume,
    mask: &MaskVolume,
    transform: &TransformSpec,
    tau: f64,
) -> Result<VolumeMetrics> {
    if volume.slice_count() == 0 {
        return Err(Error::Config(format!(
            "volume {} has no slices",
            volume.id
        )));
    }
    if mask.labels.dim() != volume.slices.dim() {
        return Err(Error::shape(
            "evaluate_volume mask",
            &[volume.slices.dim().0, volume.slices.dim().1, volume.slices.dim().2],
            &[mask.labels.dim().0, mask.labels.dim().1, mask.labels.dim().2],
        ));
    }
    let n = volume.slice_count();
    let (oh, ow) = transform.output_shape();
    let mut counts = ConfusionCounts::default();
    let started = Instant::now();
    for i in 0..n {
        let image = volume.slice(i).to_owned();
        let gt = mask.slice(i);
        let (timage, tmask) = apply_transform(&image, &gt, transform)?;
        let mut input = Array4::<f32>::zeros((1, 1, oh, ow));
        input.index_axis_mut(ndarray::Axis(0), 0)
            .index_axis_mut(ndarray::Axis(0), 0)
            .assign(&timage);
        let logits = model.forward(&input)?;
        let probs = logits.mapv(sigmoid);
        let pred = binarize(&probs, tau)?;
        let pred2 = pred
            .index_axis(ndarray::Axis(0), 0)
            .index_axis(ndarray::Axis(0), 0)
            .to_owned();
        let gt2 = tmask.mapv(|v| v as u8);
        counts.merge(&confusion_counts(&pred2, &gt2)?);
    }
    let seconds_total = started.elapsed().as_secs_f64();
    let (dsc, precision, recall) = metrics_from_counts(&counts);
    Ok(VolumeMetrics {
        volume_id: volume.id.clone(),
        dsc,
        precision,
        recall,
        slice_count: n,
        seconds_total,
        seconds_per_slice: seconds_total / n as f64,
    })
}

/// Evaluate a set of volumes; aggregate metrics are unweighted macro means
/// over per-volume values.
pub fn evaluate_set(
    model: &UNet<f32>,
    pairs: &[(Volume, MaskVolume)],
    transform: &TransformSpec,
    tau: f64,
    loss_config_id: u8,
    checkpoint: Option<String>,
) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let mut per_volume = Vec::with_capacity(pairs.len());
    for (vol, mask) in pairs {
        per_volume.push(evaluate_volume(model, vol, mask, transform, tau)?);
    }
    let n = per_volume.len() as f64;
    let mean = |f: fn(&VolumeMetrics) -> f64| per_volume.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        loss_config_id,
        checkpoint,
        mean_dsc: mean(|m| m.dsc),
        mean_precision: mean(|m| m.precision),
        mean_recall: mean(|m| m.recall),
        per_volume,
    })
}

/// One timed benchmark pass over a volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSample {
    pub seconds_total: f64,
    pub seconds_per_slice: f64,
}

/// Benchmark report (`bench.json` schema): per-repeat timings plus
/// min/mean/max of per-slice seconds and a host descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub volume_id: String,
    pub slice_count: usize,
    pub repeats: Vec<BenchSample>,
    pub min_seconds_per_slice: f64,
    pub mean_seconds_per_slice: f64,
    pub max_seconds_per_slice: f64,
    pub host: String,
}

pub fn host_descriptor() -> String {
    format!(
        "{} {} ({} threads)",
        std::env::consts::OS,
        std::env::consts::ARCH,
        rayon::current_num_threads()
    )
}

fn timed_pass(
    model: &UNet<f32>,
    volume: &Volume,
    transform: &TransformSpec,
    tau: f64,
) -> Result<f64> {
    let (oh, ow) = transform.output_shape();
    let started = Instant::now();
    for i in 0..volume.slice_count() {
        let image = volume.slice(i).to_owned();
        let timage = crate::preprocess::transform_image(&image, transform)?;
        let mut input = Array4::<f32>::zeros((1, 1, oh, ow));
        input.index_axis_mut(ndarray::Axis(0), 0)
            .index_axis_mut(ndarray::Axis(0), 0)
            .assign(&timage);
        let logits = model.forward(&input)?;
        let probs = logits.mapv(sigmoid);
        let _pred = binarize(&probs, tau)?;
    }
    Ok(started.elapsed().as_secs_f64())
}

/// Timed inference over a full volume: one untimed warm-up pass, then
/// `repeats` timed passes. Each pass covers preprocessing, forward pass, and
/// thresholding for every slice.
pub fn benchmark_inference(
    model: &UNet<f32>,
    volume: &Volume,
    transform: &TransformSpec,
    tau: f64,
    repeats: usize,
) -> Result<BenchReport> {
    if repeats == 0 {
        return Err(Error::Config("benchmark repeats must be >= 1".into()));
    }
    if volume.slice_count() == 0 {
        return Err(Error::Config(format!(
            "volume {} has no slices",
            volume.id
        )));
    }
    let n = volume.slice_count();
    timed_pass(model, volume, transform, tau)?; // warm-up, discarded
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let total = timed_pass(model, volume, transform, tau)?;
        samples.push(BenchSample {
            seconds_total: total,
            seconds_per_slice: total / n as f64,
        });
    }
    let per_slice: Vec<f64> = samples.iter().map(|s| s.seconds_per_slice).collect();
    let min = per_slice.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = per_slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = per_slice.iter().sum::<f64>() / per_slice.len() as f64;
    Ok(BenchReport {
        volume_id: volume.id.clone(),
        slice_count: n,
        repeats: samples,
        min_seconds_per_slice: min,
        mean_seconds_per_slice: mean,
        max_seconds_per_slice: max,
        host: host_descriptor(),
    })
}
