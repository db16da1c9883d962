//! `octseg`: one executable for the whole pipeline — synthetic data
//! generation, training, evaluation, prediction, overlay export, and
//! inference benchmarking. Driven by a JSON config file plus flag overrides
//! (flags win); every run writes the fully resolved config for provenance.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::Array4;
use serde::{Deserialize, Serialize};

use octseg_core::data::{
    generate_synthetic_with_boxes, list_volume_ids, load_mask_volume, load_pairs, load_volume,
    save_annotations, split_dataset, BitDepth, DatasetSplit, MaskVolume, SyntheticSpec, Volume,
};
use octseg_core::eval::{
    benchmark_inference, binarize, evaluate_set, MetricsReport,
};
use octseg_core::loss::{sigmoid, LossConfig};
use octseg_core::model::{Checkpoint, ModelConfig, UNet};
use octseg_core::preprocess::{transform_image, TransformSpec};
use octseg_core::train::{fit, TrainConfig};

#[derive(Parser)]
#[command(
    name = "octseg",
    about = "Binary segmentation of inclusion defects in volumetric OCT scans",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset in the canonical on-disk layout
    Synth(SynthArgs),
    /// Train a model; writes best.ckpt, history.json, resolved-config.json
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split section; writes metrics.json
    Eval(EvalArgs),
    /// Write thresholded prediction PNGs for one volume
    Predict(PredictArgs),
    /// Render mask/prediction overlays as 3-channel PNGs
    Overlay(OverlayArgs),
    /// Time inference over one volume; writes bench.json
    Bench(BenchArgs),
}

/// How the train/val/test partition is obtained.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum SplitSpec {
    /// Path to a split JSON file ({"train": [...], "val": [...], "test": [...]}).
    Path { path: PathBuf },
    /// Deterministic volume-count split computed from the dataset listing.
    Counts {
        train: usize,
        val: usize,
        test: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_loss_id() -> u8 {
    4
}
fn default_bit_depth() -> BitDepth {
    BitDepth::Eight
}

/// Complete description of a run. Serialized as resolved-config.json after
/// every default and flag override has been applied.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunConfig {
    data_root: PathBuf,
    split: SplitSpec,
    #[serde(default)]
    transform: TransformSpec,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default = "default_loss_id")]
    loss_id: u8,
    out_dir: PathBuf,
    #[serde(default = "default_bit_depth")]
    bit_depth: BitDepth,
}

/// Flags shared by config-driven commands. Flags win over the config file.
#[derive(Args, Debug, Clone)]
struct CommonArgs {
    /// JSON run-config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root (volume directories + annotations.json)
    #[arg(long)]
    data_root: Option<PathBuf>,
    /// Split JSON file
    #[arg(long)]
    split: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss preset id 1..5
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=5))]
    loss: Option<u8>,
    /// RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Probability threshold for binarization
    #[arg(long)]
    threshold: Option<f64>,
}

impl CommonArgs {
    /// Load the config file (or start from defaults requiring data_root/out
    /// flags) and apply flag overrides.
    fn resolve(&self) -> Result<RunConfig> {
        let mut config: RunConfig = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => {
                let data_root = self
                    .data_root
                    .clone()
                    .context("either --config or --data-root is required")?;
                let out_dir = self
                    .out
                    .clone()
                    .context("either --config or --out is required")?;
                RunConfig {
                    data_root,
                    split: SplitSpec::Counts {
                        train: 8,
                        val: 2,
                        test: 2,
                        seed: 0,
                    },
                    transform: TransformSpec::default(),
                    model: ModelConfig::default(),
                    train: TrainConfig::default(),
                    loss_id: default_loss_id(),
                    out_dir,
                    bit_depth: default_bit_depth(),
                }
            }
        };
        if let Some(root) = &self.data_root {
            config.data_root = root.clone();
        }
        if let Some(split) = &self.split {
            config.split = SplitSpec::Path { path: split.clone() };
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
        if let Some(loss) = self.loss {
            config.loss_id = loss;
        }
        if let Some(seed) = self.seed {
            config.train.seed = seed;
        }
        if let Some(threshold) = self.threshold {
            config.train.threshold = threshold;
        }
        config.train.loss = LossConfig::preset(config.loss_id)?;
        config.transform.validate()?;
        config.train.validate()?;
        Ok(config)
    }
}

impl RunConfig {
    /// Materialize the split: load it from file or compute it from the
    /// volume listing. The computed form is normalized back into the config
    /// so resolved-config.json carries the exact partition provenance.
    fn resolve_split(&self) -> Result<DatasetSplit> {
        match &self.split {
            SplitSpec::Path { path } => Ok(DatasetSplit::load(path)?),
            SplitSpec::Counts { train, val, test, seed } => {
                let ids = list_volume_ids(&self.data_root)?;
                Ok(split_dataset(&ids, (*train, *val, *test), *seed)?)
            }
        }
    }

    fn write_resolved(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("resolved-config.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output dataset root
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    volumes: usize,
    #[arg(long, default_value_t = 16)]
    slices: usize,
    #[arg(long, default_value_t = 96)]
    height: usize,
    #[arg(long, default_value_t = 192)]
    width: usize,
    /// Blob count per volume: "N" or "MIN-MAX"
    #[arg(long, default_value = "2-4")]
    inclusions: String,
    /// In-plane blob radius range: "R" or "MIN-MAX" (pixels)
    #[arg(long, default_value = "3-7")]
    radius: String,
    /// Blob peak intensity range: "I" or "MIN-MAX"
    #[arg(long, default_value = "0.7-0.95")]
    intensity: String,
    #[arg(long, default_value_t = 0.02)]
    noise: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overwrite into a non-empty output directory
    #[arg(long)]
    force: bool,
}

fn parse_range<T: std::str::FromStr + Copy>(text: &str, what: &str) -> Result<(T, T)>
where
    T::Err: std::fmt::Display,
{
    let parse_one = |s: &str| -> Result<T> {
        s.trim()
            .parse::<T>()
            .map_err(|e| anyhow::anyhow!("bad {what} value {s:?}: {e}"))
    };
    match text.split_once('-') {
        Some((a, b)) => Ok((parse_one(a)?, parse_one(b)?)),
        None => {
            let v = parse_one(text)?;
            Ok((v, v))
        }
    }
}

fn save_gray_png(path: &Path, data: &ndarray::Array2<f32>) -> Result<()> {
    let (h, w) = data.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for ((r, c), &v) in data.indexed_iter() {
        img.put_pixel(c as u32, r as u32, image::Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8]));
    }
    img.save(path)
        .with_context(|| format!("writing {}", path.display()))
}

fn save_mask_png(path: &Path, labels: &ndarray::ArrayView2<'_, u8>) -> Result<()> {
    let (h, w) = labels.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for ((r, c), &v) in labels.indexed_iter() {
        img.put_pixel(c as u32, r as u32, image::Luma([if v != 0 { 255 } else { 0 }]));
    }
    img.save(path)
        .with_context(|| format!("writing {}", path.display()))
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    if args.out.exists() {
        let non_empty = std::fs::read_dir(&args.out)
            .map(|mut d| d.next().is_some())
            .unwrap_or(false);
        if non_empty && !args.force {
            bail!(
                "output directory {} is not empty; pass --force to overwrite into it",
                args.out.display()
            );
        }
    }
    let spec = SyntheticSpec {
        n_volumes: args.volumes,
        slices_per_volume: args.slices,
        height: args.height,
        width: args.width,
        inclusions_per_volume: parse_range(&args.inclusions, "--inclusions")?,
        inclusion_radius: parse_range(&args.radius, "--radius")?,
        inclusion_intensity: parse_range(&args.intensity, "--intensity")?,
        background_noise_std: args.noise,
        seed: args.seed,
    };
    let (pairs, annotations) = generate_synthetic_with_boxes(&spec)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let mut slice_total = 0usize;
    for (vol, mask) in &pairs {
        let slices_dir = args.out.join(&vol.id).join("slices");
        let masks_dir = args.out.join(&vol.id).join("masks");
        std::fs::create_dir_all(&slices_dir)?;
        std::fs::create_dir_all(&masks_dir)?;
        for i in 0..vol.slice_count() {
            let name = format!("{i:04}.png");
            save_gray_png(&slices_dir.join(&name), &vol.slice(i))?;
            save_mask_png(
                &masks_dir.join(&name),
                &mask.labels.index_axis(ndarray::Axis(0), i),
            )?;
            slice_total += 1;
        }
    }
    save_annotations(&args.out.join("annotations.json"), &annotations)?;
    let spec_path = args.out.join("synth-spec.json");
    std::fs::write(&spec_path, serde_json::to_string_pretty(&spec)?)?;
    println!(
        "wrote {} volumes / {} slices / {} annotations to {}",
        pairs.len(),
        slice_total,
        annotations.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Cap on training epochs (overrides the config)
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Run all five loss presets sequentially into per-preset subdirectories
    #[arg(long)]
    train_all: bool,
}

fn run_training(config: &RunConfig) -> Result<(Checkpoint, MetricsReport)> {
    let split = config.resolve_split()?;
    let mut ids: Vec<String> = Vec::new();
    ids.extend_from_slice(&split.train_ids);
    ids.extend_from_slice(&split.val_ids);
    let pairs = load_pairs(&config.data_root, &ids, config.bit_depth)?;
    config.write_resolved(&config.out_dir)?;
    split.save(&config.out_dir.join("split.json"))?;
    let (ckpt, history) = fit(
        &pairs,
        &split,
        &config.transform,
        &config.model,
        &config.train,
        &config.out_dir,
    )?;
    for record in &history {
        println!(
            "epoch {:>3}: train_loss {:.4}  val_loss {:.4}  dsc {:.4}  precision {:.4}  recall {:.4}  ({:.1}s)",
            record.epoch,
            record.train_loss,
            record.val_loss,
            record.dsc,
            record.precision,
            record.recall,
            record.seconds
        );
    }
    println!(
        "best epoch {} (val_loss {:.4}); checkpoint at {}",
        ckpt.epoch,
        ckpt.val_loss,
        config.out_dir.join("best.ckpt").display()
    );
    // summary metrics on the validation split for the combined table
    let val_pairs = load_pairs(&config.data_root, &split.val_ids, config.bit_depth)?;
    let report = evaluate_set(
        &ckpt.model,
        &val_pairs,
        &config.transform,
        config.train.threshold,
        config.loss_id,
        Some(config.out_dir.join("best.ckpt").display().to_string()),
    )?;
    Ok((ckpt, report))
}

fn print_table_header() {
    println!("| Loss | DSC    | Precision | Recall | s/slice |");
    println!("|------|--------|-----------|--------|---------|");
}

fn print_table_row(report: &MetricsReport) {
    let mean_sps = report
        .per_volume
        .iter()
        .map(|m| m.seconds_per_slice)
        .sum::<f64>()
        / report.per_volume.len() as f64;
    println!(
        "| {}    | {:.4} | {:.4}    | {:.4} | {:.4}  |",
        report.loss_config_id,
        report.mean_dsc,
        report.mean_precision,
        report.mean_recall,
        mean_sps
    );
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = args.common.resolve()?;
    if let Some(max_epochs) = args.max_epochs {
        config.train.max_epochs = max_epochs;
    }
    if args.train_all {
        let base_out = config.out_dir.clone();
        let mut reports = Vec::new();
        for id in 1u8..=5 {
            let mut run = config.clone();
            run.loss_id = id;
            run.train.loss = LossConfig::preset(id)?;
            run.out_dir = base_out.join(format!("preset-{id}"));
            println!("=== training loss preset {id} ===");
            let (_, report) = run_training(&run)?;
            reports.push(report);
        }
        println!("=== validation summary over presets ===");
        print_table_header();
        for report in &reports {
            print_table_row(report);
        }
    } else {
        run_training(&config)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint to evaluate (defaults to <out>/best.ckpt)
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Split section to evaluate: train | val | test
    #[arg(long, default_value = "test")]
    section: String,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let config = args.common.resolve()?;
    let weights = args
        .weights
        .unwrap_or_else(|| config.out_dir.join("best.ckpt"));
    let ckpt = Checkpoint::load(&weights)?;
    let split = config.resolve_split()?;
    let ids = split.section(&args.section)?;
    let pairs = load_pairs(&config.data_root, ids, config.bit_depth)?;
    let report = evaluate_set(
        &ckpt.model,
        &pairs,
        &config.transform,
        config.train.threshold,
        ckpt.loss_config_id,
        Some(weights.display().to_string()),
    )?;
    std::fs::create_dir_all(&config.out_dir)?;
    let metrics_path = config.out_dir.join("metrics.json");
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&report)?)?;
    print_table_header();
    print_table_row(&report);
    println!("wrote {}", metrics_path.display());
    Ok(())
}

#[derive(Args, Debug)]
struct PredictArgs {
    /// Trained checkpoint
    #[arg(long)]
    weights: PathBuf,
    /// Directory of slice PNGs (a volume's slices/ directory)
    #[arg(long)]
    volume_dir: PathBuf,
    /// Output directory for prediction PNGs
    #[arg(long)]
    out: PathBuf,
    /// Optional run config supplying the transform
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = BitDepthArg::Eight)]
    bit_depth: BitDepthArg,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum BitDepthArg {
    #[value(name = "8")]
    Eight,
    #[value(name = "16")]
    Sixteen,
}

impl From<BitDepthArg> for BitDepth {
    fn from(b: BitDepthArg) -> Self {
        match b {
            BitDepthArg::Eight => BitDepth::Eight,
            BitDepthArg::Sixteen => BitDepth::Sixteen,
        }
    }
}

/// Pick the geometric transform for ad-hoc inference: explicit config wins;
/// otherwise use the identity when the native dims already satisfy the
/// divisibility contract, else the default pad/crop recipe.
fn transform_for(config: &Option<PathBuf>, volume: &Volume, divisor: usize) -> Result<TransformSpec> {
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let run: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        return Ok(run.transform);
    }
    if volume.native_height % divisor == 0 && volume.native_width % divisor == 0 {
        Ok(TransformSpec::identity_for(
            volume.native_height,
            volume.native_width,
        ))
    } else {
        Ok(TransformSpec::default())
    }
}

fn predict_volume(
    model: &UNet<f32>,
    volume: &Volume,
    transform: &TransformSpec,
    threshold: f64,
) -> Result<Vec<ndarray::Array2<u8>>> {
    let (oh, ow) = transform.output_shape();
    let mut out = Vec::with_capacity(volume.slice_count());
    for i in 0..volume.slice_count() {
        let timage = transform_image(&volume.slice(i), transform)?;
        let mut input = Array4::<f32>::zeros((1, 1, oh, ow));
        input
            .index_axis_mut(ndarray::Axis(0), 0)
            .index_axis_mut(ndarray::Axis(0), 0)
            .assign(&timage);
        let logits = model.forward(&input)?;
        let pred = binarize(&logits.mapv(sigmoid), threshold)?;
        out.push(
            pred.index_axis(ndarray::Axis(0), 0)
                .index_axis(ndarray::Axis(0), 0)
                .to_owned(),
        );
    }
    Ok(out)
}

fn sorted_slice_names(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<(u64, String)> = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .context("non-UTF8 filename")?
                .to_string();
            let stem: u64 = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse().ok())
                .with_context(|| format!("non-numeric slice name {}", path.display()))?;
            names.push((stem, name));
        }
    }
    names.sort();
    Ok(names.into_iter().map(|(_, n)| n).collect())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.weights)?;
    let volume = load_volume(&args.volume_dir, args.bit_depth.into())?;
    let divisor = ckpt.model.config.spatial_divisor();
    let transform = transform_for(&args.config, &volume, divisor)?;
    let preds = predict_volume(&ckpt.model, &volume, &transform, args.threshold)?;
    std::fs::create_dir_all(&args.out)?;
    let names = sorted_slice_names(&args.volume_dir)?;
    anyhow::ensure!(
        names.len() == preds.len(),
        "slice count mismatch between input listing and predictions"
    );
    for (name, pred) in names.iter().zip(&preds) {
        save_mask_png(&args.out.join(name), &pred.view())?;
    }
    println!(
        "wrote {} prediction slices to {}",
        preds.len(),
        args.out.display()
    );
    Ok(())
}

#[derive(Args, Debug)]
struct OverlayArgs {
    /// Directory of grayscale slice PNGs
    #[arg(long)]
    volume_dir: PathBuf,
    /// Directory of mask/prediction PNGs aligned to the volume
    #[arg(long)]
    mask_dir: PathBuf,
    /// Optional ground-truth mask directory for a side-by-side panel
    #[arg(long)]
    gt_dir: Option<PathBuf>,
    /// Output directory for overlay PNGs
    #[arg(long)]
    out: PathBuf,
}

/// Paint `mask` pixels red on a grayscale slice; untouched pixels stay the
/// exact grayscale value in all three channels.
fn overlay_panel(
    image: &ndarray::Array2<f32>,
    mask: &MaskVolume,
    slice_idx: usize,
    color: [u8; 3],
) -> image::RgbImage {
    let (h, w) = image.dim();
    let labels = mask.labels.index_axis(ndarray::Axis(0), slice_idx);
    let mut out = image::RgbImage::new(w as u32, h as u32);
    for ((r, c), &v) in image.indexed_iter() {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let px = if labels[[r, c]] != 0 { color } else { [g, g, g] };
        out.put_pixel(c as u32, r as u32, image::Rgb(px));
    }
    out
}

fn cmd_overlay(args: OverlayArgs) -> Result<()> {
    let volume = load_volume(&args.volume_dir, BitDepth::Eight)?;
    let mask = load_mask_volume(&args.mask_dir, &volume.id)?;
    anyhow::ensure!(
        mask.labels.dim() == volume.slices.dim(),
        "mask stack {:?} does not match volume {:?}",
        mask.labels.dim(),
        volume.slices.dim()
    );
    let gt = match &args.gt_dir {
        Some(dir) => {
            let gt = load_mask_volume(dir, &volume.id)?;
            anyhow::ensure!(
                gt.labels.dim() == volume.slices.dim(),
                "ground-truth stack {:?} does not match volume {:?}",
                gt.labels.dim(),
                volume.slices.dim()
            );
            Some(gt)
        }
        None => None,
    };
    std::fs::create_dir_all(&args.out)?;
    let names = sorted_slice_names(&args.volume_dir)?;
    for (i, name) in names.iter().enumerate() {
        let slice = volume.slice(i);
        let pred_panel = overlay_panel(&slice, &mask, i, [255, 64, 64]);
        let combined = match &gt {
            Some(gt) => {
                let gt_panel = overlay_panel(&slice, gt, i, [64, 255, 64]);
                let (w, h) = (pred_panel.width(), pred_panel.height());
                let mut both = image::RgbImage::new(w * 2, h);
                image::imageops::replace(&mut both, &gt_panel, 0, 0);
                image::imageops::replace(&mut both, &pred_panel, w as i64, 0);
                both
            }
            None => pred_panel,
        };
        combined
            .save(args.out.join(name))
            .with_context(|| format!("writing overlay {name}"))?;
    }
    println!("wrote {} overlays to {}", names.len(), args.out.display());
    Ok(())
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Trained checkpoint
    #[arg(long)]
    weights: PathBuf,
    /// Directory of slice PNGs to benchmark on
    #[arg(long)]
    volume_dir: PathBuf,
    /// Output directory for bench.json
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Optional run config supplying the transform
    #[arg(long)]
    config: Option<PathBuf>,
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.weights)?;
    let volume = load_volume(&args.volume_dir, BitDepth::Eight)?;
    let transform = transform_for(&args.config, &volume, ckpt.model.config.spatial_divisor())?;
    let report = benchmark_inference(&ckpt.model, &volume, &transform, args.threshold, args.repeats)?;
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("bench.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    println!(
        "volume {} ({} slices, {} repeats) on {}",
        report.volume_id, report.slice_count, report.repeats.len(), report.host
    );
    println!(
        "seconds/slice: min {:.5}  mean {:.5}  max {:.5}",
        report.min_seconds_per_slice, report.mean_seconds_per_slice, report.max_seconds_per_slice
    );
    println!(
        "mean seconds/volume: {:.3}",
        report
            .repeats
            .iter()
            .map(|s| s.seconds_total)
            .sum::<f64>()
            / report.repeats.len() as f64
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Overlay(args) => cmd_overlay(args),
        Command::Bench(args) => cmd_bench(args),
    }
}
