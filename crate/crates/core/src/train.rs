//! Optimization loop: Adam with bias correction, per-epoch validation,
//! strict-improvement checkpointing and early stopping.

use std::path::Path;
use std::time::Instant;

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD};
use serde::{Deserialize, Serialize};

use crate::data::{iterate_batches, MaskVolume, Volume};
use crate::error::{Error, Result};
use crate::eval::{binarize, confusion_counts, metrics_from_counts, ConfusionCounts};
use crate::loss::{combined_loss, combined_loss_with_grad, sigmoid, LossConfig};
use crate::model::layers::{scalar, Scalar};
use crate::model::{Checkpoint, ModelConfig, UNet, UNetGrads};
use crate::preprocess::TransformSpec;
use crate::data::DatasetSplit;

fn default_batch_size() -> usize {
    16
}
fn default_learning_rate() -> f64 {
    0.001
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_patience() -> usize {
    15
}
fn default_max_epochs() -> usize {
    100
}
fn default_threshold() -> f64 {
    0.5
}

/// Fixed training hyperparameters: batch 16, lr 0.001, Adam, early stopping
/// patience 15, checkpoint on validation loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    pub loss: LossConfig,
    #[serde(default)]
    pub seed: u64,
    /// Probability threshold consumed by validation metrics.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl Default for TrainConfig {
    /// Defaults to the combined-loss preset 4 (0.7 BCE + 0.3 Dice).
    fn default() -> Self {
        TrainConfig::with_loss(LossConfig::preset(4).expect("preset 4 exists"))
    }
}

impl TrainConfig {
    pub fn with_loss(loss: LossConfig) -> Self {
        TrainConfig {
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            patience: default_patience(),
            max_epochs: default_max_epochs(),
            loss,
            seed: 0,
            threshold: default_threshold(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::Config("learning_rate must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0,1)".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must lie in [0,1]".into()));
        }
        Ok(())
    }
}

/// One line of `history.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub dsc: f64,
    pub precision: f64,
    pub recall: f64,
    pub seconds: f64,
}

/// Model plus optimizer moments and early-stopping bookkeeping. One
/// optimization thread owns this; validation never mutates it.
pub struct TrainState {
    pub model: UNet<f32>,
    adam_m: Vec<ArrayD<f32>>,
    adam_v: Vec<ArrayD<f32>>,
    pub step: u64,
    pub epoch: usize,
    pub best_val_loss: f64,
    pub epochs_since_improve: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn new(model: UNet<f32>) -> Self {
        let (m, v): (Vec<ArrayD<f32>>, Vec<ArrayD<f32>>) = {
            let params = model.named_params();
            params
                .iter()
                .map(|(_, p)| {
                    (
                        ArrayD::zeros(p.raw_dim()),
                        ArrayD::zeros(p.raw_dim()),
                    )
                })
                .unzip()
        };
        TrainState {
            model,
            adam_m: m,
            adam_v: v,
            step: 0,
            epoch: 0,
            best_val_loss: f64::INFINITY,
            epochs_since_improve: 0,
            history: Vec::new(),
        }
    }
}

/// Adam parameters shared by the scalar-generic step.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl From<&TrainConfig> for AdamParams {
    fn from(c: &TrainConfig) -> Self {
        AdamParams {
            learning_rate: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.adam_eps,
        }
    }
}

/// One bias-corrected Adam step over a flat list of parameter views.
/// `step` is the 1-based step count after this update.
pub fn adam_step<F: Scalar>(
    params: &mut [ArrayViewMutD<'_, F>],
    grads: &[ArrayViewD<'_, F>],
    m: &mut [ArrayD<F>],
    v: &mut [ArrayD<F>],
    step: u64,
    cfg: &AdamParams,
) {
    let b1 = scalar::<F>(cfg.beta1);
    let b2 = scalar::<F>(cfg.beta2);
    let lr = scalar::<F>(cfg.learning_rate);
    let eps = scalar::<F>(cfg.eps);
    let one = F::one();
    let bc1 = one - scalar::<F>(cfg.beta1.powi(step as i32));
    let bc2 = one - scalar::<F>(cfg.beta2.powi(step as i32));
    for (((p, g), mi), vi) in params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
        ndarray::Zip::from(p)
            .and(g)
            .and(mi)
            .and(vi)
            .for_each(|theta, &grad, m_e, v_e| {
                *m_e = b1 * *m_e + (one - b1) * grad;
                *v_e = b2 * *v_e + (one - b2) * grad * grad;
                let m_hat = *m_e / bc1;
                let v_hat = *v_e / bc2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
}

/// Apply one Adam update to the training state. Non-finite gradients abort
/// with the offending layer group and step.
pub fn adam_update(state: &mut TrainState, grads: &UNetGrads<f32>, config: &TrainConfig) -> Result<()> {
    if let Err(layer) = grads.all_finite() {
        return Err(Error::NonFiniteGradient {
            layer,
            step: state.step + 1,
        });
    }
    state.step += 1;
    let flat = grads.flatten();
    let mut params = state.model.params_mut();
    adam_step(
        &mut params,
        &flat,
        &mut state.adam_m,
        &mut state.adam_v,
        state.step,
        &config.into(),
    );
    Ok(())
}

/// One pass over the training slices: forward, loss, backward, Adam per
/// batch. Returns the mean of the recorded per-batch losses.
pub fn train_epoch(
    state: &mut TrainState,
    pairs: &[(Volume, MaskVolume)],
    transform: &TransformSpec,
    config: &TrainConfig,
    epoch_seed: u64,
) -> Result<f64> {
    let batches = iterate_batches(pairs, transform, config.batch_size, true, epoch_seed)?;
    let mut losses: Vec<f64> = Vec::new();
    for batch in batches {
        let batch = batch?;
        let (logits, trace) = state.model.forward_train(&batch.images)?;
        let (loss, dlogits) = combined_loss_with_grad(&config.loss, &logits, &batch.masks)?;
        let grads = state.model.backward(&trace, &dlogits);
        adam_update(state, &grads, config)?;
        losses.push(loss as f64);
    }
    if losses.is_empty() {
        return Err(Error::Config("training set has no slices".into()));
    }
    state.epoch += 1;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Validation metrics: slice-weighted mean loss plus thresholded
/// DSC/Precision/Recall pooled over all validation pixels. Runs the model in
/// evaluation mode and mutates nothing.
pub fn validate(
    model: &UNet<f32>,
    pairs: &[(Volume, MaskVolume)],
    transform: &TransformSpec,
    config: &TrainConfig,
) -> Result<(f64, (f64, f64, f64))> {
    if pairs.is_empty() || pairs.iter().all(|(v, _)| v.slice_count() == 0) {
        return Err(Error::Config("validation set is empty".into()));
    }
    let batches = iterate_batches(pairs, transform, config.batch_size, false, 0)?;
    let mut loss_sum = 0.0f64;
    let mut n_slices = 0usize;
    let mut counts = ConfusionCounts::default();
    for batch in batches {
        let batch = batch?;
        let b = batch.images.dim().0;
        let logits = model.forward(&batch.images)?;
        let loss = combined_loss(&config.loss, &logits, &batch.masks)?;
        loss_sum += loss as f64 * b as f64;
        n_slices += b;
        let probs = logits.mapv(sigmoid);
        let pred = binarize(&probs, config.threshold)?;
        let gt = batch.masks.mapv(|v| v as u8);
        counts.merge(&confusion_counts(&pred, &gt)?);
    }
    let (dsc, precision, recall) = metrics_from_counts(&counts);
    Ok((loss_sum / n_slices as f64, (dsc, precision, recall)))
}

/// Full training run: per-epoch train + validate, checkpoint on strict
/// validation-loss improvement, early stop after `patience` epochs without
/// improvement. Returns the best checkpoint and the history.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    pairs: &[(Volume, MaskVolume)],
    split: &DatasetSplit,
    transform: &TransformSpec,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    out_dir: &Path,
) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    train_config.validate()?;
    let select = |ids: &[String]| -> Vec<(Volume, MaskVolume)> {
        pairs
            .iter()
            .filter(|(v, _)| ids.contains(&v.id))
            .cloned()
            .collect()
    };
    let train_pairs = select(&split.train_ids);
    let val_pairs = select(&split.val_ids);
    if train_pairs.is_empty() {
        return Err(Error::Config("train split matches no volumes".into()));
    }
    if val_pairs.is_empty() {
        return Err(Error::Config("val split matches no volumes".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let model = UNet::<f32>::init(model_config, train_config.seed)?;
    let mut state = TrainState::new(model);
    let ckpt_path = out_dir.join("best.ckpt");
    let history_path = out_dir.join("history.json");
    let mut best_model: Option<UNet<f32>> = None;
    let mut best_meta = (0usize, f64::INFINITY);

    for epoch in 1..=train_config.max_epochs {
        let started = Instant::now();
        let epoch_seed = train_config.seed.wrapping_add(epoch as u64);
        let train_loss = train_epoch(&mut state, &train_pairs, transform, train_config, epoch_seed)?;
        let (val_loss, (dsc, precision, recall)) =
            validate(&state.model, &val_pairs, transform, train_config)?;
        state.history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            dsc,
            precision,
            recall,
            seconds: started.elapsed().as_secs_f64(),
        });
        write_history(&history_path, &state.history)?;

        if val_loss < state.best_val_loss {
            state.best_val_loss = val_loss;
            state.epochs_since_improve = 0;
            best_model = Some(state.model.clone());
            best_meta = (epoch, val_loss);
            Checkpoint {
                model: state.model.clone(),
                epoch,
                val_loss,
                loss_config_id: train_config.loss.id,
                seed: train_config.seed,
            }
            .save(&ckpt_path)?;
        } else {
            state.epochs_since_improve += 1;
        }
        if state.epochs_since_improve >= train_config.patience {
            break;
        }
    }

    let model = best_model.expect("at least one epoch ran");
    Ok((
        Checkpoint {
            model,
            epoch: best_meta.0,
            val_loss: best_meta.1,
            loss_config_id: train_config.loss.id,
            seed: train_config.seed,
        },
        state.history,
    ))
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(history)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::{ArrayD, IxDyn};

    fn adam_params() -> AdamParams {
        AdamParams {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Hand-coded scalar Adam oracle.
    struct ScalarAdam {
        m: f64,
        v: f64,
        t: u64,
    }

    impl ScalarAdam {
        fn step(&mut self, theta: f64, g: f64, cfg: &AdamParams) -> f64 {
            self.t += 1;
            self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * g;
            self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m / (1.0 - cfg.beta1.powi(self.t as i32));
            let v_hat = self.v / (1.0 - cfg.beta2.powi(self.t as i32));
            theta - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps)
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters_unchanged() {
        let mut theta = ArrayD::from_elem(IxDyn(&[3]), 1.5f64);
        let grad = ArrayD::zeros(IxDyn(&[3]));
        let mut m = vec![ArrayD::zeros(IxDyn(&[3]))];
        let mut v = vec![ArrayD::zeros(IxDyn(&[3]))];
        let before = theta.clone();
        adam_step(
            &mut [theta.view_mut()],
            &[grad.view()],
            &mut m,
            &mut v,
            1,
            &adam_params(),
        );
        assert_eq!(theta, before);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // single scalar, g = 1 at step 1: update = lr * 1/(1 + eps)
        let cfg = adam_params();
        let mut theta = ArrayD::from_elem(IxDyn(&[1]), 0.0f64);
        let grad = ArrayD::from_elem(IxDyn(&[1]), 1.0f64);
        let mut m = vec![ArrayD::zeros(IxDyn(&[1]))];
        let mut v = vec![ArrayD::zeros(IxDyn(&[1]))];
        adam_step(&mut [theta.view_mut()], &[grad.view()], &mut m, &mut v, 1, &cfg);
        assert_abs_diff_eq!(theta[[0]], -cfg.learning_rate / (1.0 + cfg.eps), epsilon = 1e-12);
    }

    #[test]
    fn adam_matches_scalar_oracle_on_quadratic() {
        // minimize f(x) = (x - 3)^2 / 2, g = x - 3
        let cfg = adam_params();
        let mut theta = ArrayD::from_elem(IxDyn(&[1]), 10.0f64);
        let mut m = vec![ArrayD::zeros(IxDyn(&[1]))];
        let mut v = vec![ArrayD::zeros(IxDyn(&[1]))];
        let mut oracle = ScalarAdam { m: 0.0, v: 0.0, t: 0 };
        let mut x = 10.0f64;
        for t in 1..=10u64 {
            let g_arr = ArrayD::from_elem(IxDyn(&[1]), theta[[0]] - 3.0);
            adam_step(&mut [theta.view_mut()], &[g_arr.view()], &mut m, &mut v, t, &cfg);
            x = oracle.step(x, x - 3.0, &cfg);
            assert_abs_diff_eq!(theta[[0]], x, epsilon = 1e-10);
        }
    }

    fn tiny_setup() -> (Vec<(Volume, MaskVolume)>, TransformSpec, TrainConfig) {
        let spec = SyntheticSpec {
            n_volumes: 2,
            slices_per_volume: 4,
            height: 32,
            width: 32,
            inclusions_per_volume: (1, 2),
            inclusion_radius: (3.0, 5.0),
            inclusion_intensity: (0.7, 0.9),
            background_noise_std: 0.0,
            seed: 3,
        };
        let pairs = generate_synthetic(&spec).unwrap();
        let transform = TransformSpec::identity_for(32, 32);
        let config = TrainConfig {
            batch_size: 4,
            max_epochs: 2,
            ..TrainConfig::with_loss(LossConfig::preset(4).unwrap())
        };
        (pairs, transform, config)
    }

    #[test]
    fn zero_learning_rate_keeps_parameters_and_losses_constant() {
        let (pairs, transform, mut config) = tiny_setup();
        config.learning_rate = 0.0;
        let model = UNet::<f32>::init(&ModelConfig::tiny(2, 2), 1).unwrap();
        let mut state = TrainState::new(model);
        let before: Vec<ArrayD<f32>> = state
            .model
            .named_params()
            .iter()
            .map(|(_, p)| p.to_owned())
            .collect();
        let l1 = train_epoch(&mut state, &pairs, &transform, &config, 7).unwrap();
        let l2 = train_epoch(&mut state, &pairs, &transform, &config, 7).unwrap();
        for ((_, after), b) in state.model.named_params().iter().zip(before.iter()) {
            assert_eq!(&after.to_owned(), b);
        }
        assert_abs_diff_eq!(l1, l2, epsilon = 1e-12);
    }

    #[test]
    fn mean_loss_is_arithmetic_mean_of_batch_losses() {
        // bookkeeping check: one batch per epoch makes mean == batch loss;
        // two batches make it the average, reproduced via a fresh clone
        let (pairs, transform, config) = tiny_setup();
        let model = UNet::<f32>::init(&ModelConfig::tiny(2, 2), 1).unwrap();
        let mut state = TrainState::new(model.clone());
        let mean = train_epoch(&mut state, &pairs, &transform, &config, 11).unwrap();

        // replay the same epoch manually on a fresh state
        let mut replay = TrainState::new(model);
        let mut batch_losses = Vec::new();
        for batch in iterate_batches(&pairs, &transform, config.batch_size, true, 11).unwrap() {
            let batch = batch.unwrap();
            let (logits, trace) = replay.model.forward_train(&batch.images).unwrap();
            let (loss, dlogits) =
                combined_loss_with_grad(&config.loss, &logits, &batch.masks).unwrap();
            let grads = replay.model.backward(&trace, &dlogits);
            adam_update(&mut replay, &grads, &config).unwrap();
            batch_losses.push(loss as f64);
        }
        let expected = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
        assert_abs_diff_eq!(mean, expected, epsilon = 1e-12);
    }

    #[test]
    fn validate_is_pure_and_repeatable() {
        let (pairs, transform, config) = tiny_setup();
        let model = UNet::<f32>::init(&ModelConfig::tiny(2, 2), 2).unwrap();
        let state_before: Vec<ArrayD<f32>> = model
            .named_state()
            .iter()
            .map(|(_, p)| p.to_owned())
            .collect();
        let a = validate(&model, &pairs, &transform, &config).unwrap();
        let b = validate(&model, &pairs, &transform, &config).unwrap();
        assert_eq!(a, b);
        for ((_, after), before) in model.named_state().iter().zip(state_before.iter()) {
            assert_eq!(&after.to_owned(), before);
        }
    }

    #[test]
    fn validate_empty_set_is_config_error() {
        let (_, transform, config) = tiny_setup();
        let model = UNet::<f32>::init(&ModelConfig::tiny(2, 2), 2).unwrap();
        let empty: Vec<(Volume, MaskVolume)> = Vec::new();
        assert!(validate(&model, &empty, &transform, &config).is_err());
    }

    #[test]
    fn fit_max_epochs_one_runs_exactly_one_epoch() {
        let (pairs, transform, mut config) = tiny_setup();
        config.max_epochs = 1;
        let split = DatasetSplit {
            train_ids: vec!["vol000".into()],
            val_ids: vec!["vol001".into()],
            test_ids: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let (ckpt, history) = fit(
            &pairs,
            &split,
            &transform,
            &ModelConfig::tiny(2, 2),
            &config,
            dir.path(),
        )
        .unwrap();
        assert_eq!(history.len(), 1);
        assert_eq!(ckpt.epoch, 1);
        assert!(dir.path().join("best.ckpt").is_file());
        assert!(dir.path().join("history.json").is_file());
    }

    #[test]
    fn fit_best_checkpoint_val_loss_is_min_of_history() {
        let (pairs, transform, mut config) = tiny_setup();
        config.max_epochs = 4;
        let split = DatasetSplit {
            train_ids: vec!["vol000".into()],
            val_ids: vec!["vol001".into()],
            test_ids: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let (ckpt, history) = fit(
            &pairs,
            &split,
            &transform,
            &ModelConfig::tiny(2, 2),
            &config,
            dir.path(),
        )
        .unwrap();
        let min = history
            .iter()
            .map(|r| r.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(ckpt.val_loss, min);
    }

    #[test]
    fn early_stopping_trace_follows_the_stated_rule() {
        // val-loss sequence [1.0, 0.9, 0.9, ... ] with patience 15 stops
        // after epoch 17 with best at epoch 2. Simulated on the bookkeeping
        // alone.
        let losses = {
            let mut v = vec![1.0, 0.9];
            v.extend(std::iter::repeat(0.9).take(30));
            v
        };
        let patience = 15;
        let mut best = f64::INFINITY;
        let mut best_epoch = 0;
        let mut since = 0;
        let mut stopped_at = None;
        for (i, &l) in losses.iter().enumerate() {
            let epoch = i + 1;
            if l < best {
                best = l;
                best_epoch = epoch;
                since = 0;
            } else {
                since += 1;
            }
            if since >= patience {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(17));
        assert_eq!(best_epoch, 2);
    }

    #[test]
    fn overfit_single_batch_drives_loss_down() {
        // one fixed 4-sample batch, tiny config, 200 Adam steps at the fixed
        // lr of 0.001; the decoder must stay wide enough for the logits to
        // travel into saturation within the step budget
        let spec = SyntheticSpec {
            n_volumes: 1,
            slices_per_volume: 4,
            height: 32,
            width: 32,
            inclusions_per_volume: (1, 2),
            inclusion_radius: (4.0, 7.0),
            inclusion_intensity: (0.7, 0.9),
            background_noise_std: 0.0,
            seed: 3,
        };
        let pairs = generate_synthetic(&spec).unwrap();
        let transform = TransformSpec::identity_for(32, 32);
        let config = TrainConfig {
            batch_size: 4,
            ..TrainConfig::with_loss(LossConfig::preset(4).unwrap())
        };
        let batch = iterate_batches(&pairs, &transform, 4, false, 0)
            .unwrap()
            .next()
            .unwrap()
            .unwrap();
        let model_config = ModelConfig {
            in_channels: 1,
            encoder_depth: 2,
            encoder_channels: vec![32, 64],
            decoder_channels: vec![32, 64],
            residual_blocks: false,
        };
        let model = UNet::<f32>::init(&model_config, 5).unwrap();
        let mut state = TrainState::new(model);
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let (logits, trace) = state.model.forward_train(&batch.images).unwrap();
            let (loss, dlogits) =
                combined_loss_with_grad(&config.loss, &logits, &batch.masks).unwrap();
            let grads = state.model.backward(&trace, &dlogits);
            adam_update(&mut state, &grads, &config).unwrap();
            last = loss as f64;
            if last < 0.05 {
                break;
            }
        }
        assert!(last < 0.05, "combined loss stayed at {last} after 200 steps");
    }
}
