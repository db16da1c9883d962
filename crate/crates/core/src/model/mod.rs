//! U-Net topology: a depth-N contraction path (each stage is two
//! conv+norm+rectifier blocks followed by 2x2 max-pool) and a symmetric
//! expansion path (2x nearest upsampling, skip concatenation, two conv
//! blocks), closed by a 1x1 logit head.

pub mod checkpoint;
pub mod layers;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use layers::{Mode, Scalar};

use ndarray::{Array4, ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use layers::{
    concat_channels, maxpool2, maxpool2_backward, split_channels, upsample2, upsample2_backward,
    Conv2d, ConvGrad, DoubleConv, DoubleConvCache, DoubleConvGrad,
};

fn default_in_channels() -> usize {
    1
}
fn default_encoder_depth() -> usize {
    5
}
fn default_encoder_channels() -> Vec<usize> {
    vec![32, 64, 128, 256, 512]
}
fn default_decoder_channels() -> Vec<usize> {
    vec![256, 128, 64, 32, 16]
}

/// U-Net topology description. The output head is fixed to one logit channel
/// (binary task).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    #[serde(default = "default_encoder_depth")]
    pub encoder_depth: usize,
    #[serde(default = "default_encoder_channels")]
    pub encoder_channels: Vec<usize>,
    #[serde(default = "default_decoder_channels")]
    pub decoder_channels: Vec<usize>,
    /// Residual shortcuts in the encoder blocks (ResNet-style encoder).
    #[serde(default)]
    pub residual_blocks: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: default_in_channels(),
            encoder_depth: default_encoder_depth(),
            encoder_channels: default_encoder_channels(),
            decoder_channels: default_decoder_channels(),
            residual_blocks: false,
        }
    }
}

impl ModelConfig {
    /// A small topology for tests and CPU-budget experiments.
    pub fn tiny(depth: usize, base: usize) -> Self {
        let encoder_channels: Vec<usize> = (0..depth).map(|i| base << i).collect();
        let decoder_channels: Vec<usize> = (0..depth)
            .map(|j| (encoder_channels[depth - 1 - j] / 2).max(2))
            .collect();
        ModelConfig {
            in_channels: 1,
            encoder_depth: depth,
            encoder_channels,
            decoder_channels,
            residual_blocks: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_depth == 0 {
            return Err(Error::Config("encoder_depth must be >= 1".into()));
        }
        if self.encoder_channels.len() != self.encoder_depth {
            return Err(Error::Config(format!(
                "encoder_channels has {} entries but encoder_depth is {}",
                self.encoder_channels.len(),
                self.encoder_depth
            )));
        }
        if self.decoder_channels.len() != self.encoder_depth {
            return Err(Error::Config(format!(
                "decoder_channels has {} entries but encoder_depth is {}",
                self.decoder_channels.len(),
                self.encoder_depth
            )));
        }
        if self.in_channels == 0
            || self.encoder_channels.iter().any(|&c| c == 0)
            || self.decoder_channels.iter().any(|&c| c == 0)
        {
            return Err(Error::Config("channel counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Spatial divisor the input dims must satisfy (32 at depth 5).
    pub fn spatial_divisor(&self) -> usize {
        1 << self.encoder_depth
    }

    /// Input channel count of decoder stage `j`: previous decoder output (or
    /// the bottleneck at j = 0) plus the concatenated skip.
    fn decoder_in_channels(&self, j: usize) -> usize {
        let d = self.encoder_depth;
        let prev = if j == 0 {
            self.encoder_channels[d - 1]
        } else {
            self.decoder_channels[j - 1]
        };
        prev + self.encoder_channels[d - 1 - j]
    }
}

/// Total trainable scalar count (conv weights and biases, normalization
/// scale and shift) as a pure function of the config.
pub fn count_parameters(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let conv = |ci: usize, co: usize, k: usize| k * k * ci * co + co;
    let bn = |co: usize| 2 * co;
    let double_conv = |ci: usize, co: usize, residual: bool| {
        conv(ci, co, 3)
            + bn(co)
            + conv(co, co, 3)
            + bn(co)
            + if residual && ci != co { conv(ci, co, 1) } else { 0 }
    };
    let d = config.encoder_depth;
    let mut total = 0;
    let mut cin = config.in_channels;
    for i in 0..d {
        total += double_conv(cin, config.encoder_channels[i], config.residual_blocks);
        cin = config.encoder_channels[i];
    }
    for j in 0..d {
        total += double_conv(config.decoder_in_channels(j), config.decoder_channels[j], false);
    }
    total += conv(config.decoder_channels[d - 1], 1, 1);
    Ok(total)
}

/// The network: topology plus parameters. Immutable during inference;
/// training owns a single mutable instance.
#[derive(Debug, Clone)]
pub struct UNet<F> {
    pub config: ModelConfig,
    enc: Vec<DoubleConv<F>>,
    dec: Vec<DoubleConv<F>>,
    head: Conv2d<F>,
}

/// Per-layer caches recorded by a training forward pass.
pub struct UNetTrace<F> {
    enc: Vec<(DoubleConvCache<F>, Array4<u8>)>,
    dec: Vec<DoubleConvCache<F>>,
    head_input: Array4<F>,
}

/// Parameter gradients, mirroring the parameter enumeration order.
pub struct UNetGrads<F> {
    enc: Vec<DoubleConvGrad<F>>,
    dec: Vec<DoubleConvGrad<F>>,
    head: ConvGrad<F>,
}

impl<F: Scalar> UNetGrads<F> {
    /// Flatten in the same order as [`UNet::named_params`].
    pub fn flatten(&self) -> Vec<ArrayViewD<'_, F>> {
        let mut out = Vec::new();
        for g in self.enc.iter().chain(self.dec.iter()) {
            out.push(g.conv1.weight.view().into_dyn());
            out.push(g.conv1.bias.view().into_dyn());
            out.push(g.bn1.gamma.view().into_dyn());
            out.push(g.bn1.beta.view().into_dyn());
            out.push(g.conv2.weight.view().into_dyn());
            out.push(g.conv2.bias.view().into_dyn());
            out.push(g.bn2.gamma.view().into_dyn());
            out.push(g.bn2.beta.view().into_dyn());
            if let Some(p) = &g.shortcut {
                out.push(p.weight.view().into_dyn());
                out.push(p.bias.view().into_dyn());
            }
        }
        out.push(self.head.weight.view().into_dyn());
        out.push(self.head.bias.view().into_dyn());
        out
    }

    pub fn all_finite(&self) -> std::result::Result<(), String> {
        let names = |i: usize, n: usize| -> String {
            if i < n {
                format!("enc{i}")
            } else {
                format!("dec{}", i - n)
            }
        };
        let n = self.enc.len();
        for (i, g) in self.enc.iter().chain(self.dec.iter()).enumerate() {
            let finite = g.conv1.weight.iter().all(|v| v.is_finite())
                && g.conv1.bias.iter().all(|v| v.is_finite())
                && g.bn1.gamma.iter().all(|v| v.is_finite())
                && g.bn1.beta.iter().all(|v| v.is_finite())
                && g.conv2.weight.iter().all(|v| v.is_finite())
                && g.conv2.bias.iter().all(|v| v.is_finite())
                && g.bn2.gamma.iter().all(|v| v.is_finite())
                && g.bn2.beta.iter().all(|v| v.is_finite());
            if !finite {
                return Err(names(i, n));
            }
        }
        if !self.head.weight.iter().all(|v| v.is_finite())
            || !self.head.bias.iter().all(|v| v.is_finite())
        {
            return Err("head".into());
        }
        Ok(())
    }
}

impl<F: Scalar> UNet<F> {
    /// Build the network and draw fan-in-scaled random weights, deterministic
    /// for a fixed (config, seed).
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.encoder_depth;
        let mut enc = Vec::with_capacity(d);
        let mut cin = config.in_channels;
        for i in 0..d {
            enc.push(DoubleConv::new(
                cin,
                config.encoder_channels[i],
                config.residual_blocks,
            ));
            cin = config.encoder_channels[i];
        }
        let mut dec = Vec::with_capacity(d);
        for j in 0..d {
            dec.push(DoubleConv::new(
                config.decoder_in_channels(j),
                config.decoder_channels[j],
                false,
            ));
        }
        let head = Conv2d::zeros(config.decoder_channels[d - 1], 1, 1);
        let mut net = UNet {
            config: config.clone(),
            enc,
            dec,
            head,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in net.enc.iter_mut().chain(net.dec.iter_mut()) {
            block.init(&mut rng);
        }
        net.head.init(&mut rng);
        Ok(net)
    }

    fn check_input(&self, x: &Array4<F>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != self.config.in_channels {
            return Err(Error::shape(
                "input channels",
                &[self.config.in_channels],
                &[c],
            ));
        }
        let div = self.config.spatial_divisor();
        if h % div != 0 {
            return Err(Error::Divisibility {
                dim: "height",
                value: h,
                divisor: div,
            });
        }
        if w % div != 0 {
            return Err(Error::Divisibility {
                dim: "width",
                value: w,
                divisor: div,
            });
        }
        Ok(())
    }

    /// Training forward pass: batch-statistics normalization, running-stat
    /// updates, and a full cache for [`UNet::backward`].
    pub fn forward_train(&mut self, x: &Array4<F>) -> Result<(Array4<F>, UNetTrace<F>)> {
        self.check_input(x)?;
        let d = self.config.encoder_depth;
        let mut skips: Vec<Array4<F>> = Vec::with_capacity(d);
        let mut enc_traces = Vec::with_capacity(d);
        let mut cur = x.clone();
        for i in 0..d {
            let (y, cache) = self.enc[i].forward_train(cur);
            let (pooled, argmax) = maxpool2(&y);
            skips.push(y);
            enc_traces.push((cache, argmax));
            cur = pooled;
        }
        let mut dec_traces = Vec::with_capacity(d);
        for j in 0..d {
            let up = upsample2(&cur);
            let cat = concat_channels(&up, &skips[d - 1 - j]);
            let (y, cache) = self.dec[j].forward_train(cat);
            dec_traces.push(cache);
            cur = y;
        }
        let logits = self.head.forward(&cur);
        Ok((logits, UNetTrace {
            enc: enc_traces,
            dec: dec_traces,
            head_input: cur,
        }))
    }

    /// Inference forward pass: running statistics, no caches, no mutation.
    pub fn forward(&self, x: &Array4<F>) -> Result<Array4<F>> {
        self.check_input(x)?;
        let d = self.config.encoder_depth;
        let mut skips: Vec<Array4<F>> = Vec::with_capacity(d);
        let mut cur = x.clone();
        for i in 0..d {
            let y = self.enc[i].forward_eval(&cur);
            let (pooled, _) = maxpool2(&y);
            skips.push(y);
            cur = pooled;
        }
        for j in 0..d {
            let up = upsample2(&cur);
            let cat = concat_channels(&up, &skips[d - 1 - j]);
            cur = self.dec[j].forward_eval(&cat);
        }
        Ok(self.head.forward(&cur))
    }

    /// Elementwise logistic of the logits.
    pub fn predict_proba(&self, x: &Array4<F>) -> Result<Array4<F>> {
        let mut logits = self.forward(x)?;
        logits.mapv_inplace(crate::loss::sigmoid);
        Ok(logits)
    }

    /// Backpropagate the logit gradient through the recorded trace.
    pub fn backward(&self, trace: &UNetTrace<F>, dlogits: &Array4<F>) -> UNetGrads<F> {
        let d = self.config.encoder_depth;
        let (mut dcur, head_grad) = self.head.backward(&trace.head_input, dlogits);
        let mut dec_grads: Vec<Option<DoubleConvGrad<F>>> = (0..d).map(|_| None).collect();
        let mut dskips: Vec<Option<Array4<F>>> = (0..d).map(|_| None).collect();
        for j in (0..d).rev() {
            let (dcat, grad) = self.dec[j].backward(&trace.dec[j], &dcur);
            dec_grads[j] = Some(grad);
            let up_channels = if j == 0 {
                self.config.encoder_channels[d - 1]
            } else {
                self.config.decoder_channels[j - 1]
            };
            let (dup, dskip) = split_channels(&dcat, up_channels);
            dskips[d - 1 - j] = Some(dskip);
            dcur = upsample2_backward(&dup);
        }
        let mut enc_grads: Vec<Option<DoubleConvGrad<F>>> = (0..d).map(|_| None).collect();
        for i in (0..d).rev() {
            let mut dy = maxpool2_backward(&dcur, &trace.enc[i].1);
            dy += dskips[i].as_ref().expect("skip gradient present");
            let (dx, grad) = self.enc[i].backward(&trace.enc[i].0, &dy);
            enc_grads[i] = Some(grad);
            dcur = dx;
        }
        UNetGrads {
            enc: enc_grads.into_iter().map(|g| g.unwrap()).collect(),
            dec: dec_grads.into_iter().map(|g| g.unwrap()).collect(),
            head: head_grad,
        }
    }

    pub fn param_count(&self) -> usize {
        self.enc
            .iter()
            .chain(self.dec.iter())
            .map(|b| b.param_count())
            .sum::<usize>()
            + self.head.param_count()
    }

    /// Trainable parameters in canonical order.
    pub fn named_params(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        self.enumerate_views(false)
    }

    /// Trainable parameters plus normalization running statistics
    /// (the full serializable state).
    pub fn named_state(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        self.enumerate_views(true)
    }

    fn enumerate_views(&self, with_stats: bool) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out = Vec::new();
        let block_names = self.block_prefixes();
        for (prefix, block) in block_names
            .iter()
            .zip(self.enc.iter().chain(self.dec.iter()))
        {
            out.push((format!("{prefix}.conv1.weight"), block.conv1.weight.view().into_dyn()));
            out.push((format!("{prefix}.conv1.bias"), block.conv1.bias.view().into_dyn()));
            out.push((format!("{prefix}.bn1.gamma"), block.bn1.gamma.view().into_dyn()));
            out.push((format!("{prefix}.bn1.beta"), block.bn1.beta.view().into_dyn()));
            if with_stats {
                out.push((
                    format!("{prefix}.bn1.running_mean"),
                    block.bn1.running_mean.view().into_dyn(),
                ));
                out.push((
                    format!("{prefix}.bn1.running_var"),
                    block.bn1.running_var.view().into_dyn(),
                ));
            }
            out.push((format!("{prefix}.conv2.weight"), block.conv2.weight.view().into_dyn()));
            out.push((format!("{prefix}.conv2.bias"), block.conv2.bias.view().into_dyn()));
            out.push((format!("{prefix}.bn2.gamma"), block.bn2.gamma.view().into_dyn()));
            out.push((format!("{prefix}.bn2.beta"), block.bn2.beta.view().into_dyn()));
            if with_stats {
                out.push((
                    format!("{prefix}.bn2.running_mean"),
                    block.bn2.running_mean.view().into_dyn(),
                ));
                out.push((
                    format!("{prefix}.bn2.running_var"),
                    block.bn2.running_var.view().into_dyn(),
                ));
            }
            if let Some(p) = &block.shortcut {
                out.push((format!("{prefix}.proj.weight"), p.weight.view().into_dyn()));
                out.push((format!("{prefix}.proj.bias"), p.bias.view().into_dyn()));
            }
        }
        out.push(("head.weight".into(), self.head.weight.view().into_dyn()));
        out.push(("head.bias".into(), self.head.bias.view().into_dyn()));
        out
    }

    fn block_prefixes(&self) -> Vec<String> {
        let d = self.config.encoder_depth;
        (0..d)
            .map(|i| format!("enc{i}"))
            .chain((0..d).map(|j| format!("dec{j}")))
            .collect()
    }

    /// Mutable views of the trainable parameters, same order as
    /// [`UNet::named_params`].
    pub fn params_mut(&mut self) -> Vec<ArrayViewMutD<'_, F>> {
        let mut out = Vec::new();
        for block in self.enc.iter_mut().chain(self.dec.iter_mut()) {
            out.push(block.conv1.weight.view_mut().into_dyn());
            out.push(block.conv1.bias.view_mut().into_dyn());
            out.push(block.bn1.gamma.view_mut().into_dyn());
            out.push(block.bn1.beta.view_mut().into_dyn());
            out.push(block.conv2.weight.view_mut().into_dyn());
            out.push(block.conv2.bias.view_mut().into_dyn());
            out.push(block.bn2.gamma.view_mut().into_dyn());
            out.push(block.bn2.beta.view_mut().into_dyn());
            if let Some(p) = &mut block.shortcut {
                out.push(p.weight.view_mut().into_dyn());
                out.push(p.bias.view_mut().into_dyn());
            }
        }
        out.push(self.head.weight.view_mut().into_dyn());
        out.push(self.head.bias.view_mut().into_dyn());
        out
    }

    /// Mutable views of the full state (used by checkpoint loading).
    pub fn state_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let d = self.config.encoder_depth;
        let prefixes: Vec<String> = (0..d)
            .map(|i| format!("enc{i}"))
            .chain((0..d).map(|j| format!("dec{j}")))
            .collect();
        let mut out = Vec::new();
        for (prefix, block) in prefixes
            .iter()
            .zip(self.enc.iter_mut().chain(self.dec.iter_mut()))
        {
            out.push((format!("{prefix}.conv1.weight"), block.conv1.weight.view_mut().into_dyn()));
            out.push((format!("{prefix}.conv1.bias"), block.conv1.bias.view_mut().into_dyn()));
            out.push((format!("{prefix}.bn1.gamma"), block.bn1.gamma.view_mut().into_dyn()));
            out.push((format!("{prefix}.bn1.beta"), block.bn1.beta.view_mut().into_dyn()));
            out.push((
                format!("{prefix}.bn1.running_mean"),
                block.bn1.running_mean.view_mut().into_dyn(),
            ));
            out.push((
                format!("{prefix}.bn1.running_var"),
                block.bn1.running_var.view_mut().into_dyn(),
            ));
            out.push((format!("{prefix}.conv2.weight"), block.conv2.weight.view_mut().into_dyn()));
            out.push((format!("{prefix}.conv2.bias"), block.conv2.bias.view_mut().into_dyn()));
            out.push((format!("{prefix}.bn2.gamma"), block.bn2.gamma.view_mut().into_dyn()));
            out.push((format!("{prefix}.bn2.beta"), block.bn2.beta.view_mut().into_dyn()));
            out.push((
                format!("{prefix}.bn2.running_mean"),
                block.bn2.running_mean.view_mut().into_dyn(),
            ));
            out.push((
                format!("{prefix}.bn2.running_var"),
                block.bn2.running_var.view_mut().into_dyn(),
            ));
            if let Some(p) = &mut block.shortcut {
                out.push((format!("{prefix}.proj.weight"), p.weight.view_mut().into_dyn()));
                out.push((format!("{prefix}.proj.bias"), p.bias.view_mut().into_dyn()));
            }
        }
        out.push(("head.weight".into(), self.head.weight.view_mut().into_dyn()));
        out.push(("head.bias".into(), self.head.bias.view_mut().into_dyn()));
        out
    }

    /// Bottleneck spatial dims for an input of (h, w).
    pub fn bottleneck_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let div = self.config.spatial_divisor();
        (h / div, w / div)
    }
}

/// Mean |logit| over a batch, used by translation smoke tests.
pub fn mean_abs<F: Scalar>(logits: &Array4<F>) -> F {
    let n = F::from(logits.len()).unwrap();
    logits.fold(F::zero(), |acc, &v| acc + v.abs()) / n
}

/// Convert the parameters of a network between element types (used to run
/// f32 checkpoints through the f64 validation path).
pub fn convert<F: Scalar, G: Scalar>(net: &UNet<F>) -> UNet<G> {
    let mut out = UNet::<G>::init(&net.config, 0).expect("config already validated");
    let src = net.named_state();
    let mut dst = out.state_mut();
    assert_eq!(src.len(), dst.len());
    for ((_, s), (_, d)) in src.iter().zip(dst.iter_mut()) {
        ndarray::Zip::from(d)
            .and(s)
            .for_each(|o, &v| *o = G::from(v.to_f64().unwrap()).unwrap());
    }
    drop(dst);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn init_is_deterministic() {
        let config = ModelConfig::tiny(2, 4);
        let a = UNet::<f32>::init(&config, 9).unwrap();
        let b = UNet::<f32>::init(&config, 9).unwrap();
        for ((_, pa), (_, pb)) in a.named_state().iter().zip(b.named_state().iter()) {
            assert_eq!(pa, pb);
        }
        let c = UNet::<f32>::init(&config, 10).unwrap();
        let same = a
            .named_params()
            .iter()
            .zip(c.named_params().iter())
            .all(|((_, pa), (_, pc))| pa == pc);
        assert!(!same);
    }

    #[test]
    fn inconsistent_channel_lists_rejected() {
        let config = ModelConfig {
            encoder_depth: 5,
            encoder_channels: vec![8, 16, 32, 64],
            ..ModelConfig::default()
        };
        assert!(UNet::<f32>::init(&config, 0).is_err());
    }

    #[test]
    fn forward_shape_contract_and_bottleneck() {
        let config = ModelConfig::tiny(5, 2);
        let net = UNet::<f32>::init(&config, 1).unwrap();
        let x = Array4::<f32>::zeros((1, 1, 32, 32));
        let y = net.forward(&x).unwrap();
        assert_eq!(y.dim(), (1, 1, 32, 32));
        assert_eq!(net.bottleneck_dims(32, 32), (1, 1));
        assert_eq!(net.bottleneck_dims(352, 704), (11, 22));
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn forward_rejects_non_divisible_dims() {
        let config = ModelConfig::tiny(5, 2);
        let net = UNet::<f32>::init(&config, 1).unwrap();
        let x = Array4::<f32>::zeros((1, 1, 100, 200));
        match net.forward(&x).unwrap_err() {
            Error::Divisibility { dim, divisor, .. } => {
                assert_eq!(dim, "height");
                assert_eq!(divisor, 32);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn predict_proba_is_logistic_of_logits() {
        let config = ModelConfig::tiny(2, 3);
        let net = UNet::<f64>::init(&config, 2).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let x = Array4::from_shape_fn((1, 1, 8, 8), |_| rand::Rng::gen_range(&mut rng, 0.0..1.0));
        let logits = net.forward(&x).unwrap();
        let probs = net.predict_proba(&x).unwrap();
        // independent scalar logistic oracle
        for (&z, &p) in logits.iter().zip(probs.iter()) {
            let expected = 1.0 / (1.0 + (-z as f64).exp());
            assert_abs_diff_eq!(p, expected, epsilon = 1e-7);
            assert!(p > 0.0 && p < 1.0);
        }
    }

    #[test]
    fn count_parameters_matches_instantiated_model() {
        for config in [
            ModelConfig::tiny(2, 4),
            ModelConfig::tiny(3, 4),
            ModelConfig {
                residual_blocks: true,
                ..ModelConfig::tiny(2, 4)
            },
            ModelConfig::default(),
        ] {
            let net = UNet::<f32>::init(&config, 0).unwrap();
            assert_eq!(count_parameters(&config).unwrap(), net.param_count());
        }
    }

    #[test]
    fn count_parameters_default_config_closed_form() {
        // layer-by-layer hand sum for the default config:
        //   encoder (in -> c): 9*in*c + c + 2c + 9*c*c + c + 2c
        //   decoder j: in_j = prev + skip
        //   head: 1x1 conv 16 -> 1
        let conv = |ci: usize, co: usize, k: usize| k * k * ci * co + co;
        let mut expected = 0usize;
        let enc = [32usize, 64, 128, 256, 512];
        let dec = [256usize, 128, 64, 32, 16];
        let mut cin = 1usize;
        for &c in &enc {
            expected += conv(cin, c, 3) + 2 * c + conv(c, c, 3) + 2 * c;
            cin = c;
        }
        let mut prev = 512usize;
        for (j, &c) in dec.iter().enumerate() {
            let skip = enc[enc.len() - 1 - j];
            expected += conv(prev + skip, c, 3) + 2 * c + conv(c, c, 3) + 2 * c;
            prev = c;
        }
        expected += conv(16, 1, 1);
        assert_eq!(count_parameters(&ModelConfig::default()).unwrap(), expected);
    }

    #[test]
    fn single_conv_param_arithmetic() {
        // 3x3 conv 1->1 with bias = 10 scalars; doubling both channel widths
        // multiplies weights by 4 and biases by 2.
        let conv = |ci: usize, co: usize, k: usize| k * k * ci * co + co;
        assert_eq!(conv(1, 1, 3), 10);
        assert_eq!(conv(2, 2, 3), 4 * 9 + 2);
    }

    #[test]
    fn forward_deterministic_for_fixed_params() {
        let config = ModelConfig::tiny(2, 4);
        let net = UNet::<f32>::init(&config, 5).unwrap();
        let x = Array4::from_elem((1, 1, 16, 16), 0.3f32);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn translation_shift_changes_mean_logit_boundedly() {
        // smoke test, not an exact equivariance claim
        let config = ModelConfig::tiny(2, 4);
        let net = UNet::<f32>::init(&config, 6).unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(7);
        let x = Array4::from_shape_fn((1, 1, 32, 64), |_| rand::Rng::gen_range(&mut rng, 0.0..1.0f32));
        let mut shifted = x.clone();
        for r in 0..32 {
            for c in 0..64 {
                shifted[[0, 0, r, c]] = x[[0, 0, r, (c + 32) % 64]];
            }
        }
        let a = mean_abs(&net.forward(&x).unwrap());
        let b = mean_abs(&net.forward(&shifted).unwrap());
        let rel = (a - b).abs() / a.abs().max(1e-6);
        assert!(rel < 1.0, "mean |logit| changed by {rel} under 32px shift");
    }

    #[test]
    fn grads_flatten_aligns_with_named_params() {
        let config = ModelConfig {
            residual_blocks: true,
            ..ModelConfig::tiny(2, 4)
        };
        let mut net = UNet::<f64>::init(&config, 8).unwrap();
        let x = Array4::from_elem((2, 1, 8, 8), 0.5f64);
        let (logits, trace) = net.forward_train(&x).unwrap();
        let dlogits = logits.mapv(|_| 1.0);
        let grads = net.backward(&trace, &dlogits);
        let flat = grads.flatten();
        let named = net.named_params();
        assert_eq!(flat.len(), named.len());
        for (g, (name, p)) in flat.iter().zip(named.iter()) {
            assert_eq!(g.shape(), p.shape(), "shape mismatch for {name}");
        }
    }
}
