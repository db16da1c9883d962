//! Building blocks of the U-Net with hand-written forward and backward
//! passes: 2-D convolution (im2col + GEMM), batch normalization with
//! train/eval mode distinction, rectifier, 2x2 max-pool and 2x nearest
//! upsampling.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView3, Axis, NdFloat};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Element type the network is instantiated with (f32 for training and
/// inference, f64 for finite-difference validation).
pub trait Scalar: NdFloat + Send + Sync {}
impl<T: NdFloat + Send + Sync> Scalar for T {}

/// Train mode uses batch statistics and records caches; eval mode uses
/// running statistics and never mutates state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub fn scalar<F: Scalar>(v: f64) -> F {
    F::from(v).expect("scalar conversion")
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Square-kernel, stride-1, same-padding 2-D convolution.
#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    /// (out_channels, in_channels, k, k)
    pub weight: Array4<F>,
    pub bias: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct ConvGrad<F> {
    pub weight: Array4<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Conv2d<F> {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Conv2d {
            weight: Array4::zeros((out_channels, in_channels, kernel, kernel)),
            bias: Array1::zeros(out_channels),
        }
    }

    /// Fan-in-scaled normal init (std = sqrt(2 / fan_in)); biases zero.
    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        let (_, ci, k, _) = self.weight.dim();
        let std = (2.0 / (ci * k * k) as f64).sqrt();
        for v in self.weight.iter_mut() {
            // Box-Muller on two uniform draws keeps the stream identical
            // across element types.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let n = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            *v = scalar(n * std);
        }
        self.bias.fill(F::zero());
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim().2
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: &Array4<F>) -> Array4<F> {
        let (b, ci, h, w) = x.dim();
        let (co, wci, k, _) = self.weight.dim();
        assert_eq!(ci, wci, "conv input channels");
        let pad = k / 2;
        let wmat = self
            .weight
            .view()
            .into_shape_with_order((co, ci * k * k))
            .expect("conv weight is contiguous");
        let per_item: Vec<Array2<F>> = (0..b)
            .into_par_iter()
            .map(|bi| {
                let cols = im2col(&x.index_axis(Axis(0), bi), k, pad);
                wmat.dot(&cols)
            })
            .collect();
        let mut out = Array4::zeros((b, co, h, w));
        for (bi, o) in per_item.into_iter().enumerate() {
            let o3 = o
                .into_shape_with_order((co, h, w))
                .expect("gemm output is contiguous");
            out.index_axis_mut(Axis(0), bi).assign(&o3);
        }
        for c in 0..co {
            let bias = self.bias[c];
            out.slice_mut(s![.., c, .., ..]).mapv_inplace(|v| v + bias);
        }
        out
    }

    /// Given the forward input and the output gradient, produce the input
    /// gradient and parameter gradients.
    pub fn backward(&self, x: &Array4<F>, dy: &Array4<F>) -> (Array4<F>, ConvGrad<F>) {
        let (b, ci, h, w) = x.dim();
        let (co, _, k, _) = self.weight.dim();
        let pad = k / 2;
        let wmat = self
            .weight
            .view()
            .into_shape_with_order((co, ci * k * k))
            .expect("conv weight is contiguous");
        let partials: Vec<(Array2<F>, Array1<F>, Array3<F>)> = (0..b)
            .into_par_iter()
            .map(|bi| {
                let cols = im2col(&x.index_axis(Axis(0), bi), k, pad);
                let dyb = dy
                    .index_axis(Axis(0), bi)
                    .into_shape_with_order((co, h * w))
                    .expect("dy is contiguous");
                let dw = dyb.dot(&cols.t());
                let db = dyb.sum_axis(Axis(1));
                let dcols = wmat.t().dot(&dyb);
                let dx = col2im(&dcols, ci, h, w, k, pad);
                (dw, db, dx)
            })
            .collect();
        let mut dw = Array2::zeros((co, ci * k * k));
        let mut db = Array1::zeros(co);
        let mut dx = Array4::zeros((b, ci, h, w));
        for (bi, (dwp, dbp, dxp)) in partials.into_iter().enumerate() {
            dw += &dwp;
            db += &dbp;
            dx.index_axis_mut(Axis(0), bi).assign(&dxp);
        }
        let dw = dw
            .into_shape_with_order((co, ci, k, k))
            .expect("dw is contiguous");
        (dx, ConvGrad {
            weight: dw,
            bias: db,
        })
    }
}

/// Unfold a (C, H, W) view into (C*k*k, H*W) patch columns for stride-1
/// same-padding convolution.
fn im2col<F: Scalar>(x: &ArrayView3<F>, k: usize, pad: usize) -> Array2<F> {
    let (ci, h, w) = x.dim();
    let mut cols = Array2::zeros((ci * k * k, h * w));
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                // valid output columns for this kernel offset
                let c_out0 = pad.saturating_sub(kx);
                let c_out1 = (w + pad).saturating_sub(kx).min(w);
                if c_out0 >= c_out1 {
                    continue;
                }
                let c_in0 = c_out0 + kx - pad;
                for r_out in 0..h {
                    let r_in = r_out as isize + ky as isize - pad as isize;
                    if r_in < 0 || r_in >= h as isize {
                        continue;
                    }
                    let src = x.slice(s![c, r_in as usize, c_in0..c_in0 + (c_out1 - c_out0)]);
                    let mut dst =
                        cols.slice_mut(s![row, r_out * w + c_out0..r_out * w + c_out1]);
                    dst.assign(&src);
                }
            }
        }
    }
    cols
}

/// Scatter-add the column gradient back to the (C, H, W) input layout.
fn col2im<F: Scalar>(
    dcols: &Array2<F>,
    ci: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
) -> Array3<F> {
    let mut dx = Array3::zeros((ci, h, w));
    for c in 0..ci {
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let c_out0 = pad.saturating_sub(kx);
                let c_out1 = (w + pad).saturating_sub(kx).min(w);
                if c_out0 >= c_out1 {
                    continue;
                }
                let c_in0 = c_out0 + kx - pad;
                for r_out in 0..h {
                    let r_in = r_out as isize + ky as isize - pad as isize;
                    if r_in < 0 || r_in >= h as isize {
                        continue;
                    }
                    let src = dcols.slice(s![row, r_out * w + c_out0..r_out * w + c_out1]);
                    let mut dst =
                        dx.slice_mut(s![c, r_in as usize, c_in0..c_in0 + (c_out1 - c_out0)]);
                    dst += &src;
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BatchNorm2d<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    pub running_mean: Array1<F>,
    pub running_var: Array1<F>,
    pub momentum: F,
    pub eps: F,
}

#[derive(Debug, Clone)]
pub struct BnCache<F> {
    xhat: Array4<F>,
    inv_std: Array1<F>,
}

#[derive(Debug, Clone)]
pub struct BnGrad<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

impl<F: Scalar> BatchNorm2d<F> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            momentum: scalar(0.1),
            eps: scalar(1e-5),
        }
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    /// Train mode normalizes by batch statistics, updates running statistics
    /// and returns a cache for backward. Eval mode uses running statistics.
    pub fn forward(&mut self, x: &Array4<F>, mode: Mode) -> (Array4<F>, Option<BnCache<F>>) {
        match mode {
            Mode::Eval => (self.forward_eval(x), None),
            Mode::Train => {
                let (b, c, h, w) = x.dim();
                let n = scalar::<F>((b * h * w) as f64);
                let mut y = Array4::zeros((b, c, h, w));
                let mut xhat = Array4::zeros((b, c, h, w));
                let mut inv_std = Array1::zeros(c);
                for ch in 0..c {
                    let xc = x.slice(s![.., ch, .., ..]);
                    let mean = xc.sum() / n;
                    let var = xc.fold(F::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / n;
                    let istd = F::one() / (var + self.eps).sqrt();
                    inv_std[ch] = istd;
                    let g = self.gamma[ch];
                    let be = self.beta[ch];
                    ndarray::Zip::from(xhat.slice_mut(s![.., ch, .., ..]))
                        .and(y.slice_mut(s![.., ch, .., ..]))
                        .and(xc)
                        .for_each(|xh, yo, &xv| {
                            let v = (xv - mean) * istd;
                            *xh = v;
                            *yo = g * v + be;
                        });
                    let m = self.momentum;
                    self.running_mean[ch] = (F::one() - m) * self.running_mean[ch] + m * mean;
                    self.running_var[ch] = (F::one() - m) * self.running_var[ch] + m * var;
                }
                (y, Some(BnCache { xhat, inv_std }))
            }
        }
    }

    pub fn forward_eval(&self, x: &Array4<F>) -> Array4<F> {
        let c = x.dim().1;
        let mut y = x.clone();
        for ch in 0..c {
            let istd = F::one() / (self.running_var[ch] + self.eps).sqrt();
            let mean = self.running_mean[ch];
            let g = self.gamma[ch];
            let be = self.beta[ch];
            y.slice_mut(s![.., ch, .., ..])
                .mapv_inplace(|v| g * (v - mean) * istd + be);
        }
        y
    }

    pub fn backward(&self, cache: &BnCache<F>, dy: &Array4<F>) -> (Array4<F>, BnGrad<F>) {
        let (b, c, h, w) = dy.dim();
        let n = scalar::<F>((b * h * w) as f64);
        let mut dx = Array4::zeros((b, c, h, w));
        let mut dgamma = Array1::zeros(c);
        let mut dbeta = Array1::zeros(c);
        for ch in 0..c {
            let dyc = dy.slice(s![.., ch, .., ..]);
            let xhc = cache.xhat.slice(s![.., ch, .., ..]);
            let sum_dy = dyc.sum();
            let sum_dy_xhat = ndarray::Zip::from(&dyc)
                .and(&xhc)
                .fold(F::zero(), |acc, &d, &xh| acc + d * xh);
            dgamma[ch] = sum_dy_xhat;
            dbeta[ch] = sum_dy;
            let g = self.gamma[ch];
            let istd = cache.inv_std[ch];
            let mean_dy = sum_dy / n;
            let mean_dy_xhat = sum_dy_xhat / n;
            ndarray::Zip::from(dx.slice_mut(s![.., ch, .., ..]))
                .and(&dyc)
                .and(&xhc)
                .for_each(|o, &d, &xh| {
                    *o = g * istd * (d - mean_dy - xh * mean_dy_xhat);
                });
        }
        (dx, BnGrad {
            gamma: dgamma,
            beta: dbeta,
        })
    }
}

// ---------------------------------------------------------------------------
// Elementwise and spatial ops
// ---------------------------------------------------------------------------

pub fn relu<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    x.mapv(|v| if v > F::zero() { v } else { F::zero() })
}

/// dx = dy where the rectifier output was positive, 0 elsewhere.
pub fn relu_backward<F: Scalar>(output: &Array4<F>, dy: &Array4<F>) -> Array4<F> {
    let mut dx = dy.clone();
    ndarray::Zip::from(&mut dx).and(output).for_each(|d, &y| {
        if y <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

/// 2x2 max-pool with stride 2. Returns the pooled map and the argmax offset
/// (0..4) per output cell for the backward scatter. Requires even H and W.
pub fn maxpool2<F: Scalar>(x: &Array4<F>) -> (Array4<F>, Array4<u8>) {
    let (b, c, h, w) = x.dim();
    assert!(h % 2 == 0 && w % 2 == 0, "maxpool2 needs even dims");
    let (ho, wo) = (h / 2, w / 2);
    let mut y = Array4::zeros((b, c, ho, wo));
    let mut arg = Array4::<u8>::zeros((b, c, ho, wo));
    for bi in 0..b {
        for ci in 0..c {
            for r in 0..ho {
                for col in 0..wo {
                    let mut best = x[[bi, ci, 2 * r, 2 * col]];
                    let mut best_k = 0u8;
                    for (k, (dr, dc)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                        let v = x[[bi, ci, 2 * r + dr, 2 * col + dc]];
                        if v > best {
                            best = v;
                            best_k = k as u8;
                        }
                    }
                    y[[bi, ci, r, col]] = best;
                    arg[[bi, ci, r, col]] = best_k;
                }
            }
        }
    }
    (y, arg)
}

pub fn maxpool2_backward<F: Scalar>(dy: &Array4<F>, argmax: &Array4<u8>) -> Array4<F> {
    let (b, c, ho, wo) = dy.dim();
    let mut dx = Array4::zeros((b, c, ho * 2, wo * 2));
    for bi in 0..b {
        for ci in 0..c {
            for r in 0..ho {
                for col in 0..wo {
                    let k = argmax[[bi, ci, r, col]] as usize;
                    let (dr, dc) = [(0, 0), (0, 1), (1, 0), (1, 1)][k];
                    dx[[bi, ci, 2 * r + dr, 2 * col + dc]] = dy[[bi, ci, r, col]];
                }
            }
        }
    }
    dx
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2<F: Scalar>(x: &Array4<F>) -> Array4<F> {
    let (b, c, h, w) = x.dim();
    let mut y = Array4::zeros((b, c, 2 * h, 2 * w));
    for bi in 0..b {
        for ci in 0..c {
            for r in 0..h {
                for col in 0..w {
                    let v = x[[bi, ci, r, col]];
                    y[[bi, ci, 2 * r, 2 * col]] = v;
                    y[[bi, ci, 2 * r, 2 * col + 1]] = v;
                    y[[bi, ci, 2 * r + 1, 2 * col]] = v;
                    y[[bi, ci, 2 * r + 1, 2 * col + 1]] = v;
                }
            }
        }
    }
    y
}

/// Gradient of nearest 2x upsampling: sum each 2x2 block.
pub fn upsample2_backward<F: Scalar>(dy: &Array4<F>) -> Array4<F> {
    let (b, c, h2, w2) = dy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array4::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            for r in 0..h {
                for col in 0..w {
                    dx[[bi, ci, r, col]] = dy[[bi, ci, 2 * r, 2 * col]]
                        + dy[[bi, ci, 2 * r, 2 * col + 1]]
                        + dy[[bi, ci, 2 * r + 1, 2 * col]]
                        + dy[[bi, ci, 2 * r + 1, 2 * col + 1]];
                }
            }
        }
    }
    dx
}

/// Concatenate along the channel axis: [a, b].
pub fn concat_channels<F: Scalar>(a: &Array4<F>, b: &Array4<F>) -> Array4<F> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("channel concat shapes")
}

/// Split a channel-concatenated gradient back into its two parts.
pub fn split_channels<F: Scalar>(dy: &Array4<F>, first: usize) -> (Array4<F>, Array4<F>) {
    let da = dy.slice(s![.., ..first, .., ..]).to_owned();
    let db = dy.slice(s![.., first.., .., ..]).to_owned();
    (da, db)
}

// ---------------------------------------------------------------------------
// conv -> bn -> relu, twice, with an optional residual shortcut
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DoubleConv<F> {
    pub conv1: Conv2d<F>,
    pub bn1: BatchNorm2d<F>,
    pub conv2: Conv2d<F>,
    pub bn2: BatchNorm2d<F>,
    /// Residual projection (1x1) when the shortcut changes channel count.
    pub shortcut: Option<Conv2d<F>>,
    pub residual: bool,
}

#[derive(Debug, Clone)]
pub struct DoubleConvCache<F> {
    x: Array4<F>,
    bn1: BnCache<F>,
    r1: Array4<F>,
    bn2: BnCache<F>,
    y: Array4<F>,
}

#[derive(Debug, Clone)]
pub struct DoubleConvGrad<F> {
    pub conv1: ConvGrad<F>,
    pub bn1: BnGrad<F>,
    pub conv2: ConvGrad<F>,
    pub bn2: BnGrad<F>,
    pub shortcut: Option<ConvGrad<F>>,
}

impl<F: Scalar> DoubleConv<F> {
    pub fn new(in_channels: usize, out_channels: usize, residual: bool) -> Self {
        let shortcut = if residual && in_channels != out_channels {
            Some(Conv2d::zeros(in_channels, out_channels, 1))
        } else {
            None
        };
        DoubleConv {
            conv1: Conv2d::zeros(in_channels, out_channels, 3),
            bn1: BatchNorm2d::new(out_channels),
            conv2: Conv2d::zeros(out_channels, out_channels, 3),
            bn2: BatchNorm2d::new(out_channels),
            shortcut,
            residual,
        }
    }

    pub fn init(&mut self, rng: &mut ChaCha8Rng) {
        self.conv1.init(rng);
        self.conv2.init(rng);
        if let Some(p) = &mut self.shortcut {
            p.init(rng);
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count()
            + self.bn1.param_count()
            + self.conv2.param_count()
            + self.bn2.param_count()
            + self.shortcut.as_ref().map_or(0, |p| p.param_count())
    }

    pub fn forward_train(&mut self, x: Array4<F>) -> (Array4<F>, DoubleConvCache<F>) {
        let z1 = self.conv1.forward(&x);
        let (h1, bn1_cache) = self.bn1.forward(&z1, Mode::Train);
        let r1 = relu(&h1);
        let z2 = self.conv2.forward(&r1);
        let (mut h2, bn2_cache) = self.bn2.forward(&z2, Mode::Train);
        if self.residual {
            match &self.shortcut {
                Some(p) => h2 += &p.forward(&x),
                None => h2 += &x,
            }
        }
        let y = relu(&h2);
        let cache = DoubleConvCache {
            x,
            bn1: bn1_cache.expect("train mode cache"),
            r1,
            bn2: bn2_cache.expect("train mode cache"),
            y: y.clone(),
        };
        (y, cache)
    }

    pub fn forward_eval(&self, x: &Array4<F>) -> Array4<F> {
        let z1 = self.conv1.forward(x);
        let h1 = self.bn1.forward_eval(&z1);
        let r1 = relu(&h1);
        let z2 = self.conv2.forward(&r1);
        let mut h2 = self.bn2.forward_eval(&z2);
        if self.residual {
            match &self.shortcut {
                Some(p) => h2 += &p.forward(x),
                None => h2 += x,
            }
        }
        relu(&h2)
    }

    pub fn backward(
        &self,
        cache: &DoubleConvCache<F>,
        dy: &Array4<F>,
    ) -> (Array4<F>, DoubleConvGrad<F>) {
        let dsum = relu_backward(&cache.y, dy);
        let (dz2, bn2_grad) = self.bn2.backward(&cache.bn2, &dsum);
        let (dr1, conv2_grad) = self.conv2.backward(&cache.r1, &dz2);
        let dh1 = relu_backward(&cache.r1, &dr1);
        let (dz1, bn1_grad) = self.bn1.backward(&cache.bn1, &dh1);
        let (mut dx, conv1_grad) = self.conv1.backward(&cache.x, &dz1);
        let mut shortcut_grad = None;
        if self.residual {
            match &self.shortcut {
                Some(p) => {
                    let (dx_proj, pg) = p.backward(&cache.x, &dsum);
                    dx += &dx_proj;
                    shortcut_grad = Some(pg);
                }
                None => dx += &dsum,
            }
        }
        (dx, DoubleConvGrad {
            conv1: conv1_grad,
            bn1: bn1_grad,
            conv2: conv2_grad,
            bn2: bn2_grad,
            shortcut: shortcut_grad,
        })
    }
}
