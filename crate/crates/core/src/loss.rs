//! BCE (computed in the numerically stable logit form), soft Dice loss with
//! batch-aggregated sums, and the five weighted training configurations.

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::layers::{scalar, Scalar};

/// Elementwise logistic.
pub fn sigmoid<F: Scalar>(z: F) -> F {
    let one = F::one();
    if z >= F::zero() {
        one / (one + (-z).exp())
    } else {
        let e = z.exp();
        e / (one + e)
    }
}

/// One of the five training configurations: a convex weighting of BCE and
/// soft Dice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub id: u8,
    pub w_bce: f64,
    pub w_dice: f64,
    /// Smoothing term added to the Dice numerator and denominator.
    pub dice_smooth: f64,
}

impl LossConfig {
    /// Preset table: 1 BCE, 2 DLS, 3 equal, 4 BCE 0.7 + DLS 0.3,
    /// 5 BCE 0.3 + DLS 0.7.
    pub fn preset(id: u8) -> Result<LossConfig> {
        let (w_bce, w_dice) = match id {
            1 => (1.0, 0.0),
            2 => (0.0, 1.0),
            3 => (0.5, 0.5),
            4 => (0.7, 0.3),
            5 => (0.3, 0.7),
            other => {
                return Err(Error::Config(format!(
                    "unknown loss preset {other}; expected 1..=5"
                )))
            }
        };
        Ok(LossConfig {
            id,
            w_bce,
            w_dice,
            dice_smooth: 1.0,
        })
    }
}

fn check_shapes<F>(a: &Array4<F>, b: &Array4<F>, context: &str) -> Result<()> {
    if a.dim() != b.dim() {
        let d = |t: (usize, usize, usize, usize)| vec![t.0, t.1, t.2, t.3];
        return Err(Error::shape(context, &d(a.dim()), &d(b.dim())));
    }
    Ok(())
}

/// Mean binary cross-entropy over all pixels, computed from logits:
/// max(z,0) - z*y + ln(1 + exp(-|z|)).
pub fn bce_loss<F: Scalar>(logits: &Array4<F>, targets: &Array4<F>) -> Result<F> {
    check_shapes(logits, targets, "bce_loss logits vs targets")?;
    let n = scalar::<F>(logits.len() as f64);
    let total = ndarray::Zip::from(logits)
        .and(targets)
        .fold(F::zero(), |acc, &z, &y| {
            let pos = if z > F::zero() { z } else { F::zero() };
            acc + pos - z * y + (F::one() + (-z.abs()).exp()).ln()
        });
    Ok(total / n)
}

/// Soft Dice loss: 1 - (2*sum(p*y) + eps) / (sum(p) + sum(y) + eps), with
/// sums over the whole batch.
pub fn dice_loss<F: Scalar>(probs: &Array4<F>, targets: &Array4<F>, eps: F) -> Result<F> {
    check_shapes(probs, targets, "dice_loss probs vs targets")?;
    let (sum_p, sum_y, sum_py) = ndarray::Zip::from(probs).and(targets).fold(
        (F::zero(), F::zero(), F::zero()),
        |(sp, sy, spy), &p, &y| (sp + p, sy + y, spy + p * y),
    );
    let two = scalar::<F>(2.0);
    Ok(F::one() - (two * sum_py + eps) / (sum_p + sum_y + eps))
}

/// w_bce * BCE(logits) + w_dice * Dice(sigmoid(logits)).
pub fn combined_loss<F: Scalar>(
    config: &LossConfig,
    logits: &Array4<F>,
    targets: &Array4<F>,
) -> Result<F> {
    check_shapes(logits, targets, "combined_loss logits vs targets")?;
    let mut loss = F::zero();
    if config.w_bce != 0.0 {
        loss = loss + scalar::<F>(config.w_bce) * bce_loss(logits, targets)?;
    }
    if config.w_dice != 0.0 {
        let probs = logits.mapv(sigmoid);
        loss = loss
            + scalar::<F>(config.w_dice)
                * dice_loss(&probs, targets, scalar(config.dice_smooth))?;
    }
    Ok(loss)
}

/// Combined loss plus its gradient with respect to the logits.
pub fn combined_loss_with_grad<F: Scalar>(
    config: &LossConfig,
    logits: &Array4<F>,
    targets: &Array4<F>,
) -> Result<(F, Array4<F>)> {
    check_shapes(logits, targets, "combined_loss logits vs targets")?;
    let probs = logits.mapv(sigmoid);
    let n = scalar::<F>(logits.len() as f64);
    let w_bce = scalar::<F>(config.w_bce);
    let w_dice = scalar::<F>(config.w_dice);
    let two = scalar::<F>(2.0);

    let mut loss = F::zero();
    let mut grad = Array4::zeros(logits.dim());

    if config.w_bce != 0.0 {
        loss = loss + w_bce * bce_loss(logits, targets)?;
        ndarray::Zip::from(&mut grad)
            .and(&probs)
            .and(targets)
            .for_each(|g, &p, &y| *g = w_bce * (p - y) / n);
    }
    if config.w_dice != 0.0 {
        let eps = scalar::<F>(config.dice_smooth);
        let (sum_p, sum_y, sum_py) = ndarray::Zip::from(&probs).and(targets).fold(
            (F::zero(), F::zero(), F::zero()),
            |(sp, sy, spy), &p, &y| (sp + p, sy + y, spy + p * y),
        );
        let denom = sum_p + sum_y + eps;
        let num = two * sum_py + eps;
        loss = loss + w_dice * (F::one() - num / denom);
        // d(1 - num/denom)/dp = (num - 2*y*denom) / denom^2, chained with
        // the logistic derivative p*(1-p)
        let denom2 = denom * denom;
        ndarray::Zip::from(&mut grad)
            .and(&probs)
            .and(targets)
            .for_each(|g, &p, &y| {
                let ddice_dp = (num - two * y * denom) / denom2;
                *g = *g + w_dice * ddice_dp * p * (F::one() - p);
            });
    }
    Ok((loss, grad))
}
