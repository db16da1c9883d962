//! Deterministic geometric/intensity transforms applied identically to image
//! and mask before they reach the network.
//!
//! The default recipe pads the width from 700 to 704 pixels (centered, fill 0)
//! and takes a top-anchored 352x704 crop, so every output dimension is
//! divisible by 32.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intensity normalization applied to the image after the geometric ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    /// Clamp intensities into [0,1]. Decoding already scales by the max code
    /// value, so this only guards against additive overshoot.
    UnitRange,
    None,
}

/// Pad/crop/normalize recipe. Serialized into the run config so experiments
/// are comparable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub target_width: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    /// Top row of the crop window. 0 keeps the top of the image; the
    /// irrelevant lower part is what gets removed.
    pub crop_row_offset: usize,
    pub pad_fill: f32,
    pub normalize: Normalize,
}

impl Default for TransformSpec {
    fn default() -> Self {
        TransformSpec {
            target_width: 704,
            crop_height: 352,
            crop_width: 704,
            crop_row_offset: 0,
            pad_fill: 0.0,
            normalize: Normalize::UnitRange,
        }
    }
}

impl TransformSpec {
    /// A transform that is the identity for `height`x`width` inputs, used for
    /// synthetic volumes whose dimensions are already divisible by 32.
    pub fn identity_for(height: usize, width: usize) -> Self {
        TransformSpec {
            target_width: width,
            crop_height: height,
            crop_width: width,
            crop_row_offset: 0,
            pad_fill: 0.0,
            normalize: Normalize::UnitRange,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_height % 32 != 0 {
            return Err(Error::Divisibility {
                dim: "crop_height",
                value: self.crop_height,
                divisor: 32,
            });
        }
        if self.crop_width % 32 != 0 {
            return Err(Error::Divisibility {
                dim: "crop_width",
                value: self.crop_width,
                divisor: 32,
            });
        }
        if self.crop_width > self.target_width {
            return Err(Error::Config(format!(
                "crop_width {} exceeds target_width {}",
                self.crop_width, self.target_width
            )));
        }
        Ok(())
    }

    /// Output shape (h, w) of the transform.
    pub fn output_shape(&self) -> (usize, usize) {
        (self.crop_height, self.crop_width)
    }
}

/// Center-pad `image` to `target_width` columns. The pad is split floor/ceil
/// between left and right; original pixel values are unchanged.
pub fn pad_width(image: &Array2<f32>, target_width: usize, fill: f32) -> Result<Array2<f32>> {
    let (h, w) = image.dim();
    if w > target_width {
        return Err(Error::OutOfBounds {
            dim: "width",
            detail: format!("input width {w} exceeds pad target {target_width}; padding never truncates"),
        });
    }
    let pad_left = (target_width - w) / 2;
    let mut out = Array2::from_elem((h, target_width), fill);
    out.slice_mut(ndarray::s![.., pad_left..pad_left + w])
        .assign(image);
    Ok(out)
}

/// Crop rows `[crop_row_offset, crop_row_offset + crop_height)` and the
/// horizontally centered `crop_width` columns.
pub fn crop(image: &Array2<f32>, spec: &TransformSpec) -> Result<Array2<f32>> {
    let (h, w) = image.dim();
    if spec.crop_row_offset + spec.crop_height > h {
        return Err(Error::OutOfBounds {
            dim: "height",
            detail: format!(
                "crop rows [{}, {}) exceed input height {h}",
                spec.crop_row_offset,
                spec.crop_row_offset + spec.crop_height
            ),
        });
    }
    if spec.crop_width > w {
        return Err(Error::OutOfBounds {
            dim: "width",
            detail: format!("crop width {} exceeds input width {w}", spec.crop_width),
        });
    }
    let col_start = (w - spec.crop_width) / 2;
    Ok(image
        .slice(ndarray::s![
            spec.crop_row_offset..spec.crop_row_offset + spec.crop_height,
            col_start..col_start + spec.crop_width
        ])
        .to_owned())
}

/// Apply the full recipe to an image/mask pair. The geometric ops are
/// identical for both; the mask is always padded with 0 and stays binary.
pub fn apply_transform(
    image: &Array2<f32>,
    mask: &Array2<f32>,
    spec: &TransformSpec,
) -> Result<(Array2<f32>, Array2<f32>)> {
    if image.dim() != mask.dim() {
        return Err(Error::shape(
            "apply_transform image vs mask",
            &[image.dim().0, image.dim().1],
            &[mask.dim().0, mask.dim().1],
        ));
    }
    spec.validate()?;
    let img = pad_width(image, spec.target_width, spec.pad_fill)?;
    let msk = pad_width(mask, spec.target_width, 0.0)?;
    let mut img = crop(&img, spec)?;
    let msk = crop(&msk, spec)?;
    if spec.normalize == Normalize::UnitRange {
        img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }
    Ok((img, msk))
}

/// Apply only the geometric part (pad + crop) to a single image.
pub fn transform_image(image: &Array2<f32>, spec: &TransformSpec) -> Result<Array2<f32>> {
    spec.validate()?;
    let img = pad_width(image, spec.target_width, spec.pad_fill)?;
    let mut img = crop(&img, spec)?;
    if spec.normalize == Normalize::UnitRange {
        img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn ramp(h: usize, w: usize) -> Array2<f32> {
        Array2::from_shape_fn((h, w), |(r, c)| (r * w + c) as f32)
    }

    #[test]
    fn pad_700_to_704_centers_with_two_columns_each_side() {
        let img = Array2::from_elem((1024, 700), 0.5f32);
        let out = pad_width(&img, 704, 0.0).unwrap();
        assert_eq!(out.dim(), (1024, 704));
        for r in 0..1024 {
            assert_eq!(out[[r, 0]], 0.0);
            assert_eq!(out[[r, 1]], 0.0);
            assert_eq!(out[[r, 2]], 0.5);
            assert_eq!(out[[r, 701]], 0.5);
            assert_eq!(out[[r, 702]], 0.0);
            assert_eq!(out[[r, 703]], 0.0);
        }
    }

    #[test]
    fn pad_equal_width_is_identity() {
        let img = ramp(4, 6);
        let out = pad_width(&img, 6, 0.0).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn pad_odd_split_floor_left_ceil_right() {
        // 4x3 of ones, target 5 -> column sums [0,4,4,4,0]
        let img = Array2::from_elem((4, 3), 1.0f32);
        let out = pad_width(&img, 5, 0.0).unwrap();
        let sums: Vec<f32> = (0..5).map(|c| out.column(c).sum()).collect();
        assert_eq!(sums, vec![0.0, 4.0, 4.0, 4.0, 0.0]);
    }

    #[test]
    fn pad_never_truncates() {
        let img = ramp(4, 10);
        assert!(pad_width(&img, 8, 0.0).is_err());
    }

    #[test]
    fn crop_top_anchored_default() {
        let img = ramp(1024, 704);
        let spec = TransformSpec::default();
        let out = crop(&img, &spec).unwrap();
        assert_eq!(out.dim(), (352, 704));
        assert_eq!(out[[0, 0]], img[[0, 0]]);
        assert_eq!(out[[351, 703]], img[[351, 703]]);
    }

    #[test]
    fn crop_equal_dims_is_identity() {
        let img = ramp(32, 64);
        let spec = TransformSpec {
            target_width: 64,
            crop_height: 32,
            crop_width: 64,
            ..TransformSpec::default()
        };
        assert_eq!(crop(&img, &spec).unwrap(), img);
    }

    #[test]
    fn crop_centers_columns() {
        // 4x4 ramp, crop 2x2 offset 0 -> rows 0..2, centered columns 1..3.
        let img = ramp(4, 4);
        let spec = TransformSpec {
            target_width: 4,
            crop_height: 2,
            crop_width: 2,
            crop_row_offset: 0,
            pad_fill: 0.0,
            normalize: Normalize::None,
        };
        // index-arithmetic oracle: out[r][c] = img[r][c + 1]
        let out = crop(&img, &spec).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(out[[r, c]], img[[r, c + 1]]);
            }
        }
    }

    #[test]
    fn crop_out_of_bounds_names_dimension() {
        let img = ramp(100, 704);
        let spec = TransformSpec::default();
        let err = crop(&img, &spec).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { dim: "height", .. }));
    }

    #[test]
    fn transform_pair_1024x700_to_352x704() {
        let img = ramp(1024, 700);
        let mask = Array2::zeros((1024, 700));
        let spec = TransformSpec::default();
        let (ti, tm) = apply_transform(&img, &mask, &spec).unwrap();
        assert_eq!(ti.dim(), (352, 704));
        assert_eq!(tm.dim(), (352, 704));
        assert!(tm.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn transform_maps_single_mask_pixel_through_coordinate_function() {
        // coordinate-mapping oracle: (r, c) -> (r - offset, c + pad_left - col_start)
        let spec = TransformSpec::default();
        let (h, w) = (1024usize, 700usize);
        let pad_left = (spec.target_width - w) / 2;
        let col_start = (spec.target_width - spec.crop_width) / 2;
        for &(r, c) in &[(0usize, 0usize), (100, 350), (351, 699), (200, 1)] {
            let img = Array2::zeros((h, w));
            let mut mask = Array2::zeros((h, w));
            mask[[r, c]] = 1.0;
            let (_, tm) = apply_transform(&img, &mask, &spec).unwrap();
            assert_eq!(tm.sum(), 1.0);
            assert_eq!(tm[[r - spec.crop_row_offset, c + pad_left - col_start]], 1.0);
        }
    }

    #[test]
    fn transform_shape_mismatch_errors() {
        let img = ramp(64, 64);
        let mask = Array2::zeros((32, 64));
        let err = apply_transform(&img, &mask, &TransformSpec::identity_for(64, 64)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn transform_is_idempotent_at_matching_dims() {
        let spec = TransformSpec::identity_for(64, 96);
        let img = ramp(64, 96).mapv(|v| v / 10000.0);
        let mask = Array2::zeros((64, 96));
        let (i1, m1) = apply_transform(&img, &mask, &spec).unwrap();
        let (i2, m2) = apply_transform(&i1, &m1, &spec).unwrap();
        assert_eq!(i1, i2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn spec_rejects_non_divisible_dims() {
        let spec = TransformSpec {
            crop_height: 100,
            ..TransformSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
