//! Seed-deterministic synthetic volumes: a smooth dark material slab with
//! additive Gaussian speckle and bright ellipsoidal inclusion blobs. Masks are
//! the blob support thresholded at half peak amplitude.

use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{BoxAnnotation, DefectClass, MaskVolume, Volume};
use crate::error::{Error, Result};

/// Recipe for a desk-scale synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_volumes: usize,
    pub slices_per_volume: usize,
    pub height: usize,
    pub width: usize,
    /// Inclusive (min, max) count of blobs per volume.
    pub inclusions_per_volume: (usize, usize),
    /// (min, max) in-plane blob radius in pixels; min must be >= 2 so every
    /// blob rasterizes to at least one mask pixel.
    pub inclusion_radius: (f32, f32),
    /// (min, max) blob peak amplitude; min must exceed the mean background.
    pub inclusion_intensity: (f32, f32),
    pub background_noise_std: f32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_volumes: 12,
            slices_per_volume: 16,
            height: 96,
            width: 192,
            inclusions_per_volume: (2, 4),
            inclusion_radius: (3.0, 7.0),
            inclusion_intensity: (0.7, 0.95),
            background_noise_std: 0.02,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Mean of the noiseless background over a slice.
    pub fn mean_background(&self) -> f32 {
        let h = self.height;
        let sum: f32 = (0..h).map(|r| background_at(r, h)).sum();
        sum / h as f32
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_volumes == 0 || self.slices_per_volume == 0 {
            return Err(Error::Config("n_volumes and slices_per_volume must be >= 1".into()));
        }
        if self.inclusions_per_volume.0 > self.inclusions_per_volume.1 {
            return Err(Error::Config(format!(
                "inclusions_per_volume range ({}, {}) has min > max",
                self.inclusions_per_volume.0, self.inclusions_per_volume.1
            )));
        }
        if self.inclusion_radius.0 > self.inclusion_radius.1 {
            return Err(Error::Config("inclusion_radius range has min > max".into()));
        }
        if self.inclusion_radius.0 < 2.0 {
            return Err(Error::Config("inclusion_radius min must be >= 2 pixels".into()));
        }
        if self.inclusion_intensity.0 > self.inclusion_intensity.1 {
            return Err(Error::Config("inclusion_intensity range has min > max".into()));
        }
        if self.inclusion_intensity.1 > 1.0 || self.inclusion_intensity.0 < 0.0 {
            return Err(Error::Config("inclusion_intensity must lie in [0,1]".into()));
        }
        if self.inclusions_per_volume.1 > 0
            && self.inclusion_intensity.0 <= self.mean_background()
        {
            return Err(Error::Config(format!(
                "inclusion_intensity min {} must exceed mean background {}",
                self.inclusion_intensity.0,
                self.mean_background()
            )));
        }
        if self.background_noise_std < 0.0 {
            return Err(Error::Config("background_noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// Noiseless background intensity for row `r` of an `h`-row slice: a dim
/// horizontal material band around one third of the depth.
fn background_at(r: usize, h: usize) -> f32 {
    let center = h as f32 / 3.0;
    let sigma = h as f32 / 5.0;
    let d = (r as f32 - center) / sigma;
    0.04 + 0.12 * (-0.5 * d * d).exp()
}

struct Blob {
    cz: f32,
    cr: f32,
    cc: f32,
    rz: f32,
    rr: f32,
    rc: f32,
    amplitude: f32,
}

/// Fraction of the normalized squared radius over which the blob intensity
/// falls linearly from peak to zero. The plateau covers d^2 <= 1-EDGE_BAND;
/// the half-peak contour (the mask boundary) sits at d^2 = 1-EDGE_BAND/2, so
/// the ambiguous sub-half-peak halo is a thin shell rather than a wide skirt.
const EDGE_BAND: f32 = 0.3;

/// Normalized blob profile: 1 on the plateau, linear falloff across the edge
/// band, 0 outside the unit ellipsoid.
fn blob_profile(d2: f32) -> f32 {
    ((1.0 - d2) / EDGE_BAND).clamp(0.0, 1.0)
}

/// Squared-radius bound of the half-peak support (profile >= 0.5).
const MASK_D2: f32 = 1.0 - EDGE_BAND / 2.0;

impl Blob {
    /// Half-open integer bounding box of the full render support, dilated by
    /// one voxel so disjoint boxes imply disjoint blobs and mask components.
    fn dilated_bbox(&self, shape: (usize, usize, usize)) -> (usize, usize, usize, usize, usize, usize) {
        let lo = |c: f32, r: f32| ((c - r).floor() as i64 - 1).max(0) as usize;
        let hi = |c: f32, r: f32, n: usize| (((c + r).ceil() as i64 + 2).max(0) as usize).min(n);
        (
            lo(self.cz, self.rz),
            hi(self.cz, self.rz, shape.0),
            lo(self.cr, self.rr),
            hi(self.cr, self.rr, shape.1),
            lo(self.cc, self.rc),
            hi(self.cc, self.rc, shape.2),
        )
    }
}

fn boxes_intersect(
    a: (usize, usize, usize, usize, usize, usize),
    b: (usize, usize, usize, usize, usize, usize),
) -> bool {
    a.0 < b.1 && b.0 < a.1 && a.2 < b.3 && b.2 < a.3 && a.4 < b.5 && b.4 < a.5
}

fn sample_blob(rng: &mut ChaCha8Rng, spec: &SyntheticSpec) -> Blob {
    let (s, h, w) = (
        spec.slices_per_volume as f32,
        spec.height as f32,
        spec.width as f32,
    );
    let radius = rng.gen_range(spec.inclusion_radius.0..=spec.inclusion_radius.1);
    let rz = (radius * 0.5).clamp(1.0, (s / 2.0 - 0.5).max(1.0));
    let rr = radius * rng.gen_range(0.8..=1.2);
    let rc = radius * rng.gen_range(0.8..=1.2);
    let margin = |r: f32, n: f32| (r + 1.5).min(n / 2.0);
    // integer slice center so the central cross-section always rasterizes
    let mz = margin(rz, s);
    let cz = rng.gen_range(mz.ceil() as usize..=(s - mz).floor().max(mz.ceil()) as usize) as f32;
    let cr = rng.gen_range(margin(rr, h)..=(h - margin(rr, h)).max(margin(rr, h)));
    let cc = rng.gen_range(margin(rc, w)..=(w - margin(rc, w)).max(margin(rc, w)));
    let amplitude = rng.gen_range(spec.inclusion_intensity.0..=spec.inclusion_intensity.1);
    Blob {
        cz,
        cr,
        cc,
        rz,
        rr,
        rc,
        amplitude,
    }
}

/// Generate `spec.n_volumes` aligned (Volume, MaskVolume) pairs plus the
/// tight bounding boxes of every blob, fully determined by `spec.seed`.
pub fn generate_synthetic_with_boxes(
    spec: &SyntheticSpec,
) -> Result<(Vec<(Volume, MaskVolume)>, Vec<BoxAnnotation>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let shape = (spec.slices_per_volume, spec.height, spec.width);
    let mut pairs = Vec::with_capacity(spec.n_volumes);
    let mut annotations = Vec::new();

    for vi in 0..spec.n_volumes {
        let id = format!("vol{vi:03}");
        let k = rng.gen_range(spec.inclusions_per_volume.0..=spec.inclusions_per_volume.1);

        // place blobs with disjoint dilated bounding boxes when possible
        let mut blobs: Vec<Blob> = Vec::with_capacity(k);
        for _ in 0..k {
            let mut blob = sample_blob(&mut rng, spec);
            for _attempt in 0..200 {
                let bb = blob.dilated_bbox(shape);
                if blobs
                    .iter()
                    .all(|other| !boxes_intersect(bb, other.dilated_bbox(shape)))
                {
                    break;
                }
                blob = sample_blob(&mut rng, spec);
            }
            blobs.push(blob);
        }

        let mut image = Array3::from_shape_fn(shape, |(_, r, _)| background_at(r, spec.height));
        let mut labels = Array3::<u8>::zeros(shape);

        for blob in &blobs {
            let (z0, z1, r0, r1, c0, c1) = blob.dilated_bbox(shape);
            let mut tight: Option<(usize, usize, usize, usize, usize, usize)> = None;
            for z in z0..z1 {
                for r in r0..r1 {
                    for c in c0..c1 {
                        let dz = (z as f32 - blob.cz) / blob.rz;
                        let dr = (r as f32 - blob.cr) / blob.rr;
                        let dc = (c as f32 - blob.cc) / blob.rc;
                        let d2 = dz * dz + dr * dr + dc * dc;
                        let profile = blob_profile(d2);
                        if profile > 0.0 {
                            image[[z, r, c]] += blob.amplitude * profile;
                        }
                        if d2 <= MASK_D2 {
                            labels[[z, r, c]] = 1;
                            tight = Some(match tight {
                                None => (z, z + 1, r, r + 1, c, c + 1),
                                Some(t) => (
                                    t.0.min(z),
                                    t.1.max(z + 1),
                                    t.2.min(r),
                                    t.3.max(r + 1),
                                    t.4.min(c),
                                    t.5.max(c + 1),
                                ),
                            });
                        }
                    }
                }
            }
            if let Some((sz0, sz1, sr0, sr1, sc0, sc1)) = tight {
                annotations.push(BoxAnnotation {
                    volume_id: id.clone(),
                    slice_start: sz0,
                    slice_end: sz1,
                    x: sc0,
                    y: sr0,
                    w: sc1 - sc0,
                    h: sr1 - sr0,
                    class: DefectClass::Inclusion,
                });
            }
        }

        if spec.background_noise_std > 0.0 {
            let normal = Normal::new(0.0f32, spec.background_noise_std)
                .map_err(|e| Error::Config(e.to_string()))?;
            for v in image.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
        image.mapv_inplace(|v| v.clamp(0.0, 1.0));

        pairs.push((
            Volume {
                id: id.clone(),
                slices: image,
                native_height: spec.height,
                native_width: spec.width,
            },
            MaskVolume {
                volume_id: id,
                labels,
            },
        ));
    }
    Ok((pairs, annotations))
}

/// Seed-deterministic synthetic dataset; see [`generate_synthetic_with_boxes`].
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<(Volume, MaskVolume)>> {
    generate_synthetic_with_boxes(spec).map(|(pairs, _)| pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    /// Flood-fill oracle: count 6-connected 3-D components of a binary mask.
    fn count_components(labels: &Array3<u8>) -> usize {
        let (s, h, w) = labels.dim();
        let mut seen = Array3::<u8>::zeros((s, h, w));
        let mut count = 0;
        for z in 0..s {
            for r in 0..h {
                for c in 0..w {
                    if labels[[z, r, c]] == 1 && seen[[z, r, c]] == 0 {
                        count += 1;
                        let mut queue = VecDeque::new();
                        queue.push_back((z, r, c));
                        seen[[z, r, c]] = 1;
                        while let Some((az, ar, ac)) = queue.pop_front() {
                            let neighbors = [
                                (az.wrapping_sub(1), ar, ac),
                                (az + 1, ar, ac),
                                (az, ar.wrapping_sub(1), ac),
                                (az, ar + 1, ac),
                                (az, ar, ac.wrapping_sub(1)),
                                (az, ar, ac + 1),
                            ];
                            for (nz, nr, nc) in neighbors {
                                if nz < s
                                    && nr < h
                                    && nc < w
                                    && labels[[nz, nr, nc]] == 1
                                    && seen[[nz, nr, nc]] == 0
                                {
                                    seen[[nz, nr, nc]] = 1;
                                    queue.push_back((nz, nr, nc));
                                }
                            }
                        }
                    }
                }
            }
        }
        count
    }

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_volumes: 3,
            slices_per_volume: 10,
            height: 64,
            width: 96,
            inclusions_per_volume: (3, 3),
            inclusion_radius: (3.0, 5.0),
            inclusion_intensity: (0.7, 0.9),
            background_noise_std: 0.0,
            seed: 11,
        }
    }

    #[test]
    fn zero_inclusions_give_all_zero_masks() {
        let spec = SyntheticSpec {
            inclusions_per_volume: (0, 0),
            n_volumes: 2,
            ..small_spec()
        };
        let pairs = generate_synthetic(&spec).unwrap();
        for (_, mask) in &pairs {
            assert!(mask.labels.iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn identical_spec_and_seed_are_bit_identical() {
        let spec = SyntheticSpec {
            background_noise_std: 0.03,
            ..small_spec()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        for ((va, ma), (vb, mb)) in a.iter().zip(&b) {
            assert_eq!(va.slices, vb.slices);
            assert_eq!(ma.labels, mb.labels);
        }
    }

    #[test]
    fn three_inclusions_yield_three_components() {
        let pairs = generate_synthetic(&small_spec()).unwrap();
        for (_, mask) in &pairs {
            assert_eq!(count_components(&mask.labels), 3);
        }
    }

    #[test]
    fn masks_are_binary_and_bright() {
        let spec = small_spec(); // noiseless
        let pairs = generate_synthetic(&spec).unwrap();
        let mean_bg = spec.mean_background();
        for (vol, mask) in &pairs {
            assert!(mask.labels.iter().all(|&v| v == 0 || v == 1));
            for ((z, r, c), &v) in mask.labels.indexed_iter() {
                if v == 1 {
                    assert!(
                        vol.slices[[z, r, c]] >= mean_bg,
                        "mask pixel ({z},{r},{c}) dimmer than mean background"
                    );
                }
            }
        }
    }

    #[test]
    fn degenerate_ranges_rejected() {
        let spec = SyntheticSpec {
            inclusion_radius: (5.0, 3.0),
            ..small_spec()
        };
        assert!(spec.validate().is_err());
        let spec = SyntheticSpec {
            inclusions_per_volume: (4, 2),
            ..small_spec()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn dim_inclusions_rejected() {
        let spec = SyntheticSpec {
            inclusion_intensity: (0.01, 0.02),
            ..small_spec()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn annotations_cover_mask_support() {
        let spec = small_spec();
        let (pairs, anns) = generate_synthetic_with_boxes(&spec).unwrap();
        assert_eq!(anns.len(), 9); // 3 volumes x 3 blobs
        for (vol, mask) in &pairs {
            let from_boxes: Vec<&BoxAnnotation> =
                anns.iter().filter(|a| a.volume_id == vol.id).collect();
            for ((z, r, c), &v) in mask.labels.indexed_iter() {
                if v == 1 {
                    assert!(from_boxes.iter().any(|b| z >= b.slice_start
                        && z < b.slice_end
                        && r >= b.y
                        && r < b.y + b.h
                        && c >= b.x
                        && c < b.x + b.w));
                }
            }
        }
    }
}
