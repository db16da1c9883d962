//! Shuffled batch streams over transformed slices. One pass over the stream
//! is one epoch: every slice appears exactly once, the final partial batch is
//! emitted, and the shuffle order is a pure function of the seed.

use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{MaskVolume, Volume};
use crate::error::{Error, Result};
use crate::preprocess::{apply_transform, TransformSpec};

/// A training/evaluation batch. Images are B x 1 x h x w in [0,1]; masks are
/// B x 1 x h x w binary; `source` records the originating (volume, slice).
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Array4<f32>,
    pub masks: Array4<f32>,
    pub source: Vec<(String, usize)>,
}

/// Lazy epoch iterator; transforms slices batch by batch.
pub struct BatchIter<'a> {
    pairs: &'a [(Volume, MaskVolume)],
    transform: TransformSpec,
    order: Vec<(usize, usize)>,
    batch_size: usize,
    pos: usize,
}

/// Stream one epoch of batches over all slices of `pairs`.
///
/// With `shuffle` the slice order is a deterministic function of `seed`;
/// without it, slices come in (volume order, slice order).
pub fn iterate_batches<'a>(
    pairs: &'a [(Volume, MaskVolume)],
    transform: &TransformSpec,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> Result<BatchIter<'a>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    transform.validate()?;
    for (vol, mask) in pairs {
        if vol.slices.dim() != mask.labels.dim() {
            return Err(Error::shape(
                format!("volume {} vs mask", vol.id),
                &[vol.slices.dim().0, vol.slices.dim().1, vol.slices.dim().2],
                &[
                    mask.labels.dim().0,
                    mask.labels.dim().1,
                    mask.labels.dim().2,
                ],
            ));
        }
    }
    let mut order: Vec<(usize, usize)> = pairs
        .iter()
        .enumerate()
        .flat_map(|(vi, (vol, _))| (0..vol.slice_count()).map(move |si| (vi, si)))
        .collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    Ok(BatchIter {
        pairs,
        transform: *transform,
        order,
        batch_size,
        pos: 0,
    })
}

impl BatchIter<'_> {
    pub fn slice_total(&self) -> usize {
        self.order.len()
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let chunk = &self.order[self.pos..end];
        self.pos = end;

        let (h, w) = self.transform.output_shape();
        let b = chunk.len();
        let mut images = Array4::zeros((b, 1, h, w));
        let mut masks = Array4::zeros((b, 1, h, w));
        let mut source = Vec::with_capacity(b);
        for (bi, &(vi, si)) in chunk.iter().enumerate() {
            let (vol, mask) = &self.pairs[vi];
            let img: Array2<f32> = vol.slice(si);
            let msk: Array2<f32> = mask.slice(si);
            let (ti, tm) = match apply_transform(&img, &msk, &self.transform) {
                Ok(pair) => pair,
                Err(e) => return Some(Err(e)),
            };
            images.slice_mut(ndarray::s![bi, 0, .., ..]).assign(&ti);
            masks.slice_mut(ndarray::s![bi, 0, .., ..]).assign(&tm);
            source.push((vol.id.clone(), si));
        }
        Some(Ok(Batch {
            images,
            masks,
            source,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use std::collections::HashMap;

    fn toy_pairs(n_volumes: usize, slices: usize) -> Vec<(Volume, MaskVolume)> {
        let spec = SyntheticSpec {
            n_volumes,
            slices_per_volume: slices,
            height: 32,
            width: 64,
            inclusions_per_volume: (1, 1),
            inclusion_radius: (2.0, 3.0),
            inclusion_intensity: (0.7, 0.9),
            background_noise_std: 0.0,
            seed: 5,
        };
        generate_synthetic(&spec).unwrap()
    }

    fn identity() -> TransformSpec {
        TransformSpec::identity_for(32, 64)
    }

    #[test]
    fn batch_sizes_16_16_3_for_35_slices() {
        let pairs = toy_pairs(5, 7); // 35 slices
        let sizes: Vec<usize> = iterate_batches(&pairs, &identity(), 16, false, 0)
            .unwrap()
            .map(|b| b.unwrap().images.dim().0)
            .collect();
        assert_eq!(sizes, vec![16, 16, 3]);
    }

    #[test]
    fn unshuffled_order_is_volume_then_slice() {
        let pairs = toy_pairs(2, 3);
        let batches: Vec<Batch> = iterate_batches(&pairs, &identity(), 4, false, 0)
            .unwrap()
            .map(|b| b.unwrap())
            .collect();
        let sources: Vec<(String, usize)> =
            batches.iter().flat_map(|b| b.source.clone()).collect();
        let expected: Vec<(String, usize)> = pairs
            .iter()
            .flat_map(|(v, _)| (0..3).map(move |s| (v.id.clone(), s)))
            .collect();
        assert_eq!(sources, expected);
    }

    #[test]
    fn shuffle_is_deterministic_per_seed() {
        let pairs = toy_pairs(3, 5);
        let order = |seed| -> Vec<(String, usize)> {
            iterate_batches(&pairs, &identity(), 4, true, seed)
                .unwrap()
                .flat_map(|b| b.unwrap().source)
                .collect()
        };
        assert_eq!(order(9), order(9));
        assert_ne!(order(9), order(10));
    }

    #[test]
    fn epoch_covers_slice_multiset_exactly_once() {
        let pairs = toy_pairs(3, 5);
        let mut counts: HashMap<(String, usize), usize> = HashMap::new();
        for batch in iterate_batches(&pairs, &identity(), 4, true, 3).unwrap() {
            for key in batch.unwrap().source {
                *counts.entry(key).or_default() += 1;
            }
        }
        assert_eq!(counts.len(), 15);
        assert!(counts.values().all(|&c| c == 1));
    }

    #[test]
    fn masks_stay_binary_through_transform() {
        let pairs = toy_pairs(1, 4);
        for batch in iterate_batches(&pairs, &identity(), 2, false, 0).unwrap() {
            let batch = batch.unwrap();
            assert!(batch.masks.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn empty_pair_list_is_empty_stream() {
        let pairs: Vec<(Volume, MaskVolume)> = Vec::new();
        let mut iter = iterate_batches(&pairs, &identity(), 4, true, 0).unwrap();
        assert!(iter.next().is_none());
    }
}
