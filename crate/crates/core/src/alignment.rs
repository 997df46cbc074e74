//! Projection of state attention into pixel space.
//!
//! State attention `h_s(s)` is summed per object through the adjacency matrix
//! (`c = M h_s(s)`), then painted onto the segmentation maps
//! (`T = sum_i c_i z_i`). `T` supervises the observation attention through an
//! area-weighted squared error, so small objects weigh as much as large ones.

use std::path::Path;

use crate::env::SegmentationMaps;
use crate::error::{Error, Result};

/// Attention per scene object.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectAttention(pub Vec<f64>);

/// Pixel-space attention target, row-major `H*W`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTarget(pub Vec<f64>);

/// Per-pixel area fraction of the region (object or background) owning the pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelWeights(pub Vec<f64>);

/// `c = M . h`.
pub fn object_attention(adjacency: &[Vec<f64>], state_attention: &[f64]) -> Result<ObjectAttention> {
    let mut c = Vec::with_capacity(adjacency.len());
    for (i, row) in adjacency.iter().enumerate() {
        if row.len() != state_attention.len() {
            return Err(Error::Config(format!(
                "adjacency row {i} has {} columns, state attention has {}",
                row.len(),
                state_attention.len()
            )));
        }
        c.push(row.iter().zip(state_attention).map(|(m, h)| m * h).sum());
    }
    Ok(ObjectAttention(c))
}

/// Uniform object attention `1/N`, used when state attention is not propagated.
pub fn uniform_object_attention(objects: usize) -> ObjectAttention {
    ObjectAttention(vec![1.0 / objects as f64; objects])
}

/// `T = sum_i c_i z_i`. The maps must be pairwise disjoint.
pub fn attention_target(c: &ObjectAttention, maps: &SegmentationMaps) -> Result<AttentionTarget> {
    if c.0.len() != maps.count() {
        return Err(Error::Config(format!(
            "{} object attention values for {} segmentation maps",
            c.0.len(),
            maps.count()
        )));
    }
    let owners = maps.owners()?;
    Ok(AttentionTarget(
        owners.iter().map(|o| o.map_or(0.0, |i| c.0[i])).collect(),
    ))
}

/// Area fraction of the owning region for every pixel; background pixels form
/// one region of their own.
pub fn pixel_weights(maps: &SegmentationMaps) -> Result<PixelWeights> {
    let owners = maps.owners()?;
    let total = owners.len() as f64;
    let mut areas = vec![0usize; maps.count() + 1];
    for o in &owners {
        areas[o.unwrap_or(maps.count())] += 1;
    }
    Ok(PixelWeights(
        owners
            .iter()
            .map(|o| areas[o.unwrap_or(maps.count())] as f64 / total)
            .collect(),
    ))
}

/// `(1/2) sum_ij (1/w_ij) (mask_ij - T_ij)^2`.
pub fn alignment_mse(mask: &[f64], target: &AttentionTarget, weights: &PixelWeights) -> Result<f64> {
    check_lengths(mask, target, weights)?;
    Ok(mask
        .iter()
        .zip(&target.0)
        .zip(&weights.0)
        .map(|((h, t), w)| 0.5 * (h - t) * (h - t) / w)
        .sum())
}

/// Gradient of [`alignment_mse`] with respect to the mask: `(mask - T) / w`.
pub fn alignment_mse_grad(
    mask: &[f64],
    target: &AttentionTarget,
    weights: &PixelWeights,
) -> Result<Vec<f64>> {
    check_lengths(mask, target, weights)?;
    Ok(mask
        .iter()
        .zip(&target.0)
        .zip(&weights.0)
        .map(|((h, t), w)| (h - t) / w)
        .collect())
}

fn check_lengths(mask: &[f64], target: &AttentionTarget, weights: &PixelWeights) -> Result<()> {
    if mask.len() != target.0.len() || mask.len() != weights.0.len() {
        return Err(Error::Config(format!(
            "mask ({}), target ({}) and weights ({}) differ in size",
            mask.len(),
            target.0.len(),
            weights.0.len()
        )));
    }
    if let Some(p) = weights.0.iter().position(|&w| w <= 0.0 || !w.is_finite()) {
        return Err(Error::Contract(format!("non-positive pixel weight at {p}")));
    }
    Ok(())
}

/// Writes values in `[0, 1]` as a grayscale PNG (white = high).
pub fn save_grayscale_png(values: &[f64], size: usize, path: &Path) -> Result<()> {
    if values.len() != size * size {
        return Err(Error::Config("grayscale image size mismatch".into()));
    }
    let img = image::GrayImage::from_fn(size as u32, size as u32, |x, y| {
        image::Luma([to_gray(values[y as usize * size + x as usize])])
    });
    img.save(path)
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn to_gray(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    /// Per-pixel double loop over objects, straight from the definition.
    fn target_oracle(c: &[f64], maps: &SegmentationMaps) -> Vec<f64> {
        let mut t = vec![0.0; maps.pixels()];
        for (p, v) in t.iter_mut().enumerate() {
            for (i, ci) in c.iter().enumerate() {
                if maps.get(i, p) {
                    *v += ci;
                }
            }
        }
        t
    }

    fn maps_from_owners(size: usize, n: usize, owners: &[Option<usize>]) -> SegmentationMaps {
        SegmentationMaps::from_owners(size, n, owners)
    }

    #[test]
    fn identity_and_block_adjacency() {
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(object_attention(&eye, &[0.3, 0.7]).unwrap().0, vec![0.3, 0.7]);
        let m = crate::env::adjacency_matrix(2);
        let c = object_attention(&m, &[0.1, 0.2, 0.3, 0.4]).unwrap().0;
        assert!((c[0] - 0.3).abs() < 1e-15 && (c[1] - 0.7).abs() < 1e-15);
        assert!(object_attention(&m, &[0.5, 0.5]).is_err());
    }

    #[test]
    fn one_hot_attention_reproduces_the_map() {
        let owners = [Some(0), None, Some(1), Some(0)];
        let maps = maps_from_owners(2, 2, &owners);
        let t = attention_target(&ObjectAttention(vec![1.0, 0.0]), &maps).unwrap();
        assert_eq!(t.0, vec![1.0, 0.0, 0.0, 1.0]);
        let t = attention_target(&ObjectAttention(vec![0.5, 0.5]), &maps).unwrap();
        assert_eq!(t.0, vec![0.5, 0.0, 0.5, 0.5]);
    }

    #[test]
    fn overlapping_maps_violate_contract() {
        let mut maps = SegmentationMaps::empty(2, 2);
        maps.set(0, 1, true);
        maps.set(1, 1, true);
        let err = attention_target(&ObjectAttention(vec![0.5, 0.5]), &maps).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn weights_are_area_fractions() {
        // 10 px object on a 10x10 image
        let owners: Vec<Option<usize>> = (0..100).map(|p| (p < 10).then_some(0)).collect();
        let w = pixel_weights(&maps_from_owners(10, 1, &owners)).unwrap();
        assert!(w.0[..10].iter().all(|&v| (v - 0.1).abs() < 1e-15));
        assert!(w.0[10..].iter().all(|&v| (v - 0.9).abs() < 1e-15));
        let empty = pixel_weights(&SegmentationMaps::empty(5, 3)).unwrap();
        assert!(empty.0.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_pixel_error_on_half_weight_region() {
        let target = AttentionTarget(vec![0.0, 0.0]);
        let weights = PixelWeights(vec![0.5, 0.5]);
        let e = 0.3;
        let loss = alignment_mse(&[e, 0.0], &target, &weights).unwrap();
        assert!((loss - e * e).abs() < 1e-15);
        assert_eq!(alignment_mse(&[0.0, 0.0], &target, &weights).unwrap(), 0.0);
    }

    #[test]
    fn zero_weight_is_rejected() {
        let err = alignment_mse(&[0.0], &AttentionTarget(vec![0.0]), &PixelWeights(vec![0.0]));
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    fn owners_strategy(size: usize, n: usize) -> impl Strategy<Value = Vec<Option<usize>>> {
        prop::collection::vec(prop::option::of(0..n), size * size)
    }

    proptest! {
        #[test]
        fn target_matches_loop_oracle(
            c in prop::collection::vec(0.0f64..1.0, 4),
            owners in owners_strategy(6, 4),
        ) {
            let maps = maps_from_owners(6, 4, &owners);
            let t = attention_target(&ObjectAttention(c.clone()), &maps).unwrap();
            prop_assert_eq!(t.0, target_oracle(&c, &maps));
        }

        #[test]
        fn region_counting(owners in owners_strategy(5, 3)) {
            let maps = maps_from_owners(5, 3, &owners);
            let w = pixel_weights(&maps).unwrap();
            let n = 25.0;
            // sum over pixels of region-area-fraction/w = number of pixels in nonempty regions,
            // and sum of 1/(w*n) = number of nonempty regions
            let regions: f64 = w.0.iter().map(|v| 1.0 / (v * n)).sum();
            let mut nonempty = (0..3).filter(|&i| maps.area(i) > 0).count();
            if owners.iter().any(|o| o.is_none()) { nonempty += 1; }
            prop_assert!((regions - nonempty as f64).abs() < 1e-9);
            prop_assert!(w.0.iter().all(|&v| v > 0.0 && v <= 1.0));
        }

        #[test]
        fn loss_is_nonnegative_and_zero_only_at_target(
            mask in prop::collection::vec(0.0f64..1.0, 16),
            owners in owners_strategy(4, 2),
            c in prop::collection::vec(0.0f64..1.0, 2),
        ) {
            let maps = maps_from_owners(4, 2, &owners);
            let t = attention_target(&ObjectAttention(c), &maps).unwrap();
            let w = pixel_weights(&maps).unwrap();
            let loss = alignment_mse(&mask, &t, &w).unwrap();
            prop_assert!(loss >= 0.0);
            prop_assert_eq!(loss == 0.0, mask == t.0);
            prop_assert_eq!(alignment_mse(&t.0, &t, &w).unwrap(), 0.0);
        }

        #[test]
        fn target_invariant_to_object_permutation(
            c in prop::collection::vec(0.0f64..1.0, 3),
            owners in owners_strategy(4, 3),
        ) {
            let perm = [2usize, 0, 1];
            let maps = maps_from_owners(4, 3, &owners);
            let permuted_owners: Vec<_> = owners.iter().map(|o| o.map(|i| perm[i])).collect();
            let pmaps = maps_from_owners(4, 3, &permuted_owners);
            let mut pc = vec![0.0; 3];
            for i in 0..3 { pc[perm[i]] = c[i]; }
            let a = attention_target(&ObjectAttention(c), &maps).unwrap();
            let b = attention_target(&ObjectAttention(pc), &pmaps).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
