//! Cross-image priors: fusing neighbors' masks into per-pixel evidence maps,
//! plus the key-prior fast path that cuts alignment counts from quadratic to
//! linear in the cluster size.

use crate::error::Result;
use crate::flow::{warp_map, FlowField};
use crate::raster::{BinaryMask, ScalarMap};

/// Co-skeleton and co-segment priors for one image.
#[derive(Clone, Debug)]
pub struct PriorPair {
    pub coskeleton: ScalarMap,
    pub cosegment: ScalarMap,
}

/// Average of the image's own mask and every neighbor mask warped into its
/// frame: `(M_i + sum_j warp(M_j)) / (|N_i| + 1)`.
fn fuse(own: &BinaryMask, warped_neighbors: &[(&BinaryMask, &FlowField)]) -> Result<ScalarMap> {
    let w = own.width();
    let h = own.height();
    let mut acc = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            if own.get(x, y) {
                acc[y * w + x] = 1.0;
            }
        }
    }
    for (mask, flow) in warped_neighbors {
        let warped = warp_map(flow, &ScalarMap::from_mask(mask))?;
        if warped.width() != w || warped.height() != h {
            return Err(crate::error::Error::dims((w, h), (warped.width(), warped.height())));
        }
        for y in 0..h {
            for x in 0..w {
                acc[y * w + x] += warped.get(x, y);
            }
        }
    }
    let denom = (warped_neighbors.len() + 1) as f64;
    ScalarMap::new(w, h, acc.into_iter().map(|v| v / denom).collect())
}

/// Co-skeleton prior of an image: its own skeleton averaged with neighbors'
/// skeletons warped into its frame. Each flow must live on this image's
/// domain and target the matching neighbor.
pub fn coskeleton_prior(
    own_skeleton: &BinaryMask,
    neighbors: &[(&BinaryMask, &FlowField)],
) -> Result<ScalarMap> {
    fuse(own_skeleton, neighbors)
}

/// Co-segment prior of an image; same fusion with segmentation masks.
pub fn cosegment_prior(
    own_segmentation: &BinaryMask,
    neighbors: &[(&BinaryMask, &FlowField)],
) -> Result<ScalarMap> {
    fuse(own_segmentation, neighbors)
}

/// Both priors of a cluster's key image, fused once over all members: the
/// divisor is the cluster size (the key's own masks plus the other members'
/// warped masks).
pub fn key_priors(
    key_skeleton: &BinaryMask,
    key_segmentation: &BinaryMask,
    members: &[(&BinaryMask, &BinaryMask, &FlowField)],
) -> Result<PriorPair> {
    let skel_pairs: Vec<(&BinaryMask, &FlowField)> =
        members.iter().map(|(k, _, f)| (*k, *f)).collect();
    let seg_pairs: Vec<(&BinaryMask, &FlowField)> =
        members.iter().map(|(_, o, f)| (*o, *f)).collect();
    Ok(PriorPair {
        coskeleton: fuse(key_skeleton, &skel_pairs)?,
        cosegment: fuse(key_segmentation, &seg_pairs)?,
    })
}

/// Warps both key priors into a member's frame; `flow` lives on the member's
/// domain and targets the key image.
pub fn propagate_key_prior(key_prior: &PriorPair, flow: &FlowField) -> Result<PriorPair> {
    Ok(PriorPair {
        coskeleton: warp_map(flow, &key_prior.coskeleton)?,
        cosegment: warp_map(flow, &key_prior.cosegment)?,
    })
}

/// Prior strategy, named by how many alignments it spends.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignmentMode {
    /// Every member aligns to every other member.
    Pairwise,
    /// Members align to the key once, then the key prior aligns back.
    Key,
}

/// Number of alignments a cluster of `n` images costs under each strategy:
/// `n(n-1)` pairwise versus `2(n-1)` through the key image.
pub fn alignment_count(mode: AlignmentMode, cluster_size: usize) -> usize {
    assert!(cluster_size >= 1, "cluster must have at least one member");
    match mode {
        AlignmentMode::Pairwise => cluster_size * (cluster_size - 1),
        AlignmentMode::Key => 2 * (cluster_size - 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shift_flow(w: usize, h: usize, tw: usize, th: usize, dx: i32, dy: i32) -> FlowField {
        FlowField::new(
            w,
            h,
            tw,
            th,
            (0..w * h)
                .map(|i| {
                    let x = (i % w) as i32;
                    let y = (i / w) as i32;
                    [
                        dx.clamp(-x, tw as i32 - 1 - x),
                        dy.clamp(-y, th as i32 - 1 - y),
                    ]
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn no_neighbors_returns_own_mask() {
        let own = BinaryMask::from_fn(8, 8, |x, y| x == y);
        let prior = coskeleton_prior(&own, &[]).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(prior.get(x, y), if x == y { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn identical_neighbor_zero_flow_is_identity() {
        let own = BinaryMask::from_fn(8, 8, |x, y| y == 3 && x > 1 && x < 6);
        let flow = FlowField::zero(8, 8, 8, 8).unwrap();
        let prior = coskeleton_prior(&own, &[(&own, &flow)]).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(prior.get(x, y), if own.get(x, y) { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn disjoint_neighbor_averages_to_half() {
        let own = BinaryMask::from_fn(8, 8, |x, y| y == 1 && x < 4);
        let other = BinaryMask::from_fn(8, 8, |x, y| y == 6 && x >= 4);
        let flow = FlowField::zero(8, 8, 8, 8).unwrap();
        let prior = coskeleton_prior(&own, &[(&other, &flow)]).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let expected = if own.get(x, y) || other.get(x, y) {
                    0.5
                } else {
                    0.0
                };
                assert_eq!(prior.get(x, y), expected);
            }
        }
    }

    #[test]
    fn shifted_neighbor_overlap_average() {
        // Neighbor mask shifted 3 px with the exact flow undoing the shift:
        // prior is 1 on the overlap, 0.5 on the symmetric difference.
        let own = BinaryMask::from_fn(16, 8, |x, y| y == 4 && (2..10).contains(&x));
        let neighbor = BinaryMask::from_fn(16, 8, |x, y| y == 4 && (5..13).contains(&x));
        let flow = shift_flow(16, 8, 16, 8, 3, 0);
        let prior = cosegment_prior(&own, &[(&neighbor, &flow)]).unwrap();
        for x in 2..10 {
            // whole own mask is matched by the warped neighbor
            assert_eq!(prior.get(x, 4), 1.0, "x={x}");
        }
    }

    #[test]
    fn key_prior_cluster_math() {
        let w = 8;
        let mask = BinaryMask::from_fn(w, w, |x, y| y == 2 && x > 0 && x < 6);
        let empty = BinaryMask::empty(w, w);
        let flow = FlowField::zero(w, w, w, w).unwrap();

        // Singleton cluster: prior equals the key's own mask.
        let p = key_priors(&mask, &mask, &[]).unwrap();
        for (x, y) in mask.foreground() {
            assert_eq!(p.coskeleton.get(x, y), 1.0);
        }

        // Two members with identical masks under zero flow.
        let p = key_priors(&mask, &mask, &[(&mask, &mask, &flow)]).unwrap();
        for (x, y) in mask.foreground() {
            assert_eq!(p.coskeleton.get(x, y), 1.0);
            assert_eq!(p.cosegment.get(x, y), 1.0);
        }

        // Three members, one dissenting empty mask: 2/3 on agreed pixels.
        let p = key_priors(
            &mask,
            &mask,
            &[(&mask, &mask, &flow), (&empty, &empty, &flow)],
        )
        .unwrap();
        for (x, y) in mask.foreground() {
            assert!((p.coskeleton.get(x, y) - 2.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn propagation_examples() {
        let w = 10;
        let mask = BinaryMask::from_fn(w, w, |x, y| x == 5 && y > 2 && y < 8);
        let pair = key_priors(&mask, &mask, &[]).unwrap();

        let zero = FlowField::zero(w, w, w, w).unwrap();
        let same = propagate_key_prior(&pair, &zero).unwrap();
        assert_eq!(same.coskeleton, pair.coskeleton);

        let shifted = propagate_key_prior(&pair, &shift_flow(w, w, w, w, 2, 0)).unwrap();
        // Member pixel (3, y) samples key pixel (5, y).
        for y in 3..8 {
            assert_eq!(shifted.coskeleton.get(3, y), 1.0);
        }
        assert!(shifted.coskeleton.min() >= 0.0 && shifted.coskeleton.max() <= 1.0);
    }

    #[test]
    fn alignment_count_formulas() {
        assert_eq!(alignment_count(AlignmentMode::Pairwise, 10), 90);
        assert_eq!(alignment_count(AlignmentMode::Key, 10), 18);
        assert_eq!(alignment_count(AlignmentMode::Pairwise, 1), 0);
        assert_eq!(alignment_count(AlignmentMode::Key, 1), 0);
        assert_eq!(alignment_count(AlignmentMode::Pairwise, 2), 2);
        assert_eq!(alignment_count(AlignmentMode::Key, 2), 2);
        for n in 3..50 {
            assert!(alignment_count(AlignmentMode::Key, n) < alignment_count(AlignmentMode::Pairwise, n));
        }
    }

    #[test]
    fn key_equals_pairwise_under_identity() {
        // Identity flows and identical masks: the propagated key prior
        // matches the pairwise prior pixel for pixel.
        let w = 12;
        let mask = BinaryMask::from_fn(w, w, |x, y| (3..9).contains(&x) && (4..8).contains(&y));
        let flow = FlowField::zero(w, w, w, w).unwrap();
        let pairwise = cosegment_prior(&mask, &[(&mask, &flow), (&mask, &flow)]).unwrap();
        let key = key_priors(&mask, &mask, &[(&mask, &mask, &flow), (&mask, &mask, &flow)])
            .unwrap();
        let propagated = propagate_key_prior(&key, &flow).unwrap();
        assert_eq!(pairwise, propagated.cosegment);
    }

    proptest! {
        #[test]
        fn prior_values_stay_in_unit_interval(bits_a in prop::collection::vec(any::<bool>(), 36),
                                              bits_b in prop::collection::vec(any::<bool>(), 36),
                                              dx in -3i32..3, dy in -3i32..3) {
            let a = BinaryMask::new(6, 6, bits_a).unwrap();
            let b = BinaryMask::new(6, 6, bits_b).unwrap();
            let flow = shift_flow(6, 6, 6, 6, dx, dy);
            let prior = coskeleton_prior(&a, &[(&b, &flow)]).unwrap();
            prop_assert!(prior.min() >= 0.0);
            prop_assert!(prior.max() <= 1.0);
            // Value 1 only where both contributing maps are 1.
            for y in 0..6 {
                for x in 0..6 {
                    if prior.get(x, y) == 1.0 {
                        prop_assert!(a.get(x, y));
                    }
                }
            }
        }
    }
}
