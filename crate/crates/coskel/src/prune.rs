//! Skeleton energy terms and greedy branch pruning.
//!
//! A skeleton is scored by three terms: agreement with the fused cross-image
//! prior, how well its maximal-disk reconstruction matches the shape, and a
//! smoothness penalty that punishes many or short branches. Pruning removes
//! terminal branches greedily while the total drops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, IntegralMap, PixelNeighborhood, ScalarMap, mask_iou};
use crate::skeleton::{SkeletonGeometry, SkeletonGraph, extract_branches, reconstruct_shape};

/// Weights and windows of the skeleton energy.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SkeletonEnergyConfig {
    /// Weight of the cross-image prior term.
    pub lambda: f64,
    /// Normalization of the reconstruction term.
    pub alpha: f64,
    /// Window for accumulating prior scores around a skeleton pixel.
    pub neighborhood: PixelNeighborhood,
    /// Floor applied inside logs of the reconstruction overlap.
    pub epsilon: f64,
}

impl Default for SkeletonEnergyConfig {
    fn default() -> Self {
        SkeletonEnergyConfig {
            lambda: 0.1,
            alpha: 10.0,
            neighborhood: PixelNeighborhood::new(2),
            epsilon: 1e-6,
        }
    }
}

impl SkeletonEnergyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::InvalidInput("lambda must be >= 0".into()));
        }
        if self.alpha <= 0.0 {
            return Err(Error::InvalidInput("alpha must be > 0".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidInput("epsilon must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// The three components of the skeleton energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkeletonEnergy {
    pub prior: f64,
    pub interdependence: f64,
    pub smoothness: f64,
}

impl SkeletonEnergy {
    pub fn total(&self, lambda: f64) -> f64 {
        lambda * self.prior + self.interdependence + self.smoothness
    }
}

/// Prior consistency term: mean over skeleton pixels of
/// `-log(1 + sum of prior scores in the window)`. An empty skeleton scores 0.
pub fn prior_term_k(
    k: &BinaryMask,
    prior: &ScalarMap,
    cfg: &SkeletonEnergyConfig,
) -> Result<f64> {
    if k.width() != prior.width() || k.height() != prior.height() {
        return Err(Error::dims(
            (prior.width(), prior.height()),
            (k.width(), k.height()),
        ));
    }
    cfg.validate()?;
    let integral = IntegralMap::new(prior);
    Ok(prior_term_cached(k, &integral, cfg.neighborhood.radius))
}

fn prior_term_cached(k: &BinaryMask, integral: &IntegralMap, radius: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (x, y) in k.foreground() {
        sum += (1.0 + integral.box_sum(x, y, radius)).ln();
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        -sum / count as f64
    }
}

/// Reconstruction term: `-alpha * log(max(IoU(R(K, O), O), epsilon))`.
pub fn interdependence_term_k(
    k: &BinaryMask,
    geom: &SkeletonGeometry,
    shape: &BinaryMask,
    cfg: &SkeletonEnergyConfig,
) -> Result<f64> {
    cfg.validate()?;
    let recon = reconstruct_shape(geom, k)?;
    let iou = mask_iou(&recon, shape)?;
    Ok(-cfg.alpha * iou.max(cfg.epsilon).ln())
}

/// Branch smoothness term: `|b| * sum_u 1 / length(b_u)`; 0 for the empty
/// skeleton.
pub fn smoothness_term_k(graph: &SkeletonGraph) -> Result<f64> {
    if graph.branches.is_empty() {
        return Ok(0.0);
    }
    let mut inv_sum = 0.0;
    for b in &graph.branches {
        if b.is_empty() {
            return Err(Error::InvalidInput("zero-length branch".into()));
        }
        inv_sum += 1.0 / b.len() as f64;
    }
    Ok(graph.branches.len() as f64 * inv_sum)
}

/// All three skeleton energy components for a candidate skeleton `k` over
/// shape `shape`, with `geom` built from that shape.
pub fn skeleton_energy(
    k: &BinaryMask,
    geom: &SkeletonGeometry,
    shape: &BinaryMask,
    prior: &ScalarMap,
    cfg: &SkeletonEnergyConfig,
) -> Result<SkeletonEnergy> {
    Ok(SkeletonEnergy {
        prior: prior_term_k(k, prior, cfg)?,
        interdependence: interdependence_term_k(k, geom, shape, cfg)?,
        smoothness: smoothness_term_k(&extract_branches(k))?,
    })
}

fn branch_union(
    branches: &[crate::skeleton::Branch],
    keep: impl Fn(usize) -> bool,
    width: usize,
    height: usize,
) -> BinaryMask {
    let mut mask = BinaryMask::empty(width, height);
    for (i, b) in branches.iter().enumerate() {
        if keep(i) {
            for &(x, y) in &b.pixels {
                mask.set(x, y, true);
            }
        }
    }
    mask
}

/// Greedy branch pruning of the medial axis under the skeleton energy.
///
/// At each step the terminal branch whose removal lowers the total energy
/// the most is dropped; ties prefer the shorter branch. The loop stops when
/// no single removal helps, so the result is 1-local-optimal and always a
/// subset of the medial axis.
pub fn prune_skeleton(
    geom: &SkeletonGeometry,
    shape: &BinaryMask,
    prior: &ScalarMap,
    cfg: &SkeletonEnergyConfig,
) -> Result<BinaryMask> {
    Ok(prune_with_trace(geom, shape, prior, cfg)?.0)
}

/// Pruning with the energies of every accepted state (initial state first).
pub fn prune_with_trace(
    geom: &SkeletonGeometry,
    shape: &BinaryMask,
    prior: &ScalarMap,
    cfg: &SkeletonEnergyConfig,
) -> Result<(BinaryMask, Vec<f64>)> {
    prune_from(geom.skeleton().clone(), geom, shape, prior, cfg)
}

pub(crate) fn prune_from(
    start: BinaryMask,
    geom: &SkeletonGeometry,
    shape: &BinaryMask,
    prior: &ScalarMap,
    cfg: &SkeletonEnergyConfig,
) -> Result<(BinaryMask, Vec<f64>)> {
    cfg.validate()?;
    if !start.is_subset_of(geom.skeleton()) {
        return Err(Error::InvalidInput(
            "start skeleton is not a subset of the medial axis".into(),
        ));
    }
    if prior.width() != geom.width() || prior.height() != geom.height() {
        return Err(Error::dims(
            (geom.width(), geom.height()),
            (prior.width(), prior.height()),
        ));
    }
    let integral = IntegralMap::new(prior);
    let radius = cfg.neighborhood.radius;
    let energy_of = |k: &BinaryMask| -> Result<f64> {
        let e = SkeletonEnergy {
            prior: prior_term_cached(k, &integral, radius),
            interdependence: interdependence_term_k(k, geom, shape, cfg)?,
            smoothness: smoothness_term_k(&extract_branches(k))?,
        };
        Ok(e.total(cfg.lambda))
    };

    let mut current = start;
    let mut trace = vec![energy_of(&current)?];
    loop {
        let graph = extract_branches(&current);
        let current_energy = *trace.last().unwrap();
        let mut best: Option<(f64, usize, usize)> = None; // (energy, branch len, index)
        for (i, branch) in graph.branches.iter().enumerate() {
            if !branch.terminal {
                continue;
            }
            let candidate = branch_union(
                &graph.branches,
                |j| j != i,
                current.width(),
                current.height(),
            );
            let e = energy_of(&candidate)?;
            let key = (e, branch.len(), i);
            if best.map_or(true, |b| key < b) {
                best = Some(key);
            }
        }
        match best {
            Some((e, _, i)) if e < current_energy => {
                current = branch_union(
                    &graph.branches,
                    |j| j != i,
                    current.width(),
                    current.height(),
                );
                trace.push(e);
            }
            _ => break,
        }
    }
    Ok((current, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::medial_axis;
    use crate::synth::shape_suite;

    fn disk_mask(side: usize, r: f64) -> BinaryMask {
        let c = ((side - 1) / 2) as f64;
        BinaryMask::from_fn(side, side, |x, y| {
            ((x as f64 - c).powi(2) + (y as f64 - c).powi(2)).sqrt() <= r
        })
    }

    #[test]
    fn prior_term_zero_prior() {
        let k = BinaryMask::from_fn(8, 8, |x, y| y == 4 && x > 1 && x < 7);
        let prior = ScalarMap::zeros(8, 8);
        let cfg = SkeletonEnergyConfig::default();
        assert_eq!(prior_term_k(&k, &prior, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn prior_term_unit_window_sum() {
        // With radius 0 and prior exactly 1 on skeleton pixels, every pixel
        // contributes -ln 2.
        let k = BinaryMask::from_fn(8, 8, |x, y| y == 4 && (2..6).contains(&x));
        let prior = ScalarMap::from_fn(8, 8, |x, y| if k.get(x, y) { 1.0 } else { 0.0 });
        let cfg = SkeletonEnergyConfig {
            neighborhood: PixelNeighborhood::new(0),
            ..Default::default()
        };
        let v = prior_term_k(&k, &prior, &cfg).unwrap();
        assert!((v + 2f64.ln()).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn prior_term_empty_skeleton() {
        let k = BinaryMask::empty(8, 8);
        let prior = ScalarMap::filled(8, 8, 1.0);
        let cfg = SkeletonEnergyConfig::default();
        assert_eq!(prior_term_k(&k, &prior, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn interdependence_exact_reconstruction_is_zero() {
        // A centered disk reconstructs exactly from its center pixel.
        let shape = disk_mask(25, 10.5);
        let geom = medial_axis(&shape).unwrap();
        let mut kept = BinaryMask::empty(25, 25);
        kept.set(12, 12, true);
        let cfg = SkeletonEnergyConfig::default();
        let v = interdependence_term_k(&kept, &geom, &shape, &cfg).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn interdependence_full_axis_bound() {
        let cfg = SkeletonEnergyConfig::default();
        for (name, shape) in shape_suite() {
            let geom = medial_axis(&shape).unwrap();
            let v = interdependence_term_k(geom.skeleton(), &geom, &shape, &cfg).unwrap();
            let bound = -cfg.alpha * 0.95f64.ln();
            assert!(v <= bound + 1e-12, "{name}: {v} > {bound}");
        }
    }

    #[test]
    fn interdependence_empty_skeleton_clamps() {
        let shape = disk_mask(25, 10.5);
        let geom = medial_axis(&shape).unwrap();
        let kept = BinaryMask::empty(25, 25);
        let cfg = SkeletonEnergyConfig::default();
        let v = interdependence_term_k(&kept, &geom, &shape, &cfg).unwrap();
        assert!((v - (-cfg.alpha * cfg.epsilon.ln())).abs() < 1e-9);
    }

    #[test]
    fn interdependence_rejects_non_subset() {
        let shape = disk_mask(25, 10.5);
        let geom = medial_axis(&shape).unwrap();
        let mut kept = BinaryMask::empty(25, 25);
        kept.set(0, 0, true);
        let cfg = SkeletonEnergyConfig::default();
        assert!(interdependence_term_k(&kept, &geom, &shape, &cfg).is_err());
    }

    #[test]
    fn smoothness_direct_values() {
        use crate::skeleton::Branch;
        let line = |n: usize, y: usize| Branch {
            pixels: (0..n).map(|x| (x, y)).collect(),
            terminal: true,
        };
        let one = SkeletonGraph {
            branches: vec![line(10, 0)],
            junctions: vec![],
            endpoints: vec![],
        };
        assert!((smoothness_term_k(&one).unwrap() - 0.1).abs() < 1e-12);
        let two = SkeletonGraph {
            branches: vec![line(10, 0), line(5, 2)],
            junctions: vec![],
            endpoints: vec![],
        };
        assert!((smoothness_term_k(&two).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(smoothness_term_k(&SkeletonGraph::default()).unwrap(), 0.0);
    }

    #[test]
    fn prune_disk_never_increases_energy() {
        let shape = disk_mask(31, 12.5);
        let geom = medial_axis(&shape).unwrap();
        let prior = ScalarMap::zeros(31, 31);
        let cfg = SkeletonEnergyConfig::default();
        let (pruned, trace) = prune_with_trace(&geom, &shape, &prior, &cfg).unwrap();
        assert!(pruned.is_subset_of(geom.skeleton()));
        for pair in trace.windows(2) {
            assert!(pair[1] < pair[0], "non-decreasing step: {pair:?}");
        }
        // The surviving skeleton still reconstructs the disk.
        let recon = reconstruct_shape(&geom, &pruned).unwrap();
        assert!(mask_iou(&recon, &shape).unwrap() >= 0.9);
    }

    #[test]
    fn prune_removes_boundary_bump_spur() {
        // 31x9 rectangle with a 2-pixel bump on the top edge. The spur the
        // bump grows on the axis costs more smoothness than its IoU gain.
        let mut shape = BinaryMask::from_fn(39, 17, |x, y| {
            (4..35).contains(&x) && (4..13).contains(&y)
        });
        shape.set(19, 3, true);
        shape.set(19, 2, true);
        let geom = medial_axis(&shape).unwrap();
        // The axis reaches up towards the bump before pruning.
        assert!(geom.skeleton().foreground().any(|(_, y)| y < 6));

        let prior = ScalarMap::zeros(39, 17);
        let cfg = SkeletonEnergyConfig {
            lambda: 0.0,
            ..Default::default()
        };

        // Evaluate both energies explicitly: full axis vs the axis with the
        // spur branch (the one reaching toward the bump, above the rect's
        // interior band) dropped.
        let full = geom.skeleton().clone();
        let graph = extract_branches(&full);
        let spur: Vec<usize> = graph
            .branches
            .iter()
            .enumerate()
            .filter(|(_, b)| b.pixels.iter().any(|&(x, y)| x == 19 && y < 7))
            .map(|(i, _)| i)
            .collect();
        assert!(!spur.is_empty(), "axis grew no spur toward the bump");
        let trimmed = branch_union(&graph.branches, |i| !spur.contains(&i), 39, 17);
        let e_full = skeleton_energy(&full, &geom, &shape, &prior, &cfg)
            .unwrap()
            .total(cfg.lambda);
        let e_trimmed = skeleton_energy(&trimmed, &geom, &shape, &prior, &cfg)
            .unwrap()
            .total(cfg.lambda);
        assert!(e_trimmed < e_full, "{e_trimmed} !< {e_full}");

        let pruned = prune_skeleton(&geom, &shape, &prior, &cfg).unwrap();
        // The ridge pixel where the spur met the trunk stays on the trunk
        // path; everything reaching toward the bump is gone.
        assert!(
            pruned.foreground().all(|(x, y)| !(x == 19 && y < 7)),
            "spur survived pruning"
        );
    }

    #[test]
    fn prune_is_idempotent() {
        let prior = ScalarMap::zeros(56, 56);
        let cfg = SkeletonEnergyConfig::default();
        for (name, shape) in shape_suite().into_iter().take(8) {
            let geom = medial_axis(&shape).unwrap();
            let prior = ScalarMap::zeros(geom.width(), geom.height());
            let (once, _) = prune_with_trace(&geom, &shape, &prior, &cfg).unwrap();
            let (twice, trace) =
                prune_from(once.clone(), &geom, &shape, &prior, &cfg).unwrap();
            assert_eq!(once, twice, "{name}: pruning not idempotent");
            assert_eq!(trace.len(), 1, "{name}: second pass accepted a removal");
        }
        let _ = prior;
    }

    #[test]
    fn prune_matches_subset_oracle_on_small_skeletons() {
        let cfg = SkeletonEnergyConfig::default();
        for (name, shape) in shape_suite() {
            let geom = medial_axis(&shape).unwrap();
            let prior = ScalarMap::zeros(geom.width(), geom.height());
            let graph = extract_branches(geom.skeleton());
            if graph.branches.len() > 8 {
                continue;
            }
            let n = graph.branches.len();
            let energy_of = |mask: &BinaryMask| {
                skeleton_energy(mask, &geom, &shape, &prior, &cfg)
                    .unwrap()
                    .total(cfg.lambda)
            };
            let mut subset_energies = Vec::new();
            for bits in 0..(1u32 << n) {
                let mask = branch_union(
                    &graph.branches,
                    |i| bits & (1 << i) != 0,
                    geom.width(),
                    geom.height(),
                );
                subset_energies.push(energy_of(&mask));
            }
            let (pruned, trace) = prune_with_trace(&geom, &shape, &prior, &cfg).unwrap();
            let final_energy = *trace.last().unwrap();
            assert!(
                subset_energies.iter().any(|&e| (e - final_energy).abs() < 1e-9),
                "{name}: greedy energy not among subset energies"
            );
            assert!(final_energy <= energy_of(geom.skeleton()) + 1e-12, "{name}");
            let _ = pruned;
        }
    }

    #[test]
    fn prune_with_huge_alpha_preserves_reconstruction() {
        // With no prior term and a dominant reconstruction weight, pruning
        // must not sacrifice coverage for smoothness.
        let cfg = SkeletonEnergyConfig {
            lambda: 0.0,
            alpha: 1e6,
            ..Default::default()
        };
        for (name, shape) in shape_suite().into_iter().take(10) {
            let geom = medial_axis(&shape).unwrap();
            let prior = ScalarMap::zeros(geom.width(), geom.height());
            let pruned = prune_skeleton(&geom, &shape, &prior, &cfg).unwrap();
            let full = reconstruct_shape(&geom, geom.skeleton()).unwrap();
            let part = reconstruct_shape(&geom, &pruned).unwrap();
            let iou_full = mask_iou(&full, &shape).unwrap();
            let iou_part = mask_iou(&part, &shape).unwrap();
            assert!(
                iou_part >= iou_full * (1.0 - 1e-3),
                "{name}: coverage dropped {iou_full} -> {iou_part}"
            );
        }
    }
}
