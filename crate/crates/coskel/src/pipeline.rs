//! The batch engine: scenario-dependent initialization, alternation of the
//! segmentation and pruning solvers over the whole collection, energy-based
//! stopping, and the run manifest.
//!
//! Updates are Jacobi-style: every iteration builds all priors from the
//! previous iteration's masks, so images within an iteration are independent
//! and processed in parallel without affecting the result.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{DatasetEntry, Split};
use crate::flow::{ComputedFlows, FlowConfig, FlowField, FlowProvider};
use crate::gist::scene_descriptor;
use crate::io;
use crate::neighbors::{build_neighbors, Mode, NeighborStructure};
use crate::prior::{
    alignment_count, cosegment_prior, coskeleton_prior, key_priors, propagate_key_prior,
    AlignmentMode, PriorPair,
};
use crate::prune::{prune_skeleton, SkeletonEnergy, SkeletonEnergyConfig};
use crate::raster::{BinaryMask, Raster, ScalarMap};
use crate::saliency::{otsu_threshold, BuiltinSaliency, SaliencyConfig, SaliencyProvider};
use crate::segment::{
    fit_appearance_models, fit_appearance_models_from_priors, grabcut, segment,
    segmentation_energy, unary_costs, AppearanceModels, SegmentationConfig, SegmentationEnergy,
};
use crate::skeleton::{extract_branches, medial_axis, reconstruct_within, SkeletonGeometry};

/// Cost of a forbidden label under hard seeding.
const HARD_COST: f64 = 1e9;

/// Everything a run needs to know.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    /// Weight of both cross-image prior terms (overrides the solver copies).
    pub lambda: f64,
    pub max_iterations: usize,
    /// Generate priors once per cluster at the key image and warp them to
    /// members instead of aligning every pair.
    pub use_key_priors: bool,
    /// When false, the two tasks are decoupled: segmentation iterates on
    /// prior-seeded models alone and skeletons are cut from the final masks.
    pub interdependence: bool,
    pub k_clusters: Option<usize>,
    pub k_nn: Option<usize>,
    pub seed: u64,
    /// Worker threads for the parallel sections; 0 uses the global default.
    pub workers: usize,
    /// Dump fused priors as 16-bit images every iteration.
    pub dump_priors: bool,
    pub saliency: SaliencyConfig,
    pub skeleton: SkeletonEnergyConfig,
    pub segmentation: SegmentationConfig,
    pub flow: FlowConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Unsupervised,
            lambda: 0.1,
            max_iterations: 5,
            use_key_priors: false,
            interdependence: true,
            k_clusters: None,
            k_nn: None,
            seed: 0,
            workers: 0,
            dump_priors: false,
            saliency: SaliencyConfig::default(),
            skeleton: SkeletonEnergyConfig::default(),
            segmentation: SegmentationConfig::default(),
            flow: FlowConfig::default(),
        }
    }
}

impl RunConfig {
    /// Copies the run-level lambda and seed into the solver configs.
    pub fn resolved(&self) -> RunConfig {
        let mut cfg = self.clone();
        cfg.skeleton.lambda = cfg.lambda;
        cfg.segmentation.lambda = cfg.lambda;
        cfg.segmentation.seed = cfg.seed;
        cfg.flow.seed = cfg.seed;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be >= 1".into()));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidInput("lambda must be >= 0".into()));
        }
        self.skeleton.validate()?;
        self.segmentation.validate()?;
        self.flow.validate()?;
        Ok(())
    }

    /// Stable hash of the serialized config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let mut h = 0xcbf29ce484222325u64;
        for b in json {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

/// One input image of the collection.
#[derive(Clone, Debug)]
pub struct CollectionImage {
    pub stem: String,
    pub category: Option<String>,
    pub raster: Raster,
    /// Skeleton annotation; required for training images in supervised mode.
    pub gt_skeleton: Option<BinaryMask>,
    pub is_train: bool,
}

impl CollectionImage {
    pub fn from_entries(entries: Vec<DatasetEntry>) -> Vec<CollectionImage> {
        entries
            .into_iter()
            .map(|e| CollectionImage {
                stem: e.stem,
                category: e.category,
                raster: e.image,
                gt_skeleton: e.gt_skeleton,
                is_train: e.split == Split::Train,
            })
            .collect()
    }
}

/// Saliency and flow sources for a run.
pub struct Providers {
    pub saliency: Box<dyn SaliencyProvider>,
    pub flows: Box<dyn FlowProvider>,
}

impl Providers {
    pub fn from_config(cfg: &RunConfig, flow_cache: Option<PathBuf>) -> Providers {
        Providers {
            saliency: Box::new(BuiltinSaliency {
                config: cfg.saliency,
            }),
            flows: Box::new(ComputedFlows {
                config: cfg.resolved().flow,
                cache_dir: flow_cache,
            }),
        }
    }
}

/// Energy components recorded for one accepted or rejected iterate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub skeleton_energy: SkeletonEnergy,
    pub segmentation_energy: SegmentationEnergy,
    pub total: f64,
    pub accepted: bool,
    pub flagged: bool,
}

/// Combined objective at a state: both prior terms weighted by lambda plus
/// the interdependence and smoothness pairs.
pub fn total_energy(
    skeleton: &SkeletonEnergy,
    segmentation: &SegmentationEnergy,
    lambda: f64,
) -> f64 {
    skeleton.total(lambda) + segmentation.total(lambda)
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct ImageOutputs {
    pub segmentation: String,
    pub skeleton: String,
    pub overlay: String,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct ImageManifest {
    pub stem: String,
    pub category: Option<String>,
    pub iterations: Vec<IterationRecord>,
    /// Index of the minimal-energy iterate that the outputs show.
    pub best_iteration: usize,
    pub flagged: bool,
    pub outputs: Option<ImageOutputs>,
}

#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct ClusterAlignment {
    pub cluster: usize,
    pub size: usize,
    pub pairwise: usize,
    pub key: usize,
}

/// Everything recorded about a run; serialized as `manifest.json`.
/// Deliberately free of wall-clock fields so reruns are byte-identical.
#[derive(Serialize, Deserialize, Clone, Debug)]
pub struct Manifest {
    pub config: RunConfig,
    pub config_hash: String,
    pub neighbors: NeighborStructure,
    pub alignment: Vec<ClusterAlignment>,
    pub flow_count: usize,
    pub constraint_violations: usize,
    pub images: Vec<ImageManifest>,
}

/// One image's masks per recorded iteration.
#[derive(Clone, Debug)]
pub struct IterateMasks {
    pub skeleton: BinaryMask,
    pub segmentation: BinaryMask,
}

/// Final per-image result with full history.
#[derive(Clone, Debug)]
pub struct ImageOutcome {
    pub stem: String,
    pub category: Option<String>,
    pub final_skeleton: BinaryMask,
    pub final_segmentation: BinaryMask,
    pub history: Vec<IterateMasks>,
}

pub struct RunOutcome {
    pub manifest: Manifest,
    pub images: Vec<ImageOutcome>,
}

/// Initial skeleton and segmentation for one image.
#[derive(Clone, Debug)]
pub struct InitialState {
    pub skeleton: BinaryMask,
    pub segmentation: BinaryMask,
}

/// Segmentation from a trusted skeleton: hard foreground on the skeleton,
/// hard background outside its bounding box dilated by 10% per side, with
/// appearance models seeded accordingly and re-estimated across rounds.
pub fn segmentation_from_skeleton(
    img: &Raster,
    skeleton: &BinaryMask,
    cfg: &SegmentationConfig,
) -> Result<BinaryMask> {
    let (x0, y0, x1, y1) = skeleton
        .bounding_box()
        .ok_or_else(|| Error::DegenerateInput("empty skeleton annotation".into()))?;
    let dx = ((x1 - x0 + 1) as f64 * 0.1).ceil() as usize;
    let dy = ((y1 - y0 + 1) as f64 * 0.1).ceil() as usize;
    let bx0 = x0.saturating_sub(dx);
    let by0 = y0.saturating_sub(dy);
    let bx1 = (x1 + dx).min(img.width() - 1);
    let by1 = (y1 + dy).min(img.height() - 1);
    let in_box =
        |x: usize, y: usize| (bx0..=bx1).contains(&x) && (by0..=by1).contains(&y);

    let mut fg_colors = Vec::new();
    let mut bg_colors = Vec::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if skeleton.get(x, y) {
                fg_colors.push(img.pixel(x, y));
            } else if !in_box(x, y) {
                bg_colors.push(img.pixel(x, y));
            }
        }
    }
    if bg_colors.is_empty() {
        // Box swallowed the frame; fall back to non-skeleton pixels.
        for y in 0..img.height() {
            for x in 0..img.width() {
                if !skeleton.get(x, y) {
                    bg_colors.push(img.pixel(x, y));
                }
            }
        }
    }
    let mut models = AppearanceModels {
        foreground: crate::gmm::GaussianMixture::fit(&fg_colors, cfg.gmm_components, cfg.seed)?,
        background: crate::gmm::GaussianMixture::fit(
            &bg_colors,
            cfg.gmm_components,
            cfg.seed ^ 0x5ca1ab1e,
        )?,
    };
    let neutral = ScalarMap::filled(img.width(), img.height(), 0.5);

    let mut labeling = BinaryMask::empty(img.width(), img.height());
    for round in 0..cfg.graphcut_rounds {
        if round > 0 {
            let mut fg = Vec::new();
            let mut bg = Vec::new();
            for y in 0..img.height() {
                for x in 0..img.width() {
                    if labeling.get(x, y) {
                        fg.push(img.pixel(x, y));
                    } else {
                        bg.push(img.pixel(x, y));
                    }
                }
            }
            if fg.is_empty() || bg.is_empty() {
                break;
            }
            models.foreground.refit(&fg, 30)?;
            models.background.refit(&bg, 30)?;
        }
        let mut unary = unary_costs(img, &models, &neutral, cfg)?;
        for y in 0..img.height() {
            for x in 0..img.width() {
                let idx = y * img.width() + x;
                if skeleton.get(x, y) {
                    unary.background[idx] = HARD_COST;
                } else if !in_box(x, y) {
                    unary.foreground[idx] = HARD_COST;
                }
            }
        }
        labeling = segment(img, &unary, cfg)?;
    }
    Ok(labeling)
}

/// Per-scenario initialization. Test and unlabeled images start from the
/// Otsu-thresholded saliency map with the full medial axis as skeleton;
/// training images start from their skeleton annotation and a
/// skeleton-seeded segmentation.
pub fn initialize(
    collection: &[CollectionImage],
    mode: Mode,
    saliency: &dyn SaliencyProvider,
    cfg: &RunConfig,
) -> Result<Vec<InitialState>> {
    let cfg = cfg.resolved();
    collection
        .par_iter()
        .map(|img| {
            if mode == Mode::Supervised && img.is_train {
                let annotation = img.gt_skeleton.as_ref().ok_or_else(|| {
                    Error::MissingInput(format!(
                        "training image '{}' lacks a skeleton annotation",
                        img.stem
                    ))
                })?;
                let segmentation =
                    segmentation_from_skeleton(&img.raster, annotation, &cfg.segmentation)?;
                return Ok(InitialState {
                    skeleton: annotation.clone(),
                    segmentation,
                });
            }
            let sal = saliency.saliency(&img.stem, &img.raster)?;
            let segmentation = match otsu_threshold(&sal) {
                Ok(mask) => mask,
                // Constant saliency: nothing to separate, take everything.
                Err(Error::DegenerateInput(_)) => {
                    BinaryMask::full(img.raster.width(), img.raster.height())
                }
                Err(e) => return Err(e),
            };
            let geometry = medial_axis(&segmentation)?;
            Ok(InitialState {
                skeleton: geometry.skeleton().clone(),
                segmentation,
            })
        })
        .collect()
}

struct Working {
    skeleton: BinaryMask,
    segmentation: BinaryMask,
    geometry: SkeletonGeometry,
    stopped: bool,
    flagged: bool,
    records: Vec<IterationRecord>,
    history: Vec<IterateMasks>,
}

/// Energy components of a stored state, evaluated with appearance models
/// re-derivable from the masks: fresh models fitted from the skeleton and
/// its reconstruction, or the supplied initialization models.
fn evaluate_state(
    img: &Raster,
    skeleton: &BinaryMask,
    segmentation: &BinaryMask,
    geometry: &SkeletonGeometry,
    priors: &PriorPair,
    skel_cfg: &SkeletonEnergyConfig,
    seg_cfg: &SegmentationConfig,
    models: Option<&AppearanceModels>,
) -> Result<(SkeletonEnergy, SegmentationEnergy)> {
    let recon = reconstruct_within(segmentation, skeleton)?;
    let skel_energy = SkeletonEnergy {
        prior: crate::prune::prior_term_k(skeleton, &priors.coskeleton, skel_cfg)?,
        interdependence: {
            let iou = crate::raster::mask_iou(&recon, segmentation)?;
            -skel_cfg.alpha * iou.max(skel_cfg.epsilon).ln()
        },
        smoothness: crate::prune::smoothness_term_k(&extract_branches(skeleton))?,
    };
    let owned;
    let models = match models {
        Some(m) => m,
        None => {
            owned = match fit_appearance_models(img, skeleton, &recon, seg_cfg) {
                Ok(m) => m,
                Err(Error::DegenerateInput(_)) => fit_appearance_models_from_priors(
                    img,
                    &priors.coskeleton,
                    &priors.cosegment,
                    seg_cfg,
                )?,
                Err(e) => return Err(e),
            };
            &owned
        }
    };
    let seg_energy = segmentation_energy(img, segmentation, models, &priors.cosegment, seg_cfg)?;
    let _ = geometry;
    Ok((skel_energy, seg_energy))
}

struct IterationOutcome {
    index: usize,
    update: Option<(BinaryMask, BinaryMask, SkeletonGeometry)>,
    record: IterationRecord,
    initial_record: Option<IterationRecord>,
    flagged: bool,
}

/// Neighbor structure plus the ordered image pairs whose flows a run needs:
/// all `(i, j)` with `j` a neighbor of `i` in pairwise mode, or the two
/// directions between each cluster key and its members in key mode.
pub fn plan_flows(
    collection: &[CollectionImage],
    cfg: &RunConfig,
) -> Result<(NeighborStructure, Vec<(usize, usize)>)> {
    let descriptors: Vec<_> = collection
        .par_iter()
        .map(|img| scene_descriptor(&img.raster))
        .collect();
    let labels: Option<Vec<String>> = if cfg.mode == Mode::WeaklySupervised {
        Some(
            collection
                .iter()
                .map(|img| img.category.clone().unwrap_or_default())
                .collect(),
        )
    } else {
        None
    };
    let train: Option<Vec<bool>> = if cfg.mode == Mode::Supervised {
        Some(collection.iter().map(|img| img.is_train).collect())
    } else {
        None
    };
    let neighbors = build_neighbors(
        cfg.mode,
        &descriptors,
        labels.as_deref(),
        train.as_deref(),
        cfg.k_clusters,
        cfg.k_nn,
        cfg.seed,
    )?;
    let use_key = cfg.use_key_priors && neighbors.clusters.is_some();
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    if use_key {
        for cluster in neighbors.clusters.as_ref().unwrap() {
            for &j in &cluster.members {
                if j != cluster.key {
                    pairs.push((cluster.key, j));
                    pairs.push((j, cluster.key));
                }
            }
        }
    } else {
        for (i, nb) in neighbors.neighbors.iter().enumerate() {
            for &j in nb {
                pairs.push((i, j));
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    Ok((neighbors, pairs))
}

fn run_inner(
    collection: &[CollectionImage],
    cfg: &RunConfig,
    providers: &Providers,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let n = collection.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty collection".into()));
    }

    let (neighbors, pairs) = plan_flows(collection, &cfg)?;
    let use_key = cfg.use_key_priors && neighbors.clusters.is_some();

    // Flow pre-pass: every alignment the run needs, computed once.
    let flow_list: Result<Vec<((usize, usize), FlowField)>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            providers
                .flows
                .flow(
                    &collection[a].stem,
                    &collection[a].raster,
                    &collection[b].stem,
                    &collection[b].raster,
                )
                .map(|f| ((a, b), f))
        })
        .collect();
    let flows: HashMap<(usize, usize), FlowField> = flow_list?.into_iter().collect();

    // Initialization.
    let init = initialize(collection, cfg.mode, providers.saliency.as_ref(), &cfg)?;
    let mut working: Vec<Working> = init
        .into_par_iter()
        .zip(collection.par_iter())
        .map(|(state, _img)| {
            let geometry = medial_axis(&state.segmentation)?;
            Ok(Working {
                history: vec![IterateMasks {
                    skeleton: state.skeleton.clone(),
                    segmentation: state.segmentation.clone(),
                }],
                skeleton: state.skeleton,
                segmentation: state.segmentation,
                geometry,
                stopped: false,
                flagged: false,
                records: Vec::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut constraint_violations = 0usize;
    for iteration in 1..=cfg.max_iterations {
        let active: Vec<usize> = (0..n).filter(|&i| !working[i].stopped).collect();
        if active.is_empty() {
            break;
        }
        // Snapshot of the current masks (Jacobi update).
        let snapshot: Vec<(BinaryMask, BinaryMask)> = working
            .iter()
            .map(|w| (w.skeleton.clone(), w.segmentation.clone()))
            .collect();

        // Fused priors for the active images.
        let priors: HashMap<usize, PriorPair> = if use_key {
            let clusters = neighbors.clusters.as_ref().unwrap();
            let per_cluster: Vec<Vec<(usize, PriorPair)>> = clusters
                .par_iter()
                .map(|cluster| {
                    let key = cluster.key;
                    let members: Vec<(&BinaryMask, &BinaryMask, &FlowField)> = cluster
                        .members
                        .iter()
                        .filter(|&&j| j != key)
                        .map(|&j| (&snapshot[j].0, &snapshot[j].1, &flows[&(key, j)]))
                        .collect();
                    let key_pair = key_priors(&snapshot[key].0, &snapshot[key].1, &members)?;
                    let mut out = Vec::new();
                    for &j in &cluster.members {
                        if working[j].stopped {
                            continue;
                        }
                        let pair = if j == key {
                            key_pair.clone()
                        } else {
                            propagate_key_prior(&key_pair, &flows[&(j, key)])?
                        };
                        out.push((j, pair));
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()?;
            per_cluster.into_iter().flatten().collect()
        } else {
            active
                .par_iter()
                .map(|&i| {
                    let skel_pairs: Vec<(&BinaryMask, &FlowField)> = neighbors.neighbors[i]
                        .iter()
                        .map(|&j| (&snapshot[j].0, &flows[&(i, j)]))
                        .collect();
                    let seg_pairs: Vec<(&BinaryMask, &FlowField)> = neighbors.neighbors[i]
                        .iter()
                        .map(|&j| (&snapshot[j].1, &flows[&(i, j)]))
                        .collect();
                    let pair = PriorPair {
                        coskeleton: coskeleton_prior(&snapshot[i].0, &skel_pairs)?,
                        cosegment: cosegment_prior(&snapshot[i].1, &seg_pairs)?,
                    };
                    Ok((i, pair))
                })
                .collect::<Result<HashMap<_, _>>>()?
        };

        if cfg.dump_priors {
            if let Some(dir) = out_dir {
                for (&i, pair) in &priors {
                    let stem = qualified_stem(&collection[i]);
                    io::save_scalar_map(
                        dir.join("priors").join(format!("{stem}_coskel_t{iteration}.png")),
                        &pair.coskeleton,
                    )?;
                    io::save_scalar_map(
                        dir.join("priors").join(format!("{stem}_coseg_t{iteration}.png")),
                        &pair.cosegment,
                    )?;
                }
            }
        }

        // Per-image alternation step.
        let outcomes: Vec<Result<IterationOutcome>> = active
            .par_iter()
            .map(|&i| {
                let img = &collection[i];
                let w = &working[i];
                let pair = &priors[&i];
                step_image(
                    i,
                    img,
                    w,
                    pair,
                    &cfg,
                    iteration,
                )
            })
            .collect();

        for outcome in outcomes {
            let outcome = outcome?;
            let i = outcome.index;
            if let Some(initial) = outcome.initial_record {
                working[i].records.insert(0, initial);
            }
            let accepted = outcome.record.accepted;
            working[i].records.push(outcome.record);
            if outcome.flagged {
                let w = &mut working[i];
                w.flagged = true;
                w.stopped = true;
                let stale = IterateMasks {
                    skeleton: w.skeleton.clone(),
                    segmentation: w.segmentation.clone(),
                };
                w.history.push(stale);
                continue;
            }
            if let Some((skeleton, segmentation, geometry)) = outcome.update {
                // The cross-task constraint: pruning selects from the medial
                // axis of the new segmentation, so this can only fire if the
                // solvers are out of sync.
                if !skeleton.is_subset_of(geometry.skeleton()) {
                    constraint_violations += 1;
                }
                working[i].history.push(IterateMasks {
                    skeleton: skeleton.clone(),
                    segmentation: segmentation.clone(),
                });
                if accepted {
                    working[i].skeleton = skeleton;
                    working[i].segmentation = segmentation;
                    working[i].geometry = geometry;
                } else {
                    working[i].stopped = true;
                }
            }
        }
    }

    // Decoupled ablation: skeletons come from the final segmentations.
    if !cfg.interdependence {
        let final_skeletons: Vec<Result<(BinaryMask, SkeletonGeometry)>> = working
            .par_iter()
            .map(|w| {
                let geometry = medial_axis(&w.segmentation)?;
                let zero_prior = ScalarMap::zeros(w.segmentation.width(), w.segmentation.height());
                let cut_cfg = SkeletonEnergyConfig {
                    lambda: 0.0,
                    ..cfg.skeleton
                };
                let skeleton =
                    prune_skeleton(&geometry, &w.segmentation, &zero_prior, &cut_cfg)?;
                Ok((skeleton, geometry))
            })
            .collect();
        for (w, res) in working.iter_mut().zip(final_skeletons) {
            let (skeleton, geometry) = res?;
            w.skeleton = skeleton;
            w.geometry = geometry;
            if let Some(last) = w.history.last_mut() {
                last.skeleton = w.skeleton.clone();
            }
        }
    }

    // Pick the minimal-energy accepted iterate per image.
    let mut images = Vec::with_capacity(n);
    let mut image_manifests = Vec::with_capacity(n);
    for (i, w) in working.iter().enumerate() {
        let best = w
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.accepted)
            .min_by(|(_, a), (_, b)| a.total.partial_cmp(&b.total).unwrap())
            .map(|(k, _)| k)
            .unwrap_or(0);
        let chosen = if cfg.interdependence {
            &w.history[best.min(w.history.len() - 1)]
        } else {
            w.history.last().unwrap()
        };
        images.push(ImageOutcome {
            stem: collection[i].stem.clone(),
            category: collection[i].category.clone(),
            final_skeleton: chosen.skeleton.clone(),
            final_segmentation: chosen.segmentation.clone(),
            history: w.history.clone(),
        });
        image_manifests.push(ImageManifest {
            stem: collection[i].stem.clone(),
            category: collection[i].category.clone(),
            iterations: w.records.clone(),
            best_iteration: best,
            flagged: w.flagged,
            outputs: None,
        });
    }

    let alignment = neighbors
        .clusters
        .as_ref()
        .map(|clusters| {
            clusters
                .iter()
                .enumerate()
                .map(|(c, cluster)| ClusterAlignment {
                    cluster: c,
                    size: cluster.members.len(),
                    pairwise: alignment_count(AlignmentMode::Pairwise, cluster.members.len()),
                    key: alignment_count(AlignmentMode::Key, cluster.members.len()),
                })
                .collect()
        })
        .unwrap_or_default();

    let mut manifest = Manifest {
        config_hash: cfg.hash(),
        config: cfg.clone(),
        neighbors,
        alignment,
        flow_count: flows.len(),
        constraint_violations,
        images: image_manifests,
    };

    if let Some(dir) = out_dir {
        for (outcome, entry) in images.iter().zip(manifest.images.iter_mut()) {
            let stem = {
                let img = collection
                    .iter()
                    .find(|c| c.stem == outcome.stem)
                    .expect("outcome stems come from the collection");
                qualified_stem(img)
            };
            let seg_path = dir.join("segmentations").join(format!("{stem}.png"));
            let skel_path = dir.join("skeletons").join(format!("{stem}.png"));
            let overlay_path = dir.join("overlays").join(format!("{stem}.png"));
            io::save_mask(&seg_path, &outcome.final_segmentation)?;
            io::save_mask(&skel_path, &outcome.final_skeleton)?;
            let img = collection.iter().find(|c| c.stem == outcome.stem).unwrap();
            let overlay =
                render_overlay(&img.raster, &outcome.final_segmentation, &outcome.final_skeleton);
            io::save_raster(&overlay_path, &overlay)?;
            entry.outputs = Some(ImageOutputs {
                segmentation: seg_path.to_string_lossy().into_owned(),
                skeleton: skel_path.to_string_lossy().into_owned(),
                overlay: overlay_path.to_string_lossy().into_owned(),
            });
        }
        let manifest_path = dir.join("manifest.json");
        let json =
            serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    }

    Ok(RunOutcome { manifest, images })
}

fn step_image(
    index: usize,
    img: &CollectionImage,
    w: &Working,
    priors: &PriorPair,
    cfg: &RunConfig,
    iteration: usize,
) -> Result<IterationOutcome> {
    let first = iteration == 1;
    let skel_cfg = &cfg.skeleton;
    let seg_cfg = &cfg.segmentation;

    // Appearance models: priors seed the first iteration (the initial
    // skeleton is not reliable), the current skeleton seeds later ones.
    // The decoupled ablation always seeds from priors.
    let models = if first || !cfg.interdependence {
        let fg_source = if cfg.interdependence {
            &priors.coskeleton
        } else {
            &priors.cosegment
        };
        fit_appearance_models_from_priors(&img.raster, fg_source, &priors.cosegment, seg_cfg)
    } else {
        let recon = reconstruct_within(&w.segmentation, &w.skeleton)?;
        fit_appearance_models(&img.raster, &w.skeleton, &recon, seg_cfg)
    };
    let models = match models {
        Ok(m) => m,
        Err(Error::DegenerateInput(_)) => {
            // Nothing to seed models from: flag and keep the last iterate.
            let record = stale_record(img, w, priors, cfg, iteration)?;
            return Ok(IterationOutcome {
                index,
                update: None,
                initial_record: if first {
                    Some(initial_record(img, w, priors, cfg, None)?)
                } else {
                    None
                },
                record,
                flagged: true,
            });
        }
        Err(e) => return Err(e),
    };

    let initial = if first {
        Some(initial_record(img, w, priors, cfg, Some(&models))?)
    } else {
        None
    };

    // Step 1: segmentation given the current skeleton and priors.
    let (segmentation, _refit) = grabcut(&img.raster, &models, &priors.cosegment, seg_cfg)?;
    if segmentation.is_blank() {
        let record = stale_record(img, w, priors, cfg, iteration)?;
        return Ok(IterationOutcome {
            index,
            update: None,
            initial_record: initial,
            record,
            flagged: true,
        });
    }

    // Step 2: skeleton pruned from the new segmentation's medial axis.
    let geometry = medial_axis(&segmentation)?;
    let skeleton = if cfg.interdependence {
        prune_skeleton(&geometry, &segmentation, &priors.coskeleton, skel_cfg)?
    } else {
        geometry.skeleton().clone()
    };

    let (skel_energy, seg_energy) = evaluate_state(
        &img.raster,
        &skeleton,
        &segmentation,
        &geometry,
        priors,
        skel_cfg,
        seg_cfg,
        None,
    )?;
    let total = if cfg.interdependence {
        total_energy(&skel_energy, &seg_energy, cfg.lambda)
    } else {
        seg_energy.total(cfg.lambda)
    };
    let previous_total = initial
        .as_ref()
        .map(|r| r.total)
        .unwrap_or_else(|| w.records.last().map(|r| r.total).unwrap_or(f64::INFINITY));
    let accepted = total <= previous_total;
    Ok(IterationOutcome {
        index,
        update: Some((skeleton, segmentation, geometry)),
        initial_record: initial,
        record: IterationRecord {
            iteration,
            skeleton_energy: skel_energy,
            segmentation_energy: seg_energy,
            total,
            accepted,
            flagged: false,
        },
        flagged: false,
    })
}

/// Record for the initialization state, evaluated under the first priors.
fn initial_record(
    img: &CollectionImage,
    w: &Working,
    priors: &PriorPair,
    cfg: &RunConfig,
    models: Option<&AppearanceModels>,
) -> Result<IterationRecord> {
    let (skel_energy, seg_energy) = evaluate_state(
        &img.raster,
        &w.skeleton,
        &w.segmentation,
        &w.geometry,
        priors,
        &cfg.skeleton,
        &cfg.segmentation,
        models,
    )?;
    let total = if cfg.interdependence {
        total_energy(&skel_energy, &seg_energy, cfg.lambda)
    } else {
        seg_energy.total(cfg.lambda)
    };
    Ok(IterationRecord {
        iteration: 0,
        skeleton_energy: skel_energy,
        segmentation_energy: seg_energy,
        total,
        accepted: true,
        flagged: false,
    })
}

/// Record carrying forward the previous iterate when an image is flagged.
fn stale_record(
    img: &CollectionImage,
    w: &Working,
    priors: &PriorPair,
    cfg: &RunConfig,
    iteration: usize,
) -> Result<IterationRecord> {
    let (skel_energy, seg_energy) = evaluate_state(
        &img.raster,
        &w.skeleton,
        &w.segmentation,
        &w.geometry,
        priors,
        &cfg.skeleton,
        &cfg.segmentation,
        None,
    )?;
    Ok(IterationRecord {
        iteration,
        skeleton_energy: skel_energy,
        segmentation_energy: seg_energy,
        total: total_energy(&skel_energy, &seg_energy, cfg.lambda),
        accepted: false,
        flagged: true,
    })
}

fn qualified_stem(img: &CollectionImage) -> String {
    match &img.category {
        Some(c) => format!("{c}/{}", img.stem),
        None => img.stem.clone(),
    }
}

/// Runs the whole collection and optionally writes masks, overlays and the
/// manifest under `out_dir`.
pub fn run(
    collection: &[CollectionImage],
    cfg: &RunConfig,
    providers: &Providers,
    out_dir: Option<&Path>,
) -> Result<RunOutcome> {
    if cfg.workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?;
        pool.install(|| run_inner(collection, cfg, providers, out_dir))
    } else {
        run_inner(collection, cfg, providers, out_dir)
    }
}

/// Composite for inspection: segmentation as a translucent tint, skeleton as
/// a saturated mark dilated to 3 px for visibility.
pub fn render_overlay(img: &Raster, segmentation: &BinaryMask, skeleton: &BinaryMask) -> Raster {
    let tint = [0.1, 0.9, 0.3];
    let mark = [1.0, 1.0, 0.0];
    let fat_skeleton = skeleton.dilate3x3();
    Raster::from_fn(img.width(), img.height(), |x, y| {
        if fat_skeleton.get(x, y) {
            return mark;
        }
        let px = img.pixel(x, y);
        if segmentation.get(x, y) {
            [
                0.6 * px[0] + 0.4 * tint[0],
                0.6 * px[1] + 0.4 * tint[1],
                0.6 * px[2] + 0.4 * tint[2],
            ]
        } else {
            px
        }
    })
    .expect("overlay raster is valid")
}
