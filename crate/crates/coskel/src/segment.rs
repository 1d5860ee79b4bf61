//! Co-segmentation as a pairwise MRF: prior cross-entropy plus
//! skeleton-seeded appearance unaries, contrast-sensitive smoothness, solved
//! exactly by min-cut with optional mixture re-estimation rounds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::GaussianMixture;
use crate::maxflow::MaxFlow;
use crate::raster::{BinaryMask, IntegralMap, PixelNeighborhood, Raster, ScalarMap};
use crate::saliency::{otsu_below, otsu_threshold};

/// Floor for mixture densities inside logs.
const DENSITY_FLOOR: f64 = 1e-12;
/// Clamp for the neighborhood-averaged prior inside logs.
const PRIOR_CLAMP: f64 = 1e-6;

/// Segmentation solver parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SegmentationConfig {
    /// Weight of the cross-image prior inside the data term.
    pub lambda: f64,
    /// Pairwise smoothness weight.
    pub gamma: f64,
    /// Contrast scale; `None` selects the auto rule
    /// `1 / (2 * mean squared neighbor color difference)`.
    pub beta: Option<f64>,
    pub gmm_components: usize,
    /// Min-cut / re-estimation rounds.
    pub graphcut_rounds: usize,
    /// Window for averaging the prior map.
    pub neighborhood: PixelNeighborhood,
    /// Seed for mixture initialization.
    pub seed: u64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            lambda: 0.1,
            gamma: 50.0,
            beta: None,
            gmm_components: 5,
            graphcut_rounds: 3,
            neighborhood: PixelNeighborhood::new(2),
            seed: 0,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::InvalidInput("lambda must be >= 0".into()));
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidInput("gamma must be >= 0".into()));
        }
        if self.gmm_components == 0 {
            return Err(Error::InvalidInput("gmm_components must be >= 1".into()));
        }
        if self.graphcut_rounds == 0 {
            return Err(Error::InvalidInput("graphcut_rounds must be >= 1".into()));
        }
        if let Some(b) = self.beta {
            if b < 0.0 {
                return Err(Error::InvalidInput("beta must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Foreground and background color mixtures.
#[derive(Clone, Debug)]
pub struct AppearanceModels {
    pub foreground: GaussianMixture,
    pub background: GaussianMixture,
}

fn colors_at<'a>(
    img: &'a Raster,
    select: impl Fn(usize, usize) -> bool + 'a,
) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for y in 0..img.height() {
        for x in 0..img.width() {
            if select(x, y) {
                out.push(img.pixel(x, y));
            }
        }
    }
    out
}

/// Fits appearance models from skeleton seeds: foreground on skeleton
/// pixels, background on everything outside the reconstructed shape.
pub fn fit_appearance_models(
    img: &Raster,
    skeleton: &BinaryMask,
    reconstruction: &BinaryMask,
    cfg: &SegmentationConfig,
) -> Result<AppearanceModels> {
    cfg.validate()?;
    let fg = colors_at(img, |x, y| skeleton.get(x, y));
    if fg.is_empty() {
        return Err(Error::DegenerateInput(
            "no skeleton pixels to seed the foreground model".into(),
        ));
    }
    let bg = colors_at(img, |x, y| !reconstruction.get(x, y));
    if bg.is_empty() {
        return Err(Error::DegenerateInput(
            "reconstruction covers the image; no background seeds".into(),
        ));
    }
    Ok(AppearanceModels {
        foreground: GaussianMixture::fit(&fg, cfg.gmm_components, cfg.seed)?,
        background: GaussianMixture::fit(&bg, cfg.gmm_components, cfg.seed ^ 0x5ca1ab1e)?,
    })
}

/// Initialization-time models: the skeleton is not trustworthy yet, so seeds
/// come from the fused priors. Foreground uses pixels above the co-skeleton
/// prior's Otsu split, background uses pixels below the co-segment prior's.
pub fn fit_appearance_models_from_priors(
    img: &Raster,
    coskeleton_prior: &ScalarMap,
    cosegment_prior: &ScalarMap,
    cfg: &SegmentationConfig,
) -> Result<AppearanceModels> {
    cfg.validate()?;
    let fg_mask = otsu_threshold(coskeleton_prior)?;
    let bg_mask = otsu_below(cosegment_prior)?;
    let fg = colors_at(img, |x, y| fg_mask.get(x, y));
    let bg = colors_at(img, |x, y| bg_mask.get(x, y));
    if fg.is_empty() || bg.is_empty() {
        return Err(Error::DegenerateInput(
            "priors give no usable seeds".into(),
        ));
    }
    Ok(AppearanceModels {
        foreground: GaussianMixture::fit(&fg, cfg.gmm_components, cfg.seed)?,
        background: GaussianMixture::fit(&bg, cfg.gmm_components, cfg.seed ^ 0x5ca1ab1e)?,
    })
}

/// Cross-entropy between a labeling and the neighborhood-averaged prior.
pub fn prior_term_o(o: &BinaryMask, prior: &ScalarMap, cfg: &SegmentationConfig) -> Result<f64> {
    if o.width() != prior.width() || o.height() != prior.height() {
        return Err(Error::dims(
            (prior.width(), prior.height()),
            (o.width(), o.height()),
        ));
    }
    cfg.validate()?;
    let integral = IntegralMap::new(prior);
    let r = cfg.neighborhood.radius;
    let mut sum = 0.0;
    for y in 0..o.height() {
        for x in 0..o.width() {
            let mean = (integral.box_sum(x, y, r) / integral.box_count(x, y, r) as f64)
                .clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP);
            sum -= if o.get(x, y) {
                mean.ln()
            } else {
                (1.0 - mean).ln()
            };
        }
    }
    Ok(sum)
}

/// Per-pixel label costs: data term of the segmentation energy.
#[derive(Clone, Debug)]
pub struct UnaryField {
    pub width: usize,
    pub height: usize,
    /// Cost of labeling each pixel foreground.
    pub foreground: Vec<f64>,
    /// Cost of labeling each pixel background.
    pub background: Vec<f64>,
}

impl UnaryField {
    pub fn cost(&self, x: usize, y: usize, label: bool) -> f64 {
        let idx = y * self.width + x;
        if label {
            self.foreground[idx]
        } else {
            self.background[idx]
        }
    }
}

/// Combined data term: appearance negative log-likelihood plus the
/// lambda-weighted prior cross-entropy contribution per label.
pub fn unary_costs(
    img: &Raster,
    models: &AppearanceModels,
    prior: &ScalarMap,
    cfg: &SegmentationConfig,
) -> Result<UnaryField> {
    cfg.validate()?;
    if img.width() != prior.width() || img.height() != prior.height() {
        return Err(Error::dims(
            (img.width(), img.height()),
            (prior.width(), prior.height()),
        ));
    }
    let w = img.width();
    let h = img.height();
    let integral = IntegralMap::new(prior);
    let r = cfg.neighborhood.radius;
    let mut fg = vec![0.0; w * h];
    let mut bg = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let color = img.pixel(x, y);
            let mean = (integral.box_sum(x, y, r) / integral.box_count(x, y, r) as f64)
                .clamp(PRIOR_CLAMP, 1.0 - PRIOR_CLAMP);
            fg[idx] = -models.foreground.density(&color).max(DENSITY_FLOOR).ln()
                - cfg.lambda * mean.ln();
            bg[idx] = -models.background.density(&color).max(DENSITY_FLOOR).ln()
                - cfg.lambda * (1.0 - mean).ln();
        }
    }
    Ok(UnaryField {
        width: w,
        height: h,
        foreground: fg,
        background: bg,
    })
}

/// Contrast scale: `1 / (2 * mean squared color difference)` over 4-neighbor
/// pairs; 0 for constant images.
pub fn auto_beta(img: &Raster) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in 0..img.height() {
        for x in 0..img.width() {
            let c = img.pixel(x, y);
            if x + 1 < img.width() {
                sum += color_sq_diff(&c, &img.pixel(x + 1, y));
                count += 1;
            }
            if y + 1 < img.height() {
                sum += color_sq_diff(&c, &img.pixel(x, y + 1));
                count += 1;
            }
        }
    }
    if count == 0 || sum <= 0.0 {
        0.0
    } else {
        1.0 / (2.0 * sum / count as f64)
    }
}

fn color_sq_diff(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

fn resolved_beta(img: &Raster, cfg: &SegmentationConfig) -> f64 {
    cfg.beta.unwrap_or_else(|| auto_beta(img))
}

/// Pairwise weight between 4-neighbors p and q.
fn pairwise_weight(img: &Raster, beta: f64, gamma: f64, p: (usize, usize), q: (usize, usize)) -> f64 {
    let d = color_sq_diff(&img.pixel(p.0, p.1), &img.pixel(q.0, q.1));
    gamma * (-beta * d).exp()
}

/// Exact global minimizer of `sum unary + gamma * sum_{(p,q)} [l_p != l_q] *
/// exp(-beta |I(p)-I(q)|^2)` over the 4-neighbor grid, via min-cut.
pub fn segment(img: &Raster, unary: &UnaryField, cfg: &SegmentationConfig) -> Result<BinaryMask> {
    cfg.validate()?;
    if img.width() != unary.width || img.height() != unary.height {
        return Err(Error::dims(
            (img.width(), img.height()),
            (unary.width, unary.height),
        ));
    }
    if unary
        .foreground
        .iter()
        .chain(unary.background.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::InvalidInput("unary costs must be finite".into()));
    }
    let w = img.width();
    let h = img.height();
    let beta = resolved_beta(img, cfg);
    let mut graph = MaxFlow::new(w * h);
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            // Source side = foreground: cutting the sink link pays the
            // foreground cost, cutting the source link pays background.
            // Negative log-likelihood costs can dip below zero, so shift
            // both by the per-pixel minimum; the cut is unchanged.
            let shift = unary.background[idx].min(unary.foreground[idx]);
            graph.add_terminal(
                idx,
                unary.background[idx] - shift,
                unary.foreground[idx] - shift,
            );
            if x + 1 < w {
                let wgt = pairwise_weight(img, beta, cfg.gamma, (x, y), (x + 1, y));
                graph.add_edge(idx, idx + 1, wgt, wgt);
            }
            if y + 1 < h {
                let wgt = pairwise_weight(img, beta, cfg.gamma, (x, y), (x, y + 1));
                graph.add_edge(idx, idx + w, wgt, wgt);
            }
        }
    }
    graph.run();
    let side = graph.source_side();
    BinaryMask::new(w, h, side)
}

/// Iterated min-cut with mixture re-estimation from the current labeling.
/// Re-estimation warm-starts EM from the previous models, so the total
/// energy never increases across rounds.
pub fn grabcut(
    img: &Raster,
    models: &AppearanceModels,
    prior: &ScalarMap,
    cfg: &SegmentationConfig,
) -> Result<(BinaryMask, AppearanceModels)> {
    cfg.validate()?;
    let mut models = models.clone();
    let mut unary = unary_costs(img, &models, prior, cfg)?;
    let mut labeling = segment(img, &unary, cfg)?;
    for _ in 1..cfg.graphcut_rounds {
        let fg = colors_at(img, |x, y| labeling.get(x, y));
        let bg = colors_at(img, |x, y| !labeling.get(x, y));
        if fg.is_empty() || bg.is_empty() {
            break;
        }
        models.foreground.refit(&fg, 30)?;
        models.background.refit(&bg, 30)?;
        unary = unary_costs(img, &models, prior, cfg)?;
        labeling = segment(img, &unary, cfg)?;
    }
    Ok((labeling, models))
}

/// The three components of the segmentation energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationEnergy {
    pub prior: f64,
    pub interdependence: f64,
    pub smoothness: f64,
}

impl SegmentationEnergy {
    pub fn total(&self, lambda: f64) -> f64 {
        lambda * self.prior + self.interdependence + self.smoothness
    }
}

/// Evaluates all three segmentation energy components for a labeling.
pub fn segmentation_energy(
    img: &Raster,
    o: &BinaryMask,
    models: &AppearanceModels,
    prior: &ScalarMap,
    cfg: &SegmentationConfig,
) -> Result<SegmentationEnergy> {
    cfg.validate()?;
    let prior_term = prior_term_o(o, prior, cfg)?;
    let mut inter = 0.0;
    for y in 0..o.height() {
        for x in 0..o.width() {
            let color = img.pixel(x, y);
            let m = if o.get(x, y) {
                &models.foreground
            } else {
                &models.background
            };
            inter -= m.density(&color).max(DENSITY_FLOOR).ln();
        }
    }
    let beta = resolved_beta(img, cfg);
    let mut smooth = 0.0;
    for y in 0..o.height() {
        for x in 0..o.width() {
            if x + 1 < o.width() && o.get(x, y) != o.get(x + 1, y) {
                smooth += pairwise_weight(img, beta, cfg.gamma, (x, y), (x + 1, y));
            }
            if y + 1 < o.height() && o.get(x, y) != o.get(x, y + 1) {
                smooth += pairwise_weight(img, beta, cfg.gamma, (x, y), (x, y + 1));
            }
        }
    }
    Ok(SegmentationEnergy {
        prior: prior_term,
        interdependence: inter,
        smoothness: smooth,
    })
}
