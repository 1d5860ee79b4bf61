//! Bootstrap saliency and Otsu thresholding.
//!
//! The built-in detector scores each pixel by global color-contrast rarity on
//! a quantized palette, optionally attenuated away from the image center. It
//! exists to seed the pipeline; a directory of precomputed maps can be
//! plugged in instead when an external detector should drive initialization.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::io;
use crate::raster::{BinaryMask, Raster, ScalarMap};

/// Built-in saliency parameters.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct SaliencyConfig {
    color_bins_per_channel: usize,
    spatial_weight: f64,
}

impl SaliencyConfig {
    pub fn new(color_bins_per_channel: usize, spatial_weight: f64) -> Result<Self> {
        if color_bins_per_channel < 2 {
            return Err(Error::InvalidInput(
                "color_bins_per_channel must be at least 2".into(),
            ));
        }
        if !(spatial_weight >= 0.0) {
            return Err(Error::InvalidInput("spatial_weight must be >= 0".into()));
        }
        Ok(SaliencyConfig {
            color_bins_per_channel,
            spatial_weight,
        })
    }

    pub fn color_bins_per_channel(&self) -> usize {
        self.color_bins_per_channel
    }

    pub fn spatial_weight(&self) -> f64 {
        self.spatial_weight
    }
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        SaliencyConfig {
            color_bins_per_channel: 12,
            spatial_weight: 0.5,
        }
    }
}

/// Global color-contrast saliency in `[0, 1]`; higher means more object-like.
///
/// Each pixel scores the frequency-weighted sum of color distances from its
/// quantized color to every other occupied palette entry, so rare colors
/// stand out. With `spatial_weight` &gt; 0 the score decays with distance from
/// the image center before normalization.
pub fn compute_saliency(img: &Raster, cfg: &SaliencyConfig) -> ScalarMap {
    let bins = cfg.color_bins_per_channel;
    let quantize = |v: f64| ((v * bins as f64) as usize).min(bins - 1);

    // Occupied palette entries: count and mean color per bin.
    let mut counts = vec![0usize; bins * bins * bins];
    let mut sums = vec![[0.0f64; 3]; bins * bins * bins];
    let mut indices = Vec::with_capacity(img.len());
    for px in img.pixels() {
        let key = (quantize(px[0]) * bins + quantize(px[1])) * bins + quantize(px[2]);
        counts[key] += 1;
        for c in 0..3 {
            sums[key][c] += px[c];
        }
        indices.push(key);
    }
    let occupied: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] > 0).collect();
    let means: Vec<[f64; 3]> = occupied
        .iter()
        .map(|&k| {
            let n = counts[k] as f64;
            [sums[k][0] / n, sums[k][1] / n, sums[k][2] / n]
        })
        .collect();

    let total = img.len() as f64;
    let mut rarity = vec![0.0f64; counts.len()];
    for (i, &ki) in occupied.iter().enumerate() {
        let mut acc = 0.0;
        for (j, &kj) in occupied.iter().enumerate() {
            if ki == kj {
                continue;
            }
            let d = (0..3)
                .map(|c| (means[i][c] - means[j][c]).powi(2))
                .sum::<f64>()
                .sqrt();
            acc += counts[kj] as f64 / total * d;
        }
        rarity[ki] = acc;
    }

    let w = img.width();
    let h = img.height();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let half_diag_sq = (cx * cx + cy * cy).max(1.0);
    let mut map = ScalarMap::from_fn(w, h, |x, y| {
        let base = rarity[indices[y * w + x]];
        if cfg.spatial_weight > 0.0 {
            let d_sq = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)) / half_diag_sq;
            base * (-cfg.spatial_weight * d_sq).exp()
        } else {
            base
        }
    });

    let max = map.max();
    if max > 0.0 {
        map = ScalarMap::from_fn(w, h, |x, y| map.get(x, y) / max);
    }
    map
}

const OTSU_BINS: usize = 256;

fn otsu_bin(v: f64) -> usize {
    ((v * OTSU_BINS as f64) as usize).min(OTSU_BINS - 1)
}

/// Otsu's split bin for a `[0, 1]` map: the first threshold bin maximizing
/// between-class variance over a 256-bin histogram. Class 0 holds bins
/// `<= t`, class 1 the rest.
fn otsu_split(m: &ScalarMap) -> Result<usize> {
    if m.values().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidInput(
            "otsu threshold requires map values in [0, 1]".into(),
        ));
    }
    let mut hist = [0usize; OTSU_BINS];
    for &v in m.values() {
        hist[otsu_bin(v)] += 1;
    }
    let total = m.values().len() as f64;
    let total_mean: f64 = hist
        .iter()
        .enumerate()
        .map(|(b, &n)| b as f64 * n as f64)
        .sum::<f64>()
        / total;

    let mut best: Option<(usize, f64)> = None;
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    for t in 0..OTSU_BINS - 1 {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (total_mean * total - sum0) / w1;
        let variance = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if best.map_or(true, |(_, v)| variance > v) {
            best = Some((t, variance));
        }
    }
    match best {
        Some((t, _)) => Ok(t),
        // All samples share one bin: zero variance everywhere.
        None => Err(Error::DegenerateInput(
            "constant map has no Otsu threshold".into(),
        )),
    }
}

/// Pixels above the Otsu-optimal threshold of a `[0, 1]` map.
///
/// A constant map has zero between-class variance everywhere and yields a
/// degenerate-input error; callers are expected to fall back to the
/// whole-image mask.
pub fn otsu_threshold(m: &ScalarMap) -> Result<BinaryMask> {
    let t = otsu_split(m)?;
    Ok(BinaryMask::from_fn(m.width(), m.height(), |x, y| {
        otsu_bin(m.get(x, y)) > t
    }))
}

/// Complement selection used when a map marks background confidence: pixels
/// at or below the Otsu-optimal threshold.
pub fn otsu_below(m: &ScalarMap) -> Result<BinaryMask> {
    let t = otsu_split(m)?;
    Ok(BinaryMask::from_fn(m.width(), m.height(), |x, y| {
        otsu_bin(m.get(x, y)) <= t
    }))
}

/// Source of per-image saliency maps.
pub trait SaliencyProvider: Send + Sync {
    /// Saliency for the image with the given file stem.
    fn saliency(&self, stem: &str, img: &Raster) -> Result<ScalarMap>;
}

/// The built-in color-contrast detector.
pub struct BuiltinSaliency {
    pub config: SaliencyConfig,
}

impl SaliencyProvider for BuiltinSaliency {
    fn saliency(&self, _stem: &str, img: &Raster) -> Result<ScalarMap> {
        Ok(compute_saliency(img, &self.config))
    }
}

/// Reads precomputed 16-bit maps from `<dir>/<stem>.png`.
pub struct DirectorySaliency {
    pub dir: PathBuf,
}

impl SaliencyProvider for DirectorySaliency {
    fn saliency(&self, stem: &str, img: &Raster) -> Result<ScalarMap> {
        let path = self.dir.join(format!("{stem}.png"));
        let map = io::load_scalar_map(&path)?;
        if map.width() != img.width() || map.height() != img.height() {
            return Err(Error::dims(
                (img.width(), img.height()),
                (map.width(), map.height()),
            ));
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_image_is_constant() {
        let img = Raster::constant(16, 16, [0.3, 0.5, 0.7]).unwrap();
        let sal = compute_saliency(&img, &SaliencyConfig::default());
        let first = sal.get(0, 0);
        assert!(sal.values().iter().all(|&v| v == first));
    }

    #[test]
    fn rare_square_outscores_field() {
        // 4x4 red square on a 20x20 gray field. The red bin sees a large
        // frequency-weighted distance; gray sees only the small red mass.
        let img = Raster::from_fn(20, 20, |x, y| {
            if (8..12).contains(&x) && (8..12).contains(&y) {
                [0.9, 0.1, 0.1]
            } else {
                [0.5, 0.5, 0.5]
            }
        })
        .unwrap();
        let cfg = SaliencyConfig::new(8, 0.0).unwrap();
        let sal = compute_saliency(&img, &cfg);
        let square = sal.get(9, 9);
        for y in 0..20 {
            for x in 0..20 {
                let inside = (8..12).contains(&x) && (8..12).contains(&y);
                if inside {
                    assert_eq!(sal.get(x, y), square);
                } else {
                    assert!(sal.get(x, y) < square);
                }
            }
        }
        // Hand check on the quantized histogram: rarity(red) = (384/400) d,
        // rarity(gray) = (16/400) d, so red normalizes to 1 and gray to 16/384.
        assert!((square - 1.0).abs() < 1e-12);
        assert!((sal.get(0, 0) - 16.0 / 384.0).abs() < 1e-12);
    }

    #[test]
    fn equal_areas_equal_saliency() {
        let img = Raster::from_fn(16, 16, |x, _| {
            if x < 8 {
                [0.2, 0.2, 0.8]
            } else {
                [0.8, 0.2, 0.2]
            }
        })
        .unwrap();
        let cfg = SaliencyConfig::new(8, 0.0).unwrap();
        let sal = compute_saliency(&img, &cfg);
        assert_eq!(sal.get(0, 0), sal.get(15, 0));
    }

    #[test]
    fn otsu_bimodal_selects_upper_mode() {
        let mut values = vec![0.1; 50];
        values.extend(vec![0.9; 50]);
        let m = ScalarMap::new(10, 10, values).unwrap();
        let mask = otsu_threshold(&m).unwrap();
        for y in 0..10 {
            for x in 0..10 {
                assert_eq!(mask.get(x, y), m.get(x, y) > 0.5);
            }
        }
    }

    #[test]
    fn otsu_constant_map_is_degenerate() {
        let m = ScalarMap::filled(8, 8, 0.42);
        assert!(matches!(
            otsu_threshold(&m),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn otsu_matches_exhaustive_scan() {
        // Noisy bimodal map; the oracle rescans every candidate bin directly
        // from the raw values.
        let m = ScalarMap::from_fn(16, 16, |x, y| {
            let noise = ((x * 31 + y * 17) % 13) as f64 / 13.0 * 0.15;
            if (x + 2 * y) % 3 == 0 {
                0.15 + noise
            } else {
                0.7 + noise
            }
        });
        let mask = otsu_threshold(&m).unwrap();

        let mut best_t = None;
        let mut best_v = f64::NEG_INFINITY;
        for t in 0..255usize {
            let (mut n0, mut n1, mut s0, mut s1) = (0.0, 0.0, 0.0, 0.0);
            for &v in m.values() {
                let b = otsu_bin(v) as f64;
                if otsu_bin(v) <= t {
                    n0 += 1.0;
                    s0 += b;
                } else {
                    n1 += 1.0;
                    s1 += b;
                }
            }
            if n0 == 0.0 || n1 == 0.0 {
                continue;
            }
            let variance = n0 * n1 * (s0 / n0 - s1 / n1).powi(2);
            if variance > best_v {
                best_v = variance;
                best_t = Some(t);
            }
        }
        let t = best_t.unwrap();
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(mask.get(x, y), otsu_bin(m.get(x, y)) > t);
            }
        }
    }

    proptest! {
        #[test]
        fn saliency_permutation_invariant_without_spatial_term(
            seed in 0u64..1000
        ) {
            // Shuffle pixel positions; per-color saliency must not change.
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let img = Raster::from_fn(12, 12, |x, y| {
                [((x / 4) as f64) / 3.0, ((y / 4) as f64) / 3.0, 0.5]
            }).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut perm: Vec<usize> = (0..144).collect();
            perm.shuffle(&mut rng);
            let shuffled = Raster::from_fn(12, 12, |x, y| {
                let src = perm[y * 12 + x];
                img.pixel(src % 12, src / 12)
            }).unwrap();

            let cfg = SaliencyConfig::new(6, 0.0).unwrap();
            let a = compute_saliency(&img, &cfg);
            let b = compute_saliency(&shuffled, &cfg);
            for y in 0..12 {
                for x in 0..12 {
                    let src = perm[y * 12 + x];
                    prop_assert!((b.get(x, y) - a.get(src % 12, src / 12)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn otsu_selection_invariant_under_bin_shift(
            shift_bins in 1usize..40
        ) {
            // Raising every value by k/256 (no saturation) shifts every
            // histogram bin by k and leaves the selected pixel set unchanged.
            let m = ScalarMap::from_fn(10, 10, |x, y| {
                if (x + y) % 4 == 0 { 0.1 + (x as f64) * 0.001 } else { 0.6 + (y as f64) * 0.001 }
            });
            let shifted = ScalarMap::from_fn(10, 10, |x, y| {
                m.get(x, y) + shift_bins as f64 / 256.0
            });
            let a = otsu_threshold(&m).unwrap();
            let b = otsu_threshold(&shifted).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
