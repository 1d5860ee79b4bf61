//! Synthetic shapes and image collections for tests, demos and calibration.
//!
//! The generators are deterministic for a fixed seed, so runs built on them
//! are reproducible bit for bit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::io;
use crate::raster::{BinaryMask, Raster};

fn stamp_disk(mask: &mut BinaryMask, cx: f64, cy: f64, r: f64) {
    let w = mask.width();
    let h = mask.height();
    let x0 = (cx - r).floor().max(0.0) as usize;
    let x1 = (cx + r).ceil().min(w as f64 - 1.0) as usize;
    let y0 = (cy - r).floor().max(0.0) as usize;
    let y1 = (cy + r).ceil().min(h as f64 - 1.0) as usize;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            if (dx * dx + dy * dy).sqrt() <= r {
                mask.set(x, y, true);
            }
        }
    }
}

fn stamp_capsule(mask: &mut BinaryMask, a: (f64, f64), b: (f64, f64), r: f64) {
    let steps = (((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt().ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        stamp_disk(mask, a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), r);
    }
}

fn rect(w: usize, h: usize, x0: usize, y0: usize, rw: usize, rh: usize) -> BinaryMask {
    BinaryMask::from_fn(w, h, |x, y| {
        (x0..x0 + rw).contains(&x) && (y0..y0 + rh).contains(&y)
    })
}

/// Twenty hole-free 8-connected test shapes: disks, odd-width rectangles,
/// L/T/Y compounds, capsules and blobby disk unions.
pub fn shape_suite() -> Vec<(String, BinaryMask)> {
    let mut shapes: Vec<(String, BinaryMask)> = Vec::new();

    for (i, r) in [8.5, 12.5, 16.5].iter().enumerate() {
        // Integer centers keep pixel widths odd, which a unit-width skeleton
        // can cover tightly.
        let side = (2.0 * r + 9.0) as usize | 1;
        let c = ((side - 1) / 2) as f64;
        let mut m = BinaryMask::empty(side, side);
        stamp_disk(&mut m, c, c, *r);
        shapes.push((format!("disk-{i}"), m));
    }

    for (i, (rw, rh)) in [(21, 5), (31, 7), (25, 9)].iter().enumerate() {
        let m = rect(rw + 8, rh + 8, 4, 4, *rw, *rh);
        shapes.push((format!("rect-{i}"), m));
    }

    // L shapes: vertical and horizontal odd-width bars sharing a corner.
    for (i, t) in [5usize, 7].iter().enumerate() {
        let mut m = BinaryMask::empty(48, 48);
        for y in 6..40 {
            for x in 6..6 + t {
                m.set(x, y, true);
            }
        }
        for x in 6..40 {
            for y in 40 - t..40 {
                m.set(x, y, true);
            }
        }
        shapes.push((format!("ell-{i}"), m));
    }

    // T shapes.
    for (i, t) in [5usize, 7].iter().enumerate() {
        let mut m = BinaryMask::empty(48, 48);
        for x in 6..42 {
            for y in 8..8 + t {
                m.set(x, y, true);
            }
        }
        let mid = 24 - t / 2;
        for y in 8..40 {
            for x in mid..mid + t {
                m.set(x, y, true);
            }
        }
        shapes.push((format!("tee-{i}"), m));
    }

    // Y shapes from three capsule arms.
    for (i, r) in [2.5f64, 3.5].iter().enumerate() {
        let mut m = BinaryMask::empty(56, 56);
        stamp_capsule(&mut m, (28.0, 30.0), (28.0, 48.0), *r);
        stamp_capsule(&mut m, (28.0, 30.0), (14.0, 10.0), *r);
        stamp_capsule(&mut m, (28.0, 30.0), (42.0, 10.0), *r);
        shapes.push((format!("wye-{i}"), m));
    }

    // Capsules.
    for (i, r) in [6.5f64, 9.5].iter().enumerate() {
        let mut m = BinaryMask::empty(64, 40);
        stamp_capsule(&mut m, (14.0, 20.0), (50.0, 20.0), *r);
        shapes.push((format!("capsule-{i}"), m));
    }

    // Crosses of two odd bars.
    {
        let mut m = BinaryMask::empty(48, 48);
        for x in 6..42 {
            for y in 21..28 {
                m.set(x, y, true);
            }
        }
        for y in 6..42 {
            for x in 21..28 {
                m.set(x, y, true);
            }
        }
        shapes.push(("cross-0".into(), m));
    }

    // Blobby unions of disks, deterministic placements.
    let blob_specs: [&[(f64, f64, f64)]; 3] = [
        &[(20.0, 22.0, 9.5), (32.0, 26.0, 7.5), (26.0, 34.0, 6.5)],
        &[(22.0, 24.0, 11.5), (36.0, 28.0, 7.5)],
        &[(20.0, 28.0, 8.5), (30.0, 18.0, 7.5), (38.0, 30.0, 6.5), (28.0, 38.0, 5.5)],
    ];
    for (i, spec) in blob_specs.iter().enumerate() {
        let mut m = BinaryMask::empty(56, 56);
        for &(cx, cy, r) in spec.iter() {
            stamp_disk(&mut m, cx, cy, r);
        }
        shapes.push((format!("blob-{i}"), m));
    }

    // Ellipse.
    {
        let m = BinaryMask::from_fn(49, 33, |x, y| {
            let dx = (x as f64 - 24.0) / 17.5;
            let dy = (y as f64 - 16.0) / 9.5;
            dx * dx + dy * dy <= 1.0
        });
        shapes.push(("ellipse-0".into(), m));
    }

    // Hook: capsule with a bent end.
    {
        let mut m = BinaryMask::empty(56, 48);
        stamp_capsule(&mut m, (12.0, 32.0), (40.0, 32.0), 5.5);
        stamp_capsule(&mut m, (40.0, 32.0), (44.0, 14.0), 5.5);
        shapes.push(("hook-0".into(), m));
    }

    assert_eq!(shapes.len(), 20);
    shapes
}

/// One generated image with its ground-truth segmentation.
#[derive(Clone, Debug)]
pub struct SynthImage {
    pub stem: String,
    pub category: String,
    pub raster: Raster,
    pub gt_mask: BinaryMask,
}

/// Smooth value noise in `[0, 1]` from a coarse random lattice.
fn value_noise(rng: &mut ChaCha8Rng, w: usize, h: usize, cells: usize) -> Vec<f64> {
    let gw = cells + 2;
    let gh = cells + 2;
    let lattice: Vec<f64> = (0..gw * gh).map(|_| rng.random::<f64>()).collect();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let fx = x as f64 / w as f64 * cells as f64;
            let fy = y as f64 / h as f64 * cells as f64;
            let x0 = fx.floor() as usize;
            let y0 = fy.floor() as usize;
            let tx = fx - x0 as f64;
            let ty = fy - y0 as f64;
            let v00 = lattice[y0 * gw + x0];
            let v10 = lattice[y0 * gw + x0 + 1];
            let v01 = lattice[(y0 + 1) * gw + x0];
            let v11 = lattice[(y0 + 1) * gw + x0 + 1];
            let top = v00 * (1.0 - tx) + v10 * tx;
            let bot = v01 * (1.0 - tx) + v11 * tx;
            out[y * w + x] = top * (1.0 - ty) + bot * ty;
        }
    }
    out
}

struct CategorySpec {
    name: &'static str,
    fg_color: [f64; 3],
    bg_color: [f64; 3],
}

fn category_shape(spec: &CategorySpec, size: usize, rng: &mut ChaCha8Rng) -> BinaryMask {
    let s = size as f64;
    let jx = rng.random_range(-0.06..0.06) * s;
    let jy = rng.random_range(-0.06..0.06) * s;
    let scale = rng.random_range(0.85..1.1);
    let mut m = BinaryMask::empty(size, size);
    let c = s / 2.0;
    match spec.name {
        // Capsule body with an offset head: a two-branch skeleton.
        "rods" => {
            let r = 0.11 * s * scale;
            stamp_capsule(
                &mut m,
                (c - 0.22 * s + jx, c + jy),
                (c + 0.2 * s + jx, c + jy),
                r,
            );
            stamp_disk(&mut m, c + 0.26 * s + jx, c - 0.12 * s + jy, 0.085 * s * scale);
            stamp_capsule(
                &mut m,
                (c + 0.18 * s + jx, c + jy),
                (c + 0.25 * s + jx, c - 0.1 * s + jy),
                0.05 * s * scale,
            );
        }
        // Three-arm star: a junction with three branches.
        _ => {
            let r = 0.07 * s * scale;
            let hub = (c + jx, c - 0.04 * s + jy);
            stamp_capsule(&mut m, hub, (c + jx, c + 0.3 * s + jy), r);
            stamp_capsule(&mut m, hub, (c - 0.24 * s + jx, c - 0.22 * s + jy), r);
            stamp_capsule(&mut m, hub, (c + 0.24 * s + jx, c - 0.22 * s + jy), r);
            stamp_disk(&mut m, hub.0, hub.1, r * 1.4);
        }
    }
    m
}

/// Generates a two-category collection of colored shapes on textured
/// backgrounds with known ground-truth masks.
///
/// Every image also carries a few distractor blobs in rare colors at
/// positions that vary image to image. A per-image saliency bootstrap will
/// pick them up; only the cross-image priors can tell them from the common
/// object, which is what the alternation is supposed to demonstrate.
pub fn two_category_collection(per_category: usize, size: usize, seed: u64) -> Vec<SynthImage> {
    let specs = [
        CategorySpec {
            name: "rods",
            fg_color: [0.78, 0.16, 0.18],
            bg_color: [0.42, 0.52, 0.45],
        },
        CategorySpec {
            name: "stars",
            fg_color: [0.15, 0.3, 0.8],
            bg_color: [0.55, 0.5, 0.38],
        },
    ];
    let distractor_palette: [[f64; 3]; 4] = [
        [0.92, 0.82, 0.12],
        [0.68, 0.18, 0.78],
        [0.10, 0.78, 0.74],
        [0.95, 0.55, 0.12],
    ];
    let mut out = Vec::new();
    for (ci, spec) in specs.iter().enumerate() {
        for k in 0..per_category {
            let mut rng = ChaCha8Rng::seed_from_u64(
                seed ^ (ci as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ (k as u64) << 20,
            );
            let mask = category_shape(spec, size, &mut rng);

            // Distractors avoid the object so the ground truth stays clean.
            let keep_out = mask.dilate3x3().dilate3x3();
            let mut distractors = BinaryMask::empty(size, size);
            let mut distractor_color = vec![[0.0f64; 3]; size * size];
            let blob_count = rng.random_range(3..6usize);
            for _ in 0..blob_count {
                let color = distractor_palette[rng.random_range(0..distractor_palette.len())];
                for _attempt in 0..10 {
                    let r = rng.random_range(2..6) as f64 + 0.5;
                    let margin = (r + 2.0) as usize;
                    let cx = rng.random_range(margin..size - margin);
                    let cy = rng.random_range(margin..size - margin);
                    let clear = !keep_out.get(cx, cy);
                    if !clear {
                        continue;
                    }
                    let mut blob = BinaryMask::empty(size, size);
                    stamp_disk(&mut blob, cx as f64, cy as f64, r);
                    if blob.foreground().any(|(x, y)| keep_out.get(x, y)) {
                        continue;
                    }
                    for (x, y) in blob.foreground() {
                        distractors.set(x, y, true);
                        distractor_color[y * size + x] = color;
                    }
                    break;
                }
            }

            let bg_noise = value_noise(&mut rng, size, size, 6);
            let fg_noise = value_noise(&mut rng, size, size, 4);
            let color_jitter: [f64; 3] = [
                rng.random_range(-0.04..0.04),
                rng.random_range(-0.04..0.04),
                rng.random_range(-0.04..0.04),
            ];
            let raster = Raster::from_fn(size, size, |x, y| {
                let idx = y * size + x;
                let mut px = [0.0; 3];
                if mask.get(x, y) {
                    for c in 0..3 {
                        px[c] = (spec.fg_color[c] + color_jitter[c]
                            + (fg_noise[idx] - 0.5) * 0.08)
                            .clamp(0.0, 1.0);
                    }
                } else if distractors.get(x, y) {
                    for c in 0..3 {
                        px[c] = (distractor_color[idx][c] + (fg_noise[idx] - 0.5) * 0.06)
                            .clamp(0.0, 1.0);
                    }
                } else {
                    for c in 0..3 {
                        px[c] = (spec.bg_color[c] + (bg_noise[idx] - 0.5) * 0.22)
                            .clamp(0.0, 1.0);
                    }
                }
                px
            })
            .expect("synthetic raster is valid");
            out.push(SynthImage {
                stem: format!("{}-{k:02}", spec.name),
                category: spec.name.to_string(),
                raster,
                gt_mask: mask,
            });
        }
    }
    out
}

/// Writes a collection to the on-disk dataset layout understood by
/// ingestion: `images/<category>/<stem>.png` and `masks/<category>/<stem>.png`
/// when `categorized`, or flat `images/<stem>.png` otherwise.
pub fn write_dataset(
    root: impl AsRef<std::path::Path>,
    collection: &[SynthImage],
    categorized: bool,
) -> Result<()> {
    let root = root.as_ref();
    for img in collection {
        let (img_path, mask_path) = if categorized {
            (
                root.join("images").join(&img.category).join(format!("{}.png", img.stem)),
                root.join("masks").join(&img.category).join(format!("{}.png", img.stem)),
            )
        } else {
            (
                root.join("images").join(format!("{}.png", img.stem)),
                root.join("masks").join(format!("{}.png", img.stem)),
            )
        };
        io::save_raster(&img_path, &img.raster)?;
        io::save_mask(&mask_path, &img.gt_mask)?;
    }
    Ok(())
}
