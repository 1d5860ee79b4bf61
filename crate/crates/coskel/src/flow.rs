//! Structure-preserving dense correspondence and mask/map warping.
//!
//! Matching runs coarse-to-fine over integer displacements: scanline
//! propagation plus shrinking random search, scored by descriptor distance
//! and a truncated-L1 smoothness penalty between 4-neighbors. The smoothness
//! term is what keeps warped skeletons and masks connected, so it is part of
//! the move cost rather than a post-process.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Raster, ScalarMap};

/// Truncation of the displacement-difference penalty (L1 pixels).
const SMOOTHNESS_TRUNCATION: f64 = 8.0;

/// Matching parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Side of one descriptor cell in pixels (the descriptor pools a 4x4
    /// grid of such cells).
    pub descriptor_cell: usize,
    pub pyramid_levels: usize,
    /// Weight of the truncated displacement-difference penalty.
    pub smoothness_weight: f64,
    /// Random-search radius at each level.
    pub max_displacement_per_level: usize,
    pub iterations_per_level: usize,
    /// Images larger than this (longer side) are matched downscaled and the
    /// displacements rescaled back.
    pub working_resolution: usize,
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            descriptor_cell: 2,
            pyramid_levels: 3,
            smoothness_weight: 0.5,
            max_displacement_per_level: 6,
            iterations_per_level: 4,
            working_resolution: 256,
            seed: 0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.descriptor_cell == 0
            || self.pyramid_levels == 0
            || self.iterations_per_level == 0
            || self.max_displacement_per_level == 0
            || self.working_resolution < 8
        {
            return Err(Error::InvalidInput(
                "flow config fields must be positive (working_resolution >= 8)".into(),
            ));
        }
        if self.smoothness_weight < 0.0 {
            return Err(Error::InvalidInput(
                "smoothness_weight must be >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Stable hash of every field; keys the on-disk flow cache.
    pub fn hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x100000001b3);
        };
        eat(self.descriptor_cell as u64);
        eat(self.pyramid_levels as u64);
        eat(self.smoothness_weight.to_bits());
        eat(self.max_displacement_per_level as u64);
        eat(self.iterations_per_level as u64);
        eat(self.working_resolution as u64);
        eat(self.seed);
        h
    }
}

/// Per-pixel integer displacement field realizing a warp: sampling the
/// target at `p + displacement(p)` pulls the target's data into the source
/// frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowField {
    width: usize,
    height: usize,
    target_width: usize,
    target_height: usize,
    disp: Vec<[i32; 2]>,
}

impl FlowField {
    pub fn new(
        width: usize,
        height: usize,
        target_width: usize,
        target_height: usize,
        disp: Vec<[i32; 2]>,
    ) -> Result<Self> {
        if disp.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "flow data length {} does not match {width}x{height}",
                disp.len()
            )));
        }
        for y in 0..height {
            for x in 0..width {
                let [dx, dy] = disp[y * width + x];
                let tx = x as i64 + dx as i64;
                let ty = y as i64 + dy as i64;
                if tx < 0 || ty < 0 || tx >= target_width as i64 || ty >= target_height as i64 {
                    return Err(Error::InvalidInput(format!(
                        "displacement ({dx}, {dy}) at ({x}, {y}) leaves the \
                         {target_width}x{target_height} target"
                    )));
                }
            }
        }
        Ok(FlowField {
            width,
            height,
            target_width,
            target_height,
            disp,
        })
    }

    /// Identity flow; valid only when the source grid fits in the target.
    pub fn zero(width: usize, height: usize, target_width: usize, target_height: usize) -> Result<Self> {
        FlowField::new(
            width,
            height,
            target_width,
            target_height,
            vec![[0, 0]; width * height],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn target_width(&self) -> usize {
        self.target_width
    }

    pub fn target_height(&self) -> usize {
        self.target_height
    }

    #[inline]
    pub fn displacement(&self, x: usize, y: usize) -> [i32; 2] {
        self.disp[y * self.width + x]
    }

    fn targets(&self, m_w: usize, m_h: usize) -> Result<()> {
        if self.target_width != m_w || self.target_height != m_h {
            return Err(Error::dims((self.target_width, self.target_height), (m_w, m_h)));
        }
        Ok(())
    }
}

/// Pulls a scalar map along the flow: `out(p) = m(p + displacement(p))`.
pub fn warp_map(flow: &FlowField, m: &ScalarMap) -> Result<ScalarMap> {
    flow.targets(m.width(), m.height())?;
    Ok(ScalarMap::from_fn(flow.width, flow.height, |x, y| {
        let [dx, dy] = flow.displacement(x, y);
        m.get((x as i64 + dx as i64) as usize, (y as i64 + dy as i64) as usize)
    }))
}

/// Pulls a binary mask along the flow.
pub fn warp_mask(flow: &FlowField, m: &BinaryMask) -> Result<BinaryMask> {
    flow.targets(m.width(), m.height())?;
    Ok(BinaryMask::from_fn(flow.width, flow.height, |x, y| {
        let [dx, dy] = flow.displacement(x, y);
        m.get((x as i64 + dx as i64) as usize, (y as i64 + dy as i64) as usize)
    }))
}

/// Dense per-pixel descriptors: 4x4 cells x 8 orientations of
/// gradient-magnitude votes, L2-normalized with clipping.
#[derive(Clone, Debug)]
pub struct DescriptorField {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

pub const DESCRIPTOR_DIM: usize = 128;
const ORIENTATION_BINS: usize = 8;
const GRID: usize = 4;

impl DescriptorField {
    #[inline]
    pub fn descriptor(&self, x: usize, y: usize) -> &[f32] {
        let start = (y * self.width + x) * DESCRIPTOR_DIM;
        &self.data[start..start + DESCRIPTOR_DIM]
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }
}

/// Computes the descriptor field of an image.
pub fn dense_descriptors(img: &Raster, cfg: &FlowConfig) -> DescriptorField {
    let w = img.width();
    let h = img.height();
    let gray = img.to_gray();
    let at = |x: i64, y: i64| gray.get(x.clamp(0, w as i64 - 1) as usize, y.clamp(0, h as i64 - 1) as usize);

    // Orientation-binned gradient votes, one integral image per bin.
    let mut integrals = vec![vec![0.0f64; (w + 1) * (h + 1)]; ORIENTATION_BINS];
    let mut votes = vec![0.0f64; ORIENTATION_BINS];
    for y in 0..h {
        for x in 0..w {
            votes.iter_mut().for_each(|v| *v = 0.0);
            let gx = (at(x as i64 + 1, y as i64) - at(x as i64 - 1, y as i64)) / 2.0;
            let gy = (at(x as i64, y as i64 + 1) - at(x as i64, y as i64 - 1)) / 2.0;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag > 0.0 {
                let theta = gy.atan2(gx); // [-pi, pi]
                let mut bin = (((theta + std::f64::consts::PI)
                    / (2.0 * std::f64::consts::PI))
                    * ORIENTATION_BINS as f64) as usize;
                if bin >= ORIENTATION_BINS {
                    bin = ORIENTATION_BINS - 1;
                }
                votes[bin] = mag;
            }
            for b in 0..ORIENTATION_BINS {
                let row = (y + 1) * (w + 1);
                integrals[b][row + x + 1] =
                    votes[b] + integrals[b][row + x] + integrals[b][y * (w + 1) + x + 1]
                        - integrals[b][y * (w + 1) + x];
            }
        }
    }
    let rect_sum = |b: usize, x0: i64, y0: i64, x1: i64, y1: i64| -> f64 {
        // Inclusive rect, clipped.
        let x0 = x0.clamp(0, w as i64) as usize;
        let y0 = y0.clamp(0, h as i64) as usize;
        let x1 = (x1 + 1).clamp(0, w as i64) as usize;
        let y1 = (y1 + 1).clamp(0, h as i64) as usize;
        if x0 >= x1 || y0 >= y1 {
            return 0.0;
        }
        let t = &integrals[b];
        t[y1 * (w + 1) + x1] + t[y0 * (w + 1) + x0] - t[y0 * (w + 1) + x1] - t[y1 * (w + 1) + x0]
    };

    let c = cfg.descriptor_cell as i64;
    let mut data = vec![0.0f32; w * h * DESCRIPTOR_DIM];
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * DESCRIPTOR_DIM;
            let mut k = 0;
            for gy in 0..GRID as i64 {
                for gx in 0..GRID as i64 {
                    let x0 = x as i64 + (gx - 2) * c;
                    let y0 = y as i64 + (gy - 2) * c;
                    for b in 0..ORIENTATION_BINS {
                        data[base + k] = rect_sum(b, x0, y0, x0 + c - 1, y0 + c - 1) as f32;
                        k += 1;
                    }
                }
            }
            // L2 normalize, clip at 0.2, renormalize.
            let slice = &mut data[base..base + DESCRIPTOR_DIM];
            let norm = slice.iter().map(|v| v * v).sum::<f32>().sqrt();
            if norm > 1e-12 {
                for v in slice.iter_mut() {
                    *v = (*v / norm).min(0.2);
                }
                let norm2 = slice.iter().map(|v| v * v).sum::<f32>().sqrt();
                if norm2 > 1e-12 {
                    for v in slice.iter_mut() {
                        *v /= norm2;
                    }
                }
            } else {
                slice.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    DescriptorField {
        width: w,
        height: h,
        data,
    }
}

#[inline]
fn desc_distance(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f32;
    for i in 0..DESCRIPTOR_DIM {
        s += (a[i] - b[i]).abs();
    }
    s as f64
}

/// Per-level energies recorded while solving; one vector per pyramid level,
/// coarsest first, holding the total energy after each iteration.
#[derive(Clone, Debug, Default)]
pub struct FlowSolveReport {
    pub level_energies: Vec<Vec<f64>>,
}

struct LevelState {
    width: usize,
    height: usize,
    tw: usize,
    th: usize,
    disp: Vec<[i32; 2]>,
}

impl LevelState {
    #[inline]
    fn clamp(&self, x: usize, y: usize, d: [i32; 2]) -> [i32; 2] {
        [
            d[0].clamp(-(x as i32), self.tw as i32 - 1 - x as i32),
            d[1].clamp(-(y as i32), self.th as i32 - 1 - y as i32),
        ]
    }
}

fn pair_cost(a: [i32; 2], b: [i32; 2]) -> f64 {
    let l1 = ((a[0] - b[0]).abs() + (a[1] - b[1]).abs()) as f64;
    l1.min(SMOOTHNESS_TRUNCATION)
}

/// Computes a dense flow from `src` onto `dst` at their native resolutions.
pub fn compute_flow(src: &Raster, dst: &Raster, cfg: &FlowConfig) -> Result<FlowField> {
    Ok(compute_flow_with_report(src, dst, cfg)?.0)
}

/// As `compute_flow`, also returning per-iteration energies.
pub fn compute_flow_with_report(
    src: &Raster,
    dst: &Raster,
    cfg: &FlowConfig,
) -> Result<(FlowField, FlowSolveReport)> {
    cfg.validate()?;

    // Pyramids, finest first.
    let mut src_levels = vec![src.clone()];
    let mut dst_levels = vec![dst.clone()];
    for _ in 1..cfg.pyramid_levels {
        let ps = src_levels.last().unwrap();
        let pd = dst_levels.last().unwrap();
        if ps.width().min(ps.height()) < 16 || pd.width().min(pd.height()) < 16 {
            break;
        }
        src_levels.push(ps.resize(ps.width().div_ceil(2), ps.height().div_ceil(2))?);
        dst_levels.push(pd.resize(pd.width().div_ceil(2), pd.height().div_ceil(2))?);
    }

    let mut report = FlowSolveReport::default();
    let mut state: Option<LevelState> = None;
    for level in (0..src_levels.len()).rev() {
        let s_img = &src_levels[level];
        let d_img = &dst_levels[level];
        let s_desc = dense_descriptors(s_img, cfg);
        let d_desc = dense_descriptors(d_img, cfg);
        let (w, h) = (s_img.width(), s_img.height());
        let (tw, th) = (d_img.width(), d_img.height());

        let mut lvl = LevelState {
            width: w,
            height: h,
            tw,
            th,
            disp: vec![[0, 0]; w * h],
        };
        if let Some(prev) = &state {
            for y in 0..h {
                for x in 0..w {
                    let px = (x / 2).min(prev.width - 1);
                    let py = (y / 2).min(prev.height - 1);
                    let d = prev.disp[py * prev.width + px];
                    lvl.disp[y * w + x] = lvl.clamp(x, y, [d[0] * 2, d[1] * 2]);
                }
            }
        } else {
            for y in 0..h {
                for x in 0..w {
                    lvl.disp[y * w + x] = lvl.clamp(x, y, [0, 0]);
                }
            }
        }

        let data_cost = |x: usize, y: usize, d: [i32; 2]| -> f64 {
            let tx = (x as i32 + d[0]) as usize;
            let ty = (y as i32 + d[1]) as usize;
            desc_distance(s_desc.descriptor(x, y), d_desc.descriptor(tx, ty))
        };
        let neighbor_cost = |disp: &[[i32; 2]], x: usize, y: usize, d: [i32; 2]| -> f64 {
            let mut s = 0.0;
            if x > 0 {
                s += pair_cost(d, disp[y * w + x - 1]);
            }
            if x + 1 < w {
                s += pair_cost(d, disp[y * w + x + 1]);
            }
            if y > 0 {
                s += pair_cost(d, disp[(y - 1) * w + x]);
            }
            if y + 1 < h {
                s += pair_cost(d, disp[(y + 1) * w + x]);
            }
            s * cfg.smoothness_weight
        };

        // Total energy, tracked incrementally across accepted moves.
        let mut energy = 0.0;
        for y in 0..h {
            for x in 0..w {
                energy += data_cost(x, y, lvl.disp[y * w + x]);
                let d = lvl.disp[y * w + x];
                if x + 1 < w {
                    energy += cfg.smoothness_weight * pair_cost(d, lvl.disp[y * w + x + 1]);
                }
                if y + 1 < h {
                    energy += cfg.smoothness_weight * pair_cost(d, lvl.disp[(y + 1) * w + x]);
                }
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (level as u64) << 8);
        let mut energies = Vec::with_capacity(cfg.iterations_per_level);
        for iteration in 0..cfg.iterations_per_level {
            let forward = iteration % 2 == 0;
            let coords: Vec<(usize, usize)> = if forward {
                (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).collect()
            } else {
                (0..h)
                    .rev()
                    .flat_map(|y| (0..w).rev().map(move |x| (x, y)))
                    .collect()
            };
            for (x, y) in coords {
                let idx = y * w + x;
                let current = lvl.disp[idx];
                let mut best = current;
                let mut best_cost =
                    data_cost(x, y, current) + neighbor_cost(&lvl.disp, x, y, current);

                let try_candidate = |cand: [i32; 2],
                                         lvl: &LevelState,
                                         best: &mut [i32; 2],
                                         best_cost: &mut f64| {
                    let cand = lvl.clamp(x, y, cand);
                    if cand == *best {
                        return;
                    }
                    let cost = data_cost(x, y, cand) + neighbor_cost(&lvl.disp, x, y, cand);
                    if cost < *best_cost {
                        *best = cand;
                        *best_cost = cost;
                    }
                };

                // Propagation from already-updated scan neighbors.
                if forward {
                    if x > 0 {
                        try_candidate(lvl.disp[idx - 1], &lvl, &mut best, &mut best_cost);
                    }
                    if y > 0 {
                        try_candidate(lvl.disp[idx - w], &lvl, &mut best, &mut best_cost);
                    }
                } else {
                    if x + 1 < w {
                        try_candidate(lvl.disp[idx + 1], &lvl, &mut best, &mut best_cost);
                    }
                    if y + 1 < h {
                        try_candidate(lvl.disp[idx + w], &lvl, &mut best, &mut best_cost);
                    }
                }
                // Shrinking random search around the incumbent.
                let mut radius = cfg.max_displacement_per_level as i32;
                while radius >= 1 {
                    let cand = [
                        best[0] + rng.random_range(-radius..=radius),
                        best[1] + rng.random_range(-radius..=radius),
                    ];
                    try_candidate(cand, &lvl, &mut best, &mut best_cost);
                    radius /= 2;
                }

                if best != current {
                    let old_cost =
                        data_cost(x, y, current) + neighbor_cost(&lvl.disp, x, y, current);
                    energy += best_cost - old_cost;
                    lvl.disp[idx] = best;
                }
            }
            energies.push(energy);
        }
        report.level_energies.push(energies);
        state = Some(lvl);
    }

    let final_state = state.expect("at least one pyramid level");
    let flow = FlowField::new(
        final_state.width,
        final_state.height,
        final_state.tw,
        final_state.th,
        final_state.disp,
    )?;
    Ok((flow, report))
}

/// Flow between two images at their native sizes, matching at the working
/// resolution when they are larger and rescaling displacements back.
pub fn flow_between(src: &Raster, dst: &Raster, cfg: &FlowConfig) -> Result<FlowField> {
    cfg.validate()?;
    let wr = cfg.working_resolution;
    let shrink = |img: &Raster| -> Result<Option<Raster>> {
        let longer = img.width().max(img.height());
        if longer <= wr {
            return Ok(None);
        }
        let scale = wr as f64 / longer as f64;
        let nw = ((img.width() as f64 * scale).round() as usize).max(8);
        let nh = ((img.height() as f64 * scale).round() as usize).max(8);
        Ok(Some(img.resize(nw, nh)?))
    };
    let small_src = shrink(src)?;
    let small_dst = shrink(dst)?;
    if small_src.is_none() && small_dst.is_none() {
        return compute_flow(src, dst, cfg);
    }
    let ws = small_src.as_ref().unwrap_or(src);
    let wd = small_dst.as_ref().unwrap_or(dst);
    let flow = compute_flow(ws, wd, cfg)?;

    // Rescale to native: sample the working field and stretch displacements.
    let sx = ws.width() as f64 / src.width() as f64;
    let sy = ws.height() as f64 / src.height() as f64;
    let ux = dst.width() as f64 / wd.width() as f64;
    let uy = dst.height() as f64 / wd.height() as f64;
    let mut disp = Vec::with_capacity(src.width() * src.height());
    for y in 0..src.height() {
        for x in 0..src.width() {
            let wxc = ((x as f64 * sx) as usize).min(ws.width() - 1);
            let wyc = ((y as f64 * sy) as usize).min(ws.height() - 1);
            let d = flow.displacement(wxc, wyc);
            // Map the working-resolution match back to native coordinates.
            let txn = (((wxc as i32 + d[0]) as f64 + 0.5) * ux) as i32;
            let tyn = (((wyc as i32 + d[1]) as f64 + 0.5) * uy) as i32;
            let dx = (txn - x as i32).clamp(-(x as i32), dst.width() as i32 - 1 - x as i32);
            let dy = (tyn - y as i32).clamp(-(y as i32), dst.height() as i32 - 1 - y as i32);
            disp.push([dx, dy]);
        }
    }
    FlowField::new(
        src.width(),
        src.height(),
        dst.width(),
        dst.height(),
        disp,
    )
}

/// Writes the raw flow format: 8-byte header (width, height as u32 LE)
/// followed by row-major little-endian int16 (dx, dy) pairs.
pub fn save_flow(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = Vec::with_capacity(8 + flow.disp.len() * 4);
    bytes.extend_from_slice(&(flow.width as u32).to_le_bytes());
    bytes.extend_from_slice(&(flow.height as u32).to_le_bytes());
    for d in &flow.disp {
        bytes.extend_from_slice(&(d[0] as i16).to_le_bytes());
        bytes.extend_from_slice(&(d[1] as i16).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads the raw flow format; the target dimensions come from context and
/// displacements are validated against them.
pub fn load_flow(
    path: impl AsRef<Path>,
    target_width: usize,
    target_height: usize,
) -> Result<FlowField> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::InvalidInput(format!(
            "flow file {} too short",
            path.display()
        )));
    }
    let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + width * height * 4 {
        return Err(Error::InvalidInput(format!(
            "flow file {} has wrong size for {width}x{height}",
            path.display()
        )));
    }
    let mut disp = Vec::with_capacity(width * height);
    for i in 0..width * height {
        let o = 8 + i * 4;
        let dx = i16::from_le_bytes(bytes[o..o + 2].try_into().unwrap());
        let dy = i16::from_le_bytes(bytes[o + 2..o + 4].try_into().unwrap());
        disp.push([dx as i32, dy as i32]);
    }
    FlowField::new(width, height, target_width, target_height, disp)
}

/// Source of pairwise flows.
pub trait FlowProvider: Send + Sync {
    /// Flow over `src`'s domain pointing into `dst`, so that warping along
    /// it pulls `dst`-frame data into `src`'s frame.
    fn flow(&self, src_stem: &str, src: &Raster, dst_stem: &str, dst: &Raster) -> Result<FlowField>;
}

/// Computes flows on demand, optionally caching them on disk keyed by
/// `(src stem, dst stem, config hash)`.
pub struct ComputedFlows {
    pub config: FlowConfig,
    pub cache_dir: Option<PathBuf>,
}

impl FlowProvider for ComputedFlows {
    fn flow(&self, src_stem: &str, src: &Raster, dst_stem: &str, dst: &Raster) -> Result<FlowField> {
        let cache_path = self.cache_dir.as_ref().map(|dir| {
            dir.join(format!("{src_stem}__{dst_stem}__{:016x}.flow", self.config.hash()))
        });
        if let Some(path) = &cache_path {
            if path.exists() {
                return load_flow(path, dst.width(), dst.height());
            }
        }
        let flow = flow_between(src, dst, &self.config)?;
        if let Some(path) = &cache_path {
            save_flow(path, &flow)?;
        }
        Ok(flow)
    }
}

/// Loads precomputed flows from `<dir>/<src>__<dst>.flow`.
pub struct DirectoryFlows {
    pub dir: PathBuf,
}

impl FlowProvider for DirectoryFlows {
    fn flow(&self, src_stem: &str, _src: &Raster, dst_stem: &str, dst: &Raster) -> Result<FlowField> {
        let path = self.dir.join(format!("{src_stem}__{dst_stem}.flow"));
        load_flow(path, dst.width(), dst.height())
    }
}
