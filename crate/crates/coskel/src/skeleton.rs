//! Medial-axis extraction, maximal-disk reconstruction and branch
//! decomposition.
//!
//! The axis is computed as anchor ridges of the exact Euclidean distance
//! transform followed by homotopy-preserving thinning to unit width. All
//! distance arithmetic is carried in exact integer squared form; the maximal
//! disk stored at a skeleton pixel is the strict ball `{q : |q - p| < r}`
//! with `r` the distance-transform value, which is precisely the set of
//! pixels guaranteed to lie inside the source shape.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, Connectivity, ScalarMap, connected_components};

/// Exact squared Euclidean distance from each pixel to the nearest
/// background pixel. Anything outside the image counts as background, so
/// all-foreground masks still get finite distances and inscribed disks never
/// leave the image.
pub(crate) fn squared_edt(shape: &BinaryMask) -> Vec<u64> {
    let w = shape.width();
    let h = shape.height();

    // Column pass: integer distance to the nearest background pixel in the
    // same column, with virtual background just above and below the image.
    let mut col_dist = vec![0u64; w * h];
    for x in 0..w {
        let mut d = 1u64;
        for y in 0..h {
            if !shape.get(x, y) {
                col_dist[y * w + x] = 0;
                d = 1;
            } else {
                col_dist[y * w + x] = d;
                d += 1;
            }
        }
        let mut d = 1u64;
        for y in (0..h).rev() {
            if !shape.get(x, y) {
                d = 1;
            } else {
                let idx = y * w + x;
                col_dist[idx] = col_dist[idx].min(d);
                d += 1;
            }
        }
    }

    // Row pass: lower envelope of parabolas rooted at every column distance,
    // with two extra zero-height roots standing in for the side borders.
    let mut out = vec![0u64; w * h];
    let mut f = vec![0.0f64; w + 2];
    let mut v = vec![0usize; w + 2];
    let mut z = vec![0.0f64; w + 3];
    for y in 0..h {
        f[0] = 0.0;
        for x in 0..w {
            let d = col_dist[y * w + x] as f64;
            f[x + 1] = d * d;
        }
        f[w + 1] = 0.0;

        let n = w + 2;
        let mut k = 0usize;
        v[0] = 0;
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        for q in 1..n {
            let fq = f[q] + (q * q) as f64;
            loop {
                let p = v[k];
                let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
                if s <= z[k] {
                    if k == 0 {
                        break;
                    }
                    k -= 1;
                } else {
                    k += 1;
                    v[k] = q;
                    z[k] = s;
                    z[k + 1] = f64::INFINITY;
                    break;
                }
            }
        }
        let mut k = 0usize;
        for x in 0..w {
            let q = x + 1;
            while z[k + 1] < q as f64 {
                k += 1;
            }
            let p = v[k];
            let dx = q as f64 - p as f64;
            out[y * w + x] = (dx * dx + f[p]).round() as u64;
        }
    }
    out
}

/// Exact Euclidean distance from each foreground pixel to the nearest
/// background pixel; 0 on background.
pub fn distance_transform(shape: &BinaryMask) -> ScalarMap {
    let sq = squared_edt(shape);
    let w = shape.width();
    ScalarMap::from_fn(w, shape.height(), |x, y| (sq[y * w + x] as f64).sqrt())
}

/// Exact squared Euclidean distance from every pixel to the nearest set
/// pixel of `sources`; `u64::MAX` when the set is empty. No virtual border
/// applies here: only real source pixels count.
pub(crate) fn squared_distance_to_set(sources: &BinaryMask) -> Vec<u64> {
    let w = sources.width();
    let h = sources.height();
    if sources.is_blank() {
        return vec![u64::MAX; w * h];
    }
    const FAR: u64 = u64::MAX / 4;

    let mut col_dist = vec![FAR; w * h];
    for x in 0..w {
        let mut d = FAR;
        for y in 0..h {
            if sources.get(x, y) {
                d = 0;
            } else if d < FAR {
                d += 1;
            }
            col_dist[y * w + x] = d;
        }
        let mut d = FAR;
        for y in (0..h).rev() {
            if sources.get(x, y) {
                d = 0;
            } else if d < FAR {
                d += 1;
            }
            let idx = y * w + x;
            col_dist[idx] = col_dist[idx].min(d);
        }
    }

    let far_sq = (w + h + 1) as f64;
    let far_sq = far_sq * far_sq;
    let mut out = vec![0u64; w * h];
    let mut f = vec![0.0f64; w];
    let mut v = vec![0usize; w];
    let mut z = vec![0.0f64; w + 1];
    for y in 0..h {
        for x in 0..w {
            let d = col_dist[y * w + x];
            f[x] = if d >= FAR { far_sq } else { (d * d) as f64 };
        }
        let mut k = 0usize;
        v[0] = 0;
        z[0] = f64::NEG_INFINITY;
        z[1] = f64::INFINITY;
        for q in 1..w {
            let fq = f[q] + (q * q) as f64;
            loop {
                let p = v[k];
                let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
                if s <= z[k] {
                    if k == 0 {
                        break;
                    }
                    k -= 1;
                } else {
                    k += 1;
                    v[k] = q;
                    z[k] = s;
                    z[k + 1] = f64::INFINITY;
                    break;
                }
            }
        }
        let mut k = 0usize;
        for x in 0..w {
            while z[k + 1] < x as f64 {
                k += 1;
            }
            let p = v[k];
            let dx = x as f64 - p as f64;
            out[y * w + x] = (dx * dx + f[p]).round() as u64;
        }
    }
    out
}

const NEIGHBORS8: [(isize, isize); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

fn simple_point_table() -> &'static [bool; 256] {
    static TABLE: OnceLock<[bool; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [false; 256];
        for code in 0..256usize {
            let fg: Vec<(isize, isize)> = NEIGHBORS8
                .iter()
                .enumerate()
                .filter(|(k, _)| code & (1 << k) != 0)
                .map(|(_, &d)| d)
                .collect();
            let bg: Vec<(isize, isize)> = NEIGHBORS8
                .iter()
                .enumerate()
                .filter(|(k, _)| code & (1 << k) == 0)
                .map(|(_, &d)| d)
                .collect();

            // Deleting the center preserves topology in the (8, 4) pair iff
            // the ring foreground forms one 8-connected component and the
            // ring background 4-adjacent to the center forms one 4-connected
            // component.
            let comps = |cells: &[(isize, isize)], conn8: bool| -> usize {
                let mut seen = vec![false; cells.len()];
                let mut count = 0;
                for start in 0..cells.len() {
                    if seen[start] {
                        continue;
                    }
                    count += 1;
                    let mut stack = vec![start];
                    seen[start] = true;
                    while let Some(i) = stack.pop() {
                        for j in 0..cells.len() {
                            if seen[j] {
                                continue;
                            }
                            let dx = (cells[i].0 - cells[j].0).abs();
                            let dy = (cells[i].1 - cells[j].1).abs();
                            let adjacent = if conn8 {
                                dx <= 1 && dy <= 1
                            } else {
                                dx + dy == 1
                            };
                            if adjacent {
                                seen[j] = true;
                                stack.push(j);
                            }
                        }
                    }
                }
                count
            };

            let fg_ok = !fg.is_empty() && comps(&fg, true) == 1;
            let bg_edge: Vec<(isize, isize)> = bg
                .iter()
                .copied()
                .filter(|&(dx, dy)| dx.abs() + dy.abs() == 1)
                .collect();
            // Count 4-components of ring background containing an edge cell.
            let bg_ok = if bg_edge.is_empty() {
                false
            } else {
                let mut seen = vec![false; bg.len()];
                let mut count = 0;
                for start in 0..bg.len() {
                    if seen[start] || bg[start].0.abs() + bg[start].1.abs() != 1 {
                        continue;
                    }
                    // Flood this 4-component; count it once even if it holds
                    // several edge cells.
                    let mut stack = vec![start];
                    seen[start] = true;
                    let mut holds_edge = false;
                    while let Some(i) = stack.pop() {
                        if bg[i].0.abs() + bg[i].1.abs() == 1 {
                            holds_edge = true;
                        }
                        for j in 0..bg.len() {
                            if seen[j] {
                                continue;
                            }
                            let dx = (bg[i].0 - bg[j].0).abs();
                            let dy = (bg[i].1 - bg[j].1).abs();
                            if dx + dy == 1 {
                                seen[j] = true;
                                stack.push(j);
                            }
                        }
                    }
                    if holds_edge {
                        count += 1;
                    }
                }
                count == 1
            };
            table[code] = fg_ok && bg_ok;
        }
        table
    })
}

#[inline]
fn neighbor_code(fg: &[bool], w: usize, h: usize, x: usize, y: usize) -> usize {
    let mut code = 0usize;
    for (k, &(dx, dy)) in NEIGHBORS8.iter().enumerate() {
        let nx = x as isize + dx;
        let ny = y as isize + dy;
        if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h && fg[ny as usize * w + nx as usize]
        {
            code |= 1 << k;
        }
    }
    code
}

/// True when removing the pixel preserves both foreground 8-topology and
/// background 4-topology locally.
fn is_simple(fg: &[bool], w: usize, h: usize, x: usize, y: usize) -> bool {
    simple_point_table()[neighbor_code(fg, w, h, x, y)]
}

fn degree(fg: &[bool], w: usize, h: usize, x: usize, y: usize) -> usize {
    neighbor_code(fg, w, h, x, y).count_ones() as usize
}

/// One-pixel-wide skeleton with the maximal-disk radius stored at every
/// skeleton pixel.
#[derive(Clone, Debug)]
pub struct SkeletonGeometry {
    skeleton: BinaryMask,
    radius: ScalarMap,
    sq_radius: Vec<u64>,
}

impl SkeletonGeometry {
    pub fn skeleton(&self) -> &BinaryMask {
        &self.skeleton
    }

    /// Maximal-disk radius at skeleton pixels, 0 elsewhere.
    pub fn radius(&self) -> &ScalarMap {
        &self.radius
    }

    /// Exact squared radius at a pixel, 0 off the skeleton.
    pub fn squared_radius(&self, x: usize, y: usize) -> u64 {
        self.sq_radius[y * self.skeleton.width() + x]
    }

    pub fn width(&self) -> usize {
        self.skeleton.width()
    }

    pub fn height(&self) -> usize {
        self.skeleton.height()
    }
}

/// Medial-axis skeleton of a shape.
///
/// Anchor pixels (centers of maximal disks, detected on the exact distance
/// transform) are kept; everything else is thinned away in increasing
/// distance order through simple-point removals, so the result is homotopic
/// to the shape. A second pass collapses two-pixel ridges to unit width.
pub fn medial_axis(shape: &BinaryMask) -> Result<SkeletonGeometry> {
    if shape.is_blank() {
        return Err(Error::DegenerateInput(
            "medial axis of an empty shape".into(),
        ));
    }
    let w = shape.width();
    let h = shape.height();
    let sq = squared_edt(shape);

    // Anchors are centers of maximal disks: pixels whose disk is not
    // contained in any neighbor's disk. Containment is decided exactly on
    // the lattice, with the real-ball bound as a fast sufficient test.
    let contained = |p: (usize, usize), sq_p: u64, q: (usize, usize), sq_q: u64| -> bool {
        let wx = p.0 as i64 - q.0 as i64;
        let wy = p.1 as i64 - q.1 as i64;
        let step = ((wx * wx + wy * wy) as f64).sqrt();
        let rp = (sq_p as f64).sqrt();
        let rq = (sq_q as f64).sqrt();
        if rq >= rp + step {
            return true;
        }
        let reach = isqrt_below(sq_p) as i64;
        for vy in -reach..=reach {
            let vy2 = (vy * vy) as u64;
            if vy2 >= sq_p {
                continue;
            }
            let vx_max = isqrt_below(sq_p - vy2) as i64;
            for vx in -vx_max..=vx_max {
                let tx = vx + wx;
                let ty = vy + wy;
                if ((tx * tx + ty * ty) as u64) >= sq_q {
                    return false;
                }
            }
        }
        true
    };
    let mut anchor = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            if !shape.get(x, y) {
                continue;
            }
            let mut redundant = false;
            for &(dx, dy) in &NEIGHBORS8 {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let nidx = ny as usize * w + nx as usize;
                if !shape.get(nx as usize, ny as usize) || sq[nidx] <= sq[idx] {
                    continue;
                }
                if contained((x, y), sq[idx], (nx as usize, ny as usize), sq[nidx]) {
                    redundant = true;
                    break;
                }
            }
            anchor[idx] = !redundant;
        }
    }

    let mut fg: Vec<bool> = shape.bits().to_vec();

    // Stage 1: ordered homotopic thinning towards the anchors.
    let mut heap: BinaryHeap<Reverse<(u64, usize, usize)>> = BinaryHeap::new();
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            if fg[idx] && !anchor[idx] {
                heap.push(Reverse((sq[idx], y, x)));
            }
        }
    }
    while let Some(Reverse((_, y, x))) = heap.pop() {
        let idx = y * w + x;
        if !fg[idx] || anchor[idx] {
            continue;
        }
        if !is_simple(&fg, w, h, x, y) {
            continue;
        }
        fg[idx] = false;
        for &(dx, dy) in &NEIGHBORS8 {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                continue;
            }
            let nidx = ny as usize * w + nx as usize;
            if fg[nidx] && !anchor[nidx] {
                heap.push(Reverse((sq[nidx], ny as usize, nx as usize)));
            }
        }
    }

    // Stage 2: collapse remaining two-pixel ridges. Only pixels with a
    // neighbor of equal or larger disk are candidates, so ridge crests and
    // branch tips survive; simplicity keeps the result homotopic.
    loop {
        let mut order: Vec<(u64, usize, usize)> = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let idx = y * w + x;
                if fg[idx] {
                    order.push((sq[idx], y, x));
                }
            }
        }
        order.sort_unstable();
        let mut removed = 0usize;
        for &(s, y, x) in &order {
            let idx = y * w + x;
            if !fg[idx] || degree(&fg, w, h, x, y) < 2 || !is_simple(&fg, w, h, x, y) {
                continue;
            }
            let mut has_peer = false;
            for &(dx, dy) in &NEIGHBORS8 {
                let nx = x as isize + dx;
                let ny = y as isize + dy;
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let nidx = ny as usize * w + nx as usize;
                if fg[nidx] && sq[nidx] >= s {
                    has_peer = true;
                    break;
                }
            }
            if has_peer {
                fg[idx] = false;
                removed += 1;
            }
        }
        if removed == 0 {
            break;
        }
    }

    let skeleton = BinaryMask::new(w, h, fg)?;
    let sq_radius: Vec<u64> = skeleton
        .bits()
        .iter()
        .zip(sq.iter())
        .map(|(&on, &s)| if on { s } else { 0 })
        .collect();
    let radius = ScalarMap::from_fn(w, h, |x, y| (sq_radius[y * w + x] as f64).sqrt());
    Ok(SkeletonGeometry {
        skeleton,
        radius,
        sq_radius,
    })
}

/// Union of maximal disks over the kept skeleton pixels.
///
/// The stamped disk at `p` is `{q : |q - p| < r(p)}`, so the union is a
/// subset of the shape the geometry was built from, for any kept subset.
pub fn reconstruct_shape(geom: &SkeletonGeometry, kept: &BinaryMask) -> Result<BinaryMask> {
    if !kept.same_dims(geom.skeleton()) {
        return Err(Error::dims(
            (geom.width(), geom.height()),
            (kept.width(), kept.height()),
        ));
    }
    if !kept.is_subset_of(geom.skeleton()) {
        return Err(Error::InvalidInput(
            "kept mask contains non-skeleton pixels".into(),
        ));
    }
    let w = geom.width();
    let h = geom.height();
    let mut out = BinaryMask::empty(w, h);
    for (x, y) in kept.foreground() {
        let r2 = geom.squared_radius(x, y);
        if r2 == 0 {
            continue;
        }
        let reach = isqrt_below(r2);
        let y0 = y.saturating_sub(reach);
        let y1 = (y + reach).min(h - 1);
        for yy in y0..=y1 {
            let dy = yy as i64 - y as i64;
            let dy2 = (dy * dy) as u64;
            if dy2 >= r2 {
                continue;
            }
            let dx_max = isqrt_below(r2 - dy2);
            let x0 = x.saturating_sub(dx_max);
            let x1 = (x + dx_max).min(w - 1);
            for xx in x0..=x1 {
                out.set(xx, yy, true);
            }
        }
    }
    Ok(out)
}

/// Union of maximal disks of `shape` centered at the kept pixels, for any
/// kept mask (pixels off the shape carry empty disks). Agrees with
/// `reconstruct_shape` whenever the kept mask lies on the medial axis, but
/// also serves arbitrary skeleton/shape pairings such as annotated
/// skeletons over independently produced segmentations.
pub fn reconstruct_within(shape: &BinaryMask, kept: &BinaryMask) -> Result<BinaryMask> {
    if !kept.same_dims(shape) {
        return Err(Error::dims(
            (shape.width(), shape.height()),
            (kept.width(), kept.height()),
        ));
    }
    let w = shape.width();
    let h = shape.height();
    let sq = squared_edt(shape);
    let mut out = BinaryMask::empty(w, h);
    for (x, y) in kept.foreground() {
        let r2 = sq[y * w + x];
        if r2 == 0 {
            continue;
        }
        let reach = isqrt_below(r2);
        let y0 = y.saturating_sub(reach);
        let y1 = (y + reach).min(h - 1);
        for yy in y0..=y1 {
            let dy = yy as i64 - y as i64;
            let dy2 = (dy * dy) as u64;
            if dy2 >= r2 {
                continue;
            }
            let dx_max = isqrt_below(r2 - dy2);
            let x0 = x.saturating_sub(dx_max);
            let x1 = (x + dx_max).min(w - 1);
            for xx in x0..=x1 {
                out.set(xx, yy, true);
            }
        }
    }
    Ok(out)
}

/// Largest `k` with `k * k < n` (0 when `n <= 1`).
fn isqrt_below(n: u64) -> usize {
    if n <= 1 {
        return 0;
    }
    let mut k = ((n - 1) as f64).sqrt() as u64;
    while (k + 1) * (k + 1) < n {
        k += 1;
    }
    while k * k >= n {
        k -= 1;
    }
    k as usize
}

/// A maximal junction-free path of a thin skeleton. Junction pixels shared
/// with other branches sit at the ends of `pixels`.
#[derive(Clone, Debug)]
pub struct Branch {
    pub pixels: Vec<(usize, usize)>,
    /// True when at least one end is a free skeleton end rather than a
    /// junction; only such branches are candidates for pruning.
    pub terminal: bool,
}

impl Branch {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

/// Branch decomposition of a thin skeleton.
#[derive(Clone, Debug, Default)]
pub struct SkeletonGraph {
    pub branches: Vec<Branch>,
    pub junctions: Vec<(usize, usize)>,
    pub endpoints: Vec<(usize, usize)>,
}

/// Decomposes a thin skeleton into maximal junction-free paths.
///
/// Pixels with three or more skeleton neighbors are junctions; they are
/// attached to every incident branch for path continuity but belong to the
/// skeleton exactly once.
pub fn extract_branches(skeleton: &BinaryMask) -> SkeletonGraph {
    let w = skeleton.width();
    let h = skeleton.height();
    let fg = skeleton.bits();
    if skeleton.is_blank() {
        return SkeletonGraph::default();
    }

    let deg = |x: usize, y: usize| degree(fg, w, h, x, y);
    let mut is_junction = vec![false; w * h];
    let mut junctions = Vec::new();
    let mut endpoints = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !fg[y * w + x] {
                continue;
            }
            let d = deg(x, y);
            if d >= 3 {
                is_junction[y * w + x] = true;
                junctions.push((x, y));
            } else if d <= 1 {
                endpoints.push((x, y));
            }
        }
    }

    // Components of non-junction pixels become branch interiors.
    let interior = BinaryMask::from_fn(w, h, |x, y| fg[y * w + x] && !is_junction[y * w + x]);
    let (labels, count) = connected_components(&interior, Connectivity::Eight);
    let mut comps: Vec<Vec<(usize, usize)>> = vec![Vec::new(); count];
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l > 0 {
                comps[(l - 1) as usize].push((x, y));
            }
        }
    }

    let neighbors_of = |x: usize, y: usize| -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &(dx, dy) in &NEIGHBORS8 {
            let nx = x as isize + dx;
            let ny = y as isize + dy;
            if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h
                && fg[ny as usize * w + nx as usize]
            {
                out.push((nx as usize, ny as usize));
            }
        }
        out
    };

    let mut branches = Vec::new();
    let mut junction_claimed = vec![false; w * h];
    for comp in comps {
        // Trace the component as a path; a cycle starts anywhere.
        let mut start = comp[0];
        for &(x, y) in &comp {
            let in_comp_neighbors = neighbors_of(x, y)
                .into_iter()
                .filter(|&(nx, ny)| labels[ny * w + nx] == labels[y * w + x])
                .count();
            if in_comp_neighbors <= 1 {
                start = (x, y);
                break;
            }
        }
        let mut path = vec![start];
        let mut visited = std::collections::HashSet::new();
        visited.insert(start);
        loop {
            let (cx, cy) = *path.last().unwrap();
            let next = neighbors_of(cx, cy)
                .into_iter()
                .filter(|&(nx, ny)| {
                    labels[ny * w + nx] == labels[cy * w + cx] && !visited.contains(&(nx, ny))
                })
                .min();
            match next {
                Some(p) => {
                    visited.insert(p);
                    path.push(p);
                }
                None => break,
            }
        }

        // Attach adjacent junction pixels at both ends.
        let mut terminal = false;
        let mut attach = |end: (usize, usize), front: bool, path: &mut Vec<(usize, usize)>| {
            let mut js: Vec<(usize, usize)> = neighbors_of(end.0, end.1)
                .into_iter()
                .filter(|&(nx, ny)| is_junction[ny * w + nx])
                .collect();
            js.sort_unstable();
            if js.is_empty() {
                return false;
            }
            for j in js {
                junction_claimed[j.1 * w + j.0] = true;
                if front {
                    path.insert(0, j);
                } else {
                    path.push(j);
                }
            }
            true
        };
        let first = path[0];
        let last = *path.last().unwrap();
        let closed = path.len() > 2 && {
            let (ax, ay) = first;
            let (bx, by) = last;
            (ax as isize - bx as isize).abs() <= 1 && (ay as isize - by as isize).abs() <= 1
        };
        if !attach(first, true, &mut path) {
            terminal = true;
        }
        if path.len() > 1 && !closed {
            if !attach(last, false, &mut path) {
                terminal = true;
            }
        } else if path.len() == 1 || closed {
            // Single-pixel component or cycle: both ends coincide.
        }
        branches.push(Branch {
            pixels: path,
            terminal,
        });
    }

    // Junction pixels reachable only through other junctions still belong to
    // the decomposition: emit each unclaimed junction component as a branch.
    let unclaimed = BinaryMask::from_fn(w, h, |x, y| {
        is_junction[y * w + x] && !junction_claimed[y * w + x]
    });
    if !unclaimed.is_blank() {
        let (jl, jc) = connected_components(&unclaimed, Connectivity::Eight);
        let mut jcomps: Vec<Vec<(usize, usize)>> = vec![Vec::new(); jc];
        for y in 0..h {
            for x in 0..w {
                if jl[y * w + x] > 0 {
                    jcomps[(jl[y * w + x] - 1) as usize].push((x, y));
                }
            }
        }
        for comp in jcomps {
            branches.push(Branch {
                pixels: comp,
                terminal: false,
            });
        }
    }

    SkeletonGraph {
        branches,
        junctions,
        endpoints,
    }
}
