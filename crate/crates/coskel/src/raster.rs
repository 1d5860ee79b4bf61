//! Pixel-grid primitives: color rasters, binary masks, scalar maps and the
//! small mask algebra every other module builds on.
//!
//! All types are immutable after construction as far as the public API is
//! concerned; the free functions are pure, so everything here is safe to use
//! from parallel sections without synchronization.

use crate::error::{Error, Result};

/// Decoded color image with all channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl Raster {
    /// Builds a raster from row-major RGB triples.
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "raster data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        for px in &data {
            for &c in px {
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::InvalidInput(format!(
                        "raster channel value {c} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Raster {
            width,
            height,
            data,
        })
    }

    /// Single-color raster.
    pub fn constant(width: usize, height: usize, color: [f64; 3]) -> Result<Self> {
        Raster::new(width, height, vec![color; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Raster::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    /// Luminance image (Rec. 601 weights).
    pub fn to_gray(&self) -> ScalarMap {
        let values = self
            .data
            .iter()
            .map(|[r, g, b]| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect();
        ScalarMap {
            width: self.width,
            height: self.height,
            data: values,
        }
    }

    /// Bilinear resampling to a new grid.
    pub fn resize(&self, new_width: usize, new_height: usize) -> Result<Raster> {
        if new_width == 0 || new_height == 0 {
            return Err(Error::InvalidInput(
                "resize target dimensions must be positive".into(),
            ));
        }
        let sx = self.width as f64 / new_width as f64;
        let sy = self.height as f64 / new_height as f64;
        Raster::from_fn(new_width, new_height, |x, y| {
            // Sample at the center of the destination pixel.
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let x0 = fx.floor() as usize;
            let y0 = fy.floor() as usize;
            let x1 = (x0 + 1).min(self.width - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            let tx = fx - x0 as f64;
            let ty = fy - y0 as f64;
            let mut out = [0.0; 3];
            for c in 0..3 {
                let top = self.pixel(x0, y0)[c] * (1.0 - tx) + self.pixel(x1, y0)[c] * tx;
                let bot = self.pixel(x0, y1)[c] * (1.0 - tx) + self.pixel(x1, y1)[c] * tx;
                out[c] = (top * (1.0 - ty) + bot * ty).clamp(0.0, 1.0);
            }
            out
        })
    }
}

/// Per-pixel `{0, 1}` map. Houses skeletons, segmentations and reconstructions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "mask data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        BinaryMask {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.data
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// True when no pixel is set.
    pub fn is_blank(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    /// Foreground pixel coordinates in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i % self.width, i / self.width))
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(&a, &b)| !a || b)
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Morphological dilation by a 3x3 square element.
    pub fn dilate3x3(&self) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| {
            let x0 = x.saturating_sub(1);
            let y0 = y.saturating_sub(1);
            let x1 = (x + 1).min(self.width - 1);
            let y1 = (y + 1).min(self.height - 1);
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    if self.get(xx, yy) {
                        return true;
                    }
                }
            }
            false
        })
    }

    /// Tight bounding box of the foreground, `(x0, y0, x1, y1)` inclusive.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for (x, y) in self.foreground() {
            bb = Some(match bb {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        bb
    }
}

/// Intersection-over-union of two same-sized masks.
///
/// Two blank masks agree vacuously and score 1; exactly one blank mask
/// scores 0. This keeps degenerate iterations away from 0/0.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::dims((a.width, a.height), (b.width, b.height)));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&pa, &pb) in a.data.iter().zip(b.data.iter()) {
        if pa && pb {
            inter += 1;
        }
        if pa || pb {
            union += 1;
        }
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Per-pixel real-valued map. Prior maps additionally stay within `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "map data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("map values must be finite".into()));
        }
        Ok(ScalarMap {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        ScalarMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        ScalarMap {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        ScalarMap {
            width,
            height,
            data,
        }
    }

    /// `{0, 1}`-valued map mirroring a mask.
    pub fn from_mask(mask: &BinaryMask) -> Self {
        ScalarMap {
            width: mask.width,
            height: mask.height,
            data: mask.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y * self.width + x] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn min(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn same_dims(&self, other: &ScalarMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Mask of pixels with value strictly above `threshold`.
    pub fn above(&self, threshold: f64) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v > threshold).collect(),
        }
    }
}

/// Square window of side `2 * radius + 1` used for prior accumulation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PixelNeighborhood {
    pub radius: usize,
}

impl PixelNeighborhood {
    pub fn new(radius: usize) -> Self {
        PixelNeighborhood { radius }
    }

    /// Pixels in the unclipped window.
    pub fn window_len(&self) -> usize {
        let side = 2 * self.radius + 1;
        side * side
    }
}

/// Sum of map values over the window centered at `p`, clipped to the bounds.
///
/// Windows are clipped at the borders, never mirrored, so sums stay
/// conservative near edges.
pub fn neighborhood_sum(m: &ScalarMap, p: (usize, usize), n: PixelNeighborhood) -> Result<f64> {
    let (x, y) = p;
    if x >= m.width || y >= m.height {
        return Err(Error::OutOfBounds {
            x,
            y,
            width: m.width,
            height: m.height,
        });
    }
    let r = n.radius;
    let x0 = x.saturating_sub(r);
    let y0 = y.saturating_sub(r);
    let x1 = (x + r).min(m.width - 1);
    let y1 = (y + r).min(m.height - 1);
    let mut sum = 0.0;
    for yy in y0..=y1 {
        let row = yy * m.width;
        for xx in x0..=x1 {
            sum += m.data[row + xx];
        }
    }
    Ok(sum)
}

/// Mean of map values over the clipped window centered at `p`.
pub fn neighborhood_mean(m: &ScalarMap, p: (usize, usize), n: PixelNeighborhood) -> Result<f64> {
    let (x, y) = p;
    if x >= m.width || y >= m.height {
        return Err(Error::OutOfBounds {
            x,
            y,
            width: m.width,
            height: m.height,
        });
    }
    let r = n.radius;
    let x0 = x.saturating_sub(r);
    let y0 = y.saturating_sub(r);
    let x1 = (x + r).min(m.width - 1);
    let y1 = (y + r).min(m.height - 1);
    let count = (x1 - x0 + 1) * (y1 - y0 + 1);
    Ok(neighborhood_sum(m, p, n)? / count as f64)
}

/// Summed-area table for O(1) clipped box sums over a `ScalarMap`.
pub(crate) struct IntegralMap {
    width: usize,
    height: usize,
    /// (width + 1) x (height + 1) prefix sums.
    table: Vec<f64>,
}

impl IntegralMap {
    pub(crate) fn new(m: &ScalarMap) -> Self {
        let w = m.width;
        let h = m.height;
        let mut table = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row_sum = 0.0;
            for x in 0..w {
                row_sum += m.data[y * w + x];
                table[(y + 1) * (w + 1) + (x + 1)] = table[y * (w + 1) + (x + 1)] + row_sum;
            }
        }
        IntegralMap {
            width: w,
            height: h,
            table,
        }
    }

    /// Sum over the window of `radius` centered at `(x, y)`, clipped to bounds.
    #[inline]
    pub(crate) fn box_sum(&self, x: usize, y: usize, radius: usize) -> f64 {
        let x0 = x.saturating_sub(radius);
        let y0 = y.saturating_sub(radius);
        let x1 = (x + radius).min(self.width - 1) + 1;
        let y1 = (y + radius).min(self.height - 1) + 1;
        let w = self.width + 1;
        self.table[y1 * w + x1] + self.table[y0 * w + x0]
            - self.table[y0 * w + x1]
            - self.table[y1 * w + x0]
    }

    /// Pixel count of the clipped window centered at `(x, y)`.
    #[inline]
    pub(crate) fn box_count(&self, x: usize, y: usize, radius: usize) -> usize {
        let x0 = x.saturating_sub(radius);
        let y0 = y.saturating_sub(radius);
        let x1 = (x + radius).min(self.width - 1);
        let y1 = (y + radius).min(self.height - 1);
        (x1 - x0 + 1) * (y1 - y0 + 1)
    }
}

/// Pixel adjacency used by connected-component labeling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(&self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[
                (1, 0),
                (-1, 0),
                (0, 1),
                (0, -1),
                (1, 1),
                (1, -1),
                (-1, 1),
                (-1, -1),
            ],
        }
    }
}

/// Labels foreground components; label 0 is background, components start at 1.
/// Returns the label image and the component count.
pub fn connected_components(mask: &BinaryMask, conn: Connectivity) -> (Vec<u32>, usize) {
    let w = mask.width;
    let h = mask.height;
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.data[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let x = (idx % w) as isize;
            let y = (idx / w) as isize;
            for &(dx, dy) in conn.offsets() {
                let nx = x + dx;
                let ny = y + dy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let nidx = ny as usize * w + nx as usize;
                if mask.data[nidx] && labels[nidx] == 0 {
                    labels[nidx] = next;
                    stack.push(nidx);
                }
            }
        }
    }
    (labels, next as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask_from_points(w: usize, h: usize, pts: &[(usize, usize)]) -> BinaryMask {
        let mut m = BinaryMask::empty(w, h);
        for &(x, y) in pts {
            m.set(x, y, true);
        }
        m
    }

    #[test]
    fn iou_identity_nonempty() {
        let a = mask_from_points(4, 4, &[(1, 1), (2, 2)]);
        assert_eq!(mask_iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn iou_disjoint() {
        let a = mask_from_points(4, 4, &[(0, 0)]);
        let b = mask_from_points(4, 4, &[(3, 3)]);
        assert_eq!(mask_iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_partial_overlap() {
        // a = {(0,0),(0,1)}, b = {(0,1),(1,1)} -> 1/3 by pixel enumeration.
        let a = mask_from_points(2, 2, &[(0, 0), (0, 1)]);
        let b = mask_from_points(2, 2, &[(0, 1), (1, 1)]);
        assert!((mask_iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn iou_empty_rules() {
        let e = BinaryMask::empty(3, 3);
        let a = mask_from_points(3, 3, &[(1, 1)]);
        assert_eq!(mask_iou(&e, &e).unwrap(), 1.0);
        assert_eq!(mask_iou(&e, &a).unwrap(), 0.0);
        assert_eq!(mask_iou(&a, &e).unwrap(), 0.0);
    }

    #[test]
    fn iou_dimension_mismatch() {
        let a = BinaryMask::empty(3, 3);
        let b = BinaryMask::empty(4, 3);
        assert!(mask_iou(&a, &b).is_err());
    }

    #[test]
    fn neighborhood_sum_zero_map() {
        let m = ScalarMap::zeros(10, 10);
        let n = PixelNeighborhood::new(2);
        assert_eq!(neighborhood_sum(&m, (4, 4), n).unwrap(), 0.0);
    }

    #[test]
    fn neighborhood_sum_interior_window() {
        let m = ScalarMap::filled(10, 10, 1.0);
        let n = PixelNeighborhood::new(1);
        assert_eq!(neighborhood_sum(&m, (5, 5), n).unwrap(), 9.0);
    }

    #[test]
    fn neighborhood_sum_clipped_corner() {
        // Corner window of radius 1 retains 2x2 = 4 pixels.
        let m = ScalarMap::filled(10, 10, 1.0);
        let n = PixelNeighborhood::new(1);
        assert_eq!(neighborhood_sum(&m, (0, 0), n).unwrap(), 4.0);
    }

    #[test]
    fn neighborhood_sum_out_of_bounds() {
        let m = ScalarMap::zeros(4, 4);
        assert!(neighborhood_sum(&m, (4, 0), PixelNeighborhood::new(1)).is_err());
    }

    #[test]
    fn integral_matches_direct_sum() {
        let m = ScalarMap::from_fn(13, 7, |x, y| (x * 31 + y * 7) as f64 * 0.01);
        let integral = IntegralMap::new(&m);
        for r in 0..4 {
            let n = PixelNeighborhood::new(r);
            for y in 0..7 {
                for x in 0..13 {
                    let direct = neighborhood_sum(&m, (x, y), n).unwrap();
                    assert!((integral.box_sum(x, y, r) - direct).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn components_count() {
        let m = mask_from_points(5, 5, &[(0, 0), (1, 1), (4, 4)]);
        let (_, n8) = connected_components(&m, Connectivity::Eight);
        let (_, n4) = connected_components(&m, Connectivity::Four);
        assert_eq!(n8, 2);
        assert_eq!(n4, 3);
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(bits_a in prop::collection::vec(any::<bool>(), 36),
                                     bits_b in prop::collection::vec(any::<bool>(), 36)) {
            let a = BinaryMask::new(6, 6, bits_a).unwrap();
            let b = BinaryMask::new(6, 6, bits_b).unwrap();
            let ab = mask_iou(&a, &b).unwrap();
            let ba = mask_iou(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn radius_zero_is_identity(values in prop::collection::vec(0.0f64..1.0, 25),
                                   x in 0usize..5, y in 0usize..5) {
            let m = ScalarMap::new(5, 5, values).unwrap();
            let s = neighborhood_sum(&m, (x, y), PixelNeighborhood::new(0)).unwrap();
            prop_assert_eq!(s, m.get(x, y));
        }

        #[test]
        fn clipped_sum_bounded_by_window(values in prop::collection::vec(0.0f64..1.0, 64),
                                         x in 0usize..8, y in 0usize..8, r in 0usize..4) {
            let m = ScalarMap::new(8, 8, values).unwrap();
            let n = PixelNeighborhood::new(r);
            let s = neighborhood_sum(&m, (x, y), n).unwrap();
            prop_assert!(s <= n.window_len() as f64 * m.max() + 1e-12);
        }
    }
}
