//! Scene-level descriptors: oriented band-pass energies pooled on a spatial
//! grid, the signature used to find neighbor images.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::raster::Raster;

const GIST_SIZE: usize = 128;
const SCALES: usize = 4;
const ORIENTATIONS: usize = 8;
const POOL_GRID: usize = 4;

/// Fixed-length scene signature (4 scales x 8 orientations x 4x4 grid).
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SceneDescriptor {
    vector: Vec<f64>,
}

impl SceneDescriptor {
    pub fn from_vector(vector: Vec<f64>) -> Self {
        SceneDescriptor { vector }
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn len(&self) -> usize {
        self.vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_empty()
    }

    /// Euclidean distance between two descriptors.
    pub fn distance(&self, other: &SceneDescriptor) -> f64 {
        debug_assert_eq!(self.vector.len(), other.vector.len());
        self.vector
            .iter()
            .zip(&other.vector)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn fft2d(data: &mut [Complex<f64>], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    // Rows.
    for row in data.chunks_exact_mut(n) {
        fft.process(row);
    }
    // Columns via transpose, process, transpose back.
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = data[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            data[y * n + x] = col[y];
        }
    }
}

/// Frequency coordinate of bin `i` in cycles per pixel.
#[inline]
fn freq(i: usize, n: usize) -> f64 {
    let half = n / 2;
    if i <= half {
        i as f64 / n as f64
    } else {
        (i as f64 - n as f64) / n as f64
    }
}

/// Computes the scene descriptor of an image.
///
/// The image is resized to a 128x128 grayscale patch, mean-removed, and
/// filtered by an analytic Gabor bank in the frequency domain. Filter
/// energies are averaged over a 4x4 grid. A constant image has no gradients
/// anywhere in the band and maps to the all-zero descriptor.
pub fn scene_descriptor(img: &Raster) -> SceneDescriptor {
    let n = GIST_SIZE;
    let resized = img
        .resize(n, n)
        .expect("fixed descriptor resolution is valid");
    let gray = resized.to_gray();
    let mean = gray.values().iter().sum::<f64>() / (n * n) as f64;
    let mut spectrum: Vec<Complex<f64>> = gray
        .values()
        .iter()
        .map(|&v| Complex::new(v - mean, 0.0))
        .collect();
    fft2d(&mut spectrum, n, false);

    let mut vector = Vec::with_capacity(SCALES * ORIENTATIONS * POOL_GRID * POOL_GRID);
    let mut response = vec![Complex::new(0.0, 0.0); n * n];
    for s in 0..SCALES {
        let f0 = 0.25 / 2f64.powi(s as i32);
        let sigma_r = 0.4 * f0;
        let sigma_t = 0.6 * f0;
        for o in 0..ORIENTATIONS {
            let theta = o as f64 * std::f64::consts::PI / ORIENTATIONS as f64;
            let (cos_t, sin_t) = (theta.cos(), theta.sin());
            for y in 0..n {
                let v = freq(y, n);
                for x in 0..n {
                    let u = freq(x, n);
                    let ur = u * cos_t + v * sin_t;
                    let vr = -u * sin_t + v * cos_t;
                    let g = (-((ur - f0).powi(2) / (2.0 * sigma_r * sigma_r)
                        + vr * vr / (2.0 * sigma_t * sigma_t)))
                        .exp();
                    response[y * n + x] = spectrum[y * n + x] * g;
                }
            }
            response[0] = Complex::new(0.0, 0.0);
            fft2d(&mut response, n, true);
            // Pool the energy envelope over the spatial grid.
            let block = n / POOL_GRID;
            let scale = 1.0 / (n * n) as f64; // unnormalized inverse FFT
            for gy in 0..POOL_GRID {
                for gx in 0..POOL_GRID {
                    let mut acc = 0.0;
                    for y in gy * block..(gy + 1) * block {
                        for x in gx * block..(gx + 1) * block {
                            acc += (response[y * n + x] * scale).norm();
                        }
                    }
                    vector.push(acc / (block * block) as f64);
                }
            }
        }
    }
    // L2 normalization keeps distances comparable across exposure levels;
    // the zero vector stays zero.
    let norm = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 1e-12 {
        for v in vector.iter_mut() {
            *v /= norm;
        }
    }
    SceneDescriptor { vector }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_zero_distance() {
        let img = Raster::from_fn(40, 30, |x, y| {
            [(x as f64 / 40.0), (y as f64 / 30.0), 0.5]
        })
        .unwrap();
        let a = scene_descriptor(&img);
        let b = scene_descriptor(&img.clone());
        assert_eq!(a.distance(&b), 0.0);
    }

    #[test]
    fn constant_image_is_zero_descriptor() {
        let img = Raster::constant(32, 32, [0.6, 0.6, 0.6]).unwrap();
        let d = scene_descriptor(&img);
        assert!(d.vector().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rotation_changes_orientation_energies() {
        // Horizontal stripes vs their 90-degree rotation.
        let horizontal = Raster::from_fn(64, 64, |_, y| {
            if (y / 8) % 2 == 0 {
                [0.2, 0.2, 0.2]
            } else {
                [0.8, 0.8, 0.8]
            }
        })
        .unwrap();
        let vertical = Raster::from_fn(64, 64, |x, _| {
            if (x / 8) % 2 == 0 {
                [0.2, 0.2, 0.2]
            } else {
                [0.8, 0.8, 0.8]
            }
        })
        .unwrap();
        let dh = scene_descriptor(&horizontal);
        let dv = scene_descriptor(&vertical);
        assert!(dh.distance(&dv) > 0.1, "distance {}", dh.distance(&dv));
    }

    #[test]
    fn descriptor_has_expected_dimension() {
        let img = Raster::constant(20, 20, [0.1, 0.5, 0.9]).unwrap();
        assert_eq!(scene_descriptor(&img).len(), 512);
    }
}
