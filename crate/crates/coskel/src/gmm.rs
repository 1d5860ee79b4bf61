//! Full-covariance Gaussian mixtures over RGB triples.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Regularizer added to every covariance diagonal.
pub const COV_REGULARIZATION: f64 = 1e-5;

#[derive(Clone, Debug)]
struct Component {
    weight: f64,
    mean: [f64; 3],
    /// Inverse of the regularized covariance.
    inv: [[f64; 3]; 3],
    norm: f64,
}

fn mat_inverse(m: &[[f64; 3]; 3]) -> ([[f64; 3]; 3], f64) {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv_det = 1.0 / det;
    let mut inv = [[0.0; 3]; 3];
    inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
    inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
    inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
    inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
    inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
    inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
    inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
    inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
    inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
    (inv, det)
}

impl Component {
    fn from_moments(weight: f64, mean: [f64; 3], mut cov: [[f64; 3]; 3]) -> Self {
        for d in 0..3 {
            cov[d][d] += COV_REGULARIZATION;
        }
        let (inv, det) = mat_inverse(&cov);
        let norm = 1.0 / ((2.0 * std::f64::consts::PI).powi(3) * det).sqrt();
        Component {
            weight,
            mean,
            inv,
            norm,
        }
    }

    fn density(&self, x: &[f64; 3]) -> f64 {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1], x[2] - self.mean[2]];
        let mut q = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                q += d[i] * self.inv[i][j] * d[j];
            }
        }
        self.norm * (-0.5 * q).exp()
    }
}

/// Mixture of full-covariance Gaussians in color space.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    components: Vec<Component>,
}

impl GaussianMixture {
    /// Fits a mixture by seeded k-means initialization followed by EM.
    /// Requests for more components than samples degrade gracefully.
    pub fn fit(samples: &[[f64; 3]], components: usize, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::DegenerateInput(
                "cannot fit a mixture on zero samples".into(),
            ));
        }
        if components == 0 {
            return Err(Error::InvalidInput("components must be >= 1".into()));
        }
        let k = components.min(samples.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        // k-means++ seeding.
        let mut centers: Vec<[f64; 3]> = Vec::with_capacity(k);
        centers.push(samples[rng.random_range(0..samples.len())]);
        let mut d2: Vec<f64> = samples
            .iter()
            .map(|s| sq_dist(s, &centers[0]))
            .collect();
        while centers.len() < k {
            let total: f64 = d2.iter().sum();
            let chosen = if total <= 0.0 {
                // Remaining points coincide with existing centers.
                (0..samples.len())
                    .find(|&i| !centers.contains(&samples[i]))
                    .unwrap_or(rng.random_range(0..samples.len()))
            } else {
                let mut target = rng.random::<f64>() * total;
                let mut idx = samples.len() - 1;
                for (i, &d) in d2.iter().enumerate() {
                    if target < d {
                        idx = i;
                        break;
                    }
                    target -= d;
                }
                idx
            };
            centers.push(samples[chosen]);
            for (i, s) in samples.iter().enumerate() {
                d2[i] = d2[i].min(sq_dist(s, &centers.last().unwrap()));
            }
        }

        // Lloyd iterations for a stable starting partition.
        let mut assign = vec![0usize; samples.len()];
        for _ in 0..20 {
            let mut changed = false;
            for (i, s) in samples.iter().enumerate() {
                let mut best = (f64::INFINITY, 0usize);
                for (c, center) in centers.iter().enumerate() {
                    let d = sq_dist(s, center);
                    if d < best.0 {
                        best = (d, c);
                    }
                }
                if assign[i] != best.1 {
                    assign[i] = best.1;
                    changed = true;
                }
            }
            let mut sums = vec![[0.0; 3]; k];
            let mut counts = vec![0usize; k];
            for (i, s) in samples.iter().enumerate() {
                counts[assign[i]] += 1;
                for c in 0..3 {
                    sums[assign[i]][c] += s[c];
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    for d in 0..3 {
                        centers[c][d] = sums[c][d] / counts[c] as f64;
                    }
                }
            }
            if !changed {
                break;
            }
        }

        // Moment estimates per cluster, skipping empty clusters.
        let mut comps = Vec::new();
        for c in 0..k {
            let members: Vec<&[f64; 3]> =
                samples.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(s, _)| s).collect();
            if members.is_empty() {
                continue;
            }
            let n = members.len() as f64;
            let mut mean = [0.0; 3];
            for s in &members {
                for d in 0..3 {
                    mean[d] += s[d];
                }
            }
            for d in 0..3 {
                mean[d] /= n;
            }
            let mut cov = [[0.0; 3]; 3];
            for s in &members {
                for i in 0..3 {
                    for j in 0..3 {
                        cov[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]);
                    }
                }
            }
            for i in 0..3 {
                for j in 0..3 {
                    cov[i][j] /= n;
                }
            }
            comps.push(Component::from_moments(n / samples.len() as f64, mean, cov));
        }
        let mut mixture = GaussianMixture { components: comps };
        mixture.em(samples, 60);
        Ok(mixture)
    }

    /// Warm-start EM refinement on a new sample set. Monotone in data
    /// likelihood from whatever state the mixture is currently in.
    pub fn refit(&mut self, samples: &[[f64; 3]], iterations: usize) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::DegenerateInput(
                "cannot refit a mixture on zero samples".into(),
            ));
        }
        self.em(samples, iterations);
        Ok(())
    }

    fn em(&mut self, samples: &[[f64; 3]], max_iterations: usize) {
        let k = self.components.len();
        let n = samples.len();
        let mut resp = vec![0.0f64; k];
        let mut prev_ll = f64::NEG_INFINITY;
        for _ in 0..max_iterations {
            let mut weights = vec![0.0f64; k];
            let mut means = vec![[0.0f64; 3]; k];
            let mut scatters = vec![[[0.0f64; 3]; 3]; k];
            let mut ll = 0.0;
            for s in samples {
                let mut total = 0.0;
                for (c, comp) in self.components.iter().enumerate() {
                    resp[c] = comp.weight * comp.density(s);
                    total += resp[c];
                }
                if total <= 0.0 {
                    // Numerically dead point: spread responsibility evenly.
                    for r in resp.iter_mut() {
                        *r = 1.0 / k as f64;
                    }
                    total = f64::MIN_POSITIVE;
                } else {
                    for r in resp.iter_mut() {
                        *r /= total;
                    }
                }
                ll += total.max(f64::MIN_POSITIVE).ln();
                for c in 0..k {
                    weights[c] += resp[c];
                    for d in 0..3 {
                        means[c][d] += resp[c] * s[d];
                    }
                }
            }
            for c in 0..k {
                if weights[c] > 0.0 {
                    for d in 0..3 {
                        means[c][d] /= weights[c];
                    }
                }
            }
            // Second pass for covariances around the new means.
            for s in samples {
                let mut total = 0.0;
                for (c, comp) in self.components.iter().enumerate() {
                    resp[c] = comp.weight * comp.density(s);
                    total += resp[c];
                }
                if total <= 0.0 {
                    for r in resp.iter_mut() {
                        *r = 1.0 / k as f64;
                    }
                } else {
                    for r in resp.iter_mut() {
                        *r /= total;
                    }
                }
                for c in 0..k {
                    for i in 0..3 {
                        for j in 0..3 {
                            scatters[c][i][j] +=
                                resp[c] * (s[i] - means[c][i]) * (s[j] - means[c][j]);
                        }
                    }
                }
            }
            for c in 0..k {
                if weights[c] <= 1e-12 {
                    continue;
                }
                let mut cov = scatters[c];
                for i in 0..3 {
                    for j in 0..3 {
                        cov[i][j] /= weights[c];
                    }
                }
                self.components[c] = Component::from_moments(weights[c] / n as f64, means[c], cov);
            }
            if (ll - prev_ll).abs() < 1e-7 * n as f64 {
                break;
            }
            prev_ll = ll;
        }
    }

    /// Mixture probability density at a color.
    pub fn density(&self, color: &[f64; 3]) -> f64 {
        self.components.iter().map(|c| c.weight * c.density(color)).sum()
    }

    /// Mean negative log-density of a sample set (diagnostic).
    pub fn mean_nll(&self, samples: &[[f64; 3]]) -> f64 {
        let s: f64 = samples
            .iter()
            .map(|x| -self.density(x).max(f64::MIN_POSITIVE).ln())
            .sum();
        s / samples.len().max(1) as f64
    }

    pub fn component_count(&self) -> usize {
        self.components.len()
    }
}

fn sq_dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}
