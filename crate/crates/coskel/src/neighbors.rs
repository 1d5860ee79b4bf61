//! Neighbor-set construction for the three processing scenarios, plus
//! cluster key-image selection.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gist::SceneDescriptor;

/// How neighbor images are collected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Category labels available: clustering within each category.
    WeaklySupervised,
    /// Annotated training images available: nearest training images.
    Supervised,
    /// Nothing available: clustering over the whole collection.
    Unsupervised,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Mode::WeaklySupervised => "weakly_supervised",
            Mode::Supervised => "supervised",
            Mode::Unsupervised => "unsupervised",
        };
        f.write_str(name)
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weakly_supervised" | "weakly-supervised" => Ok(Mode::WeaklySupervised),
            "supervised" => Ok(Mode::Supervised),
            "unsupervised" => Ok(Mode::Unsupervised),
            other => Err(Error::InvalidInput(format!("unknown mode '{other}'"))),
        }
    }
}

/// One cluster with its representative image.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Cluster {
    pub members: Vec<usize>,
    pub key: usize,
}

/// Per-image neighbor lists, with the cluster partition when one exists.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NeighborStructure {
    pub mode: Mode,
    pub neighbors: Vec<Vec<usize>>,
    pub clusters: Option<Vec<Cluster>>,
}

/// k-means result over a descriptor set.
#[derive(Clone, Debug)]
pub struct KMeansPartition {
    pub assignments: Vec<usize>,
    pub k: usize,
    /// Within-cluster sum of squares after every Lloyd iteration.
    pub wcss_history: Vec<f64>,
}

impl KMeansPartition {
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &a) in self.assignments.iter().enumerate() {
            out[a].push(i);
        }
        out
    }
}

fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Lloyd's k-means from seeded k-means++ initialization.
pub fn kmeans_cluster(
    descriptors: &[SceneDescriptor],
    k: usize,
    seed: u64,
) -> Result<KMeansPartition> {
    let n = descriptors.len();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!(
            "k must lie in 1..={n}, got {k}"
        )));
    }
    let dim = descriptors[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(descriptors[rng.random_range(0..n)].vector().to_vec());
    let mut d2: Vec<f64> = descriptors
        .iter()
        .map(|d| sq_distance(d.vector(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total <= 0.0 {
            // Duplicates exhausted the spread; take the first unused point.
            (0..n)
                .find(|&i| {
                    !centroids
                        .iter()
                        .any(|c| sq_distance(descriptors[i].vector(), c) == 0.0)
                })
                .unwrap_or(centroids.len() % n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        };
        centroids.push(descriptors[idx].vector().to_vec());
        for i in 0..n {
            d2[i] = d2[i].min(sq_distance(descriptors[i].vector(), centroids.last().unwrap()));
        }
    }

    let mut assignments = vec![0usize; n];
    let mut wcss_history = Vec::new();
    for _ in 0..200 {
        // Assignment step; ties break towards the lower centroid index.
        let mut changed = false;
        let mut wcss = 0.0;
        for (i, d) in descriptors.iter().enumerate() {
            let mut best = (f64::INFINITY, 0usize);
            for (c, centroid) in centroids.iter().enumerate() {
                let dist = sq_distance(d.vector(), centroid);
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            wcss += best.0;
            if assignments[i] != best.1 {
                assignments[i] = best.1;
                changed = true;
            }
        }
        wcss_history.push(wcss);

        // Update step; empty clusters steal the point farthest from its
        // centroid (lowest index on ties).
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; dim]; k];
        for (i, d) in descriptors.iter().enumerate() {
            counts[assignments[i]] += 1;
            for (s, v) in sums[assignments[i]].iter_mut().zip(d.vector()) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let farthest = (0..n)
                    .filter(|&i| counts[assignments[i]] > 1)
                    .max_by(|&a, &b| {
                        let da = sq_distance(descriptors[a].vector(), &centroids[assignments[a]]);
                        let db = sq_distance(descriptors[b].vector(), &centroids[assignments[b]]);
                        da.partial_cmp(&db)
                            .unwrap()
                            .then(b.cmp(&a)) // prefer the lower index
                    });
                if let Some(i) = farthest {
                    counts[assignments[i]] -= 1;
                    for (s, v) in sums[assignments[i]].iter_mut().zip(descriptors[i].vector()) {
                        *s -= v;
                    }
                    assignments[i] = c;
                    counts[c] = 1;
                    sums[c] = descriptors[i].vector().to_vec();
                }
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for v in sums[c].iter_mut() {
                    *v /= counts[c] as f64;
                }
                centroids[c] = sums[c].clone();
            }
        }
        if !changed && wcss_history.len() > 1 {
            break;
        }
    }
    Ok(KMeansPartition {
        assignments,
        k,
        wcss_history,
    })
}

/// The cluster member nearest to the cluster centroid; ties break to the
/// lowest image index.
pub fn key_image(members: &[usize], descriptors: &[SceneDescriptor]) -> Result<usize> {
    if members.is_empty() {
        return Err(Error::InvalidInput("key image of an empty cluster".into()));
    }
    let dim = descriptors[members[0]].len();
    let mut centroid = vec![0.0; dim];
    for &m in members {
        for (c, v) in centroid.iter_mut().zip(descriptors[m].vector()) {
            *c += v;
        }
    }
    for c in centroid.iter_mut() {
        *c /= members.len() as f64;
    }
    let mut sorted = members.to_vec();
    sorted.sort_unstable();
    let mut best = (f64::INFINITY, sorted[0]);
    for &m in &sorted {
        let d = sq_distance(descriptors[m].vector(), &centroid);
        if d < best.0 {
            best = (d, m);
        }
    }
    Ok(best.1)
}

fn clusters_to_structure(
    mode: Mode,
    n: usize,
    groups: Vec<Vec<usize>>,
    descriptors: &[SceneDescriptor],
) -> Result<NeighborStructure> {
    let mut neighbors = vec![Vec::new(); n];
    let mut clusters = Vec::new();
    for members in groups {
        if members.is_empty() {
            continue;
        }
        for &i in &members {
            neighbors[i] = members.iter().copied().filter(|&j| j != i).collect();
        }
        let key = key_image(&members, descriptors)?;
        clusters.push(Cluster { members, key });
    }
    Ok(NeighborStructure {
        mode,
        neighbors,
        clusters: Some(clusters),
    })
}

fn default_cluster_count(group_size: usize) -> usize {
    group_size.div_ceil(10).max(1)
}

/// Builds the neighbor structure for a scenario.
///
/// Weakly supervised clusters within each category (labels required);
/// supervised takes the `k_nn` nearest training images for every image
/// (training flags required); unsupervised clusters the whole collection.
pub fn build_neighbors(
    mode: Mode,
    descriptors: &[SceneDescriptor],
    labels: Option<&[String]>,
    train: Option<&[bool]>,
    k_clusters: Option<usize>,
    k_nn: Option<usize>,
    seed: u64,
) -> Result<NeighborStructure> {
    let n = descriptors.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty collection".into()));
    }
    match mode {
        Mode::WeaklySupervised => {
            let labels = labels.ok_or_else(|| {
                Error::MissingInput("weakly supervised mode requires category labels".into())
            })?;
            if labels.len() != n {
                return Err(Error::InvalidInput("one label per image required".into()));
            }
            let mut by_category: Vec<(String, Vec<usize>)> = Vec::new();
            for (i, label) in labels.iter().enumerate() {
                match by_category.iter_mut().find(|(l, _)| l == label) {
                    Some((_, v)) => v.push(i),
                    None => by_category.push((label.clone(), vec![i])),
                }
            }
            let mut groups = Vec::new();
            for (ci, (_, members)) in by_category.into_iter().enumerate() {
                let k = k_clusters
                    .unwrap_or_else(|| default_cluster_count(members.len()))
                    .clamp(1, members.len());
                let subset: Vec<SceneDescriptor> =
                    members.iter().map(|&i| descriptors[i].clone()).collect();
                let partition = kmeans_cluster(&subset, k, seed ^ (ci as u64 + 1))?;
                for local in partition.clusters() {
                    groups.push(local.into_iter().map(|l| members[l]).collect());
                }
            }
            clusters_to_structure(mode, n, groups, descriptors)
        }
        Mode::Supervised => {
            let train = train.ok_or_else(|| {
                Error::MissingInput("supervised mode requires a training split".into())
            })?;
            if train.len() != n {
                return Err(Error::InvalidInput("one train flag per image required".into()));
            }
            let train_ids: Vec<usize> = (0..n).filter(|&i| train[i]).collect();
            if train_ids.is_empty() {
                return Err(Error::MissingInput(
                    "supervised mode requires at least one training image".into(),
                ));
            }
            let k = k_nn.unwrap_or(5).clamp(1, train_ids.len());
            let mut neighbors = Vec::with_capacity(n);
            for i in 0..n {
                let mut ranked: Vec<(f64, usize)> = train_ids
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| (sq_distance(descriptors[i].vector(), descriptors[j].vector()), j))
                    .collect();
                ranked.sort_by(|a, b| a.partial_cmp(b).unwrap());
                neighbors.push(ranked.into_iter().take(k).map(|(_, j)| j).collect());
            }
            Ok(NeighborStructure {
                mode,
                neighbors,
                clusters: None,
            })
        }
        Mode::Unsupervised => {
            let k = k_clusters
                .unwrap_or_else(|| default_cluster_count(n))
                .clamp(1, n);
            let partition = kmeans_cluster(descriptors, k, seed)?;
            clusters_to_structure(mode, n, partition.clusters(), descriptors)
        }
    }
}
