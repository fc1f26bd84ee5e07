//! Spectral clustering of layers on the affinity `(S + 1) / 2`.
//!
//! The embedding uses the eigenvectors of the `k` smallest eigenvalues of
//! the symmetric normalized Laplacian `I - D^-1/2 A D^-1/2`, with each row
//! scaled to unit length. Rows are grouped by a seeded, restart-based
//! k-means and the final labels are renumbered by first-occurrence depth.

use log::warn;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::similarity::{hex_string, SimilarityMatrix, MATRIX_TOLERANCE};

/// Degrees below this are treated as disconnected layers.
const DEGENERATE_DEGREE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n_layers: usize,
    entries: Vec<f64>,
    source_digest: String,
}

impl AffinityMatrix {
    pub fn new(n_layers: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n_layers * n_layers {
            return Err(Error::DimensionMismatch {
                what: "affinity entry count",
                expected: n_layers * n_layers,
                found: entries.len(),
            });
        }
        for i in 0..n_layers {
            for j in 0..n_layers {
                let v = entries[i * n_layers + j];
                if !v.is_finite() || v < -MATRIX_TOLERANCE {
                    return Err(Error::InvalidMatrix(format!(
                        "affinity ({}, {}) = {v} is not a finite non-negative value",
                        i + 1,
                        j + 1
                    )));
                }
                if (v - entries[j * n_layers + i]).abs() > MATRIX_TOLERANCE {
                    return Err(Error::InvalidMatrix(format!(
                        "affinity is not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let mut hasher = Sha256::new();
        for v in &entries {
            hasher.update(v.to_le_bytes());
        }
        Ok(Self {
            n_layers,
            entries,
            source_digest: hex_string(&hasher.finalize()),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows.len(), rows.concat())
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n_layers + j]
    }

    /// Digest of the similarity matrix this was derived from, or of the
    /// entries themselves when built directly.
    pub fn source_digest(&self) -> &str {
        &self.source_digest
    }
}

/// Entrywise `(S + 1) / 2`.
pub fn to_affinity(s: &SimilarityMatrix) -> AffinityMatrix {
    let entries = s.entries().iter().map(|&v| (v + 1.0) / 2.0).collect();
    AffinityMatrix {
        n_layers: s.n_layers(),
        entries,
        source_digest: s.digest(),
    }
}

/// Depth-ordered partition of layers `1..=N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPartition {
    pub k: usize,
    /// Cluster index (1-based) of each layer, in layer order.
    pub assignment: Vec<usize>,
    /// Member layers (1-based, ascending) of each cluster.
    pub clusters: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl ClusterPartition {
    /// Builds from 1-based cluster labels that already follow depth order.
    pub fn from_assignment(assignment: Vec<usize>) -> Result<Self> {
        let k = assignment.iter().copied().max().unwrap_or(0);
        let mut clusters = vec![Vec::new(); k];
        for (l, &c) in assignment.iter().enumerate() {
            if c == 0 {
                return Err(Error::InvalidPartition(format!(
                    "layer {} has cluster label 0; labels are 1-based",
                    l + 1
                )));
            }
            clusters[c - 1].push(l + 1);
        }
        let p = Self {
            k,
            assignment,
            clusters,
            warnings: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    /// Builds from member lists (1-based layers), renumbering by depth.
    pub fn from_clusters(n_layers: usize, clusters: &[Vec<usize>]) -> Result<Self> {
        let mut labels = vec![0usize; n_layers];
        for (c, members) in clusters.iter().enumerate() {
            for &l in members {
                if l == 0 || l > n_layers {
                    return Err(Error::InvalidPartition(format!(
                        "layer {l} outside 1..={n_layers}"
                    )));
                }
                if labels[l - 1] != 0 {
                    return Err(Error::InvalidPartition(format!(
                        "layer {l} appears in more than one cluster"
                    )));
                }
                labels[l - 1] = c + 1;
            }
        }
        if let Some(l) = labels.iter().position(|&c| c == 0) {
            return Err(Error::InvalidPartition(format!(
                "layer {} is not covered",
                l + 1
            )));
        }
        Ok(reindex_by_depth(&labels))
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters.len() != self.k {
            return Err(Error::InvalidPartition(format!(
                "k = {} but {} clusters listed",
                self.k,
                self.clusters.len()
            )));
        }
        let n = self.assignment.len();
        let mut seen = vec![false; n];
        let mut prev_min = 0;
        for (c, members) in self.clusters.iter().enumerate() {
            let Some(&first) = members.first() else {
                return Err(Error::InvalidPartition(format!(
                    "cluster {} is empty",
                    c + 1
                )));
            };
            if members.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidPartition(format!(
                    "cluster {} members are not strictly ascending",
                    c + 1
                )));
            }
            if first <= prev_min {
                return Err(Error::InvalidPartition(
                    "clusters are not ordered by first-occurrence depth".into(),
                ));
            }
            prev_min = first;
            for &l in members {
                if l == 0 || l > n || seen[l - 1] || self.assignment[l - 1] != c + 1 {
                    return Err(Error::InvalidPartition(format!(
                        "layer {l} is out of range, duplicated, or mislabeled"
                    )));
                }
                seen[l - 1] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidPartition(
                "layers are not fully covered".into(),
            ));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.assignment.len()
    }

    /// 1-based cluster of 1-based `layer`.
    pub fn cluster_of(&self, layer: usize) -> usize {
        self.assignment[layer - 1]
    }

    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for &c in &self.assignment {
            hasher.update((c as u64).to_le_bytes());
        }
        hex_string(&hasher.finalize())
    }
}

/// Renumbers arbitrary labels so the cluster holding the shallowest unseen
/// layer always receives the next index.
pub fn reindex_by_depth<T: PartialEq + Copy>(raw_labels: &[T]) -> ClusterPartition {
    let mut seen: Vec<T> = Vec::new();
    let assignment = raw_labels
        .iter()
        .map(|label| match seen.iter().position(|s| s == label) {
            Some(p) => p + 1,
            None => {
                seen.push(*label);
                seen.len()
            }
        })
        .collect();
    ClusterPartition::from_assignment(assignment).expect("first-occurrence labels are valid")
}

#[derive(Debug, Clone)]
pub struct SpectralOptions {
    pub restarts: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Iteration cap handed to the symmetric eigensolver.
    pub eigen_max_iterations: usize,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iterations: 300,
            tolerance: 1e-10,
            eigen_max_iterations: 10_000,
        }
    }
}

pub fn normalized_laplacian(a: &AffinityMatrix) -> DMatrix<f64> {
    let n = a.n_layers();
    let inv_sqrt: Vec<f64> = degrees(a)
        .into_iter()
        .map(|d| {
            if d < DEGENERATE_DEGREE {
                0.0
            } else {
                1.0 / d.sqrt()
            }
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt[i] * a.get(i, j) * inv_sqrt[j]
    })
}

fn degrees(a: &AffinityMatrix) -> Vec<f64> {
    (0..a.n_layers())
        .map(|i| (0..a.n_layers()).map(|j| a.get(i, j)).sum())
        .collect()
}

/// Laplacian eigenpairs sorted by ascending eigenvalue; eigenvectors are
/// the columns of the returned matrix.
pub fn laplacian_spectrum(
    a: &AffinityMatrix,
    max_iterations: usize,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let eig = normalized_laplacian(a)
        .try_symmetric_eigen(f64::EPSILON, max_iterations)
        .ok_or(Error::EigenNoConvergence(max_iterations))?;
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = eig.eigenvectors.select_columns(order.iter());
    Ok((values, vectors))
}

pub fn spectral_cluster(a: &AffinityMatrix, k: usize, seed: u64) -> Result<ClusterPartition> {
    spectral_cluster_with(a, k, seed, &SpectralOptions::default())
}

pub fn spectral_cluster_with(
    a: &AffinityMatrix,
    k: usize,
    seed: u64,
    options: &SpectralOptions,
) -> Result<ClusterPartition> {
    let n = a.n_layers();
    if k < 2 || k > n {
        return Err(Error::InvalidClusterCount { k, n_layers: n });
    }
    let (_, vectors) = laplacian_spectrum(a, options.eigen_max_iterations)?;
    let degenerate: Vec<bool> = degrees(a).iter().map(|&d| d < DEGENERATE_DEGREE).collect();
    let mut warnings = Vec::new();

    let mut points = Vec::new();
    let mut point_layer = Vec::new();
    for i in 0..n {
        if degenerate[i] {
            let msg = format!(
                "layer {} has near-zero affinity degree; assigned to its nearest layer by depth",
                i + 1
            );
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let mut row: Vec<f64> = (0..k).map(|c| vectors[(i, c)]).collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
        points.push(row);
        point_layer.push(i);
    }
    if points.is_empty() {
        return Err(Error::InvalidMatrix(
            "every layer has zero affinity degree".into(),
        ));
    }

    let kk = k.min(points.len());
    let point_labels = kmeans(&points, kk, seed, options);

    let mut labels = vec![usize::MAX; n];
    for (&layer, &label) in point_layer.iter().zip(&point_labels) {
        labels[layer] = label;
    }
    for i in 0..n {
        if degenerate[i] {
            let nearest = (1..n)
                .flat_map(|dist| [i.checked_sub(dist), Some(i + dist)])
                .flatten()
                .find(|&j| j < n && !degenerate[j])
                .expect("at least one connected layer");
            labels[i] = point_labels[point_layer.iter().position(|&l| l == nearest).unwrap()];
        }
    }
    let mut partition = reindex_by_depth(&labels);
    partition.warnings = warnings;
    Ok(partition)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_center(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Furthest-first seeding starting from `first`; ties go to the lowest
/// point index not already chosen.
fn furthest_first(points: &[Vec<f64>], k: usize, first: usize) -> Vec<Vec<f64>> {
    let mut chosen = vec![false; points.len()];
    chosen[first] = true;
    let mut centers = vec![points[first].clone()];
    let mut min_dist: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centers.len() < k {
        let mut pick = None;
        for (i, &d) in min_dist.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            match pick {
                Some((_, best)) if d <= best => {}
                _ => pick = Some((i, d)),
            }
        }
        let (next, _) = pick.expect("k <= number of points");
        chosen[next] = true;
        for (i, p) in points.iter().enumerate() {
            min_dist[i] = min_dist[i].min(sq_dist(p, &points[next]));
        }
        centers.push(points[next].clone());
    }
    centers
}

fn assign(points: &[Vec<f64>], centers: &mut [Vec<f64>], labels: &mut [usize]) -> f64 {
    let k = centers.len();
    let mut dists = vec![0.0; points.len()];
    for (i, p) in points.iter().enumerate() {
        let (c, d) = nearest_center(p, centers);
        labels[i] = c;
        dists[i] = d;
    }
    // Refill empty clusters with the point furthest from its center,
    // drawn only from clusters that can spare a member.
    for c in 0..k {
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        if sizes[c] > 0 {
            continue;
        }
        let mut donor = None;
        for (i, &d) in dists.iter().enumerate() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            match donor {
                Some((_, best)) if d <= best => {}
                _ => donor = Some((i, d)),
            }
        }
        let (i, _) = donor.expect("k <= number of points");
        labels[i] = c;
        dists[i] = 0.0;
        centers[c] = points[i].clone();
    }
    dists.iter().sum()
}

fn lloyd(
    points: &[Vec<f64>],
    mut centers: Vec<Vec<f64>>,
    options: &SpectralOptions,
) -> (Vec<usize>, f64) {
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = vec![0; points.len()];
    for _ in 0..options.max_iterations {
        assign(points, &mut centers, &mut labels);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            sums[l].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            let mean: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&mean, &centers[c]).sqrt());
            centers[c] = mean;
        }
        if shift < options.tolerance {
            break;
        }
    }
    let inertia = assign(points, &mut centers, &mut labels);
    (labels, inertia)
}

/// Restart 0 seeds from the shallowest point; later restarts seed from a
/// point drawn with a per-restart stream of `seed`. Lowest inertia wins,
/// ties going to the earlier restart.
fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, options: &SpectralOptions) -> Vec<usize> {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for restart in 0..options.restarts.max(1) {
        let first = if restart == 0 {
            0
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(restart as u64);
            rng.random_range(0..points.len())
        };
        let (labels, inertia) = lloyd(points, furthest_first(points, k, first), options);
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((labels, inertia));
        }
    }
    best.expect("at least one restart").0
}
