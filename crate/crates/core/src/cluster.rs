//! Fixed-threshold spectral clustering of wavelet log-eigenvalues.
//!
//! Points closer than `eps` are joined in a graph; the unnormalized Laplacian
//! `L = D - A` is diagonalized; the largest gap in its ascending spectrum
//! gives the number of clusters `r`; the first `r` eigenvectors embed the
//! points, and k-means on the embedding yields the clustering scheme.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::seed;
use crate::wrm::LogEigenSet;

/// Graph induced by a distance threshold: `A_ij = 1` iff `|x_i - x_j| < eps`, `i != j`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonGraph {
    adjacency: DMatrix<f64>,
    epsilon: f64,
}

impl EpsilonGraph {
    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Builds a graph from an explicit 0/1 adjacency (used for oracle tests).
    pub fn from_adjacency(adjacency: DMatrix<f64>) -> Result<Self> {
        let p = adjacency.nrows();
        if adjacency.ncols() != p {
            return Err(Error::Domain("adjacency must be square".into()));
        }
        for i in 0..p {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::Domain("adjacency has a self loop".into()));
            }
            for j in 0..p {
                let a = adjacency[(i, j)];
                if (a != 0.0 && a != 1.0) || a != adjacency[(j, i)] {
                    return Err(Error::Domain("adjacency must be symmetric 0/1".into()));
                }
            }
        }
        Ok(Self { adjacency, epsilon: f64::NAN })
    }

    /// `D - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let p = self.len();
        let mut l = -self.adjacency.clone();
        for i in 0..p {
            l[(i, i)] = self.adjacency.row(i).sum();
        }
        l
    }
}

pub fn epsilon_graph(points: &[f64], eps: f64) -> Result<EpsilonGraph> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Domain(format!("threshold eps = {eps} must be positive and finite")));
    }
    if points.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("points must be finite".into()));
    }
    let p = points.len();
    let adjacency = DMatrix::from_fn(p, p, |i, j| {
        if i != j && (points[i] - points[j]).abs() < eps {
            1.0
        } else {
            0.0
        }
    });
    Ok(EpsilonGraph { adjacency, epsilon: eps })
}

/// Ascending Laplacian eigenvalues with aligned orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct LaplacianSpectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

pub fn laplacian_spectrum(graph: &EpsilonGraph) -> Result<LaplacianSpectrum> {
    if graph.is_empty() {
        return Err(Error::Domain("graph has no vertices".into()));
    }
    let eig = linalg::symmetric_eigen(&graph.laplacian());
    if eig.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("Laplacian eigensolver produced non-finite values".into()));
    }
    Ok(LaplacianSpectrum { eigenvalues: eig.values, eigenvectors: eig.vectors })
}

/// Gaps within this absolute tolerance count as ties.
const GAP_TIE_TOLERANCE: f64 = 1e-9;

/// `argmax_l (theta_{l+1} - theta_l)` over `l = 1..p-1`, smallest `l` on ties.
pub fn eigengap_count(eigenvalues: &[f64]) -> Result<usize> {
    if eigenvalues.len() < 2 {
        return Err(Error::Domain("eigengap needs at least two eigenvalues".into()));
    }
    let mut best = (1usize, eigenvalues[1] - eigenvalues[0]);
    for l in 2..eigenvalues.len() {
        let gap = eigenvalues[l] - eigenvalues[l - 1];
        if gap > best.1 + GAP_TIE_TOLERANCE {
            best = (l, gap);
        }
    }
    Ok(best.0)
}

/// Rows of the `p x r` matrix formed by the first `r` eigenvectors.
pub fn spectral_embed(spectrum: &LaplacianSpectrum, r_hat: usize) -> Result<Vec<Vec<f64>>> {
    let p = spectrum.eigenvalues.len();
    if r_hat == 0 || r_hat > p {
        return Err(Error::Domain(format!("embedding dimension {r_hat} outside 1..={p}")));
    }
    Ok((0..p)
        .map(|i| (0..r_hat).map(|c| spectrum.eigenvectors[(i, c)]).collect())
        .collect())
}

/// Iteration cap for Lloyd's algorithm.
pub const KMEANS_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster index of each point, in `0..kappa`.
    pub labels: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn distinct_indices(points: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    let cmp = |a: &usize, b: &usize| {
        points[*a]
            .iter()
            .zip(&points[*b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    order.sort_by(cmp);
    order.dedup_by(|a, b| cmp(a, b).is_eq());
    order.sort_unstable();
    order
}

/// Lloyd's algorithm from a seeded farthest-point initialization.
///
/// The first center is a uniformly drawn distinct point; each further center
/// is the distinct point farthest from the centers chosen so far. Iteration
/// stops when no center moves or after [`KMEANS_MAX_ITERS`] rounds.
pub fn kmeans(points: &[Vec<f64>], kappa: usize, seed: u64) -> Result<KMeansResult> {
    if kappa == 0 {
        return Err(Error::Domain("k-means needs at least one cluster".into()));
    }
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Domain("k-means points have unequal dimensions".into()));
    }
    let distinct = distinct_indices(points);
    if kappa > distinct.len() {
        return Err(Error::Domain(format!(
            "k-means asked for {kappa} clusters but only {} distinct points exist",
            distinct.len()
        )));
    }

    let mut rng = seed::rng(seed, &[]);
    let first = distinct[rng.random_range(0..distinct.len())];
    let mut centers = vec![points[first].clone()];
    let mut nearest: Vec<f64> = distinct.iter().map(|&i| sq_dist(&points[i], &centers[0])).collect();
    while centers.len() < kappa {
        let mut pick = 0;
        for (slot, d) in nearest.iter().enumerate() {
            if *d > nearest[pick] {
                pick = slot;
            }
        }
        let c = points[distinct[pick]].clone();
        for (slot, &i) in distinct.iter().enumerate() {
            nearest[slot] = nearest[slot].min(sq_dist(&points[i], &c));
        }
        centers.push(c);
    }

    let mut labels = vec![0usize; points.len()];
    let mut iterations = 0;
    loop {
        iterations += 1;
        for (i, x) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = sq_dist(x, &centers[0]);
            for (c, center) in centers.iter().enumerate().skip(1) {
                let d = sq_dist(x, center);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            labels[i] = best;
        }
        repair_empty(points, &centers, &mut labels, kappa);

        let mut moved = false;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> =
                points.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(x, _)| x).collect();
            let mean: Vec<f64> = (0..dim)
                .map(|d| members.iter().map(|x| x[d]).sum::<f64>() / members.len() as f64)
                .collect();
            if mean != *center {
                moved = true;
                *center = mean;
            }
        }
        if !moved || iterations >= KMEANS_MAX_ITERS {
            break;
        }
    }
    Ok(KMeansResult { labels, centers, iterations })
}

/// Moves the point farthest from its own center into each empty cluster.
fn repair_empty(points: &[Vec<f64>], centers: &[Vec<f64>], labels: &mut [usize], kappa: usize) {
    loop {
        let mut sizes = vec![0usize; kappa];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let mut pick = None;
        let mut pick_d = -1.0;
        for (i, x) in points.iter().enumerate() {
            if sizes[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(x, &centers[labels[i]]);
            if d > pick_d {
                pick = Some(i);
                pick_d = d;
            }
        }
        match pick {
            Some(i) => labels[i] = empty,
            None => return,
        }
    }
}

/// A partition of the log-eigenvalues with the induced mode estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterScheme {
    /// Cluster of each log-eigenvalue (index into the sorted `LogEigenSet`);
    /// clusters are numbered by increasing mean.
    pub assignments: Vec<usize>,
    pub r_hat: usize,
    pub mode_estimates: Vec<f64>,
    pub prob_estimates: Vec<f64>,
    pub icsd: f64,
    pub epsilon_used: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Intra-cluster standard deviation: sum over clusters of the RMS deviation
/// from the cluster mean.
pub fn icsd(values: &[f64], assignments: &[usize], r: usize) -> f64 {
    (0..r)
        .map(|c| {
            let members: Vec<f64> = values
                .iter()
                .zip(assignments)
                .filter(|(_, a)| **a == c)
                .map(|(v, _)| *v)
                .collect();
            if members.is_empty() {
                return 0.0;
            }
            let m = mean(&members);
            (members.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / members.len() as f64).sqrt()
        })
        .sum()
}

impl ClusterScheme {
    /// Canonicalizes arbitrary labels: empty labels are dropped and clusters
    /// renumbered by increasing mean (ties by first member).
    pub fn from_labels(values: &[f64], labels: &[usize], epsilon_used: f64) -> Result<Self> {
        if values.is_empty() || values.len() != labels.len() {
            return Err(Error::Domain("labels must cover every value".into()));
        }
        let max_label = *labels.iter().max().unwrap();
        let mut groups: Vec<(f64, usize, usize)> = (0..=max_label)
            .filter_map(|c| {
                let members: Vec<f64> = values
                    .iter()
                    .zip(labels)
                    .filter(|(_, l)| **l == c)
                    .map(|(v, _)| *v)
                    .collect();
                let first = labels.iter().position(|l| *l == c)?;
                Some((mean(&members), first, c))
            })
            .collect();
        groups.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut relabel = vec![usize::MAX; max_label + 1];
        for (new, g) in groups.iter().enumerate() {
            relabel[g.2] = new;
        }
        let assignments: Vec<usize> = labels.iter().map(|l| relabel[*l]).collect();
        let r_hat = groups.len();
        let p = values.len();
        let mut sizes = vec![0usize; r_hat];
        for &a in &assignments {
            sizes[a] += 1;
        }
        let mut prob_estimates: Vec<f64> = sizes.iter().map(|s| *s as f64 / p as f64).collect();
        // keep the probabilities summing to one exactly
        let head: f64 = prob_estimates[..r_hat - 1].iter().sum();
        prob_estimates[r_hat - 1] = 1.0 - head;
        Ok(Self {
            icsd: icsd(values, &assignments, r_hat),
            mode_estimates: groups.iter().map(|g| g.0).collect(),
            prob_estimates,
            assignments,
            r_hat,
            epsilon_used,
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.r_hat];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn smallest_cluster(&self) -> usize {
        self.sizes().into_iter().min().unwrap_or(0)
    }

    /// Indices belonging to cluster `c`.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|(_, a)| **a == c)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Clustering scheme of the log-eigenvalues at a fixed threshold `eps`.
pub fn hdes(h_set: &LogEigenSet, eps: f64, seed: u64) -> Result<ClusterScheme> {
    let values = h_set.values();
    if values.len() < 2 {
        return Err(Error::Domain("clustering needs at least two log-eigenvalues".into()));
    }
    let graph = epsilon_graph(values, eps)?;
    let spectrum = laplacian_spectrum(&graph)?;
    let r_hat = eigengap_count(&spectrum.eigenvalues)?;
    if r_hat == 1 {
        return ClusterScheme::from_labels(values, &vec![0; values.len()], eps);
    }
    let embedded = spectral_embed(&spectrum, r_hat)?;
    let km = kmeans(&embedded, r_hat, seed)?;
    ClusterScheme::from_labels(values, &km.labels, eps)
}
