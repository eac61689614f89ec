//! k-means++ seeding followed by Lloyd iterations, best of several restarts.
//!
//! Restart `r` draws from the ChaCha stream `r` of the given seed, so results
//! depend only on `(points, options)`. Ties in nearest-center search go to the
//! lowest center index. A center left without members after an update is
//! moved onto the point farthest from its own center.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SurrogateError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansOptions {
    pub n_clusters: usize,
    pub seed: u64,
    pub n_restarts: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl KMeansOptions {
    pub fn new(n_clusters: usize, seed: u64) -> Self {
        Self { n_clusters, seed, n_restarts: 10, max_iter: 300, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    pub wcss: f64,
    /// WCSS after every assignment step of the winning restart.
    pub wcss_history: Vec<f64>,
    pub iterations: usize,
    /// Index of the restart that won.
    pub restart: usize,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the nearest center; lowest index wins ties.
pub fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn distinct_count(points: &[Vec<f64>], cap: usize) -> usize {
    let mut seen = HashSet::new();
    for p in points {
        seen.insert(p.iter().map(|x| x.to_bits()).collect::<Vec<u64>>());
        if seen.len() >= cap {
            break;
        }
    }
    seen.len()
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            // Guard against rounding landing on an already-chosen point.
            if d2[idx] == 0.0 {
                idx = d2.iter().rposition(|&w| w > 0.0).unwrap_or(idx);
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(squared_distance(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn assign_all(points: &[Vec<f64>], centers: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, f64) {
    let mut labels = Vec::with_capacity(points.len());
    let mut dists = Vec::with_capacity(points.len());
    let mut wcss = 0.0;
    for p in points {
        let (k, d) = nearest(p, centers);
        labels.push(k);
        dists.push(d);
        wcss += d;
    }
    (labels, dists, wcss)
}

/// Means of each cluster; empty clusters are re-seeded at the farthest point.
fn update_centers(points: &[Vec<f64>], labels: &[usize], dists: &[f64], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut members: Vec<Vec<&[f64]>> = vec![Vec::new(); k];
    for (p, &l) in points.iter().zip(labels) {
        members[l].push(p);
    }
    let mut taken = vec![false; points.len()];
    let mut centers = Vec::with_capacity(k);
    for group in &members {
        if group.is_empty() {
            let far = (0..points.len())
                .filter(|&i| !taken[i])
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if dists[b] >= dists[i] => Some(b),
                    _ => Some(i),
                })
                .unwrap_or(0);
            taken[far] = true;
            centers.push(points[far].clone());
        } else {
            centers.push(super::regression::column_means(group, dim));
        }
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>, opts: &KMeansOptions) -> KMeansResult {
    let k = centers.len();
    let dim = points[0].len();
    let (mut labels, mut dists, wcss) = assign_all(points, &centers);
    let mut history = vec![wcss];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let next = update_centers(points, &labels, &dists, k, dim);
        let shift = centers
            .iter()
            .zip(&next)
            .map(|(a, b)| squared_distance(a, b).sqrt())
            .fold(0.0, f64::max);
        centers = next;
        let (new_labels, new_dists, wcss) = assign_all(points, &centers);
        history.push(wcss);
        let stable = new_labels == labels;
        labels = new_labels;
        dists = new_dists;
        if stable {
            break;
        }
        if shift < opts.tol {
            centers = update_centers(points, &labels, &dists, k, dim);
            break;
        }
    }
    let wcss = *history.last().unwrap();
    KMeansResult { centers, assignments: labels, wcss, wcss_history: history, iterations, restart: 0 }
}

pub fn kmeans(points: &[Vec<f64>], opts: &KMeansOptions) -> Result<KMeansResult, SurrogateError> {
    let k = opts.n_clusters;
    if k == 0 {
        return Err(SurrogateError::Invalid("n_clusters must be >= 1".into()));
    }
    if opts.n_restarts == 0 || !(opts.tol >= 0.0) {
        return Err(SurrogateError::Invalid("n_restarts must be >= 1 and tol >= 0".into()));
    }
    let Some(first) = points.first() else {
        return Err(SurrogateError::Invalid("no points to cluster".into()));
    };
    if points.iter().any(|p| p.len() != first.len()) {
        return Err(SurrogateError::Invalid("points have differing dimensions".into()));
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(SurrogateError::Invalid("non-finite point coordinate".into()));
    }
    let distinct = distinct_count(points, k);
    if distinct < k {
        return Err(SurrogateError::TooFewDistinctPoints { clusters: k, distinct });
    }

    let mut best: Option<KMeansResult> = None;
    for r in 0..opts.n_restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(r as u64);
        let init = plus_plus(points, k, &mut rng);
        let mut res = lloyd(points, init, opts);
        res.restart = r;
        if best.as_ref().is_none_or(|b| res.wcss < b.wcss) {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn blobs(seed: u64, n_each: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for (label, center) in [[-5.0, 0.0, 1.0], [5.0, 1.0, -1.0]].iter().enumerate() {
            for _ in 0..n_each {
                pts.push(center.iter().map(|c| c + noise.sample(&mut rng)).collect());
                labels.push(label);
            }
        }
        (pts, labels)
    }

    #[test]
    fn single_cluster_is_mean() {
        let pts = vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0]];
        let r = kmeans(&pts, &KMeansOptions::new(1, 0)).unwrap();
        assert!((r.centers[0][0] - 2.0).abs() < 1e-15);
        assert!((r.centers[0][1] - 1.0).abs() < 1e-15);
        assert!(r.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn two_blobs_recovered() {
        let (pts, labels) = blobs(4, 50);
        let r = kmeans(&pts, &KMeansOptions::new(2, 17)).unwrap();
        let flip = r.assignments[0] != labels[0];
        for (a, l) in r.assignments.iter().zip(&labels) {
            assert_eq!(*a, if flip { 1 - l } else { *l });
        }
    }

    #[test]
    fn wcss_non_increasing() {
        let (pts, _) = blobs(5, 40);
        for seed in 0..10 {
            let r = kmeans(&pts, &KMeansOptions { n_restarts: 1, ..KMeansOptions::new(4, seed) }).unwrap();
            for w in r.wcss_history.windows(2) {
                assert!(w[1] <= w[0], "{:?}", r.wcss_history);
            }
        }
    }

    #[test]
    fn terminates_at_fixed_point() {
        let (pts, _) = blobs(6, 30);
        let r = kmeans(&pts, &KMeansOptions::new(3, 2)).unwrap();
        let (labels, dists, _) = assign_all(&pts, &r.centers);
        assert_eq!(labels, r.assignments);
        assert_eq!(update_centers(&pts, &labels, &dists, 3, 3), r.centers);
    }

    #[test]
    fn deterministic_under_seed() {
        let (pts, _) = blobs(7, 30);
        let a = kmeans(&pts, &KMeansOptions::new(3, 99)).unwrap();
        let b = kmeans(&pts, &KMeansOptions::new(3, 99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_few_distinct_points() {
        let pts = vec![vec![1.0], vec![1.0], vec![2.0]];
        assert!(matches!(
            kmeans(&pts, &KMeansOptions::new(3, 0)),
            Err(SurrogateError::TooFewDistinctPoints { clusters: 3, distinct: 2 })
        ));
        assert!(kmeans(&pts, &KMeansOptions::new(2, 0)).is_ok());
    }

    #[test]
    fn empty_cluster_reseeded_at_farthest_point() {
        let pts = vec![vec![0.0], vec![1.0], vec![10.0]];
        // Center 1 captures nothing: all points are nearer to center 0 or 2.
        let labels = vec![0, 0, 2];
        let centers = vec![vec![0.5], vec![100.0], vec![10.0]];
        let (_, dists, _) = assign_all(&pts, &centers);
        let next = update_centers(&pts, &labels, &dists, 3, 1);
        assert_eq!(next[1], vec![0.0]); // ties (0.25, 0.25) go to the lowest index
        assert_eq!(next[0], vec![0.5]);
    }
}
