//! Seeded k-means with k-means++ initialization and Lloyd iterations.
//!
//! Empty clusters are repaired by reseeding the centroid with the point
//! farthest from its assigned centroid, so every cluster ends non-empty.
//! All math runs in f64 and everything is deterministic given the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k must be >= 1")]
    KZero,
    #[error("k ({k}) exceeds the number of points ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("max_iters must be >= 1")]
    NoIterations,
}

/// Outcome of one clustering run, including the per-iteration inertia trace
/// used to check Lloyd monotonicity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
    pub seed: u64,
    pub inertia_trace: Vec<f64>,
}

pub fn kmeans(
    points: &[Vec<f32>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ClusteringResult, ClusterError> {
    let points: Vec<Vec<f64>> =
        points.iter().map(|p| p.iter().map(|&x| f64::from(x)).collect()).collect();
    kmeans_f64(&points, k, seed, max_iters)
}

pub fn kmeans_f64(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ClusteringResult, ClusterError> {
    if k == 0 {
        return Err(ClusterError::KZero);
    }
    if k > points.len() {
        return Err(ClusterError::KTooLarge { k, n: points.len() });
    }
    if max_iters == 0 {
        return Err(ClusterError::NoIterations);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = init_plus_plus(points, k, &mut rng);
    let mut assignments = assign_all(points, &centroids);
    repair_empty(points, &mut centroids, &mut assignments);

    let mut trace = Vec::new();
    let mut iterations = 0;
    for _ in 0..max_iters {
        iterations += 1;
        update_centroids(points, &assignments, &mut centroids);
        let fresh = assign_all(points, &centroids);
        let mut changed = fresh != assignments;
        assignments = fresh;
        if repair_empty(points, &mut centroids, &mut assignments) {
            changed = true;
        }
        trace.push(inertia_of(points, &assignments, &centroids));
        if !changed {
            break;
        }
    }
    // Final polish so centroids are exactly the member means even when the
    // iteration cap cut the loop short.
    update_centroids(points, &assignments, &mut centroids);
    let inertia = inertia_of(points, &assignments, &centroids);

    Ok(ClusteringResult { assignments, centroids, inertia, iterations, seed, inertia_trace: trace })
}

pub(crate) fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn init_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen = vec![false; points.len()];
    let first = rng.random_range(0..points.len());
    centroids.push(points[first].clone());
    chosen[first] = true;

    while centroids.len() < k {
        let weights: Vec<f64> = points
            .iter()
            .map(|p| {
                centroids
                    .iter()
                    .map(|c| dist_sq(p, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All remaining points coincide with a centroid.
            (0..points.len()).find(|&i| !chosen[i]).unwrap_or(0)
        };
        centroids.push(points[next].clone());
        chosen[next] = true;
    }
    centroids
}

/// Nearest centroid per point; a point switches clusters only on strict
/// improvement, so ties keep the lowest index and Lloyd cannot cycle.
fn assign_all(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<usize> {
    points
        .iter()
        .map(|p| {
            let mut best = 0usize;
            let mut best_dist = f64::INFINITY;
            for (ci, c) in centroids.iter().enumerate() {
                let d = dist_sq(p, c);
                if d < best_dist {
                    best_dist = d;
                    best = ci;
                }
            }
            best
        })
        .collect()
}

fn update_centroids(points: &[Vec<f64>], assignments: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = centroids[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments.iter()) {
        counts[a] += 1;
        for (slot, x) in sums[a].iter_mut().zip(p.iter()) {
            *slot += x;
        }
    }
    for ci in 0..k {
        if counts[ci] == 0 {
            continue; // repaired separately
        }
        let n = counts[ci] as f64;
        for (dst, src) in centroids[ci].iter_mut().zip(sums[ci].iter()) {
            *dst = src / n;
        }
    }
}

/// Reseed each empty cluster with the point farthest from its assigned
/// centroid and force-assign that point. Returns true if anything changed.
fn repair_empty(
    points: &[Vec<f64>],
    centroids: &mut [Vec<f64>],
    assignments: &mut [usize],
) -> bool {
    let k = centroids.len();
    let mut repaired = false;
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return repaired;
        };
        let farthest = points
            .iter()
            .enumerate()
            .filter(|(i, _)| counts[assignments[*i]] > 1)
            .max_by(|(i, p), (j, q)| {
                let di = dist_sq(p, &centroids[assignments[*i]]);
                let dj = dist_sq(q, &centroids[assignments[*j]]);
                di.partial_cmp(&dj)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(j.cmp(i)) // prefer the lower index on ties
            })
            .map(|(i, _)| i);
        let Some(idx) = farthest else {
            return repaired;
        };
        centroids[empty] = points[idx].clone();
        assignments[idx] = empty;
        repaired = true;
    }
}

fn inertia_of(points: &[Vec<f64>], assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignments.iter())
        .map(|(p, &a)| dist_sq(p, &centroids[a]))
        .sum()
}
