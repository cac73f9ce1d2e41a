//! Lloyd's K-means with seeded farthest-point initialization.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{mix_seed, squared_distance, Scalar};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KMeansError {
    #[error("no points to cluster")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("k = {k} exceeds the number of distinct points ({distinct})")]
    Degenerate { k: usize, distinct: usize },
    #[error("point {index} has dimension {actual}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        actual: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iterations: usize,
    pub seed: u64,
    /// Independent initializations; the lowest inertia wins.
    pub restarts: usize,
}

impl KMeansConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            max_iterations: 100,
            seed,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans<T> {
    pub centroids: Vec<Vec<T>>,
    /// Every label is the index of the nearest centroid (ties to the lowest).
    pub labels: Vec<usize>,
    pub iterations: usize,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: T,
}

impl<T: Scalar> KMeans<T> {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Index of and squared distance to the closest centroid. Ties go to the
/// lowest index.
pub fn nearest<T: Scalar>(centroids: &[Vec<T>], point: &[T]) -> (usize, T) {
    let mut best = (0, T::infinity());
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, point);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

pub fn kmeans<T: Scalar>(points: &[&[T]], k: usize, config: &KMeansConfig) -> Result<KMeans<T>, KMeansError> {
    if points.is_empty() {
        return Err(KMeansError::Empty);
    }
    if k == 0 {
        return Err(KMeansError::ZeroK);
    }
    let dim = points[0].len();
    if let Some((index, p)) = points.iter().enumerate().find(|(_, p)| p.len() != dim) {
        return Err(KMeansError::DimensionMismatch {
            index,
            expected: dim,
            actual: p.len(),
        });
    }
    let mut best: Option<KMeans<T>> = None;
    for r in 0..config.restarts.max(1) {
        let seed = if r == 0 { config.seed } else { mix_seed(config.seed, r as u64) };
        let run = lloyd(points, k, config.max_iterations, seed)?;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Sorted indices of a seeded sample of `limit` out of `n` items, or every
/// index when `n <= limit`.
pub fn sample_indices(n: usize, limit: Option<usize>, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if let Some(limit) = limit.filter(|&l| l < n) {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx.truncate(limit);
        idx.sort_unstable();
    }
    idx
}

fn farthest_point_init<T: Scalar>(points: &[&[T]], k: usize, seed: u64) -> Result<Vec<Vec<T>>, KMeansError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..points.len());
    let mut centroids = vec![points[first].to_vec()];
    let mut min_d: Vec<T> = points.iter().map(|p| squared_distance(p, points[first])).collect();
    while centroids.len() < k {
        let (idx, far) = min_d
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        if far <= T::zero() {
            return Err(KMeansError::Degenerate {
                k,
                distinct: centroids.len(),
            });
        }
        centroids.push(points[idx].to_vec());
        let c = &centroids[centroids.len() - 1];
        for (d, p) in min_d.iter_mut().zip(points) {
            let nd = squared_distance(p, c);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(centroids)
}

fn assign<T: Scalar>(points: &[&[T]], centroids: &[Vec<T>]) -> Vec<(usize, T)> {
    points.par_iter().map(|p| nearest(centroids, p)).collect()
}

fn lloyd<T: Scalar>(points: &[&[T]], k: usize, max_iterations: usize, seed: u64) -> Result<KMeans<T>, KMeansError> {
    let dim = points[0].len();
    let mut centroids = farthest_point_init(points, k, seed)?;
    let mut assigned = assign(points, &centroids);
    let mut iterations = 0;
    for _ in 0..max_iterations {
        iterations += 1;
        let mut labels: Vec<usize> = assigned.iter().map(|(l, _)| *l).collect();
        // Re-seed empty clusters from the points farthest from their centroid.
        let mut sizes = vec![0usize; k];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let mut taken = vec![false; points.len()];
        for (j, _) in sizes.clone().iter().enumerate().filter(|(_, &s)| s == 0) {
            let far = assigned
                .iter()
                .enumerate()
                .filter(|(i, (l, _))| !taken[*i] && sizes[*l] > 1)
                .fold(None::<(usize, T)>, |acc, (i, (_, d))| match acc {
                    Some((_, bd)) if *d <= bd => acc,
                    _ => Some((i, *d)),
                });
            if let Some((i, _)) = far {
                taken[i] = true;
                sizes[labels[i]] -= 1;
                sizes[j] += 1;
                labels[i] = j;
            }
        }
        let mut sums = vec![vec![T::zero(); dim]; k];
        for (p, &l) in points.iter().zip(&labels) {
            for (s, v) in sums[l].iter_mut().zip(p.iter()) {
                *s += *v;
            }
        }
        for (j, sum) in sums.into_iter().enumerate() {
            if sizes[j] > 0 {
                let n = T::of_usize(sizes[j]);
                centroids[j] = sum.into_iter().map(|s| s / n).collect();
            }
        }
        let next = assign(points, &centroids);
        let stable = next.iter().zip(&assigned).all(|(a, b)| a.0 == b.0);
        assigned = next;
        if stable {
            break;
        }
    }
    let inertia = assigned.iter().fold(T::zero(), |acc, (_, d)| acc + *d);
    Ok(KMeans {
        centroids,
        labels: assigned.into_iter().map(|(l, _)| l).collect(),
        iterations,
        inertia,
    })
}
