//! k-means state abstraction: Lloyd iterations from k-means++ seeding.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, StageRng};
use crate::scalar::{squared_distance, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Converged once no centroid moves by this much (Euclidean).
    pub tol: f64,
    /// Independent restarts; the lowest final inertia wins.
    pub n_init: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 500,
            max_iters: 300,
            tol: 1e-6,
            n_init: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ClusterModel<T> {
    pub k: usize,
    pub dim: usize,
    pub centroids: Vec<Vec<T>>,
    pub inertia: T,
    pub seed: u64,
    /// Inertia after every assignment step, non-increasing.
    pub inertia_history: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit<T> {
    pub model: ClusterModel<T>,
    /// Final assignment of each training point.
    pub labels: Vec<usize>,
}

fn nearest<T: Scalar>(point: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, squared_distance(point, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

impl<T: Scalar> ClusterModel<T> {
    /// Index of the nearest centroid (squared Euclidean), lowest index on ties.
    pub fn assign(&self, point: &[T]) -> Result<usize> {
        if point.len() != self.dim {
            return Err(Error::arg(format!(
                "point has dimension {}, clusters have {}",
                point.len(),
                self.dim
            )));
        }
        Ok(nearest(point, &self.centroids).0)
    }
}

pub fn assign<T: Scalar>(point: &[T], model: &ClusterModel<T>) -> Result<usize> {
    model.assign(point)
}

fn assign_all<T: Scalar, B: AsRef<[T]> + Sync>(
    points: &[B],
    centroids: &[Vec<T>],
) -> Vec<(usize, T)> {
    points
        .par_iter()
        .map(|p| nearest(p.as_ref(), centroids))
        .collect()
}

fn sum<T: Scalar>(assigned: &[(usize, T)]) -> T {
    assigned.iter().fold(T::zero(), |acc, &(_, d)| acc + d)
}

fn sample_d2<T: Scalar>(d2: &[T], total: T, rng: &mut StageRng) -> usize {
    let target = T::of(rng.random::<f64>()) * total;
    let mut acc = T::zero();
    for (i, &d) in d2.iter().enumerate() {
        acc = acc + d;
        if d > T::zero() && acc > target {
            return i;
        }
    }
    d2.iter().rposition(|&d| d > T::zero()).unwrap_or(0)
}

/// Greedy k-means++: each new centre is the best of `2 + ln k` D²-sampled
/// candidates, judged by the potential after adding it. Plain k-means++
/// often places two seeds in one large cluster when cluster sizes are very
/// uneven.
fn plus_plus<T: Scalar, B: AsRef<[T]> + Sync>(
    points: &[B],
    k: usize,
    rng: &mut StageRng,
) -> Vec<Vec<T>> {
    let n = points.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].as_ref().to_vec()];
    let mut d2: Vec<T> = points
        .par_iter()
        .map(|p| squared_distance(p.as_ref(), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total = d2.iter().fold(T::zero(), |a, &b| a + b);
        let (pick, next_d2) = if total > T::zero() {
            let mut best: Option<(usize, T, Vec<T>)> = None;
            for _ in 0..trials {
                let cand = sample_d2(&d2, total, rng);
                let c = points[cand].as_ref();
                let merged: Vec<T> = points
                    .par_iter()
                    .zip(d2.par_iter())
                    .map(|(p, &d)| d.min(squared_distance(p.as_ref(), c)))
                    .collect();
                let potential = merged.iter().fold(T::zero(), |a, &b| a + b);
                if best.as_ref().is_none_or(|b| potential < b.1) {
                    best = Some((cand, potential, merged));
                }
            }
            let (cand, _, merged) = best.expect("at least two trials");
            (cand, merged)
        } else {
            // Every point coincides with a centre already: take unused points.
            let cand = chosen.iter().position(|&c| !c).unwrap_or(0);
            (cand, d2.clone())
        };
        chosen[pick] = true;
        d2 = next_d2;
        centroids.push(points[pick].as_ref().to_vec());
    }
    centroids
}

fn validate<T: Scalar, B: AsRef<[T]>>(points: &[B], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::arg("k must be at least 1"));
    }
    if points.len() < k {
        return Err(Error::arg(format!(
            "k-means needs at least k = {k} points, got {}",
            points.len()
        )));
    }
    let dim = points[0].as_ref().len();
    for (i, p) in points.iter().enumerate() {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(Error::arg(format!(
                "point {i} has dimension {}, expected {dim}",
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg(format!("point {i} is not finite")));
        }
    }
    Ok(dim)
}

/// Lloyd's algorithm from k-means++ seeding under `seed`.
///
/// Empty clusters are re-seeded to the point farthest from its centroid. If
/// an assignment step would raise the inertia (possible only through
/// rounding once converged) the previous centroids are kept and the fit stops.
pub fn kmeans_fit<T: Scalar, B: AsRef<[T]> + Sync>(
    points: &[B],
    k: usize,
    seed: u64,
    max_iters: usize,
    tol: f64,
) -> Result<KMeansFit<T>> {
    let dim = validate(points, k)?;
    let mut rng = rng::substream(seed, rng::KMEANS);
    let mut centroids = plus_plus(points, k, &mut rng);
    let mut assigned = assign_all(points, &centroids);
    let mut inertia = sum(&assigned);
    let mut history = vec![inertia];
    let tol2 = T::of(tol * tol);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![vec![T::zero(); dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &(j, _)) in points.iter().zip(&assigned) {
            counts[j] += 1;
            for (s, &v) in sums[j].iter_mut().zip(p.as_ref()) {
                *s = *s + v;
            }
        }
        let mut dists: Vec<T> = assigned.iter().map(|&(_, d)| d).collect();
        let mut next = Vec::with_capacity(k);
        for j in 0..k {
            if counts[j] > 0 {
                let c = T::of_usize(counts[j]);
                next.push(sums[j].iter().map(|&s| s / c).collect::<Vec<T>>());
            } else {
                let far = dists
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &d)| if d > dists[best] { i } else { best });
                dists[far] = T::zero();
                next.push(points[far].as_ref().to_vec());
            }
        }
        let movement = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| squared_distance(a, b))
            .fold(T::zero(), |m, d| m.max(d));

        let next_assigned = assign_all(points, &next);
        let next_inertia = sum(&next_assigned);
        if next_inertia > inertia {
            converged = true;
            break;
        }
        centroids = next;
        assigned = next_assigned;
        inertia = next_inertia;
        history.push(inertia);
        if movement < tol2 {
            converged = true;
            break;
        }
    }

    Ok(KMeansFit {
        labels: assigned.iter().map(|&(j, _)| j).collect(),
        model: ClusterModel {
            k,
            dim,
            centroids,
            inertia,
            seed,
            inertia_history: history,
            iterations,
            converged,
        },
    })
}

/// Runs `cfg.n_init` seeded restarts and keeps the lowest inertia
/// (earliest restart on ties).
pub fn kmeans_fit_best<T: Scalar, B: AsRef<[T]> + Sync>(
    points: &[B],
    cfg: &KMeansConfig,
    seed: u64,
) -> Result<KMeansFit<T>> {
    let mut best: Option<KMeansFit<T>> = None;
    for run in 0..cfg.n_init.max(1) {
        let run_seed = if run == 0 {
            seed
        } else {
            rng::derive_indexed_seed(seed, rng::KMEANS, run as u64)
        };
        let fit = kmeans_fit(points, cfg.k, run_seed, cfg.max_iters, cfg.tol)?;
        if best
            .as_ref()
            .is_none_or(|b| fit.model.inertia < b.model.inertia)
        {
            best = Some(fit);
        }
    }
    Ok(best.expect("at least one restart"))
}
