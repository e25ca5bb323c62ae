//! Temporal variation and cluster-histogram entropy.

use rand::Rng;

use super::{frames, Part};
use crate::data::MotionSequence;
use crate::error::{Error, Result};
use crate::rng::RngStreams;

pub const KMEANS_ITERATIONS: usize = 100;

/// Population variance along time, averaged over sequences and features.
/// Single-frame sequences contribute 0.
pub fn variation(seqs: &[MotionSequence], part: Part) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::EmptyInput("variation over no sequences".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for s in seqs {
        let range = part.range(s.expression_dim());
        let n = s.len() as f64;
        for c in range {
            if s.len() > 1 {
                let mean: f64 = (0..s.len()).map(|t| s.row(t)[c] as f64).sum::<f64>() / n;
                total += (0..s.len()).map(|t| (s.row(t)[c] as f64 - mean).powi(2)).sum::<f64>() / n;
            }
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

/// k-means centroids over motion frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl ClusterModel {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    /// Index of the nearest centroid; ties go to the lower index.
    pub fn assign(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// k-means with k-means++ seeding and at most [`KMEANS_ITERATIONS`] Lloyd
/// steps. Clusters that lose all members keep their previous centroid.
pub fn fit_clusters(data: &[Vec<f64>], k: usize, seed: u64) -> Result<ClusterModel> {
    if data.is_empty() {
        return Err(Error::EmptyInput("k-means over no frames".into()));
    }
    if k == 0 || k > data.len() {
        return Err(Error::contract(format!("k = {k} needs 1..={} frames", data.len())));
    }
    let dim = data[0].len();
    if let Some(bad) = data.iter().find(|x| x.len() != dim) {
        return Err(Error::shape("fit_clusters", &[dim], &[bad.len()]));
    }
    let mut rng = RngStreams::new(seed).stream("kmeans");
    let mut centroids = vec![data[rng.random_range(0..data.len())].clone()];
    let mut nearest: Vec<f64> = data.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut chosen = data.len() - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..data.len())
        };
        centroids.push(data[pick].clone());
        let c = centroids.last().expect("just pushed");
        for (n, x) in nearest.iter_mut().zip(data) {
            *n = n.min(sq_dist(x, c));
        }
    }

    let mut model = ClusterModel { centroids };
    let mut labels = vec![usize::MAX; data.len()];
    for _ in 0..KMEANS_ITERATIONS {
        let mut changed = false;
        for (l, x) in labels.iter_mut().zip(data) {
            let a = model.assign(x);
            if *l != a {
                *l = a;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&l, x) in labels.iter().zip(data) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(x) {
                *s += v;
            }
        }
        for ((c, s), &n) in model.centroids.iter_mut().zip(sums).zip(&counts) {
            if n > 0 {
                *c = s.into_iter().map(|v| v / n as f64).collect();
            }
        }
    }
    Ok(model)
}

/// `−Σ pᵢ ln pᵢ` of the cluster-ID histogram of `data`.
pub fn shannon_index(model: &ClusterModel, data: &[Vec<f64>]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyInput("Shannon index over no frames".into()));
    }
    let mut hist = vec![0usize; model.k()];
    for x in data {
        hist[model.assign(x)] += 1;
    }
    let n = data.len() as f64;
    Ok(hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0))
}

/// Shannon index of all frames of `seqs`.
pub fn sequence_shannon_index(model: &ClusterModel, seqs: &[MotionSequence], part: Part) -> Result<f64> {
    shannon_index(model, &frames(seqs, part))
}
