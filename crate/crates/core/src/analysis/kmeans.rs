//! Seeded k-means with k-means++ initialization.
//!
//! Assignment runs in parallel but every point's nearest centroid is computed
//! independently, and centroid sums are accumulated in point order, so the
//! result does not depend on the thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{CurateError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub k: usize,
    pub dimension: usize,
    /// Row-major `k × dimension`.
    pub centroids: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(point: &[f32], centroid: &[f64]) -> f64 {
    point
        .iter()
        .zip(centroid)
        .map(|(&x, &c)| {
            let d = x as f64 - c;
            d * d
        })
        .sum()
}

impl KMeans {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dimension..(c + 1) * self.dimension]
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, point: &[f32]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for c in 0..self.k {
            let d = sq_dist(point, self.centroid(c));
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    }

    pub fn assign(&self, data: &[f32]) -> Vec<usize> {
        data.par_chunks(self.dimension)
            .map(|p| self.nearest(p))
            .collect()
    }

    /// Fits `k` clusters to the rows of `data` (row-major, `dimension` wide).
    pub fn fit(
        data: &[f32],
        dimension: usize,
        k: usize,
        seed: u64,
        max_iters: usize,
        tolerance: f64,
    ) -> Result<KMeans> {
        if dimension == 0 || data.len() % dimension != 0 {
            return Err(CurateError::DimensionMismatch {
                left: data.len(),
                right: dimension,
            });
        }
        let n = data.len() / dimension;
        if k == 0 || k > n {
            return Err(CurateError::InvalidConfig(format!(
                "k = {k} clusters for {n} points"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = KMeans {
            k,
            dimension,
            centroids: plus_plus_init(data, dimension, k, &mut rng),
            iterations: 0,
        };

        let mut assignment = model.assign(data);
        for _ in 0..max_iters {
            model.iterations += 1;
            let mut sums = vec![0.0f64; k * dimension];
            let mut counts = vec![0usize; k];
            for (point, &c) in data.chunks_exact(dimension).zip(&assignment) {
                counts[c] += 1;
                for (s, &x) in sums[c * dimension..(c + 1) * dimension].iter_mut().zip(point) {
                    *s += x as f64;
                }
            }
            let mut max_shift = 0.0f64;
            for c in 0..k {
                // Empty clusters keep their previous centroid.
                if counts[c] == 0 {
                    continue;
                }
                let inv = 1.0 / counts[c] as f64;
                let mut shift = 0.0;
                for j in 0..dimension {
                    let updated = sums[c * dimension + j] * inv;
                    let old = &mut model.centroids[c * dimension + j];
                    shift += (updated - *old) * (updated - *old);
                    *old = updated;
                }
                max_shift = max_shift.max(shift.sqrt());
            }
            let next = model.assign(data);
            let unchanged = next == assignment;
            assignment = next;
            if unchanged || max_shift <= tolerance {
                break;
            }
        }
        Ok(model)
    }
}

fn plus_plus_init(data: &[f32], dimension: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dimension;
    let row = |i: usize| &data[i * dimension..(i + 1) * dimension];
    let mut centroids: Vec<f64> = Vec::with_capacity(k * dimension);
    let first = rng.gen_range(0..n);
    centroids.extend(row(first).iter().map(|&x| x as f64));

    let mut weights: Vec<f64> = data
        .par_chunks(dimension)
        .map(|p| sq_dist(p, &centroids[..dimension]))
        .collect();
    for c in 1..k {
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in weights.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                if acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave target ≥ acc; fall back to the last weighted point.
            pick.unwrap_or_else(|| weights.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.gen_range(0..n)
        };
        centroids.extend(row(pick).iter().map(|&x| x as f64));
        let newest = &centroids[c * dimension..(c + 1) * dimension];
        weights
            .par_iter_mut()
            .zip(data.par_chunks(dimension))
            .for_each(|(w, p)| *w = w.min(sq_dist(p, newest)));
    }
    centroids
}
