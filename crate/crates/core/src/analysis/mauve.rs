//! MAUVE: area under the divergence frontier of two quantized embedding
//! distributions.
//!
//! Both sets are clustered jointly with k-means. With cluster histograms `p`
//! and `q` and mixtures `r = λp + (1-λ)q` over a uniform λ grid, the frontier
//! holds the points `(exp(-c·KL(q‖r)), exp(-c·KL(p‖r)))`. The score is the
//! trapezoid area under that curve, averaged over both orientations.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kmeans::KMeans;
use crate::embedding::EmbeddingMatrix;
use crate::error::{CurateError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MauveConfig {
    /// Cluster count; `None` picks `min((|P|+|Q|)/10, 500)`, at least 2.
    pub k: Option<usize>,
    pub c: f64,
    pub grid_size: usize,
    pub seed: u64,
    pub max_kmeans_iters: usize,
    pub kmeans_tolerance: f64,
}

impl Default for MauveConfig {
    fn default() -> Self {
        MauveConfig {
            k: None,
            c: 5.0,
            grid_size: 1000,
            seed: 42,
            max_kmeans_iters: 100,
            kmeans_tolerance: 1e-6,
        }
    }
}

impl MauveConfig {
    pub fn resolved_k(&self, total_points: usize) -> usize {
        self.k.unwrap_or_else(|| (total_points / 10).min(500).max(2))
    }

    fn validate(&self, total_points: usize) -> Result<usize> {
        let k = self.resolved_k(total_points);
        if k < 2 {
            return Err(CurateError::InvalidConfig(format!("k = {k}, need k ≥ 2")));
        }
        if self.grid_size < 2 {
            return Err(CurateError::InvalidConfig(format!(
                "grid size {} < 2",
                self.grid_size
            )));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(CurateError::InvalidConfig(format!("c = {} must be positive", self.c)));
        }
        if k > total_points {
            return Err(CurateError::InvalidConfig(format!(
                "k = {k} exceeds the {total_points} pooled points"
            )));
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceCurve {
    /// Sorted by x ascending (ties by y descending), anchored at (0,1) and (1,0).
    pub points: Vec<(f64, f64)>,
    pub area: f64,
}

impl DivergenceCurve {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y"])?;
        for (x, y) in &self.points {
            w.write_record([x.to_string(), y.to_string()])?;
        }
        w.flush().map_err(|e| CurateError::io("<csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MauveResult {
    pub score: f64,
    pub k: usize,
    pub p_histogram: Vec<f64>,
    pub q_histogram: Vec<f64>,
    /// Frontier for the (P, Q) orientation.
    pub curve: DivergenceCurve,
}

/// KL(a‖b) in nats; +∞ when `b` misses mass that `a` has.
pub fn kl_divergence(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(&ai, _)| ai > 0.0)
        .map(|(&ai, &bi)| {
            if bi > 0.0 {
                ai * (ai / bi).ln()
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

/// Trapezoid integral of points sorted by x.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum()
}

/// Divergence frontier of histograms `p` against `q`.
pub fn divergence_curve(p: &[f64], q: &[f64], c: f64, grid_size: usize) -> DivergenceCurve {
    let mut points = Vec::with_capacity(grid_size + 3);
    points.push((0.0, 1.0));
    points.push((1.0, 0.0));
    let mut mixture = vec![0.0; p.len()];
    for i in 0..=grid_size {
        let lambda = i as f64 / grid_size as f64;
        for ((r, &pi), &qi) in mixture.iter_mut().zip(p).zip(q) {
            *r = lambda * pi + (1.0 - lambda) * qi;
        }
        let x = (-c * kl_divergence(q, &mixture)).exp();
        let y = (-c * kl_divergence(p, &mixture)).exp();
        points.push((x, y));
    }
    points.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal))
    });
    let area = trapezoid_area(&points);
    DivergenceCurve { points, area }
}

/// Lexicographic order on (rows, raw bits) used to fix which set is
/// clustered first, so that mauve(P, Q) and mauve(Q, P) see the same data.
fn canonical_cmp(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Ordering {
    a.rows().cmp(&b.rows()).then_with(|| {
        a.as_slice()
            .iter()
            .map(|x| x.to_bits())
            .cmp(b.as_slice().iter().map(|x| x.to_bits()))
    })
}

fn histogram(labels: &[usize], k: usize) -> Vec<f64> {
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts.into_iter().map(|c| c as f64 / n).collect()
}

pub fn mauve(p: &EmbeddingMatrix, q: &EmbeddingMatrix, config: &MauveConfig) -> Result<MauveResult> {
    if p.rows() == 0 || q.rows() == 0 {
        return Err(CurateError::EmptyInput("MAUVE needs two non-empty sets".into()));
    }
    if p.dimension() != q.dimension() {
        return Err(CurateError::DimensionMismatch {
            left: p.dimension(),
            right: q.dimension(),
        });
    }
    let total = p.rows() + q.rows();
    let k = config.validate(total)?;

    let swapped = canonical_cmp(p, q) == Ordering::Greater;
    let (first, second) = if swapped { (q, p) } else { (p, q) };
    let mut joint = Vec::with_capacity(total * p.dimension());
    joint.extend_from_slice(first.as_slice());
    joint.extend_from_slice(second.as_slice());
    let model = KMeans::fit(
        &joint,
        p.dimension(),
        k,
        config.seed,
        config.max_kmeans_iters,
        config.kmeans_tolerance,
    )?;
    let labels = model.assign(&joint);
    let (head, tail) = labels.split_at(first.rows());
    let (p_labels, q_labels) = if swapped { (tail, head) } else { (head, tail) };
    let p_hist = histogram(p_labels, k);
    let q_hist = histogram(q_labels, k);

    let forward = divergence_curve(&p_hist, &q_hist, config.c, config.grid_size);
    let backward = divergence_curve(&q_hist, &p_hist, config.c, config.grid_size);
    // Order-independent sum so that swapping P and Q gives the identical score.
    let (lo, hi) = if forward.area <= backward.area {
        (forward.area, backward.area)
    } else {
        (backward.area, forward.area)
    };
    let score = ((lo + hi) * 0.5).clamp(0.0, 1.0);
    Ok(MauveResult {
        score,
        k,
        p_histogram: p_hist,
        q_histogram: q_hist,
        curve: forward,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedMauve {
    pub mean: f64,
    /// Sample standard deviation (n − 1); zero for a single repeat.
    pub std_dev: f64,
    pub scores: Vec<f64>,
    pub sample_size: usize,
    /// (P, Q) frontier of each repeat.
    #[serde(skip)]
    pub curves: Vec<DivergenceCurve>,
}

fn subsample(m: &EmbeddingMatrix, order: &[usize], start: usize, size: usize) -> Result<EmbeddingMatrix> {
    let mut data = Vec::with_capacity(size * m.dimension());
    for j in 0..size {
        let row = order[(start + j) % order.len()];
        data.extend_from_slice(m.row(row).expect("row in range"));
    }
    EmbeddingMatrix::new(m.space_name.clone(), m.dimension(), data)
}

fn seeded_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Runs [`mauve`] on `repeats` seeded subsamples of `sample_size` rows per
/// side. Subsamples are consecutive windows of one seeded permutation per
/// side, so they are disjoint whenever `repeats × sample_size` fits.
///
/// Both sides are permuted with the same seed; identical inputs therefore
/// yield identical subsamples.
pub fn mauve_repeated(
    p: &EmbeddingMatrix,
    q: &EmbeddingMatrix,
    config: &MauveConfig,
    repeats: usize,
    sample_size: usize,
) -> Result<RepeatedMauve> {
    if repeats == 0 {
        return Err(CurateError::InvalidConfig("repeats must be at least 1".into()));
    }
    if sample_size == 0 || sample_size > p.rows() || sample_size > q.rows() {
        return Err(CurateError::InvalidConfig(format!(
            "subsample size {sample_size} exceeds set sizes {} / {}",
            p.rows(),
            q.rows()
        )));
    }
    let p_order = seeded_order(p.rows(), config.seed);
    let q_order = seeded_order(q.rows(), config.seed);
    let mut scores = Vec::with_capacity(repeats);
    let mut curves = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let ps = subsample(p, &p_order, r * sample_size, sample_size)?;
        let qs = subsample(q, &q_order, r * sample_size, sample_size)?;
        let run = MauveConfig {
            seed: config.seed.wrapping_add(r as u64),
            ..config.clone()
        };
        let result = mauve(&ps, &qs, &run)?;
        scores.push(result.score);
        curves.push(result.curve);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std_dev = if scores.len() > 1 {
        (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(RepeatedMauve {
        mean,
        std_dev,
        scores,
        sample_size,
        curves,
    })
}
