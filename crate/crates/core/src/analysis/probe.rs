//! Logistic-regression probe separating two embedding sets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{CurateError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub l2_regularization: f64,
    /// Initial step size; epoch `e` (0-based) uses `learning_rate / sqrt(e + 1)`.
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Held-out share of each class.
    pub test_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2_regularization: 1e-4,
            learning_rate: 0.1,
            epochs: 50,
            seed: 42,
            test_fraction: 0.2,
        }
    }
}

impl ProbeConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.l2_regularization >= 0.0
            && self.learning_rate > 0.0
            && self.epochs > 0
            && self.test_fraction > 0.0
            && self.test_fraction < 1.0;
        if ok {
            Ok(())
        } else {
            Err(CurateError::InvalidConfig(format!("probe config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearProbe {
    pub fn decision(&self, x: &[f32]) -> f64 {
        self.weights
            .iter()
            .zip(x)
            .map(|(w, &v)| w * v as f64)
            .sum::<f64>()
            + self.bias
    }

    /// Zero counts as the positive class.
    pub fn predict(&self, x: &[f32]) -> bool {
        self.decision(x) >= 0.0
    }

    pub fn negated(&self) -> LinearProbe {
        LinearProbe {
            weights: self.weights.iter().map(|w| -w).collect(),
            bias: -self.bias,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub classifier: LinearProbe,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub train_size: usize,
    pub test_size: usize,
}

fn split(n: usize, test_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let test = ((test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let train = idx.split_off(test);
    (train, idx)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_dims(a: &EmbeddingMatrix, b: &EmbeddingMatrix) -> Result<()> {
    if a.dimension() != b.dimension() {
        return Err(CurateError::DimensionMismatch {
            left: a.dimension(),
            right: b.dimension(),
        });
    }
    Ok(())
}

/// Fits the probe on a seeded per-class train/test split and reports
/// held-out accuracy. Each class needs at least two rows.
pub fn train_probe(
    positives: &EmbeddingMatrix,
    negatives: &EmbeddingMatrix,
    config: &ProbeConfig,
) -> Result<ProbeReport> {
    config.validate()?;
    check_dims(positives, negatives)?;
    for (name, m) in [("positive", positives), ("negative", negatives)] {
        if m.rows() < 2 {
            return Err(CurateError::EmptyInput(format!(
                "{name} class has {} rows, need at least 2",
                m.rows()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (pos_train, pos_test) = split(positives.rows(), config.test_fraction, &mut rng);
    let (neg_train, neg_test) = split(negatives.rows(), config.test_fraction, &mut rng);

    let mut train: Vec<(&[f32], f64)> = pos_train
        .iter()
        .map(|&i| (positives.row(i).unwrap(), 1.0))
        .chain(neg_train.iter().map(|&i| (negatives.row(i).unwrap(), 0.0)))
        .collect();

    let dim = positives.dimension();
    let mut probe = LinearProbe {
        weights: vec![0.0; dim],
        bias: 0.0,
    };
    for epoch in 0..config.epochs {
        let lr = config.learning_rate / ((epoch + 1) as f64).sqrt();
        train.shuffle(&mut rng);
        for &(x, y) in &train {
            let err = sigmoid(probe.decision(x)) - y;
            for (w, &v) in probe.weights.iter_mut().zip(x) {
                *w -= lr * (err * v as f64 + config.l2_regularization * *w);
            }
            probe.bias -= lr * err;
        }
    }

    let rows = |m: &EmbeddingMatrix, idx: &[usize]| -> Vec<f32> {
        idx.iter().flat_map(|&i| m.row(i).unwrap().iter().copied()).collect()
    };
    let subset = |m: &EmbeddingMatrix, idx: &[usize]| {
        EmbeddingMatrix::new(m.space_name.clone(), dim, rows(m, idx))
    };
    let test_accuracy = probe_accuracy(
        &probe,
        &subset(positives, &pos_test)?,
        &subset(negatives, &neg_test)?,
    )?;
    let train_accuracy = probe_accuracy(
        &probe,
        &subset(positives, &pos_train)?,
        &subset(negatives, &neg_train)?,
    )?;
    Ok(ProbeReport {
        classifier: probe,
        test_accuracy,
        train_accuracy,
        train_size: pos_train.len() + neg_train.len(),
        test_size: pos_test.len() + neg_test.len(),
    })
}

/// Share of rows classified correctly: positives should score ≥ 0,
/// negatives < 0.
pub fn probe_accuracy(
    classifier: &LinearProbe,
    test_positives: &EmbeddingMatrix,
    test_negatives: &EmbeddingMatrix,
) -> Result<f64> {
    for m in [test_positives, test_negatives] {
        if m.dimension() != classifier.weights.len() {
            return Err(CurateError::DimensionMismatch {
                left: classifier.weights.len(),
                right: m.dimension(),
            });
        }
    }
    let total = test_positives.rows() + test_negatives.rows();
    if total == 0 {
        return Err(CurateError::EmptyInput("no test rows".into()));
    }
    let correct = test_positives.iter_rows().filter(|x| classifier.predict(x)).count()
        + test_negatives.iter_rows().filter(|x| !classifier.predict(x)).count();
    Ok(correct as f64 / total as f64)
}
