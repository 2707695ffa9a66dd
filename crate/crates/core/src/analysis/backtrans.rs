//! Back-translation quality: cosine between a caption's embedding and the
//! embedding of its round-trip translation, aggregated per language.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{CurateError, Result};
use crate::scoring::cosine;
use crate::shard_io::read_sidecar;

pub const DEFAULT_MIN_SAMPLES: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktransReport {
    /// Only languages with at least `min_samples_per_language` pairs.
    pub per_language_mean: BTreeMap<String, f64>,
    /// Every language seen, including those below the threshold.
    pub per_language_count: BTreeMap<String, usize>,
    /// Mean over all pairs.
    pub overall_mean: f64,
    pub min_samples_per_language: usize,
}

impl BacktransReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["language", "count", "mean_cosine"])?;
        for (lang, n) in &self.per_language_count {
            let mean = self
                .per_language_mean
                .get(lang)
                .map(|m| m.to_string())
                .unwrap_or_default();
            w.write_record([lang.as_str(), &n.to_string(), &mean])?;
        }
        w.flush().map_err(|e| CurateError::io("<csv>", e))?;
        Ok(())
    }
}

/// Pairs two sidecars row by row. Paths are relative to the manifest file;
/// `languages[i]` labels row `i` of both sidecars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairManifest {
    pub original: PathBuf,
    pub backtranslated: PathBuf,
    pub languages: Vec<String>,
}

impl PairManifest {
    pub fn load(path: &Path) -> Result<(PairManifest, EmbeddingMatrix, EmbeddingMatrix)> {
        let text = std::fs::read_to_string(path).map_err(|e| CurateError::io(path, e))?;
        let manifest: PairManifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let original = read_sidecar(&base.join(&manifest.original))?;
        let back = read_sidecar(&base.join(&manifest.backtranslated))?;
        let n = manifest.languages.len();
        if original.rows() != n || back.rows() != n {
            return Err(CurateError::InvalidConfig(format!(
                "{}: {n} languages for sidecars of {} and {} rows",
                path.display(),
                original.rows(),
                back.rows()
            )));
        }
        if original.dimension() != back.dimension() {
            return Err(CurateError::DimensionMismatch {
                left: original.dimension(),
                right: back.dimension(),
            });
        }
        Ok((manifest, original, back))
    }

    pub fn evaluate(path: &Path, min_samples: usize) -> Result<BacktransReport> {
        let (manifest, original, back) = Self::load(path)?;
        let pairs: Vec<(&[f32], &[f32], &str)> = original
            .iter_rows()
            .zip(back.iter_rows())
            .zip(&manifest.languages)
            .map(|((a, b), l)| (a, b, l.as_str()))
            .collect();
        backtranslation_quality(&pairs, min_samples)
    }
}

/// Sums in ascending order so the result does not depend on input order.
fn sorted_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn backtranslation_quality(
    pairs: &[(&[f32], &[f32], &str)],
    min_samples: usize,
) -> Result<BacktransReport> {
    if pairs.is_empty() {
        return Err(CurateError::EmptyInput("no back-translation pairs".into()));
    }
    let mut by_language: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for &(original, back, lang) in pairs {
        by_language.entry(lang.to_string()).or_default().push(cosine(original, back)?);
    }
    let mut all: Vec<f64> = by_language.values().flatten().copied().collect();
    let overall_mean = sorted_mean(&mut all);
    let per_language_count = by_language.iter().map(|(l, v)| (l.clone(), v.len())).collect();
    let per_language_mean = by_language
        .into_iter()
        .filter(|(_, v)| v.len() >= min_samples)
        .map(|(l, mut v)| (l, sorted_mean(&mut v)))
        .collect();
    Ok(BacktransReport {
        per_language_mean,
        per_language_count,
        overall_mean,
        min_samples_per_language: min_samples,
    })
}
