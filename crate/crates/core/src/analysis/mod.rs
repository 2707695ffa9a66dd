//! Distribution-gap analyses over embedding sets.

pub mod backtrans;
pub mod kmeans;
pub mod mauve;
pub mod probe;

pub use backtrans::{backtranslation_quality, BacktransReport};
pub use mauve::{mauve, mauve_repeated, DivergenceCurve, MauveConfig, MauveResult, RepeatedMauve};
pub use probe::{probe_accuracy, train_probe, LinearProbe, ProbeConfig, ProbeReport};

use crate::embedding::EmbeddingMatrix;
use crate::error::Result;
use crate::model::{Pool, ENGLISH};
use crate::scoring::resolve_row;
use crate::selection::select_top;

/// Fraction of the pool the analyses draw from.
pub const ANALYSIS_FRACTION: f64 = 0.2;

/// Gathers the rows of `matrix` for English-caption and non-English-caption
/// records, in pool order. Rows are found through `embedding_refs[space]`
/// or the sidecar's uid index.
pub fn split_by_origin(pool: &Pool, matrix: &EmbeddingMatrix) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let (mut english, mut other) = (Vec::new(), Vec::new());
    for r in pool.records() {
        let row = resolve_row(r, &matrix.space_name, matrix)?;
        if r.language() == Some(ENGLISH) {
            english.extend_from_slice(row);
        } else {
            other.extend_from_slice(row);
        }
    }
    let d = matrix.dimension();
    Ok((
        EmbeddingMatrix::new(matrix.space_name.clone(), d, english)?,
        EmbeddingMatrix::new(matrix.space_name.clone(), d, other)?,
    ))
}

/// English vs non-English rows from the top-20% selection by `score_name`.
pub fn top_selection_origin_split(
    pool: &Pool,
    score_name: &str,
    matrix: &EmbeddingMatrix,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    let (selected, _) = select_top(pool, score_name, ANALYSIS_FRACTION, None)?;
    split_by_origin(&selected, matrix)
}
