use std::collections::BTreeMap;

use crate::error::{CurateError, Result};

/// Dense row-major matrix of f32 embeddings for one embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub space_name: String,
    dimension: usize,
    data: Vec<f32>,
    /// uid → row, for sidecars addressed by uid instead of `embedding_refs`.
    pub index: Option<BTreeMap<String, usize>>,
}

impl EmbeddingMatrix {
    pub fn new(space_name: impl Into<String>, dimension: usize, data: Vec<f32>) -> Result<Self> {
        if dimension == 0 {
            return Err(CurateError::InvalidConfig(
                "embedding dimension must be positive".into(),
            ));
        }
        if data.len() % dimension != 0 {
            return Err(CurateError::DimensionMismatch {
                left: data.len(),
                right: dimension,
            });
        }
        Ok(EmbeddingMatrix {
            space_name: space_name.into(),
            dimension,
            data,
            index: None,
        })
    }

    pub fn from_rows(space_name: impl Into<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let dimension = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dimension);
        for row in rows {
            if row.len() != dimension {
                return Err(CurateError::DimensionMismatch {
                    left: row.len(),
                    right: dimension,
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(space_name, dimension, data)
    }

    /// Attaches a uid index. Fails unless the map is injective and in bounds.
    pub fn with_index(mut self, index: BTreeMap<String, usize>) -> Result<Self> {
        let mut seen = vec![false; self.rows()];
        for (uid, &row) in &index {
            match seen.get_mut(row) {
                None => {
                    return Err(CurateError::InvalidConfig(format!(
                        "uid {uid} maps to row {row}, matrix has {} rows",
                        self.rows()
                    )))
                }
                Some(true) => {
                    return Err(CurateError::InvalidConfig(format!(
                        "uid index is not injective at row {row}"
                    )))
                }
                Some(flag) => *flag = true,
            }
        }
        self.index = Some(index);
        Ok(self)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dimension
    }

    pub fn row(&self, i: usize) -> Option<&[f32]> {
        let start = i.checked_mul(self.dimension)?;
        self.data.get(start..start + self.dimension)
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dimension)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row_for_uid(&self, uid: &str) -> Option<usize> {
        self.index.as_ref()?.get(uid).copied()
    }

    /// Index of the first non-finite row, if any.
    pub fn first_non_finite_row(&self) -> Option<usize> {
        self.iter_rows()
            .position(|row| row.iter().any(|x| !x.is_finite()))
    }
}
