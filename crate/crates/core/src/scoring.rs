//! Image-text cosine similarity scores.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{CurateError, Result};
use crate::model::{MetadataRecord, Pool};

/// Names a score and the two embedding spaces it compares.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreSpec {
    pub score_name: String,
    pub image_space: String,
    pub text_space: String,
}

/// Cosine similarity of two f32 vectors, accumulated in f64 and clamped to
/// [-1, 1].
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(CurateError::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let (mut dot, mut uu, mut vv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if !(uu > 0.0 && vv > 0.0) {
        return Err(CurateError::ZeroNorm);
    }
    // sqrt of the product, not the product of sqrts: cosine(u, u) is then exactly 1.
    Ok((dot / (uu * vv).sqrt()).clamp(-1.0, 1.0))
}

pub(crate) fn resolve_row<'m>(
    record: &MetadataRecord,
    space: &str,
    matrix: &'m EmbeddingMatrix,
) -> Result<&'m [f32]> {
    let row = match record.embedding_refs.get(space) {
        Some(&row) => row,
        None => matrix
            .row_for_uid(&record.uid)
            .map(|r| r as u64)
            .ok_or_else(|| CurateError::MissingEmbeddingRef {
                uid: record.uid.clone(),
                space: space.to_string(),
            })?,
    };
    usize::try_from(row)
        .ok()
        .and_then(|r| matrix.row(r))
        .ok_or_else(|| CurateError::EmbeddingRefOutOfBounds {
            uid: record.uid.clone(),
            space: space.to_string(),
            row,
            rows: matrix.rows(),
        })
}

/// Sets `scores[spec.score_name]` on every record from the paired sidecars.
///
/// Rows are found through `embedding_refs[space]`, falling back to the
/// sidecar's uid index.
pub fn attach_scores(
    pool: &Pool,
    spec: &ScoreSpec,
    image: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
) -> Result<Pool> {
    if image.dimension() != text.dimension() {
        return Err(CurateError::DimensionMismatch {
            left: image.dimension(),
            right: text.dimension(),
        });
    }
    let records: Vec<MetadataRecord> = pool
        .records()
        .par_iter()
        .map(|record| {
            let u = resolve_row(record, &spec.image_space, image)?;
            let v = resolve_row(record, &spec.text_space, text)?;
            let score = cosine(u, v).map_err(|e| match e {
                CurateError::ZeroNorm => CurateError::ZeroNormEmbedding {
                    uid: record.uid.clone(),
                },
                other => other,
            })?;
            let mut out = record.clone();
            out.scores.insert(spec.score_name.clone(), score);
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let out = if pool.is_multiset() {
        Pool::multiset_from_records(records)?
    } else {
        Pool::from_records(records)?
    };
    let mut out = out;
    out.provenance = pool.provenance.clone();
    out.provenance.push(format!(
        "score {} = cosine({}, {})",
        spec.score_name, spec.image_space, spec.text_space
    ));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_unit_vectors() {
        assert_eq!(cosine(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn orthogonal() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_eight_ninths() {
        // dot = 2 + 2 + 4 = 8, both norms 3.
        let c = cosine(&[1.0, 2.0, 2.0], &[2.0, 1.0, 2.0]).unwrap();
        assert_eq!(c, 8.0 / 9.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            cosine(&[1.0], &[1.0, 2.0]),
            Err(CurateError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 2.0]),
            Err(CurateError::ZeroNorm)
        ));
    }

    fn vector(dim: usize) -> impl Strategy<Value = Vec<f32>> {
        prop::collection::vec(-100.0f32..100.0, dim)
            .prop_filter("non-zero", |v| v.iter().any(|&x| x.abs() > 1e-3))
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded((u, v) in (1usize..64).prop_flat_map(|d| (vector(d), vector(d)))) {
            let a = cosine(&u, &v).unwrap();
            prop_assert_eq!(a, cosine(&v, &u).unwrap());
            prop_assert!((-1.0..=1.0).contains(&a));
        }

        #[test]
        fn scale_invariant(
            (u, v) in (1usize..64).prop_flat_map(|d| (vector(d), vector(d))),
            alpha in 0.01f32..100.0,
            beta in 0.01f32..100.0,
        ) {
            let su: Vec<f32> = u.iter().map(|x| x * alpha).collect();
            let sv: Vec<f32> = v.iter().map(|x| x * beta).collect();
            let diff = (cosine(&su, &sv).unwrap() - cosine(&u, &v).unwrap()).abs();
            prop_assert!(diff <= 1e-6, "diff {}", diff);
        }
    }

    fn toy_pool() -> (Pool, EmbeddingMatrix, EmbeddingMatrix) {
        let records = (0..3u64)
            .map(|i| {
                let mut r = MetadataRecord::new(format!("{i:032x}"), "c");
                r.embedding_refs.insert("img".into(), i);
                r.embedding_refs.insert("txt".into(), 2 - i);
                r
            })
            .collect();
        let image = EmbeddingMatrix::from_rows(
            "img",
            &[vec![1.0, 0.0, 0.0], vec![1.0, 2.0, 2.0], vec![0.0, 3.0, 4.0]],
        )
        .unwrap();
        let text = EmbeddingMatrix::from_rows(
            "txt",
            &[vec![0.0, 0.0, 5.0], vec![2.0, 1.0, 2.0], vec![1.0, 1.0, 0.0]],
        )
        .unwrap();
        (Pool::from_records(records).unwrap(), image, text)
    }

    fn spec() -> ScoreSpec {
        ScoreSpec {
            score_name: "s".into(),
            image_space: "img".into(),
            text_space: "txt".into(),
        }
    }

    #[test]
    fn attach_matches_brute_force() {
        let (pool, image, text) = toy_pool();
        let out = attach_scores(&pool, &spec(), &image, &text).unwrap();
        // Brute force per record: image row i against text row 2-i.
        let expected = [
            1.0 / 2f64.sqrt(), // (1,0,0)·(1,1,0) / (1·√2)
            8.0 / 9.0,         // (1,2,2)·(2,1,2) / (3·3)
            4.0 / 5.0,         // (0,3,4)·(0,0,5) / (5·5)
        ];
        for (r, want) in out.records().iter().zip(expected) {
            assert!((r.scores["s"] - want).abs() < 1e-12);
        }
        let again = attach_scores(&out, &spec(), &image, &text).unwrap();
        assert_eq!(again.records(), out.records());
    }

    #[test]
    fn missing_ref_names_uid() {
        let (pool, image, text) = toy_pool();
        let mut records = pool.into_records();
        records[1].embedding_refs.remove("txt");
        let pool = Pool::from_records(records).unwrap();
        match attach_scores(&pool, &spec(), &image, &text).unwrap_err() {
            CurateError::MissingEmbeddingRef { uid, space } => {
                assert_eq!(uid, format!("{:032x}", 1));
                assert_eq!(space, "txt");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn sidecar_dimension_mismatch() {
        let (pool, image, _) = toy_pool();
        let text = EmbeddingMatrix::from_rows("txt", &vec![vec![1.0, 0.0]; 3]).unwrap();
        assert!(matches!(
            attach_scores(&pool, &spec(), &image, &text),
            Err(CurateError::DimensionMismatch { .. })
        ));
    }
}
