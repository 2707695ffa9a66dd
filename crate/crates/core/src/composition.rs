//! Baseline training-set compositions built from selected subsets.
//!
//! Union and concat are sort-merge joins over uid-sorted pools, so their
//! output order never depends on how the inputs were produced.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CurateError, Result};
use crate::model::{CaptionField, CompositionRecipe, MetadataRecord, Pool, RecipeMode};
use crate::selection::{select_top, SelectionReport};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CompositionReport {
    pub left_size: usize,
    pub right_size: usize,
    pub intersection_size: usize,
    pub output_size: usize,
    /// Output records per caption source bucket (raw, translated, replacement).
    pub caption_source_histogram: BTreeMap<String, usize>,
    /// Selections performed while evaluating a recipe, in evaluation order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub selections: Vec<SelectionReport>,
}

fn histogram(pool: &Pool) -> BTreeMap<String, usize> {
    let mut h: BTreeMap<String, usize> = ["raw", "translated", "replacement"]
        .into_iter()
        .map(|k| (k.to_string(), 0))
        .collect();
    for r in pool.records() {
        *h.get_mut(r.caption_source.bucket()).unwrap() += 1;
    }
    h
}

fn with_caption(record: &MetadataRecord, field: &CaptionField) -> Result<MetadataRecord> {
    if record.caption(field).is_none() {
        return Err(CurateError::MissingCaption {
            uid: record.uid.clone(),
            field: field.to_string(),
        });
    }
    let mut out = record.clone();
    out.caption_source = field.clone();
    Ok(out)
}

/// Switches every record's training caption to `field`.
pub fn replace_captions(pool: &Pool, field: &CaptionField) -> Result<Pool> {
    let records = pool
        .records()
        .iter()
        .map(|r| with_caption(r, field))
        .collect::<Result<Vec<_>>>()?;
    let mut out = if pool.is_multiset() {
        Pool::multiset_from_records(records)?
    } else {
        Pool::from_records(records)?
    };
    out.provenance = pool.provenance.clone();
    out.provenance.push(format!("replace_captions {field}"));
    Ok(out)
}

fn check_single_copy(pool: &Pool) -> Result<()> {
    if pool.is_multiset() {
        return Err(CurateError::MultisetInput);
    }
    if let Some(w) = pool.records().windows(2).find(|w| w[0].uid == w[1].uid) {
        return Err(CurateError::DuplicateUid(w[0].uid.clone()));
    }
    Ok(())
}

enum Side<'a> {
    Left(&'a MetadataRecord),
    Right(&'a MetadataRecord),
    Both(&'a MetadataRecord, &'a MetadataRecord),
}

/// Merge-join over two uid-sorted single-copy pools.
fn merge_join<'a>(left: &'a [MetadataRecord], right: &'a [MetadataRecord]) -> Vec<Side<'a>> {
    let mut out = Vec::with_capacity(left.len() + right.len());
    let (mut i, mut j) = (0, 0);
    while i < left.len() && j < right.len() {
        match left[i].uid.cmp(&right[j].uid) {
            Ordering::Less => {
                out.push(Side::Left(&left[i]));
                i += 1;
            }
            Ordering::Greater => {
                out.push(Side::Right(&right[j]));
                j += 1;
            }
            Ordering::Equal => {
                out.push(Side::Both(&left[i], &right[j]));
                i += 1;
                j += 1;
            }
        }
    }
    out.extend(left[i..].iter().map(Side::Left));
    out.extend(right[j..].iter().map(Side::Right));
    out
}

fn merged_provenance(op: &str, left: &Pool, right: &Pool) -> Vec<String> {
    let mut p = Vec::with_capacity(left.provenance.len() + right.provenance.len() + 1);
    p.extend(left.provenance.iter().map(|s| format!("left: {s}")));
    p.extend(right.provenance.iter().map(|s| format!("right: {s}")));
    p.push(op.to_string());
    p
}

/// One copy per distinct uid. Uids in `translated_subset` carry the
/// translated caption; uids only in `raw_subset` keep their raw caption.
pub fn union_prefer_translated(
    raw_subset: &Pool,
    translated_subset: &Pool,
) -> Result<(Pool, CompositionReport)> {
    check_single_copy(raw_subset)?;
    check_single_copy(translated_subset)?;
    let mut intersection = 0;
    let mut records = Vec::with_capacity(raw_subset.len() + translated_subset.len());
    for side in merge_join(raw_subset.records(), translated_subset.records()) {
        match side {
            Side::Left(r) => records.push(with_caption(r, &CaptionField::Raw)?),
            Side::Right(t) => records.push(with_caption(t, &CaptionField::Translated)?),
            Side::Both(_, t) => {
                intersection += 1;
                records.push(with_caption(t, &CaptionField::Translated)?);
            }
        }
    }
    let mut pool = Pool::from_records(records)?;
    pool.provenance = merged_provenance("union_prefer_translated", raw_subset, translated_subset);
    let report = CompositionReport {
        left_size: raw_subset.len(),
        right_size: translated_subset.len(),
        intersection_size: intersection,
        output_size: pool.len(),
        caption_source_histogram: histogram(&pool),
        selections: Vec::new(),
    };
    Ok((pool, report))
}

/// Multiset sum: raw copies with raw captions plus translated copies with
/// translated captions; overlapping uids appear twice.
pub fn concat_both_captions(
    raw_subset: &Pool,
    translated_subset: &Pool,
) -> Result<(Pool, CompositionReport)> {
    check_single_copy(raw_subset)?;
    check_single_copy(translated_subset)?;
    let mut intersection = 0;
    let mut records = Vec::with_capacity(raw_subset.len() + translated_subset.len());
    for side in merge_join(raw_subset.records(), translated_subset.records()) {
        match side {
            Side::Left(r) => records.push(with_caption(r, &CaptionField::Raw)?),
            Side::Right(t) => records.push(with_caption(t, &CaptionField::Translated)?),
            Side::Both(r, t) => {
                intersection += 1;
                records.push(with_caption(r, &CaptionField::Raw)?);
                records.push(with_caption(t, &CaptionField::Translated)?);
            }
        }
    }
    let mut pool = Pool::multiset_from_records(records)?;
    pool.provenance = merged_provenance("concat_both_captions", raw_subset, translated_subset);
    let report = CompositionReport {
        left_size: raw_subset.len(),
        right_size: translated_subset.len(),
        intersection_size: intersection,
        output_size: pool.len(),
        caption_source_histogram: histogram(&pool),
        selections: Vec::new(),
    };
    Ok((pool, report))
}

/// Evaluates a recipe tree bottom-up against `pool`.
///
/// Leaf filters select from `pool`; a filter with one operand selects from
/// that operand's output instead.
pub fn run_recipe(recipe: &CompositionRecipe, pool: &Pool) -> Result<(Pool, CompositionReport)> {
    recipe.validate()?;
    let mut selections = Vec::new();
    let (out, mut report) = eval(recipe, pool, &mut selections)?;
    report.selections = selections;
    Ok((out, report))
}

fn eval(
    recipe: &CompositionRecipe,
    pool: &Pool,
    selections: &mut Vec<SelectionReport>,
) -> Result<(Pool, CompositionReport)> {
    match recipe.mode {
        RecipeMode::Filter => {
            let input = match recipe.operands.first() {
                Some(child) => eval(child, pool, selections)?.0,
                None => pool.clone(),
            };
            let score = recipe.score_name.as_deref().unwrap_or_default();
            let fraction = recipe.fraction.unwrap_or_default();
            let (mut out, selection) = select_top(
                &input,
                score,
                fraction,
                recipe.language_restriction.as_deref(),
            )?;
            selections.push(selection);
            if let Some(field) = &recipe.caption_field {
                out = replace_captions(&out, field)?;
            }
            Ok(unary_report(input.len(), out))
        }
        RecipeMode::ReplaceCaption => {
            let (input, _) = eval(&recipe.operands[0], pool, selections)?;
            let field = recipe.caption_field.as_ref().expect("validated");
            let out = replace_captions(&input, field)?;
            Ok(unary_report(input.len(), out))
        }
        RecipeMode::Union | RecipeMode::Concat => {
            let (left, _) = eval(&recipe.operands[0], pool, selections)?;
            let (right, _) = eval(&recipe.operands[1], pool, selections)?;
            if recipe.mode == RecipeMode::Union {
                union_prefer_translated(&left, &right)
            } else {
                concat_both_captions(&left, &right)
            }
        }
    }
}

fn unary_report(input_size: usize, out: Pool) -> (Pool, CompositionReport) {
    let report = CompositionReport {
        left_size: input_size,
        right_size: 0,
        intersection_size: 0,
        output_size: out.len(),
        caption_source_histogram: histogram(&out),
        selections: Vec::new(),
    };
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(name: char) -> MetadataRecord {
        let uid = format!("{:032x}", name as u32);
        let mut r = MetadataRecord::new(uid, format!("raw {name}"));
        r.language = Some("fra_Latn".into());
        r.translated_caption = Some(format!("translated {name}"));
        r
    }

    fn pool(names: &str) -> Pool {
        Pool::from_records(names.chars().map(rec).collect()).unwrap()
    }

    fn summary(pool: &Pool) -> Vec<(char, String)> {
        pool.records()
            .iter()
            .map(|r| {
                let c = char::from_u32(u32::from_str_radix(&r.uid, 16).unwrap()).unwrap();
                (c, r.caption_source.to_string())
            })
            .collect()
    }

    #[test]
    fn replace_then_back() {
        let p = pool("abc");
        let t = replace_captions(&p, &CaptionField::Translated).unwrap();
        assert_eq!(t.len(), 3);
        assert!(t
            .records()
            .iter()
            .all(|r| r.active_caption().unwrap().starts_with("translated")));
        let back = replace_captions(&t, &CaptionField::Raw).unwrap();
        assert_eq!(back.records(), p.records());
    }

    #[test]
    fn replace_requires_field() {
        let mut records = pool("ab").into_records();
        records[1].translated_caption = None;
        let p = Pool::from_records(records).unwrap();
        match replace_captions(&p, &CaptionField::Translated).unwrap_err() {
            CurateError::MissingCaption { uid, .. } => {
                assert_eq!(uid, format!("{:032x}", 'b' as u32))
            }
            other => panic!("unexpected {other}"),
        }
        assert!(replace_captions(&p, &CaptionField::Named("blip2".into())).is_err());
    }

    #[test]
    fn union_enumeration() {
        let (u, report) = union_prefer_translated(&pool("abc"), &pool("bcd")).unwrap();
        assert_eq!(
            summary(&u),
            vec![
                ('a', "raw".into()),
                ('b', "translated".into()),
                ('c', "translated".into()),
                ('d', "translated".into())
            ]
        );
        assert_eq!(report.output_size, 4);
        assert_eq!(report.intersection_size, 2);
        assert_eq!(report.caption_source_histogram["raw"], 1);
        assert_eq!(report.caption_source_histogram["translated"], 3);
    }

    #[test]
    fn union_full_overlap() {
        let t = replace_captions(&pool("xyz"), &CaptionField::Translated).unwrap();
        let (u, _) = union_prefer_translated(&pool("xyz"), &pool("xyz")).unwrap();
        assert_eq!(u.records(), t.records());
    }

    #[test]
    fn concat_enumeration() {
        let (c, report) = concat_both_captions(&pool("abc"), &pool("bcd")).unwrap();
        assert!(c.is_multiset());
        assert_eq!(c.len(), 6);
        assert_eq!(report.intersection_size, 2);
        assert_eq!(
            summary(&c),
            vec![
                ('a', "raw".into()),
                ('b', "raw".into()),
                ('b', "translated".into()),
                ('c', "raw".into()),
                ('c', "translated".into()),
                ('d', "translated".into())
            ]
        );
    }

    #[test]
    fn concat_with_empty_is_identity() {
        let p = pool("abc");
        let (c, _) = concat_both_captions(&p, &Pool::empty()).unwrap();
        assert!(c.is_multiset());
        assert_eq!(c.records(), p.records());
    }

    #[test]
    fn multiset_inputs_rejected() {
        let (c, _) = concat_both_captions(&pool("ab"), &pool("b")).unwrap();
        assert!(matches!(
            union_prefer_translated(&c, &pool("a")),
            Err(CurateError::MultisetInput)
        ));
        assert!(matches!(
            concat_both_captions(&pool("a"), &c),
            Err(CurateError::MultisetInput)
        ));
    }

    fn scored_pool(n: u32) -> Pool {
        let records = (0..n)
            .map(|i| {
                let mut r = MetadataRecord::new(format!("{i:032x}"), format!("raw {i}"));
                r.language = Some("spa_Latn".into());
                r.translated_caption = Some(format!("translated {i}"));
                r.scores.insert("dfn_raw".into(), ((i * 7919) % n) as f64 / n as f64);
                r.scores.insert("dfn_translated".into(), ((i * 104_729) % n) as f64 / n as f64);
                r
            })
            .collect();
        Pool::from_records(records).unwrap()
    }

    #[test]
    fn recipe_filter_and_concat() {
        let pool = scored_pool(1000);
        let raw = CompositionRecipe::filter("dfn_raw", CaptionField::Raw, 0.2);
        let (out, report) = run_recipe(&raw, &pool).unwrap();
        assert_eq!(out.len(), 200);
        assert!(out.records().iter().all(|r| r.caption_source == CaptionField::Raw));
        assert_eq!(report.selections.len(), 1);
        // Oracle: the selection alone.
        let (direct, _) = select_top(&pool, "dfn_raw", 0.2, None).unwrap();
        assert_eq!(out.records(), direct.records());

        let translated = CompositionRecipe::filter("dfn_translated", CaptionField::Translated, 0.2);
        let (cat, report) = run_recipe(&CompositionRecipe::concat(raw, translated), &pool).unwrap();
        assert_eq!(cat.len(), 400);
        assert_eq!(report.output_size, 400);
        assert_eq!(report.selections.len(), 2);

        let all = CompositionRecipe::filter("dfn_raw", CaptionField::Raw, 1.0);
        assert_eq!(run_recipe(&all, &pool).unwrap().0.records(), pool.records());
    }

    #[test]
    fn recipe_errors_propagate() {
        let pool = scored_pool(10);
        let bad = CompositionRecipe::filter("missing_score", CaptionField::Raw, 0.5);
        assert!(matches!(
            run_recipe(&bad, &pool),
            Err(CurateError::MissingScore { .. })
        ));
        let mut invalid = CompositionRecipe::filter("dfn_raw", CaptionField::Raw, 0.5);
        invalid.mode = RecipeMode::Union;
        assert!(matches!(
            run_recipe(&invalid, &pool),
            Err(CurateError::InvalidRecipe(_))
        ));
    }
}
