//! Exact top-x% selection over a named score.
//!
//! Candidates are ranked by score descending, then uid ascending (then caption
//! source for the two copies in a multiset pool). The kept set is always the
//! first `round_half_up(x * N)` ranks, so it is exact, deterministic, and
//! nested across fractions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CurateError, Result};
use crate::model::{CaptionField, MetadataRecord, Pool};
use crate::shard_io::PoolReader;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub fraction: f64,
    pub score_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_restriction: Option<String>,
    /// Score of the last kept record; `None` when nothing is kept.
    pub threshold: Option<f64>,
    pub kept_count: usize,
    pub input_count: usize,
    /// Candidates (kept or not) whose score equals the threshold.
    pub tie_count_at_threshold: usize,
}

/// `round_half_up(fraction * n)`.
///
/// The product is nudged by a few ulps before flooring so that decimal
/// fractions such as 0.15 × 10 land on the intended half.
pub fn target_count(fraction: f64, n: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CurateError::InvalidFraction(fraction));
    }
    let exact = fraction * n as f64;
    let slack = exact.abs() * 4.0 * f64::EPSILON;
    Ok(((exact + 0.5 + slack).floor() as usize).min(n))
}

/// Position of a candidate in the ranking. Smaller is better.
#[derive(Debug, Clone, PartialEq)]
struct RankKey {
    score: f64,
    uid: String,
    source: CaptionField,
}

impl RankKey {
    fn of(record: &MetadataRecord, score_name: &str) -> Result<Self> {
        Ok(RankKey {
            score: record.score(score_name)?,
            uid: record.uid.clone(),
            source: record.caption_source.clone(),
        })
    }
}

impl Eq for RankKey {}

impl Ord for RankKey {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .partial_cmp(&self.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| self.uid.cmp(&other.uid))
            .then_with(|| self.source.cmp(&other.source))
    }
}

impl PartialOrd for RankKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn rank_cmp(a: (f64, &MetadataRecord), b: (f64, &MetadataRecord)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.1.uid.cmp(&b.1.uid))
        .then_with(|| a.1.caption_source.cmp(&b.1.caption_source))
}

fn matches_language(record: &MetadataRecord, language: Option<&str>) -> bool {
    language.map_or(true, |lang| record.language() == Some(lang))
}

fn provenance_note(score_name: &str, fraction: f64, language: Option<&str>) -> String {
    match language {
        Some(lang) => format!("select_top {score_name} {fraction} language={lang}"),
        None => format!("select_top {score_name} {fraction}"),
    }
}

/// Scores of the candidates in pool order, failing on the first record
/// (by uid) that lacks the score.
fn candidate_scores<'p>(
    pool: &'p Pool,
    score_name: &str,
    language: Option<&str>,
) -> Result<Vec<(f64, usize)>> {
    pool.records()
        .iter()
        .enumerate()
        .filter(|(_, r)| matches_language(r, language))
        .map(|(i, r)| Ok((r.score(score_name)?, i)))
        .collect()
}

/// Keeps the top `fraction` of candidates by `score_name`.
pub fn select_top(
    pool: &Pool,
    score_name: &str,
    fraction: f64,
    language: Option<&str>,
) -> Result<(Pool, SelectionReport)> {
    let mut candidates = candidate_scores(pool, score_name, language)?;
    if candidates.is_empty() {
        return Err(CurateError::EmptyCandidates);
    }
    let input_count = candidates.len();
    let target = target_count(fraction, input_count)?;
    let records = pool.records();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        rank_cmp((a.0, &records[a.1]), (b.0, &records[b.1]))
    };

    let threshold = if target == 0 {
        None
    } else {
        let (_, nth, _) = candidates.select_nth_unstable_by(target - 1, cmp);
        Some(nth.0)
    };
    let tie_count_at_threshold = threshold.map_or(0, |t| {
        candidates.iter().filter(|(s, _)| *s == t).count()
    });

    let mut kept: Vec<usize> = candidates[..target].iter().map(|&(_, i)| i).collect();
    kept.sort_unstable();
    let selected: Vec<MetadataRecord> = kept.into_iter().map(|i| records[i].clone()).collect();

    let mut out = rebuild(pool, selected)?;
    out.provenance
        .push(provenance_note(score_name, fraction, language));
    let report = SelectionReport {
        fraction,
        score_name: score_name.to_string(),
        language_restriction: language.map(str::to_string),
        threshold,
        kept_count: target,
        input_count,
        tie_count_at_threshold,
    };
    Ok((out, report))
}

fn rebuild(like: &Pool, records: Vec<MetadataRecord>) -> Result<Pool> {
    let mut out = if like.is_multiset() {
        Pool::multiset_from_records(records)?
    } else {
        Pool::from_records(records)?
    };
    out.provenance = like.provenance.clone();
    Ok(out)
}

/// Score of the `target`-th ranked candidate: the cut value of
/// [`select_top`] at the same fraction.
pub fn threshold_of(pool: &Pool, score_name: &str, fraction: f64) -> Result<f64> {
    let mut candidates = candidate_scores(pool, score_name, None)?;
    if candidates.is_empty() {
        return Err(CurateError::EmptyCandidates);
    }
    let target = target_count(fraction, candidates.len())?;
    if target == 0 {
        return Err(CurateError::EmptyInput(format!(
            "fraction {fraction} keeps no records out of {}",
            candidates.len()
        )));
    }
    let records = pool.records();
    let (_, nth, _) = candidates.select_nth_unstable_by(target - 1, |a, b| {
        rank_cmp((a.0, &records[a.1]), (b.0, &records[b.1]))
    });
    Ok(nth.0)
}

/// Keeps the best `limit` keys; the heap top is the worst key retained.
fn bounded_top(keys: impl Iterator<Item = RankKey>, limit: usize) -> Vec<RankKey> {
    let mut heap = BinaryHeap::with_capacity(limit + 1);
    if limit == 0 {
        return Vec::new();
    }
    for key in keys {
        if heap.len() < limit {
            heap.push(key);
        } else if key < *heap.peek().unwrap() {
            heap.pop();
            heap.push(key);
        }
    }
    heap.into_vec()
}

struct ShardPass {
    candidates: usize,
    top: Vec<RankKey>,
}

/// Two-pass exact selection over a sharded pool on disk.
///
/// Pass one streams `(score, uid)` keys shard by shard into bounded top-k
/// heaps whose union is merged to find the cut key; pass two re-reads each
/// shard and keeps records ranked at or above the cut. Peak memory is the
/// kept set plus one shard per worker.
pub fn select_top_streaming(
    reader: &PoolReader,
    score_name: &str,
    fraction: f64,
    language: Option<&str>,
) -> Result<(Pool, SelectionReport)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CurateError::InvalidFraction(fraction));
    }
    let shards = reader.shard_count();
    // Candidates never outnumber records, so this bounds the final target.
    let per_shard_limit = target_count(fraction, reader.manifest().record_count as usize)?;
    let passes: Vec<Result<ShardPass>> = (0..shards)
        .into_par_iter()
        .map(|i| {
            let (records, _) = reader.read_shard(i)?;
            let keys: Vec<RankKey> = records
                .iter()
                .filter(|r| matches_language(r, language))
                .map(|r| RankKey::of(r, score_name))
                .collect::<Result<_>>()?;
            let candidates = keys.len();
            let top = bounded_top(keys.into_iter(), per_shard_limit);
            info!("selection pass 1: shard {}/{} ({candidates} candidates)", i + 1, shards);
            Ok(ShardPass { candidates, top })
        })
        .collect();
    let passes: Vec<ShardPass> = passes.into_iter().collect::<Result<_>>()?;

    let input_count: usize = passes.iter().map(|p| p.candidates).sum();
    if input_count == 0 {
        return Err(CurateError::EmptyCandidates);
    }
    let target = target_count(fraction, input_count)?;
    let mut merged = bounded_top(passes.into_iter().flat_map(|p| p.top), target);
    merged.sort_unstable();
    let cut = merged.last().cloned();
    drop(merged);
    let threshold = cut.as_ref().map(|k| k.score);

    // Pass 2: keep ranks at or above the cut, and count ties at the threshold.
    let kept: Vec<(Vec<MetadataRecord>, usize)> = match &cut {
        None => Vec::new(),
        Some(cut) => (0..shards)
            .into_par_iter()
            .map(|i| {
                let (records, _) = reader.read_shard(i)?;
                let mut kept = Vec::new();
                let mut ties = 0;
                for r in records {
                    if !matches_language(&r, language) {
                        continue;
                    }
                    let key = RankKey::of(&r, score_name)?;
                    if key.score == cut.score {
                        ties += 1;
                    }
                    if key <= *cut {
                        kept.push(r);
                    }
                }
                Ok((kept, ties))
            })
            .collect::<Vec<Result<_>>>()
            .into_iter()
            .collect::<Result<_>>()?,
    };
    let tie_count_at_threshold = kept.iter().map(|(_, t)| t).sum();
    let selected: Vec<MetadataRecord> = kept.into_iter().flat_map(|(k, _)| k).collect();
    debug_assert_eq!(selected.len(), target);

    let manifest = reader.manifest();
    let mut out = if manifest.multiset {
        Pool::multiset_from_records(selected)?
    } else {
        Pool::from_records(selected)?
    };
    out.provenance = manifest.provenance.clone();
    out.provenance
        .push(provenance_note(score_name, fraction, language));
    let report = SelectionReport {
        fraction,
        score_name: score_name.to_string(),
        language_restriction: language.map(str::to_string),
        threshold,
        kept_count: target,
        input_count,
        tie_count_at_threshold,
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ENGLISH;
    use crate::shard_io::{write_pool_with, WriteOptions};
    use proptest::prelude::*;

    fn uid(n: u32) -> String {
        format!("{n:032x}")
    }

    fn pool_of(scores: &[f64]) -> Pool {
        let records = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let mut r = MetadataRecord::new(uid(i as u32 + 1), "c");
                r.scores.insert("s".into(), s);
                r
            })
            .collect();
        Pool::from_records(records).unwrap()
    }

    /// Full-sort oracle: sort by (score desc, uid asc) and take the prefix.
    fn oracle(pool: &Pool, fraction: f64) -> Vec<String> {
        let mut all: Vec<&MetadataRecord> = pool.records().iter().collect();
        all.sort_by(|a, b| {
            b.scores["s"]
                .partial_cmp(&a.scores["s"])
                .unwrap()
                .then(a.uid.cmp(&b.uid))
        });
        let n = target_count(fraction, all.len()).unwrap();
        let mut uids: Vec<String> = all[..n].iter().map(|r| r.uid.clone()).collect();
        uids.sort();
        uids
    }

    fn uids(pool: &Pool) -> Vec<String> {
        pool.records().iter().map(|r| r.uid.clone()).collect()
    }

    #[test]
    fn target_rounding() {
        assert_eq!(target_count(0.2, 128_000_000).unwrap(), 25_600_000);
        assert_eq!(target_count(0.5, 5).unwrap(), 3);
        assert_eq!(target_count(0.15, 10).unwrap(), 2);
        assert_eq!(target_count(0.3, 10).unwrap(), 3);
        assert_eq!(target_count(1.0, 7).unwrap(), 7);
        assert_eq!(target_count(0.01, 10).unwrap(), 0);
        assert!(target_count(0.0, 10).is_err());
        assert!(target_count(1.5, 10).is_err());
        assert!(target_count(f64::NAN, 10).is_err());
    }

    #[test]
    fn top_two_of_ten() {
        let scores: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let pool = pool_of(&scores);
        let (out, report) = select_top(&pool, "s", 0.2, None).unwrap();
        assert_eq!(uids(&out), vec![uid(9), uid(10)]);
        assert_eq!(uids(&out), oracle(&pool, 0.2));
        assert_eq!(report.threshold, Some(0.9));
        assert_eq!(report.kept_count, 2);
        assert_eq!(report.input_count, 10);
        assert_eq!(threshold_of(&pool, "s", 0.2).unwrap(), 0.9);
        assert_eq!(threshold_of(&pool, "s", 1.0).unwrap(), 0.1);
    }

    #[test]
    fn keep_all() {
        let pool = pool_of(&[0.3, -0.2, 0.9]);
        let (out, _) = select_top(&pool, "s", 1.0, None).unwrap();
        assert_eq!(out.records(), pool.records());
    }

    #[test]
    fn ties_break_by_uid() {
        let pool = pool_of(&[0.5; 4]);
        let (out, report) = select_top(&pool, "s", 0.5, None).unwrap();
        assert_eq!(uids(&out), vec![uid(1), uid(2)]);
        assert_eq!(report.tie_count_at_threshold, 4);
        assert_eq!(threshold_of(&pool, "s", 0.3).unwrap(), 0.5);
    }

    #[test]
    fn missing_score_names_uid() {
        let mut records = pool_of(&[0.1, 0.2, 0.3]).into_records();
        records[1].scores.clear();
        let pool = Pool::from_records(records).unwrap();
        match select_top(&pool, "s", 0.5, None).unwrap_err() {
            CurateError::MissingScore { uid: u, .. } => assert_eq!(u, uid(2)),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn empty_candidates() {
        assert!(matches!(
            select_top(&Pool::empty(), "s", 0.5, None),
            Err(CurateError::EmptyCandidates)
        ));
        let pool = pool_of(&[0.1]);
        assert!(matches!(
            select_top(&pool, "s", 0.5, Some(ENGLISH)),
            Err(CurateError::EmptyCandidates)
        ));
    }

    #[test]
    fn language_restriction_equals_prefilter() {
        let mut records = pool_of(&[0.9, 0.8, 0.7, 0.6, 0.5, 0.4]).into_records();
        for (i, r) in records.iter_mut().enumerate() {
            r.language = Some(if i % 2 == 0 { ENGLISH } else { "deu_Latn" }.into());
        }
        let pool = Pool::from_records(records.clone()).unwrap();
        let english = Pool::from_records(
            records
                .into_iter()
                .filter(|r| r.language.as_deref() == Some(ENGLISH))
                .collect(),
        )
        .unwrap();
        let (a, ra) = select_top(&pool, "s", 0.5, Some(ENGLISH)).unwrap();
        let (b, rb) = select_top(&english, "s", 0.5, None).unwrap();
        assert_eq!(a.records(), b.records());
        assert_eq!(ra.input_count, 3);
        assert_eq!(ra.kept_count, rb.kept_count);
    }

    #[test]
    fn streaming_matches_in_memory() {
        let dir = tempfile::tempdir().unwrap();
        let scores: Vec<f64> = (0..1000).map(|i| ((i * 37) % 101) as f64 / 101.0).collect();
        let pool = pool_of(&scores);
        write_pool_with(&pool, dir.path(), WriteOptions { shard_size: 64 }).unwrap();
        let reader = PoolReader::open(dir.path()).unwrap();
        for &x in &[0.05, 0.2, 0.333, 0.5, 1.0] {
            let (a, ra) = select_top(&pool, "s", x, None).unwrap();
            let (b, rb) = select_top_streaming(&reader, "s", x, None).unwrap();
            assert_eq!(a.records(), b.records());
            assert_eq!(ra, rb);
        }
    }

    fn scores_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop_oneof![
            prop::collection::vec((-4i32..=4).prop_map(|k| k as f64 / 4.0), 1..300),
            prop::collection::vec(-1.0f64..=1.0, 1..300),
        ]
    }

    proptest! {
        #[test]
        fn matches_oracle(scores in scores_strategy(), x in 0.01f64..=1.0) {
            let pool = pool_of(&scores);
            let (out, report) = select_top(&pool, "s", x, None).unwrap();
            prop_assert_eq!(uids(&out), oracle(&pool, x));
            prop_assert_eq!(report.kept_count, out.len());
        }

        #[test]
        fn nested_across_fractions(scores in scores_strategy(), x in 0.01f64..=1.0, y in 0.01f64..=1.0) {
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            let pool = pool_of(&scores);
            let small = uids(&select_top(&pool, "s", lo, None).unwrap().0);
            let large = uids(&select_top(&pool, "s", hi, None).unwrap().0);
            prop_assert!(small.iter().all(|u| large.binary_search(u).is_ok()));
        }
    }
}
