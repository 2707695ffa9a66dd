//! Language composition and overlap accounting.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CurateError, Result};
use crate::model::{MetadataRecord, Pool, ENGLISH};

/// Language code used when an intersection record carries no language.
pub const UNKNOWN_LANGUAGE: &str = "und";

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CompositionStats {
    pub total: u64,
    pub english_count: u64,
    pub non_english_count: u64,
    pub per_language_counts: BTreeMap<String, u64>,
}

impl CompositionStats {
    fn merge(mut self, other: CompositionStats) -> CompositionStats {
        self.total += other.total;
        self.english_count += other.english_count;
        self.non_english_count += other.non_english_count;
        for (lang, n) in other.per_language_counts {
            *self.per_language_counts.entry(lang).or_default() += n;
        }
        self
    }

    fn count(record: &MetadataRecord) -> Result<CompositionStats> {
        let lang = record.language().ok_or_else(|| CurateError::MissingLanguage {
            uid: record.uid.clone(),
        })?;
        let english = lang == ENGLISH;
        Ok(CompositionStats {
            total: 1,
            english_count: english as u64,
            non_english_count: !english as u64,
            per_language_counts: BTreeMap::from([(lang.to_string(), 1)]),
        })
    }

    /// Share of each language in percent.
    pub fn shares(&self) -> BTreeMap<String, f64> {
        self.per_language_counts
            .iter()
            .map(|(lang, &n)| (lang.clone(), 100.0 * n as f64 / self.total as f64))
            .collect()
    }

    /// `language,count,share_percent` rows, most frequent first.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut rows: Vec<(&String, &u64)> = self.per_language_counts.iter().collect();
        rows.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["language", "count", "share_percent"])?;
        for (lang, &n) in rows {
            let share = 100.0 * n as f64 / self.total as f64;
            w.write_record([lang.as_str(), &n.to_string(), &format!("{share:.6}")])?;
        }
        w.flush().map_err(|e| CurateError::io("<csv>", e))?;
        Ok(())
    }
}

/// Exact per-language counts. Errors on the first record (by uid) without a
/// language.
pub fn language_composition(pool: &Pool) -> Result<CompositionStats> {
    if let Some(r) = pool.records().iter().find(|r| r.language().is_none()) {
        return Err(CurateError::MissingLanguage { uid: r.uid.clone() });
    }
    pool.records()
        .par_chunks(4096)
        .map(|chunk| {
            chunk
                .iter()
                .map(CompositionStats::count)
                .try_fold(CompositionStats::default(), |acc, s| Ok(acc.merge(s?)))
        })
        .try_reduce(CompositionStats::default, |a, b| Ok(a.merge(b)))
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OverlapStats {
    pub left_size: u64,
    pub right_size: u64,
    pub intersection_count: u64,
    pub per_language_intersection: BTreeMap<String, u64>,
}

impl OverlapStats {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["language", "intersection_count"])?;
        for (lang, n) in &self.per_language_intersection {
            w.write_record([lang.as_str(), &n.to_string()])?;
        }
        w.write_record(["*", &self.intersection_count.to_string()])?;
        w.flush().map_err(|e| CurateError::io("<csv>", e))?;
        Ok(())
    }
}

/// Uid-set intersection of two single-copy pools, with the language
/// breakdown taken from the left pool's records.
pub fn overlap(left: &Pool, right: &Pool) -> Result<OverlapStats> {
    if left.is_multiset() || right.is_multiset() {
        return Err(CurateError::MultisetInput);
    }
    let (a, b) = (left.records(), right.records());
    let (mut i, mut j) = (0, 0);
    let mut stats = OverlapStats {
        left_size: a.len() as u64,
        right_size: b.len() as u64,
        ..Default::default()
    };
    while i < a.len() && j < b.len() {
        match a[i].uid.cmp(&b[j].uid) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                let lang = a[i]
                    .language()
                    .or(b[j].language())
                    .unwrap_or(UNKNOWN_LANGUAGE);
                *stats
                    .per_language_intersection
                    .entry(lang.to_string())
                    .or_default() += 1;
                stats.intersection_count += 1;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(stats)
}

/// Per-language change in share, in percentage points, ordered by absolute
/// change (largest first, ties by language code).
pub fn composition_delta(
    before: &CompositionStats,
    after: &CompositionStats,
) -> Result<Vec<(String, f64)>> {
    if before.total == 0 || after.total == 0 {
        return Err(CurateError::ZeroTotal);
    }
    let (sb, sa) = (before.shares(), after.shares());
    let mut languages: Vec<&String> = sb.keys().chain(sa.keys()).collect();
    languages.sort();
    languages.dedup();
    let mut deltas: Vec<(String, f64)> = languages
        .into_iter()
        .map(|lang| {
            let d = sa.get(lang).copied().unwrap_or(0.0) - sb.get(lang).copied().unwrap_or(0.0);
            (lang.clone(), d)
        })
        .collect();
    deltas.sort_by(|a, b| {
        b.1.abs()
            .partial_cmp(&a.1.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    Ok(deltas)
}

pub fn write_delta_csv<W: Write>(deltas: &[(String, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["language", "delta_percentage_points"])?;
    for (lang, d) in deltas {
        w.write_record([lang.as_str(), &format!("{d:.6}")])?;
    }
    w.flush().map_err(|e| CurateError::io("<csv>", e))?;
    Ok(())
}
