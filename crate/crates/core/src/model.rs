//! Domain types shared by every stage of the pipeline.
//!
//! A [`MetadataRecord`] is one image-text sample. Records never carry image
//! bytes; embeddings live in sidecar matrices and are referenced by row.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CurateError, Result};

/// FLORES-200 code of English written in Latin script.
pub const ENGLISH: &str = "eng_Latn";

pub const UID_LEN: usize = 32;

/// True when `uid` is exactly 32 lowercase hexadecimal characters.
pub fn is_canonical_uid(uid: &str) -> bool {
    uid.len() == UID_LEN && uid.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

/// Lowercases a uid read from external metadata.
pub fn normalize_uid(uid: &str) -> String {
    uid.to_ascii_lowercase()
}

/// Which caption a record carries into training.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum CaptionField {
    #[default]
    Raw,
    Translated,
    /// A replacement column stored in `extra_captions` (e.g. synthetic captions).
    Named(String),
}

impl CaptionField {
    pub fn parse(s: &str) -> Self {
        match s {
            "raw" => CaptionField::Raw,
            "translated" => CaptionField::Translated,
            other => CaptionField::Named(other.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            CaptionField::Raw => "raw",
            CaptionField::Translated => "translated",
            CaptionField::Named(name) => name,
        }
    }

    pub fn is_raw(&self) -> bool {
        matches!(self, CaptionField::Raw)
    }

    /// Histogram bucket used by composition reports.
    pub fn bucket(&self) -> &'static str {
        match self {
            CaptionField::Raw => "raw",
            CaptionField::Translated => "translated",
            CaptionField::Named(_) => "replacement",
        }
    }
}

impl fmt::Display for CaptionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for CaptionField {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CaptionField {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(CaptionField::parse(&s))
    }
}

/// One image-text sample.
///
/// Serialized as a single JSON line; field order here is the on-disk key order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub uid: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(rename = "text")]
    pub raw_caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<String>,
    #[serde(
        rename = "translated_text",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub translated_caption: Option<String>,
    #[serde(
        rename = "backtranslated_text",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub backtranslated_caption: Option<String>,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub embedding_refs: BTreeMap<String, u64>,
    /// Replacement caption columns addressed by [`CaptionField::Named`].
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra_captions: BTreeMap<String, String>,
    /// The caption this record trains with; raw unless replaced.
    #[serde(default, skip_serializing_if = "CaptionField::is_raw")]
    pub caption_source: CaptionField,
}

impl MetadataRecord {
    pub fn new(uid: impl Into<String>, raw_caption: impl Into<String>) -> Self {
        MetadataRecord {
            uid: uid.into(),
            url: None,
            raw_caption: raw_caption.into(),
            language: None,
            translated_caption: None,
            backtranslated_caption: None,
            scores: BTreeMap::new(),
            embedding_refs: BTreeMap::new(),
            extra_captions: BTreeMap::new(),
            caption_source: CaptionField::Raw,
        }
    }

    pub fn caption(&self, field: &CaptionField) -> Option<&str> {
        match field {
            CaptionField::Raw => Some(self.raw_caption.as_str()),
            CaptionField::Translated => self.translated_caption.as_deref(),
            CaptionField::Named(name) => self.extra_captions.get(name).map(String::as_str),
        }
    }

    /// The caption used for training.
    pub fn active_caption(&self) -> Option<&str> {
        self.caption(&self.caption_source)
    }

    /// Language code, treating the empty string as absent.
    pub fn language(&self) -> Option<&str> {
        self.language.as_deref().filter(|l| !l.is_empty())
    }

    pub fn score(&self, name: &str) -> Result<f64> {
        self.scores
            .get(name)
            .copied()
            .ok_or_else(|| CurateError::MissingScore {
                uid: self.uid.clone(),
                score: name.to_string(),
            })
    }
}

/// Total order of records inside a pool: uid ascending, then raw-caption copy
/// before translated copy before replacement copies.
pub fn record_order(a: &MetadataRecord, b: &MetadataRecord) -> Ordering {
    a.uid
        .cmp(&b.uid)
        .then_with(|| a.caption_source.cmp(&b.caption_source))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    UidPattern,
    ScoreOutOfRange,
    ScoreNonFinite,
    LanguageMissing,
    EmbeddingRefOutOfBounds { rows: usize },
    UnknownEmbeddingSpace,
    ActiveCaptionMissing,
}

/// A violated record invariant, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub kind: ViolationKind,
}

impl Violation {
    fn new(field: impl Into<String>, kind: ViolationKind) -> Self {
        Violation {
            field: field.into(),
            kind,
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ViolationKind::UidPattern => write!(f, "{}: uid pattern", self.field),
            ViolationKind::ScoreOutOfRange => {
                write!(f, "{}: scores out of [-1,1]", self.field)
            }
            ViolationKind::ScoreNonFinite => write!(f, "{}: score not finite", self.field),
            ViolationKind::LanguageMissing => {
                write!(f, "{}: language required with translated caption", self.field)
            }
            ViolationKind::EmbeddingRefOutOfBounds { rows } => {
                write!(f, "{}: row out of bounds ({rows} rows)", self.field)
            }
            ViolationKind::UnknownEmbeddingSpace => {
                write!(f, "{}: no sidecar for embedding space", self.field)
            }
            ViolationKind::ActiveCaptionMissing => {
                write!(f, "{}: active caption field is empty", self.field)
            }
        }
    }
}

/// Checks every record invariant that does not need sidecar shapes.
pub fn validate_record(record: &MetadataRecord) -> std::result::Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    collect_violations(record, &mut violations);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Like [`validate_record`], additionally resolving embedding refs against
/// sidecar row counts keyed by space name. Refs to spaces absent from
/// `sidecar_rows` are reported only when `strict` is set.
pub fn validate_record_against(
    record: &MetadataRecord,
    sidecar_rows: &BTreeMap<String, usize>,
    strict: bool,
) -> std::result::Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    collect_violations(record, &mut violations);
    for (space, &row) in &record.embedding_refs {
        let field = format!("embedding_refs.{space}");
        match sidecar_rows.get(space) {
            Some(&rows) if row >= rows as u64 => violations.push(Violation::new(
                field,
                ViolationKind::EmbeddingRefOutOfBounds { rows },
            )),
            Some(_) => {}
            None if strict => {
                violations.push(Violation::new(field, ViolationKind::UnknownEmbeddingSpace))
            }
            None => {}
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

fn collect_violations(record: &MetadataRecord, out: &mut Vec<Violation>) {
    if !is_canonical_uid(&record.uid) {
        out.push(Violation::new("uid", ViolationKind::UidPattern));
    }
    for (name, &value) in &record.scores {
        let field = format!("scores.{name}");
        if !value.is_finite() {
            out.push(Violation::new(field, ViolationKind::ScoreNonFinite));
        } else if !(-1.0..=1.0).contains(&value) {
            out.push(Violation::new(field, ViolationKind::ScoreOutOfRange));
        }
    }
    if record.translated_caption.is_some() && record.language().is_none() {
        out.push(Violation::new("language", ViolationKind::LanguageMissing));
    }
    if record.active_caption().is_none() {
        out.push(Violation::new(
            "caption_source",
            ViolationKind::ActiveCaptionMissing,
        ));
    }
}

/// An ordered collection of records.
///
/// Records are held sorted by [`record_order`]. Shard layout is a storage
/// concern and lives in the on-disk manifest.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pool {
    records: Vec<MetadataRecord>,
    multiset: bool,
    pub provenance: Vec<String>,
}

impl Pool {
    /// Builds a single-copy pool, sorting by uid and rejecting duplicates.
    pub fn from_records(records: Vec<MetadataRecord>) -> Result<Self> {
        Self::build(records, false)
    }

    /// Builds a multiset pool where a uid may appear at most twice.
    pub fn multiset_from_records(records: Vec<MetadataRecord>) -> Result<Self> {
        Self::build(records, true)
    }

    fn build(mut records: Vec<MetadataRecord>, multiset: bool) -> Result<Self> {
        records.sort_by(record_order);
        let pool = Pool {
            records,
            multiset,
            provenance: Vec::new(),
        };
        pool.check_multiplicity()?;
        Ok(pool)
    }

    pub fn empty() -> Self {
        Pool::default()
    }

    pub fn with_provenance(mut self, note: impl Into<String>) -> Self {
        self.provenance.push(note.into());
        self
    }

    pub fn records(&self) -> &[MetadataRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<MetadataRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_multiset(&self) -> bool {
        self.multiset
    }

    /// Checks sort order and uid multiplicity.
    pub fn check_invariants(&self) -> Result<()> {
        if let Some(w) = self
            .records
            .windows(2)
            .find(|w| record_order(&w[0], &w[1]) == Ordering::Greater)
        {
            return Err(CurateError::PoolInvariant(format!(
                "records out of order at uid {}",
                w[1].uid
            )));
        }
        self.check_multiplicity()
    }

    fn check_multiplicity(&self) -> Result<()> {
        let cap = if self.multiset { 2 } else { 1 };
        let mut run = 0usize;
        for (i, record) in self.records.iter().enumerate() {
            if i > 0 && self.records[i - 1].uid == record.uid {
                run += 1;
                if self.multiset && self.records[i - 1].caption_source == record.caption_source {
                    return Err(CurateError::PoolInvariant(format!(
                        "uid {} repeated with the same caption source",
                        record.uid
                    )));
                }
            } else {
                run = 1;
            }
            if run > cap {
                return Err(CurateError::PoolInvariant(format!(
                    "uid {} appears {} times (limit {cap})",
                    record.uid, run
                )));
            }
        }
        Ok(())
    }

    /// Validates every record, returning the first failure.
    pub fn validate(&self) -> Result<()> {
        for record in &self.records {
            validate_record(record).map_err(|violations| CurateError::InvalidRecord {
                uid: record.uid.clone(),
                violations,
            })?;
        }
        Ok(())
    }
}

/// How a recipe node combines its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecipeMode {
    Filter,
    ReplaceCaption,
    Union,
    Concat,
}

/// Declarative description of a baseline subset, serialized as a JSON tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRecipe {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub mode: RecipeMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption_field: Option<CaptionField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_restriction: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub operands: Vec<CompositionRecipe>,
}

impl CompositionRecipe {
    pub fn filter(score_name: &str, caption_field: CaptionField, fraction: f64) -> Self {
        CompositionRecipe {
            name: None,
            mode: RecipeMode::Filter,
            score_name: Some(score_name.to_string()),
            caption_field: Some(caption_field),
            fraction: Some(fraction),
            language_restriction: None,
            operands: Vec::new(),
        }
    }

    pub fn with_language(mut self, language: &str) -> Self {
        self.language_restriction = Some(language.to_string());
        self
    }

    pub fn replace_caption(operand: CompositionRecipe, caption_field: CaptionField) -> Self {
        CompositionRecipe {
            name: None,
            mode: RecipeMode::ReplaceCaption,
            score_name: None,
            caption_field: Some(caption_field),
            fraction: None,
            language_restriction: None,
            operands: vec![operand],
        }
    }

    pub fn union(raw: CompositionRecipe, translated: CompositionRecipe) -> Self {
        Self::binary(RecipeMode::Union, raw, translated)
    }

    pub fn concat(raw: CompositionRecipe, translated: CompositionRecipe) -> Self {
        Self::binary(RecipeMode::Concat, raw, translated)
    }

    fn binary(mode: RecipeMode, left: CompositionRecipe, right: CompositionRecipe) -> Self {
        CompositionRecipe {
            name: None,
            mode,
            score_name: None,
            caption_field: None,
            fraction: None,
            language_restriction: None,
            operands: vec![left, right],
        }
    }

    /// Checks the structural invariants of this node and all descendants.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CurateError::InvalidRecipe(msg));
        match self.mode {
            RecipeMode::Filter => {
                if self.score_name.as_deref().map_or(true, str::is_empty) {
                    return bad("filter requires score_name".into());
                }
                match self.fraction {
                    None => return bad("filter requires fraction".into()),
                    Some(x) if !(x > 0.0 && x <= 1.0) => {
                        return bad(format!("fraction {x} outside (0, 1]"))
                    }
                    Some(_) => {}
                }
                if self.operands.len() > 1 {
                    return bad("filter takes at most one operand".into());
                }
            }
            RecipeMode::ReplaceCaption => {
                if self.operands.len() != 1 {
                    return bad("replace-caption requires exactly one operand".into());
                }
                if self.caption_field.is_none() {
                    return bad("replace-caption requires caption_field".into());
                }
            }
            RecipeMode::Union | RecipeMode::Concat => {
                if self.operands.len() != 2 {
                    return bad(format!("{:?} requires exactly two operands", self.mode));
                }
            }
        }
        self.operands.iter().try_for_each(CompositionRecipe::validate)
    }
}
