use std::collections::BTreeMap;

use proptest::prelude::*;

use curate::embedding::EmbeddingMatrix;
use curate::model::{
    validate_record, validate_record_against, CaptionField, MetadataRecord, Pool, ViolationKind,
};
use curate::shard_io::{read_pool, read_sidecar, write_embeddings, write_pool_with, WriteOptions};

fn uid() -> impl Strategy<Value = String> {
    "[0-9a-f]{32}"
}

fn score_map() -> impl Strategy<Value = BTreeMap<String, f64>> {
    prop::collection::btree_map("[a-z_]{1,12}", -1.0f64..=1.0, 0..4)
}

prop_compose! {
    fn valid_record()(
        uid in uid(),
        url in prop::option::of("https://[a-z]{1,10}\\.org/[a-z0-9]{0,8}"),
        raw in "\\PC{0,40}",
        translated in prop::option::of("\\PC{0,40}"),
        backtranslated in prop::option::of("\\PC{0,20}"),
        lang in prop::option::of("[a-z]{3}_[A-Z][a-z]{3}"),
        scores in score_map(),
        refs in prop::collection::btree_map("[a-z_]{1,10}", 0u64..1_000_000, 0..3),
    ) -> MetadataRecord {
        let mut r = MetadataRecord::new(uid, raw);
        r.url = url;
        r.language = match (&translated, lang) {
            (Some(_), None) => Some("fra_Latn".into()),
            (_, l) => l,
        };
        r.translated_caption = translated;
        r.backtranslated_caption = backtranslated;
        r.scores = scores;
        r.embedding_refs = refs;
        r
    }
}

#[derive(Debug, Clone, Copy)]
enum Injection {
    ShortUid,
    NonHexUid,
    ScoreAbove,
    ScoreBelow,
    ScoreNan,
    ScoreInfinite,
    LanguageMissing,
    ActiveCaptionMissing,
}

fn inject(mut r: MetadataRecord, which: Injection, magnitude: f64) -> (MetadataRecord, &'static str, ViolationKind) {
    use Injection::*;
    let score_field = "scores.injected";
    match which {
        ShortUid => {
            r.uid.pop();
            (r, "uid", ViolationKind::UidPattern)
        }
        NonHexUid => {
            r.uid.replace_range(5..6, "g");
            (r, "uid", ViolationKind::UidPattern)
        }
        ScoreAbove => {
            r.scores.insert("injected".into(), 1.0 + magnitude);
            (r, score_field, ViolationKind::ScoreOutOfRange)
        }
        ScoreBelow => {
            r.scores.insert("injected".into(), -1.0 - magnitude);
            (r, score_field, ViolationKind::ScoreOutOfRange)
        }
        ScoreNan => {
            r.scores.insert("injected".into(), f64::NAN);
            (r, score_field, ViolationKind::ScoreNonFinite)
        }
        ScoreInfinite => {
            r.scores.insert("injected".into(), f64::NEG_INFINITY);
            (r, score_field, ViolationKind::ScoreNonFinite)
        }
        LanguageMissing => {
            r.translated_caption.get_or_insert_with(|| "x".into());
            r.language = None;
            (r, "language", ViolationKind::LanguageMissing)
        }
        ActiveCaptionMissing => {
            r.caption_source = CaptionField::Named("absent_column".into());
            (r, "caption_source", ViolationKind::ActiveCaptionMissing)
        }
    }
}

fn injection() -> impl Strategy<Value = Injection> {
    use Injection::*;
    prop_oneof![
        Just(ShortUid),
        Just(NonHexUid),
        Just(ScoreAbove),
        Just(ScoreBelow),
        Just(ScoreNan),
        Just(ScoreInfinite),
        Just(LanguageMissing),
        Just(ActiveCaptionMissing),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn valid_records_pass(r in valid_record()) {
        prop_assert_eq!(validate_record(&r), Ok(()));
    }

    #[test]
    fn single_injected_violation_is_named(r in valid_record(), which in injection(), magnitude in 1e-9f64..1e6) {
        let (bad, field, kind) = inject(r, which, magnitude);
        let violations = validate_record(&bad).unwrap_err();
        prop_assert_eq!(violations.len(), 1, "{:?}", violations);
        prop_assert_eq!(violations[0].field.as_str(), field);
        prop_assert_eq!(&violations[0].kind, &kind);
    }

    #[test]
    fn out_of_bounds_reference_is_named(r in valid_record(), extra in 0u64..10) {
        let mut r = r;
        r.embedding_refs.clear();
        r.embedding_refs.insert("image".into(), 100 + extra);
        let rows = BTreeMap::from([("image".to_string(), 100usize)]);
        let v = validate_record_against(&r, &rows, true).unwrap_err();
        prop_assert_eq!(v.len(), 1);
        prop_assert_eq!(v[0].field.as_str(), "embedding_refs.image");
        prop_assert_eq!(&v[0].kind, &ViolationKind::EmbeddingRefOutOfBounds { rows: 100 });
    }
}

fn distinct(records: Vec<MetadataRecord>) -> Vec<MetadataRecord> {
    let mut seen = std::collections::BTreeSet::new();
    records.into_iter().filter(|r| seen.insert(r.uid.clone())).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pools_reserialize_byte_identically(
        records in prop::collection::vec(valid_record(), 0..120),
        shard_size in 1usize..40,
        doubled in prop::collection::vec(any::<bool>(), 120),
    ) {
        let records = distinct(records);
        let mut all = records.clone();
        for (r, &twice) in records.iter().zip(&doubled) {
            if twice && r.translated_caption.is_some() {
                let mut copy = r.clone();
                copy.caption_source = CaptionField::Translated;
                all.push(copy);
            }
        }
        let multiset = all.len() > records.len();
        let pool = if multiset { Pool::multiset_from_records(all) } else { Pool::from_records(all) }.unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        let opts = WriteOptions { shard_size };
        write_pool_with(&pool, &a, opts).unwrap();
        let back = read_pool(&a).unwrap();
        prop_assert_eq!(&back, &pool);
        write_pool_with(&back, &b, opts).unwrap();
        let names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
        for name in names {
            prop_assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
        }
    }

    #[test]
    fn sidecars_round_trip(
        dim in 1usize..12,
        rows in prop::collection::vec(prop::collection::vec(-1e30f32..1e30, 12), 0..40),
        indexed in any::<bool>(),
        name in "[a-z_]{1,16}",
    ) {
        let data: Vec<f32> = rows.iter().flat_map(|r| r[..dim].iter().copied()).collect();
        let mut m = EmbeddingMatrix::new(name, dim, data).unwrap();
        if indexed {
            let index = (0..m.rows()).map(|i| (format!("{:032x}", i * 7919), m.rows() - 1 - i)).collect();
            m = m.with_index(index).unwrap();
        }
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.emb");
        write_embeddings(&m, &path).unwrap();
        let back = read_sidecar(&path).unwrap();
        prop_assert_eq!(back.space_name.as_str(), m.space_name.as_str());
        prop_assert_eq!(&back.index, &m.index);
        let bits = |x: &EmbeddingMatrix| x.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&m));
    }
}
