//! Deterministic synthetic pools and embedding sets for tests and demos.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::analysis::backtrans::PairManifest;
use crate::embedding::EmbeddingMatrix;
use crate::error::{CurateError, Result};
use crate::model::{MetadataRecord, Pool, ENGLISH};
use crate::shard_io::{write_embeddings, write_pool_with, WriteOptions};

pub const IMAGE_SPACE: &str = "image_dfn";
pub const RAW_TEXT_SPACE: &str = "text_dfn_raw";
pub const TRANSLATED_TEXT_SPACE: &str = "text_dfn_translated";
pub const SENTENCE_ORIGINAL: &str = "sentence_original";
pub const SENTENCE_BACKTRANSLATED: &str = "sentence_backtranslated";
pub const PAIRS_FILE: &str = "backtrans_pairs.json";
pub const FIXTURE_SHARD_SIZE: usize = 250;

/// Non-English languages with relative weights; English takes about a third.
const OTHER_LANGUAGES: [(&str, u32); 8] = [
    ("deu_Latn", 6),
    ("fra_Latn", 5),
    ("spa_Latn", 5),
    ("rus_Cyrl", 4),
    ("jpn_Jpan", 3),
    ("zho_Hans", 3),
    ("tur_Latn", 2),
    ("krc_Cyrl", 1),
];
const ENGLISH_SHARE: f64 = 0.34;

pub struct SyntheticFixture {
    pub pool: Pool,
    pub image: EmbeddingMatrix,
    pub raw_text: EmbeddingMatrix,
    pub translated_text: EmbeddingMatrix,
    pub sentence_original: EmbeddingMatrix,
    pub sentence_backtranslated: EmbeddingMatrix,
    /// Language of each sentence-pair row.
    pub pair_languages: Vec<String>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn blend(base: &[f32], noise: &[f32], weight: f32) -> Vec<f32> {
    base.iter().zip(noise).map(|(b, n)| b + weight * n).collect()
}

fn pick_language(rng: &mut ChaCha8Rng) -> &'static str {
    if rng.gen_bool(ENGLISH_SHARE) {
        return ENGLISH;
    }
    let total: u32 = OTHER_LANGUAGES.iter().map(|(_, w)| w).sum();
    let mut t = rng.gen_range(0..total);
    for (lang, w) in OTHER_LANGUAGES {
        if t < w {
            return lang;
        }
        t -= w;
    }
    unreachable!()
}

/// Pool of `n` records plus paired sidecars of width `dim`.
///
/// Raw-text embeddings of non-English records are noisier than their
/// translated counterparts, so translation raises their scores. Row `i` of
/// every sidecar belongs to the `i`-th record in uid order; image and text
/// rows are referenced from `embedding_refs`, sentence rows only through
/// the uid index.
pub fn synthetic_fixture(n: usize, dim: usize, seed: u64) -> Result<SyntheticFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uids: Vec<String> = (0..n).map(|_| format!("{:032x}", rng.gen::<u128>())).collect();
    uids.sort();
    uids.dedup();
    if uids.len() != n {
        return Err(CurateError::InvalidConfig("uid collision in fixture".into()));
    }

    let mut records = Vec::with_capacity(n);
    let (mut image, mut raw, mut translated) = (Vec::new(), Vec::new(), Vec::new());
    let (mut s_orig, mut s_back) = (Vec::new(), Vec::new());
    let mut pair_languages = Vec::with_capacity(n);
    for (row, uid) in uids.into_iter().enumerate() {
        let lang = pick_language(&mut rng);
        let english = lang == ENGLISH;
        let img = gaussian(&mut rng, dim);
        let raw_noise = if english { 1.0 } else { 2.5 };
        raw.extend(blend(&img, &gaussian(&mut rng, dim), raw_noise));
        translated.extend(blend(&img, &gaussian(&mut rng, dim), 1.2));
        image.extend_from_slice(&img);

        let sentence = gaussian(&mut rng, dim);
        let drift = if english { 0.3 } else { 0.6 + rng.gen::<f32>() };
        s_back.extend(blend(&sentence, &gaussian(&mut rng, dim), drift));
        s_orig.extend(sentence);
        pair_languages.push(lang.to_string());

        let mut r = MetadataRecord::new(uid, format!("caption {row} ({lang})"));
        r.url = Some(format!("https://example.org/img/{row}.jpg"));
        r.language = Some(lang.to_string());
        r.translated_caption = Some(if english {
            r.raw_caption.clone()
        } else {
            format!("translated caption {row}")
        });
        if !english {
            r.backtranslated_caption = Some(format!("caption {row} round trip ({lang})"));
        }
        r.extra_captions
            .insert("synthetic".into(), format!("a synthetic description of item {row}"));
        for space in [IMAGE_SPACE, RAW_TEXT_SPACE, TRANSLATED_TEXT_SPACE] {
            r.embedding_refs.insert(space.into(), row as u64);
        }
        records.push(r);
    }

    let index: BTreeMap<String, usize> =
        records.iter().enumerate().map(|(i, r)| (r.uid.clone(), i)).collect();
    let matrix = |name: &str, data: Vec<f32>| -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::new(name, dim, data)?.with_index(index.clone())
    };
    Ok(SyntheticFixture {
        pool: Pool::from_records(records)?.with_provenance(format!("synthetic fixture n={n} dim={dim} seed={seed}")),
        image: matrix(IMAGE_SPACE, image)?,
        raw_text: matrix(RAW_TEXT_SPACE, raw)?,
        translated_text: matrix(TRANSLATED_TEXT_SPACE, translated)?,
        sentence_original: matrix(SENTENCE_ORIGINAL, s_orig)?,
        sentence_backtranslated: matrix(SENTENCE_BACKTRANSLATED, s_back)?,
        pair_languages,
    })
}

/// Writes the pool, one `<space>.emb` sidecar per space and the
/// back-translation pair manifest into `dir`.
pub fn write_fixture(fixture: &SyntheticFixture, dir: &Path) -> Result<()> {
    write_pool_with(
        &fixture.pool,
        dir,
        WriteOptions {
            shard_size: FIXTURE_SHARD_SIZE,
        },
    )?;
    for m in [
        &fixture.image,
        &fixture.raw_text,
        &fixture.translated_text,
        &fixture.sentence_original,
        &fixture.sentence_backtranslated,
    ] {
        write_embeddings(m, &dir.join(format!("{}.emb", m.space_name)))?;
    }
    let pairs = PairManifest {
        original: format!("{SENTENCE_ORIGINAL}.emb").into(),
        backtranslated: format!("{SENTENCE_BACKTRANSLATED}.emb").into(),
        languages: fixture.pair_languages.clone(),
    };
    let path = dir.join(PAIRS_FILE);
    let mut json = serde_json::to_vec_pretty(&pairs)?;
    json.push(b'\n');
    std::fs::write(&path, json).map_err(|e| CurateError::io(&path, e))
}

/// `n` rows of an isotropic unit-variance Gaussian centred at `mean`.
pub fn gaussian_set(space: &str, n: usize, mean: &[f32], seed: u64) -> EmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * mean.len());
    for _ in 0..n {
        for &m in mean {
            let z: f32 = StandardNormal.sample(&mut rng);
            data.push(m + z);
        }
    }
    EmbeddingMatrix::new(space, mean.len(), data).expect("non-empty mean")
}
