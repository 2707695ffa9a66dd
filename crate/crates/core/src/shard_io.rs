//! On-disk pool and embedding sidecar formats.
//!
//! A pool directory holds `manifest.json` plus JSON-lines shards
//! (`shard-00000.jsonl`, ...), each sorted by uid. The manifest records a
//! CRC-32 per shard and is always written last, after every shard it names
//! has landed.
//!
//! Embedding sidecars are little-endian binary:
//!
//! ```text
//! "EMB1" | u32 dimension | u64 rows | u32 name_len | name (UTF-8) | rows*dimension f32
//! ```
//!
//! with an optional companion `<sidecar>.uids` file of sorted fixed-width
//! `"<uid> <row:020>\n"` lines.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingMatrix;
use crate::error::{CurateError, Result};
use crate::model::{normalize_uid, record_order, validate_record, MetadataRecord, Pool};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_FORMAT: &str = "curate-pool/1";
pub const DEFAULT_SHARD_SIZE: usize = 10_000;
pub const SHARD_SIZE_ENV: &str = "CURATE_SHARD_SIZE";

pub const SIDECAR_MAGIC: &[u8; 4] = b"EMB1";
pub const UID_INDEX_SUFFIX: &str = "uids";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardDescriptor {
    pub path: String,
    pub record_count: u64,
    pub first_uid: String,
    pub last_uid: String,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub multiset: bool,
    pub shard_size: usize,
    pub record_count: u64,
    #[serde(default)]
    pub provenance: Vec<String>,
    pub shards: Vec<ShardDescriptor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteOptions {
    pub shard_size: usize,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions {
            shard_size: DEFAULT_SHARD_SIZE,
        }
    }
}

impl WriteOptions {
    /// Default options, with the shard size taken from `CURATE_SHARD_SIZE`
    /// when set.
    pub fn from_env() -> Result<Self> {
        match std::env::var(SHARD_SIZE_ENV) {
            Ok(value) => {
                let shard_size = value
                    .trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| {
                        CurateError::InvalidConfig(format!(
                            "{SHARD_SIZE_ENV} must be a positive integer, got {value:?}"
                        ))
                    })?;
                Ok(WriteOptions { shard_size })
            }
            Err(_) => Ok(WriteOptions::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReadOptions {
    /// Count and log malformed lines instead of aborting.
    pub skip_invalid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReadSummary {
    pub records: u64,
    pub skipped: u64,
}

fn shard_name(i: usize) -> String {
    format!("shard-{i:05}.jsonl")
}

fn is_shard_name(name: &str) -> bool {
    name.starts_with("shard-") && name.ends_with(".jsonl")
}

/// Serializes records as newline-terminated JSON lines.
pub fn encode_records(records: &[MetadataRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::with_capacity(records.len() * 256);
    for record in records {
        serde_json::to_writer(&mut buf, record)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CurateError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CurateError::io(path, e))
}

/// Writes `pool` with the default shard size (or `CURATE_SHARD_SIZE`).
pub fn write_pool(pool: &Pool, dir: &Path) -> Result<Manifest> {
    write_pool_with(pool, dir, WriteOptions::from_env()?)
}

pub fn write_pool_with(pool: &Pool, dir: &Path, options: WriteOptions) -> Result<Manifest> {
    if options.shard_size == 0 {
        return Err(CurateError::InvalidConfig("shard size must be positive".into()));
    }
    pool.check_invariants()?;
    pool.validate()?;

    fs::create_dir_all(dir).map_err(|e| CurateError::io(dir, e))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    // Retract any previous manifest so no reader pairs it with half-written shards.
    match fs::remove_file(&manifest_path) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
        Err(e) => return Err(CurateError::io(&manifest_path, e)),
    }

    let shards: Vec<ShardDescriptor> = pool
        .records()
        .par_chunks(options.shard_size)
        .enumerate()
        .map(|(i, chunk)| {
            let name = shard_name(i);
            let bytes = encode_records(chunk)?;
            let path = dir.join(&name);
            fs::write(&path, &bytes).map_err(|e| CurateError::io(&path, e))?;
            debug!("wrote {} ({} records)", path.display(), chunk.len());
            Ok(ShardDescriptor {
                path: name,
                record_count: chunk.len() as u64,
                first_uid: chunk[0].uid.clone(),
                last_uid: chunk[chunk.len() - 1].uid.clone(),
                crc32: crc32fast::hash(&bytes),
            })
        })
        .collect::<Result<_>>()?;

    remove_stale_shards(dir, shards.len())?;

    let manifest = Manifest {
        format: MANIFEST_FORMAT.to_string(),
        multiset: pool.is_multiset(),
        shard_size: options.shard_size,
        record_count: pool.len() as u64,
        provenance: pool.provenance.clone(),
        shards,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_atomic(&manifest_path, &bytes)?;
    info!(
        "wrote pool {} ({} records, {} shards)",
        dir.display(),
        manifest.record_count,
        manifest.shards.len()
    );
    Ok(manifest)
}

fn remove_stale_shards(dir: &Path, keep: usize) -> Result<()> {
    let keep: std::collections::HashSet<String> = (0..keep).map(shard_name).collect();
    let entries = fs::read_dir(dir).map_err(|e| CurateError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CurateError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if is_shard_name(&name) && !keep.contains(&name) {
            fs::remove_file(entry.path()).map_err(|e| CurateError::io(entry.path(), e))?;
        }
    }
    Ok(())
}

/// Lazy, per-shard access to a pool directory.
#[derive(Debug, Clone)]
pub struct PoolReader {
    dir: PathBuf,
    manifest: Manifest,
    options: ReadOptions,
}

impl PoolReader {
    pub fn open(dir: &Path) -> Result<Self> {
        Self::open_with(dir, ReadOptions::default())
    }

    pub fn open_with(dir: &Path, options: ReadOptions) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let bytes = match fs::read(&manifest_path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(CurateError::MissingManifest(manifest_path))
            }
            Err(e) => return Err(CurateError::io(&manifest_path, e)),
        };
        let manifest: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| CurateError::InvalidManifest(format!("{}: {e}", manifest_path.display())))?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(CurateError::InvalidManifest(format!(
                "unsupported format {:?}",
                manifest.format
            )));
        }
        let declared: u64 = manifest.shards.iter().map(|s| s.record_count).sum();
        if declared != manifest.record_count {
            return Err(CurateError::InvalidManifest(format!(
                "shard counts sum to {declared}, manifest declares {}",
                manifest.record_count
            )));
        }
        for shard in &manifest.shards {
            if shard.first_uid > shard.last_uid {
                return Err(CurateError::InvalidManifest(format!(
                    "shard {} has first_uid > last_uid",
                    shard.path
                )));
            }
        }
        Ok(PoolReader {
            dir: dir.to_path_buf(),
            manifest,
            options,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn shard_count(&self) -> usize {
        self.manifest.shards.len()
    }

    /// Reads, checksums, parses and validates one shard.
    pub fn read_shard(&self, i: usize) -> Result<(Vec<MetadataRecord>, u64)> {
        let shard = &self.manifest.shards[i];
        let path = self.dir.join(&shard.path);
        let bytes = match fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(CurateError::MissingShard(path))
            }
            Err(e) => return Err(CurateError::io(&path, e)),
        };
        let actual = crc32fast::hash(&bytes);
        if actual != shard.crc32 {
            return Err(CurateError::ChecksumMismatch {
                path,
                expected: shard.crc32,
                actual,
            });
        }

        let mut records = Vec::with_capacity(shard.record_count as usize);
        let mut lines = 0u64;
        let mut skipped = 0u64;
        for (n, line) in BufReader::new(bytes.as_slice()).lines().enumerate() {
            let line = line.map_err(|e| CurateError::io(&path, e))?;
            lines += 1;
            match parse_record_line(&line) {
                Ok(record) => records.push(record),
                Err(message) if self.options.skip_invalid => {
                    warn!("{}:{}: skipping invalid record: {message}", path.display(), n + 1);
                    skipped += 1;
                }
                Err(message) => {
                    return Err(CurateError::MalformedRecord {
                        path,
                        line: n + 1,
                        message,
                    })
                }
            }
        }
        if lines != shard.record_count {
            return Err(CurateError::RecordCountMismatch {
                path,
                declared: shard.record_count,
                actual: lines,
            });
        }
        if let Some(w) = records
            .windows(2)
            .find(|w| record_order(&w[0], &w[1]) == std::cmp::Ordering::Greater)
        {
            return Err(CurateError::PoolInvariant(format!(
                "{} is not sorted by uid at {}",
                path.display(),
                w[1].uid
            )));
        }
        debug!("read {} ({} records)", path.display(), records.len());
        Ok((records, skipped))
    }

    /// Reads every shard (in parallel) into an in-memory pool.
    pub fn read_all(&self) -> Result<(Pool, ReadSummary)> {
        let shards: Vec<(Vec<MetadataRecord>, u64)> = (0..self.shard_count())
            .into_par_iter()
            .map(|i| self.read_shard(i))
            .collect::<Result<_>>()?;
        let mut summary = ReadSummary::default();
        let mut records = Vec::with_capacity(self.manifest.record_count as usize);
        for (shard, skipped) in shards {
            summary.skipped += skipped;
            records.extend(shard);
        }
        summary.records = records.len() as u64;
        let pool = if self.manifest.multiset {
            Pool::multiset_from_records(records)?
        } else {
            Pool::from_records(records)?
        };
        let mut pool = pool;
        pool.provenance = self.manifest.provenance.clone();
        info!(
            "read pool {} ({} records, {} skipped)",
            self.dir.display(),
            summary.records,
            summary.skipped
        );
        Ok((pool, summary))
    }
}

fn parse_record_line(line: &str) -> std::result::Result<MetadataRecord, String> {
    let mut record: MetadataRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    record.uid = normalize_uid(&record.uid);
    validate_record(&record).map_err(|violations| {
        violations
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("; ")
    })?;
    Ok(record)
}

pub fn read_pool(dir: &Path) -> Result<Pool> {
    Ok(PoolReader::open(dir)?.read_all()?.0)
}

pub fn read_pool_with(dir: &Path, options: ReadOptions) -> Result<(Pool, ReadSummary)> {
    PoolReader::open_with(dir, options)?.read_all()
}

/// Path of the uid index that accompanies a sidecar.
pub fn uid_index_path(sidecar: &Path) -> PathBuf {
    let mut name = sidecar.as_os_str().to_owned();
    name.push(".");
    name.push(UID_INDEX_SUFFIX);
    PathBuf::from(name)
}

pub fn encode_sidecar(matrix: &EmbeddingMatrix) -> Vec<u8> {
    let name = matrix.space_name.as_bytes();
    let mut buf = Vec::with_capacity(20 + name.len() + matrix.as_slice().len() * 4);
    buf.extend_from_slice(SIDECAR_MAGIC);
    buf.extend_from_slice(&(matrix.dimension() as u32).to_le_bytes());
    buf.extend_from_slice(&(matrix.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name);
    for x in matrix.as_slice() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn write_embeddings(matrix: &EmbeddingMatrix, path: &Path) -> Result<()> {
    if let Some(row) = matrix.first_non_finite_row() {
        return Err(CurateError::NonFiniteEmbedding {
            path: path.to_path_buf(),
            row,
        });
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CurateError::io(parent, e))?;
    }
    write_atomic(path, &encode_sidecar(matrix))?;
    let index_path = uid_index_path(path);
    if let Some(index) = &matrix.index {
        let mut buf = Vec::with_capacity(index.len() * 54);
        for (uid, row) in index {
            writeln!(buf, "{uid} {row:020}").map_err(|e| CurateError::io(&index_path, e))?;
        }
        write_atomic(&index_path, &buf)?;
    } else if index_path.exists() {
        fs::remove_file(&index_path).map_err(|e| CurateError::io(&index_path, e))?;
    }
    Ok(())
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize, path: &Path) -> Result<&'a [u8]> {
    let slice = bytes.get(*at..*at + n).ok_or_else(|| CurateError::BadSidecar {
        path: path.to_path_buf(),
        message: "truncated header".into(),
    })?;
    *at += n;
    Ok(slice)
}

pub fn decode_sidecar(bytes: &[u8], path: &Path) -> Result<EmbeddingMatrix> {
    let mut at = 0;
    if take(bytes, &mut at, 4, path)? != SIDECAR_MAGIC {
        return Err(CurateError::BadSidecar {
            path: path.to_path_buf(),
            message: "bad magic".into(),
        });
    }
    let dimension = u32::from_le_bytes(take(bytes, &mut at, 4, path)?.try_into().unwrap()) as usize;
    let rows = u64::from_le_bytes(take(bytes, &mut at, 8, path)?.try_into().unwrap());
    let name_len = u32::from_le_bytes(take(bytes, &mut at, 4, path)?.try_into().unwrap()) as usize;
    let name = std::str::from_utf8(take(bytes, &mut at, name_len, path)?)
        .map_err(|_| CurateError::BadSidecar {
            path: path.to_path_buf(),
            message: "space name is not UTF-8".into(),
        })?
        .to_string();
    if dimension == 0 {
        return Err(CurateError::BadSidecar {
            path: path.to_path_buf(),
            message: "dimension is zero".into(),
        });
    }

    let payload = &bytes[at..];
    let expected = rows
        .checked_mul(dimension as u64)
        .and_then(|n| n.checked_mul(4))
        .unwrap_or(u64::MAX);
    if payload.len() as u64 != expected {
        return Err(CurateError::LengthMismatch {
            path: path.to_path_buf(),
            expected,
            actual: payload.len() as u64,
        });
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let matrix = EmbeddingMatrix::new(name, dimension, data)?;
    if let Some(row) = matrix.first_non_finite_row() {
        return Err(CurateError::NonFiniteEmbedding {
            path: path.to_path_buf(),
            row,
        });
    }
    Ok(matrix)
}

/// Reads a sidecar whatever space it declares, plus its uid index if present.
pub fn read_sidecar(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| CurateError::io(path, e))?;
    let matrix = decode_sidecar(&bytes, path)?;
    let index_path = uid_index_path(path);
    if !index_path.exists() {
        return Ok(matrix);
    }
    let text = fs::read_to_string(&index_path).map_err(|e| CurateError::io(&index_path, e))?;
    let mut index = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let parsed = line
            .split_once(' ')
            .and_then(|(uid, row)| Some((normalize_uid(uid), row.parse::<usize>().ok()?)));
        let (uid, row) = parsed.ok_or_else(|| CurateError::MalformedRecord {
            path: index_path.clone(),
            line: n + 1,
            message: "expected \"<uid> <row>\"".into(),
        })?;
        if index.insert(uid.clone(), row).is_some() {
            return Err(CurateError::MalformedRecord {
                path: index_path.clone(),
                line: n + 1,
                message: format!("duplicate uid {uid}"),
            });
        }
    }
    matrix.with_index(index)
}

/// Reads a sidecar and checks it declares `space_name`.
pub fn read_embeddings(path: &Path, space_name: &str) -> Result<EmbeddingMatrix> {
    let matrix = read_sidecar(path)?;
    if matrix.space_name != space_name {
        return Err(CurateError::BadSidecar {
            path: path.to_path_buf(),
            message: format!(
                "declares space {:?}, expected {space_name:?}",
                matrix.space_name
            ),
        });
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn record(n: u32, score: f64) -> MetadataRecord {
        let mut r = MetadataRecord::new(format!("{n:032x}"), format!("caption {n}"));
        r.scores.insert("dfn_raw".into(), score);
        r
    }

    fn pool(n: u32) -> Pool {
        Pool::from_records((0..n).map(|i| record(i, 0.001 * (i % 1000) as f64)).collect()).unwrap()
    }

    #[test]
    fn shard_sizes_follow_division() {
        let dir = tempdir().unwrap();
        let m = write_pool_with(&pool(25_000), dir.path(), WriteOptions::default()).unwrap();
        let counts: Vec<u64> = m.shards.iter().map(|s| s.record_count).collect();
        assert_eq!(counts, vec![10_000, 10_000, 5_000]);
    }

    #[test]
    fn empty_pool_has_no_shards() {
        let dir = tempdir().unwrap();
        let m = write_pool_with(&Pool::empty(), dir.path(), WriteOptions::default()).unwrap();
        assert!(m.shards.is_empty());
        assert_eq!(read_pool(dir.path()).unwrap().len(), 0);
    }

    #[test]
    fn two_shards_of_three() {
        let dir = tempdir().unwrap();
        write_pool_with(&pool(6), dir.path(), WriteOptions { shard_size: 3 }).unwrap();
        let back = read_pool(dir.path()).unwrap();
        assert_eq!(back.len(), 6);
        assert_eq!(back, pool(6));
    }

    #[test]
    fn missing_manifest() {
        let dir = tempdir().unwrap();
        assert!(matches!(
            read_pool(dir.path()),
            Err(CurateError::MissingManifest(_))
        ));
    }

    #[test]
    fn missing_shard() {
        let dir = tempdir().unwrap();
        write_pool_with(&pool(6), dir.path(), WriteOptions { shard_size: 3 }).unwrap();
        fs::remove_file(dir.path().join("shard-00001.jsonl")).unwrap();
        let err = read_pool(dir.path()).unwrap_err();
        assert!(matches!(err, CurateError::MissingShard(_)));
        assert!(err.to_string().contains("missing shard"));
    }

    /// Rewrites shard 0 with `lines` and patches the manifest checksum.
    fn tamper(dir: &Path, lines: &str) {
        let shard = dir.join("shard-00000.jsonl");
        fs::write(&shard, lines).unwrap();
        let mut m: Manifest =
            serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE)).unwrap()).unwrap();
        m.shards[0].crc32 = crc32fast::hash(lines.as_bytes());
        m.shards[0].record_count = lines.lines().count() as u64;
        m.record_count = m.shards.iter().map(|s| s.record_count).sum();
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec(&m).unwrap()).unwrap();
    }

    #[test]
    fn checksum_mismatch_detected() {
        let dir = tempdir().unwrap();
        write_pool_with(&pool(3), dir.path(), WriteOptions::default()).unwrap();
        let shard = dir.path().join("shard-00000.jsonl");
        let mut bytes = fs::read(&shard).unwrap();
        bytes[10] ^= 1;
        fs::write(&shard, bytes).unwrap();
        assert!(matches!(
            read_pool(dir.path()),
            Err(CurateError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn out_of_range_score_reported_at_line() {
        // Oracle: the same record fails validate_record directly.
        let bad = record(1, 2.0);
        assert!(validate_record(&bad).is_err());

        let dir = tempdir().unwrap();
        write_pool_with(&pool(3), dir.path(), WriteOptions::default()).unwrap();
        let lines = format!(
            "{}\n{}\n{}\n",
            serde_json::to_string(&record(0, 0.1)).unwrap(),
            serde_json::to_string(&bad).unwrap(),
            serde_json::to_string(&record(2, 0.1)).unwrap()
        );
        tamper(dir.path(), &lines);
        match read_pool(dir.path()).unwrap_err() {
            CurateError::MalformedRecord { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("scores out of [-1,1]"));
            }
            other => panic!("unexpected {other}"),
        }

        let (pool, summary) =
            read_pool_with(dir.path(), ReadOptions { skip_invalid: true }).unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(summary.skipped, 1);
    }

    #[test]
    fn uppercase_uids_normalized_on_read() {
        let dir = tempdir().unwrap();
        write_pool_with(&pool(1), dir.path(), WriteOptions::default()).unwrap();
        let mut r = record(0xabc, 0.5);
        r.uid = r.uid.to_uppercase();
        tamper(dir.path(), &format!("{}\n", serde_json::to_string(&r).unwrap()));
        let back = read_pool(dir.path()).unwrap();
        assert_eq!(back.records()[0].uid, format!("{:032x}", 0xabc));
    }

    #[test]
    fn rewrite_removes_stale_shards() {
        let dir = tempdir().unwrap();
        write_pool_with(&pool(9), dir.path(), WriteOptions { shard_size: 3 }).unwrap();
        write_pool_with(&pool(4), dir.path(), WriteOptions { shard_size: 3 }).unwrap();
        assert!(!dir.path().join("shard-00002.jsonl").exists());
        assert_eq!(read_pool(dir.path()).unwrap(), pool(4));
    }

    #[test]
    fn sidecar_lengths() {
        let m = EmbeddingMatrix::new("s", 3, (0..12).map(|x| x as f32).collect()).unwrap();
        let bytes = encode_sidecar(&m);
        let header = 4 + 4 + 8 + 4 + 1;
        assert_eq!(bytes.len(), header + 48);
        let back = decode_sidecar(&bytes, Path::new("x")).unwrap();
        assert_eq!((back.rows(), back.dimension()), (4, 3));

        let err = decode_sidecar(&bytes[..bytes.len() - 1], Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("length mismatch"));
    }

    #[test]
    fn non_finite_row_named() {
        let m = EmbeddingMatrix::new("s", 2, vec![0.0; 8]).unwrap();
        let mut bytes = encode_sidecar(&m);
        // Oracle: scan rows for non-finite values after patching row 2, col 1.
        let header = bytes.len() - 32;
        let at = header + (2 * 2 + 1) * 4;
        bytes[at..at + 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
        let patched: Vec<f32> = bytes[header..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let expected_row = patched
            .chunks(2)
            .position(|r| r.iter().any(|x| !x.is_finite()))
            .unwrap();
        match decode_sidecar(&bytes, Path::new("x")).unwrap_err() {
            CurateError::NonFiniteEmbedding { row, .. } => assert_eq!(row, expected_row),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn sidecar_with_index_round_trips() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("image_dfn.emb");
        let index = BTreeMap::from([(format!("{:032x}", 2), 0), (format!("{:032x}", 1), 1)]);
        let m = EmbeddingMatrix::from_rows("image_dfn", &[vec![0.5, -1.25], vec![3.0, 1e-30]])
            .unwrap()
            .with_index(index)
            .unwrap();
        write_embeddings(&m, &path).unwrap();
        let text = fs::read_to_string(uid_index_path(&path)).unwrap();
        assert_eq!(text.lines().next().unwrap().len(), 53);
        assert!(text.starts_with(&format!("{:032x} 00000000000000000001\n", 1)));
        assert_eq!(read_embeddings(&path, "image_dfn").unwrap(), m);
        assert!(read_embeddings(&path, "text_dfn_raw").is_err());
    }
}
