//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage and input errors, 2 for internal
//! failures (including panics).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::analysis::backtrans::{PairManifest, DEFAULT_MIN_SAMPLES};
use crate::analysis::{
    mauve, mauve_repeated, top_selection_origin_split, train_probe, MauveConfig, ProbeConfig,
};
use crate::composition::run_recipe;
use crate::embedding::EmbeddingMatrix;
use crate::error::{CurateError, Result};
use crate::model::{validate_record_against, CaptionField, CompositionRecipe, Pool};
use crate::scoring::{attach_scores, ScoreSpec};
use crate::selection::select_top_streaming;
use crate::shard_io::{
    read_embeddings, read_pool_with, read_sidecar, write_pool_with, PoolReader, ReadOptions,
    WriteOptions,
};
use crate::stats::{composition_delta, language_composition, overlap, write_delta_csv};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "curate", version, about = "Score, filter, compose and analyse image-text metadata pools")]
pub struct Cli {
    /// Worker threads; 0 uses all available cores.
    #[arg(long, global = true, env = "CURATE_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// Log filter, e.g. `warn`, `info` or `curate=debug`.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,

    /// Count and skip malformed records instead of aborting.
    #[arg(long, global = true)]
    pub skip_invalid: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Attach cosine scores computed from an image and a text sidecar.
    Score(ScoreArgs),
    /// Keep the top fraction of a pool by a named score.
    Filter(FilterArgs),
    /// Evaluate a composition recipe against a pool.
    Compose(ComposeArgs),
    /// Language composition, overlap and composition shift.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// MAUVE score between two embedding sets.
    Mauve(MauveArgs),
    /// Linear probe separating two embedding sets.
    Probe(ProbeArgs),
    /// Back-translation quality from paired sentence sidecars.
    Backtrans(BacktransArgs),
    /// Validate a pool and, optionally, sidecars it references.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub score_name: String,
    #[arg(long)]
    pub image_space: String,
    #[arg(long)]
    pub text_space: String,
    /// Directory holding `<space>.emb` sidecars; defaults to the pool directory.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub score: String,
    #[arg(long)]
    pub fraction: f64,
    #[arg(long)]
    pub language: Option<String>,
    /// Caption to activate on kept records: raw, translated or a named column.
    #[arg(long)]
    pub caption_field: Option<String>,
    /// Selection report path; standard output when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    #[arg(long)]
    pub pool: PathBuf,
    #[arg(long)]
    pub recipe: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum StatsCommand {
    Composition {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    Overlap {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    Delta {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Two embedding sets: explicit sidecars, or English vs non-English rows
/// of a sidecar drawn from the top 20% of a scored pool.
#[derive(Debug, Args)]
pub struct SetPair {
    /// Pool to split by caption origin (with --sidecar and --score).
    #[arg(long, requires_all = ["sidecar", "score"])]
    pub pool: Option<PathBuf>,
    #[arg(long, requires = "pool")]
    pub sidecar: Option<PathBuf>,
    #[arg(long, requires = "pool")]
    pub score: Option<String>,
}

#[derive(Debug, Args)]
pub struct MauveArgs {
    #[arg(long, required_unless_present = "pool", conflicts_with = "pool", requires = "right")]
    pub left: Option<PathBuf>,
    #[arg(long, required_unless_present = "pool", conflicts_with = "pool", requires = "left")]
    pub right: Option<PathBuf>,
    #[command(flatten)]
    pub origin: SetPair,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 5.0)]
    pub c: f64,
    #[arg(long, default_value_t = 1000)]
    pub grid: usize,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Rows per side in each repeat; defaults to the smaller set over `repeats`.
    #[arg(long)]
    pub sample_size: Option<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Divergence curve CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long, required_unless_present = "pool", conflicts_with = "pool", requires = "neg")]
    pub pos: Option<PathBuf>,
    #[arg(long, required_unless_present = "pool", conflicts_with = "pool", requires = "pos")]
    pub neg: Option<PathBuf>,
    #[command(flatten)]
    pub origin: SetPair,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Classifier weights CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BacktransArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MIN_SAMPLES)]
    pub min_samples: usize,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub pool: PathBuf,
    /// Sidecars whose row counts bound `embedding_refs`.
    #[arg(long)]
    pub sidecar: Vec<PathBuf>,
    /// Also flag references to spaces with no sidecar given.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .target(env_logger::Target::Stderr)
        .try_init();

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return EXIT_INTERNAL;
        }
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| pool.install(|| dispatch(&cli))));
    match outcome {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                EXIT_INPUT
            } else {
                EXIT_INTERNAL
            }
        }
        Err(_) => {
            eprintln!("error: internal failure");
            EXIT_INTERNAL
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let read = ReadOptions {
        skip_invalid: cli.skip_invalid,
    };
    match &cli.command {
        Command::Score(a) => score(a, read),
        Command::Filter(a) => filter(a, read),
        Command::Compose(a) => compose(a, read),
        Command::Stats(s) => stats(s, read),
        Command::Mauve(a) => run_mauve(a, cli.seed, read),
        Command::Probe(a) => run_probe(a, cli.seed, read),
        Command::Backtrans(a) => {
            let report = PairManifest::evaluate(&a.pairs, a.min_samples)?;
            emit_json(&report, a.report.as_deref())?;
            if let Some(path) = &a.csv {
                write_file(path, |w| report.write_csv(w))?;
            }
            Ok(())
        }
        Command::Validate(a) => validate(a),
    }
}

fn absolute(path: &Path) -> PathBuf {
    if let Ok(p) = fs::canonicalize(path) {
        return p;
    }
    match (path.parent(), path.file_name()) {
        (Some(parent), Some(name)) if !parent.as_os_str().is_empty() => absolute(parent).join(name),
        _ => std::env::current_dir().map(|d| d.join(path)).unwrap_or_else(|_| path.to_path_buf()),
    }
}

fn ensure_distinct(input: &Path, out: &Path) -> Result<()> {
    if absolute(input) == absolute(out) {
        return Err(CurateError::InvalidConfig(format!(
            "output {} must differ from input pool {}",
            out.display(),
            input.display()
        )));
    }
    Ok(())
}

fn write_file(path: &Path, body: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    body(&mut buf)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CurateError::io(parent, e))?;
    }
    fs::write(path, buf).map_err(|e| CurateError::io(path, e))
}

/// Pretty JSON to `path`, or to standard output.
fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(value)?;
    json.push(b'\n');
    match path {
        Some(p) => write_file(p, |w| {
            w.extend_from_slice(&json);
            Ok(())
        }),
        None => std::io::stdout()
            .write_all(&json)
            .map_err(|e| CurateError::io("<stdout>", e)),
    }
}

fn read(dir: &Path, options: ReadOptions) -> Result<Pool> {
    Ok(read_pool_with(dir, options)?.0)
}

fn write(pool: &Pool, dir: &Path) -> Result<()> {
    let manifest = write_pool_with(pool, dir, WriteOptions::from_env()?)?;
    info!(
        "wrote {} records in {} shards to {}",
        manifest.record_count,
        manifest.shards.len(),
        dir.display()
    );
    Ok(())
}

fn score(a: &ScoreArgs, options: ReadOptions) -> Result<()> {
    ensure_distinct(&a.pool, &a.out)?;
    let pool = read(&a.pool, options)?;
    let dir = a.embeddings.as_deref().unwrap_or(&a.pool);
    let image = read_embeddings(&dir.join(format!("{}.emb", a.image_space)), &a.image_space)?;
    let text = read_embeddings(&dir.join(format!("{}.emb", a.text_space)), &a.text_space)?;
    let spec = ScoreSpec {
        score_name: a.score_name.clone(),
        image_space: a.image_space.clone(),
        text_space: a.text_space.clone(),
    };
    write(&attach_scores(&pool, &spec, &image, &text)?, &a.out)
}

fn filter(a: &FilterArgs, options: ReadOptions) -> Result<()> {
    ensure_distinct(&a.pool, &a.out)?;
    let reader = PoolReader::open_with(&a.pool, options)?;
    let (mut kept, report) = select_top_streaming(&reader, &a.score, a.fraction, a.language.as_deref())?;
    if let Some(field) = &a.caption_field {
        kept = crate::composition::replace_captions(&kept, &CaptionField::parse(field))?;
    }
    write(&kept, &a.out)?;
    emit_json(&report, a.report.as_deref())
}

fn compose(a: &ComposeArgs, options: ReadOptions) -> Result<()> {
    ensure_distinct(&a.pool, &a.out)?;
    let text = fs::read_to_string(&a.recipe).map_err(|e| CurateError::io(&a.recipe, e))?;
    let recipe: CompositionRecipe = serde_json::from_str(&text)
        .map_err(|e| CurateError::InvalidRecipe(format!("{}: {e}", a.recipe.display())))?;
    recipe.validate()?;
    let pool = read(&a.pool, options)?;
    let (out, report) = run_recipe(&recipe, &pool)?;
    write(&out, &a.out)?;
    emit_json(&report, a.report.as_deref())
}

fn stats(s: &StatsCommand, options: ReadOptions) -> Result<()> {
    match s {
        StatsCommand::Composition { pool, report, csv } => {
            let stats = language_composition(&read(pool, options)?)?;
            emit_json(&stats, report.as_deref())?;
            if let Some(path) = csv {
                write_file(path, |w| stats.write_csv(w))?;
            }
        }
        StatsCommand::Overlap {
            left,
            right,
            report,
            csv,
        } => {
            let stats = overlap(&read(left, options)?, &read(right, options)?)?;
            emit_json(&stats, report.as_deref())?;
            if let Some(path) = csv {
                write_file(path, |w| stats.write_csv(w))?;
            }
        }
        StatsCommand::Delta {
            before,
            after,
            report,
            csv,
        } => {
            let b = language_composition(&read(before, options)?)?;
            let a = language_composition(&read(after, options)?)?;
            let deltas = composition_delta(&b, &a)?;
            let as_map: Vec<serde_json::Value> = deltas
                .iter()
                .map(|(l, d)| serde_json::json!({"language": l, "delta_percentage_points": d}))
                .collect();
            emit_json(&as_map, report.as_deref())?;
            if let Some(path) = csv {
                write_file(path, |w| write_delta_csv(&deltas, w))?;
            }
        }
    }
    Ok(())
}

fn load_sets(
    explicit: Option<(&Path, &Path)>,
    origin: &SetPair,
    options: ReadOptions,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    if let Some((a, b)) = explicit {
        return Ok((read_sidecar(a)?, read_sidecar(b)?));
    }
    match (&origin.pool, &origin.sidecar, &origin.score) {
        (Some(pool), Some(sidecar), Some(score)) => {
            let pool = read(pool, options)?;
            top_selection_origin_split(&pool, score, &read_sidecar(sidecar)?)
        }
        _ => Err(CurateError::InvalidConfig(
            "need two sidecars, or --pool with --sidecar and --score".into(),
        )),
    }
}

#[derive(Serialize)]
struct MauveReport {
    score: f64,
    std_dev: f64,
    repeats: usize,
    scores: Vec<f64>,
    sample_size: usize,
    left_rows: usize,
    right_rows: usize,
    config: MauveConfig,
}

fn run_mauve(a: &MauveArgs, seed: u64, options: ReadOptions) -> Result<()> {
    let explicit = a.left.as_deref().zip(a.right.as_deref());
    let (p, q) = load_sets(explicit, &a.origin, options)?;
    let config = MauveConfig {
        k: a.k,
        c: a.c,
        grid_size: a.grid,
        seed,
        ..MauveConfig::default()
    };
    let sample_size = match a.sample_size {
        Some(s) => s,
        None => p.rows().min(q.rows()) / a.repeats.max(1),
    };
    let (report, curves) = if a.repeats == 1 && a.sample_size.is_none() {
        let r = mauve(&p, &q, &config)?;
        let report = MauveReport {
            score: r.score,
            std_dev: 0.0,
            repeats: 1,
            scores: vec![r.score],
            sample_size: p.rows().min(q.rows()),
            left_rows: p.rows(),
            right_rows: q.rows(),
            config: MauveConfig { k: Some(r.k), ..config },
        };
        (report, vec![r.curve])
    } else {
        let r = mauve_repeated(&p, &q, &config, a.repeats, sample_size)?;
        let report = MauveReport {
            score: r.mean,
            std_dev: r.std_dev,
            repeats: r.scores.len(),
            scores: r.scores,
            sample_size,
            left_rows: p.rows(),
            right_rows: q.rows(),
            config,
        };
        (report, r.curves)
    };
    emit_json(&report, a.report.as_deref())?;
    if let Some(path) = &a.curve {
        write_file(path, |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["repeat", "x", "y"])?;
            for (i, curve) in curves.iter().enumerate() {
                for (x, y) in &curve.points {
                    csv.write_record([i.to_string(), x.to_string(), y.to_string()])?;
                }
            }
            csv.flush().map_err(|e| CurateError::io(path, e))
        })?;
    }
    Ok(())
}

fn run_probe(a: &ProbeArgs, seed: u64, options: ReadOptions) -> Result<()> {
    let explicit = a.pos.as_deref().zip(a.neg.as_deref());
    let (pos, neg) = load_sets(explicit, &a.origin, options)?;
    let config = ProbeConfig {
        l2_regularization: a.l2,
        learning_rate: a.learning_rate,
        epochs: a.epochs,
        seed,
        ..ProbeConfig::default()
    };
    let report = train_probe(&pos, &neg, &config)?;
    emit_json(&report, a.report.as_deref())?;
    if let Some(path) = &a.csv {
        write_file(path, |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["feature", "weight"])?;
            for (i, wt) in report.classifier.weights.iter().enumerate() {
                csv.write_record([i.to_string(), wt.to_string()])?;
            }
            csv.write_record(["bias".to_string(), report.classifier.bias.to_string()])?;
            csv.flush().map_err(|e| CurateError::io(path, e))
        })?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ValidationReport {
    records: u64,
    invalid_lines: u64,
    invalid_records: Vec<String>,
}

fn validate(a: &ValidateArgs) -> Result<()> {
    let (pool, summary) = read_pool_with(&a.pool, ReadOptions { skip_invalid: true })?;
    let mut rows = std::collections::BTreeMap::new();
    for path in &a.sidecar {
        let m = read_sidecar(path)?;
        rows.insert(m.space_name.clone(), m.rows());
    }
    let invalid_records: Vec<String> = pool
        .records()
        .iter()
        .filter_map(|r| {
            validate_record_against(r, &rows, a.strict)
                .err()
                .map(|v| CurateError::InvalidRecord { uid: r.uid.clone(), violations: v }.to_string())
        })
        .collect();
    let report = ValidationReport {
        records: summary.records,
        invalid_lines: summary.skipped,
        invalid_records,
    };
    emit_json(&report, a.report.as_deref())?;
    if report.invalid_lines > 0 || !report.invalid_records.is_empty() {
        return Err(CurateError::PoolInvariant(format!(
            "{} malformed lines, {} invalid records",
            report.invalid_lines,
            report.invalid_records.len()
        )));
    }
    Ok(())
}
