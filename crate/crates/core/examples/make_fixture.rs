//! Regenerates the bundled demo fixture:
//! `cargo run --example make_fixture -- crates/core/fixtures/pool-1k`

use std::path::PathBuf;

use curate::fixtures::{synthetic_fixture, write_fixture};

pub const RECORDS: usize = 1000;
pub const DIMENSION: usize = 16;
pub const SEED: u64 = 7;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir: PathBuf = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/pool-1k"));
    let fixture = synthetic_fixture(RECORDS, DIMENSION, SEED)?;
    write_fixture(&fixture, &dir)?;
    println!("wrote {} records to {}", fixture.pool.len(), dir.display());
    Ok(())
}
