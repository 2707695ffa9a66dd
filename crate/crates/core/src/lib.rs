pub mod embedding;
pub mod error;
pub mod fixtures;
pub mod model;
pub mod scoring;
pub mod selection;
pub mod shard_io;

pub use error::{CurateError, Result};
pub mod analysis;
pub mod cli;
pub mod composition;
pub mod stats;
