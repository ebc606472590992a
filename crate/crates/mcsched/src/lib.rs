//! Experiment harness: configuration, paired sweeps, result files, bound
//! tables and randomized verification suites.

use std::io;
use std::path::{Path, PathBuf};

use mcsched_core::engine::EngineError;
use thiserror::Error;

pub mod bound;
pub mod config;
pub mod report;
pub mod sweep;
pub mod verify;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}: {1}")]
    Csv(PathBuf, String),
    #[error("{policy} at n={n}, seed={seed}: {source}")]
    Engine { policy: String, n: usize, seed: u64, source: EngineError },
}

impl HarnessError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io { path: path.to_path_buf(), source }
    }
}
