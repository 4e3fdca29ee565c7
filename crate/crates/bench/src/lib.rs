//! Benchmark harness for the semantic cache.
//!
//! Generates synthetic question/answer fixtures, populates a target cache
//! (in-process engine or HTTP gateway), replays test queries, judges hits and
//! reports hit rates, positive-hit rates and latency, optionally across a
//! sweep of similarity thresholds.

pub mod dataset;
pub mod judge;
pub mod replay;
pub mod report;
pub mod target;

use thiserror::Error;

pub use dataset::{generate_synthetic, Dataset, DatasetError, GenerateOptions, SeedRecord, TestRecord};
pub use judge::{Judge, OfflineJudge};
pub use replay::{populate, replay, sweep_threshold, ReplayOptions, ReplayReport, ReplayRun};
pub use report::{render, Format};
pub use target::{EmbeddedTarget, HttpTarget, Target};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("target unavailable: {0}")]
    TargetUnavailable(String),
    #[error("{0}")]
    Validation(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl BenchError {
    /// Process exit code: 2 for bad input, 1 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Validation(_) => 2,
            Self::Dataset(DatasetError::Io { .. }) => 1,
            Self::Dataset(_) => 2,
            Self::TargetUnavailable(_) | Self::Io(_) => 1,
        }
    }
}
