//! Coverage-guided fuzzing of instrumented WebAssembly modules in the
//! style of AFL: a seed queue, deterministic and havoc mutation, bucketed
//! edge coverage and path-based crash deduplication.

pub mod bucket;
pub mod campaign;
pub mod delivery;
pub mod mutate;
pub mod output;

use thiserror::Error;

pub use bucket::{bucket, classify_counts, has_new_bits, BucketMap, Novelty, Signature, Virgin};
pub use campaign::{
    execute, fuzz_loop, record_crash, Campaign, CampaignStats, CrashReport, Execution, FuzzConfig, OracleCounts,
    QueueEntry, SeedIssue,
};
pub use delivery::Delivery;
pub use mutate::{havoc, mutate, splice, Stage};

#[derive(Debug, Error)]
pub enum FuzzError {
    #[error(transparent)]
    Exec(#[from] wafl_exec::ExecError),
    #[error("module does not export _start")]
    NoStart,
    #[error("no seed produced a usable queue entry")]
    AllSeedsInvalid,
    #[error("no saved campaign to resume")]
    NothingToResume,
    #[error("output directory is inconsistent: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
