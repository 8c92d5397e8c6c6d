//! Deterministic in-process execution of (instrumented) WebAssembly modules.

mod compile;
pub mod external;
mod interp;
mod numeric;
pub mod outcome;
pub mod trace;
pub mod wasi;

use thiserror::Error;

pub use compile::CompiledModule;
pub use interp::{ExecHook, Instance, NoHook, PAGE_SIZE};
pub use outcome::{classify_crash, CrashClass, ExecOutcome, ExecStatus, RunLimits, TrapKind};
pub use trace::{TraceMap, MAP_SIZE};
pub use wasi::{HostAction, HostFn, WasiConfig, WasiState};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExecError {
    #[error("malformed module: {0}")]
    Parse(String),
    #[error("module does not validate: {0}")]
    Invalid(String),
    #[error("unsupported import `{0}`")]
    UnsupportedImport(String),
    #[error("instantiation trapped: {0}")]
    InstantiationTrap(String),
    #[error("missing export `{0}`")]
    MissingExport(String),
    #[error("export `{0}` has the wrong signature")]
    BadSignature(String),
    #[error("module has no trace-bits accessor")]
    AccessorMissing,
    #[error("trace map at {address:#x} does not fit in {memory} bytes of memory")]
    AccessorOutOfBounds { address: u32, memory: usize },
    #[error("external runtime: {0}")]
    External(String),
}

/// Compiles, instantiates and runs `_start` once.
pub fn run_once(bytes: &[u8], cfg: &WasiConfig, limits: &RunLimits) -> Result<ExecOutcome, ExecError> {
    let cm = CompiledModule::from_bytes(bytes)?;
    let mut inst = cm.instantiate(cfg)?;
    inst.run_start(limits)
}
