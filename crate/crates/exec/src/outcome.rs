use std::fmt;

use serde::{Deserialize, Serialize};
use wafl_core::{SiteKind, SiteTable};

/// Built-in WebAssembly traps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrapKind {
    Unreachable,
    MemoryOutOfBounds,
    DivByZero,
    /// Signed division overflow, and float-to-int conversion of NaN or an
    /// out-of-range value.
    IntegerOverflow,
    IndirectCallMismatch,
    CallStackExhausted,
    UninitializedTableEntry,
}

impl fmt::Display for TrapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrapKind::Unreachable => "unreachable",
            TrapKind::MemoryOutOfBounds => "memory out of bounds",
            TrapKind::DivByZero => "integer divide by zero",
            TrapKind::IntegerOverflow => "integer overflow",
            TrapKind::IndirectCallMismatch => "indirect call type mismatch",
            TrapKind::CallStackExhausted => "call stack exhausted",
            TrapKind::UninitializedTableEntry => "uninitialized table element",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Exit(i32),
    Trap {
        kind: TrapKind,
        /// Index in the combined function space.
        function: u32,
        /// Instruction index within the function body.
        offset: u32,
    },
    FuelExhausted,
}

impl fmt::Display for ExecStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecStatus::Exit(c) => write!(f, "exit {c}"),
            ExecStatus::Trap { kind, function, offset } => write!(f, "trap: {kind} at function {function} offset {offset}"),
            ExecStatus::FuelExhausted => f.write_str("fuel exhausted"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutcome {
    pub status: ExecStatus,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub instructions_executed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunLimits {
    /// Maximum number of instructions executed.
    pub fuel: u64,
    /// Cap on linear memory size, in pages.
    pub max_pages: u32,
    pub max_call_depth: u32,
}

impl Default for RunLimits {
    fn default() -> Self {
        RunLimits {
            fuel: 50_000_000,
            max_pages: 1024,
            max_call_depth: 10_000,
        }
    }
}

/// Which oracle, if any, an outcome represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashClass {
    NotACrash,
    StackCanary,
    HeapUnderflow,
    HeapOverflow,
    BuiltinTrap(TrapKind),
}

impl CrashClass {
    pub fn is_crash(self) -> bool {
        self != CrashClass::NotACrash
    }

    /// Short label used in crash file names and stats.
    pub fn oracle(self) -> &'static str {
        match self {
            CrashClass::NotACrash => "none",
            CrashClass::StackCanary => "stack-canary",
            CrashClass::HeapUnderflow | CrashClass::HeapOverflow => "heap-canary",
            CrashClass::BuiltinTrap(_) => "builtin",
        }
    }
}

impl fmt::Display for CrashClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CrashClass::NotACrash => f.write_str("not a crash"),
            CrashClass::StackCanary => f.write_str("stack canary"),
            CrashClass::HeapUnderflow => f.write_str("heap underflow"),
            CrashClass::HeapOverflow => f.write_str("heap overflow"),
            CrashClass::BuiltinTrap(k) => write!(f, "builtin trap ({k})"),
        }
    }
}

/// Attributes a trap to the oracle whose `unreachable` raised it. A non-zero
/// exit status is a normal termination, not a crash.
pub fn classify_crash(outcome: &ExecOutcome, sites: &SiteTable) -> CrashClass {
    match outcome.status {
        ExecStatus::Exit(_) | ExecStatus::FuelExhausted => CrashClass::NotACrash,
        ExecStatus::Trap {
            kind: TrapKind::Unreachable,
            function,
            offset,
        } => match sites.oracle_at(function, offset) {
            Some(SiteKind::StackCanary) => CrashClass::StackCanary,
            Some(SiteKind::HeapUnderflow) => CrashClass::HeapUnderflow,
            Some(SiteKind::HeapOverflow) => CrashClass::HeapOverflow,
            _ => CrashClass::BuiltinTrap(TrapKind::Unreachable),
        },
        ExecStatus::Trap { kind, .. } => CrashClass::BuiltinTrap(kind),
    }
}
