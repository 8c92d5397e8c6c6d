//! Instrumentation passes and the fixed heap → stack → coverage pipeline.

pub mod coverage;
pub mod heap;
pub mod sites;
pub mod stack;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ir::{validate_module, BlockType, CustomSection, Instr, Module, ValidationReport};
use sites::SiteTable;

pub use coverage::{CoverageConfig, TRACE_BITS_EXPORT};
pub use heap::{HeapConfig, HeapFn, HeapOverrides};
pub use stack::{CanaryMode, StackConfig};

/// Custom section recording which passes produced a binary, in order.
pub const PASSES_SECTION: &str = "wafl.passes";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PassError {
    #[error("stack pointer global {0} is missing or not a mutable i32")]
    SpGlobalMissing(u32),
    #[error("function {0} returns multiple values")]
    MultiValueUnsupported(u32),
    #[error("function {func} does not have the signature of {kind}")]
    SignatureMismatch { func: u32, kind: &'static str },
    #[error("module has no defined linear memory")]
    NoMemory,
    #[error("linear memory cannot grow by one page for the trace bits")]
    MemoryExhausted,
    #[error("module is already instrumented")]
    AlreadyInstrumented,
    #[error("input module does not validate:\n{0}")]
    InvalidInput(ValidationReport),
    #[error("instrumented module does not validate:\n{0}")]
    InvalidOutput(ValidationReport),
}

/// Incrementally builds a rewritten body while recording where each original
/// instruction ended up.
pub(crate) struct BodyBuilder {
    pub out: Vec<Instr>,
    pub map: Vec<u32>,
}

impl BodyBuilder {
    pub fn with_capacity(original: usize) -> Self {
        BodyBuilder {
            out: Vec::with_capacity(original + 32),
            map: Vec::with_capacity(original),
        }
    }

    /// Inserted instruction.
    pub fn emit(&mut self, i: Instr) -> u32 {
        self.out.push(i);
        (self.out.len() - 1) as u32
    }

    pub fn emit_all(&mut self, seq: impl IntoIterator<Item = Instr>) {
        self.out.extend(seq);
    }

    /// Original instruction (possibly rewritten in place).
    pub fn keep(&mut self, i: Instr) {
        self.map.push(self.out.len() as u32);
        self.out.push(i);
    }

    pub fn pos(&self) -> u32 {
        self.out.len() as u32
    }
}

/// Emits `block (bt)` followed by the original body with every `return`
/// turned into a branch to the new block's end. The original function-level
/// `end` closes the wrapper, so nothing is appended.
///
/// Branch depths that already target the function label need no change: the
/// wrapper takes the function label's place at the same relative depth.
pub(crate) fn wrap_redirecting_returns(b: &mut BodyBuilder, body: &[Instr], bt: BlockType) {
    b.emit(Instr::Block(bt));
    let mut depth: u32 = 1;
    for instr in body {
        if instr.opens_block() {
            depth += 1;
        } else if instr.closes_block() {
            depth -= 1;
        }
        if *instr == Instr::Return {
            b.keep(Instr::Br(depth - 1));
        } else {
            b.keep(instr.clone());
        }
    }
}

/// Which passes to run and how.
#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub heap: Option<HeapConfig>,
    pub stack: Option<StackConfig>,
    pub coverage: Option<CoverageConfig>,
}

impl PipelineConfig {
    /// All three passes. With a seed, canaries and branch ids are reproducible.
    pub fn all(canary_seed: Option<u64>, cov_seed: Option<u64>) -> Self {
        let mut rng = seeded_rng(canary_seed);
        PipelineConfig {
            heap: Some(HeapConfig {
                canary: rng.gen(),
                overrides: HeapOverrides::default(),
            }),
            stack: Some(StackConfig {
                sp_global: 0,
                seed: rng.gen(),
                mode: CanaryMode::PerFunction,
            }),
            coverage: Some(CoverageConfig { seed: cov_seed.unwrap_or_else(|| rng.gen()) }),
        }
    }

    pub fn any_enabled(&self) -> bool {
        self.heap.is_some() || self.stack.is_some() || self.coverage.is_some()
    }
}

pub(crate) fn seeded_rng(seed: Option<u64>) -> ChaCha8Rng {
    match seed {
        Some(s) => ChaCha8Rng::seed_from_u64(s),
        None => ChaCha8Rng::from_entropy(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassSummary {
    pub pass: &'static str,
    pub functions: usize,
    pub sites: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Instrumented {
    pub module: Module,
    pub sites: SiteTable,
    pub summaries: Vec<PassSummary>,
}

/// True when `m` carries the trace-bits accessor or a pass-order record.
pub fn is_instrumented(m: &Module) -> bool {
    m.export(TRACE_BITS_EXPORT).is_some() || m.custom(PASSES_SECTION).is_some()
}

/// Runs the enabled passes in the fixed order heap → stack → coverage.
pub fn instrument(m: &Module, cfg: &PipelineConfig) -> Result<Instrumented, PassError> {
    if is_instrumented(m) {
        return Err(PassError::AlreadyInstrumented);
    }
    let report = validate_module(m);
    if !report.is_valid() {
        return Err(PassError::InvalidInput(report));
    }

    let mut module = m.clone();
    let mut sites = SiteTable::new();
    let mut summaries = Vec::new();
    let mut order = Vec::new();

    if let Some(heap) = &cfg.heap {
        summaries.push(heap::apply_with(&mut module, heap, &mut sites)?);
        order.push("heap");
    }
    if let Some(stack) = &cfg.stack {
        summaries.push(stack::apply_with(&mut module, stack, &mut sites)?);
        order.push("stack");
    }
    if let Some(cov) = &cfg.coverage {
        summaries.push(coverage::apply_with(&mut module, cov, &mut sites)?);
        order.push("coverage");
    }
    if !order.is_empty() {
        module.customs.push(CustomSection {
            name: PASSES_SECTION.to_string(),
            data: order.join(",").into_bytes(),
            placement: 11,
        });
    }

    let report = validate_module(&module);
    if !report.is_valid() {
        return Err(PassError::InvalidOutput(report));
    }
    sites.sort();
    Ok(Instrumented {
        module,
        sites,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::ValType;

    #[test]
    fn wrapper_rewrites_returns_by_depth() {
        // [return, end] -> [block, br 0, end]
        let mut b = BodyBuilder::with_capacity(2);
        wrap_redirecting_returns(&mut b, &[Instr::Return, Instr::End], BlockType::Empty);
        assert_eq!(b.out, vec![Instr::Block(BlockType::Empty), Instr::Br(0), Instr::End]);
        assert_eq!(b.map, vec![1, 2]);

        // [block, return, end, end] -> inner return sits at depth 2 -> br 1
        let mut b = BodyBuilder::with_capacity(4);
        let body = [Instr::Block(BlockType::Empty), Instr::Return, Instr::End, Instr::End];
        wrap_redirecting_returns(&mut b, &body, BlockType::Value(ValType::I32));
        assert_eq!(b.out[2], Instr::Br(1));
        assert_eq!(b.out[0], Instr::Block(BlockType::Value(ValType::I32)));
    }
}
