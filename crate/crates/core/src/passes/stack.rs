//! Stack canaries.
//!
//! Every defined function reserves 16 bytes below the caller's stack pointer,
//! stores an 8-byte canary at the new stack pointer and re-checks it at a
//! single exit point before releasing the reservation. A linear overflow out
//! of the function's own frame runs into the canary and the check traps.

use rand::Rng;

use super::sites::{Site, SiteKind, SiteTable};
use super::{seeded_rng, wrap_redirecting_returns, BodyBuilder, PassError, PassSummary};
use crate::ir::{BlockType, FuncType, Function, Instr, MemArg, Module, NumOp, StoreOp, LoadOp, ValType};

/// Bytes reserved per frame; WASI keeps the shadow stack 16-byte aligned.
pub const FRAME_RESERVE: i32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CanaryMode {
    /// A fresh canary for every function.
    #[default]
    PerFunction,
    /// One canary shared by all functions of the module.
    PerModule,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackConfig {
    /// Global holding the shadow stack pointer (0 for WASI toolchains).
    pub sp_global: u32,
    /// Seed of the canary stream.
    pub seed: u64,
    pub mode: CanaryMode,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            sp_global: 0,
            seed: rand::random(),
            mode: CanaryMode::PerFunction,
        }
    }
}

/// Preamble: reserve the frame slot and store the canary there.
pub fn emit_inject_canary(sp_global: u32, canary: u64) -> Vec<Instr> {
    vec![
        Instr::GlobalGet(sp_global),
        Instr::I32Const(FRAME_RESERVE),
        Instr::Num(NumOp::I32Sub),
        Instr::GlobalSet(sp_global),
        Instr::GlobalGet(sp_global),
        Instr::I64Const(canary as i64),
        Instr::Store(StoreOp::I64Store, MemArg::new(3, 0)),
    ]
}

/// Position of the `unreachable` inside [`emit_validate_canary`]'s output.
pub const VALIDATE_TRAP_OFFSET: usize = 6;

/// Postamble: compare the canary, trap on mismatch, release the slot and
/// return. A pending return value stays below the check on the operand stack,
/// so the sequence is the same for result arity 0 and 1.
pub fn emit_validate_canary(sp_global: u32, canary: u64) -> Vec<Instr> {
    vec![
        Instr::Block(BlockType::Empty),
        Instr::GlobalGet(sp_global),
        Instr::Load(LoadOp::I64Load, MemArg::new(3, 0)),
        Instr::I64Const(canary as i64),
        Instr::Num(NumOp::I64Eq),
        Instr::BrIf(0),
        Instr::Unreachable,
        Instr::End,
        Instr::GlobalGet(sp_global),
        Instr::I32Const(FRAME_RESERVE),
        Instr::Num(NumOp::I32Add),
        Instr::GlobalSet(sp_global),
        Instr::Return,
    ]
}

/// Result of rewriting one function.
pub struct StackRewrite {
    pub function: Function,
    /// Old instruction offset → new offset.
    pub map: Vec<u32>,
    /// Offset of the canary-check `unreachable`.
    pub trap_offset: u32,
}

/// Wraps `f` with a canary preamble, a single exit point and the check.
pub fn instrument_function_stack(
    f: &Function,
    ty: &FuncType,
    sp_global: u32,
    canary: u64,
) -> Result<StackRewrite, PassError> {
    let bt = BlockType::from_results(&ty.results).ok_or(PassError::MultiValueUnsupported(f.type_index))?;
    let mut b = BodyBuilder::with_capacity(f.body.len());
    b.emit_all(emit_inject_canary(sp_global, canary));
    wrap_redirecting_returns(&mut b, &f.body, bt);
    let trap_offset = b.pos() + VALIDATE_TRAP_OFFSET as u32;
    b.emit_all(emit_validate_canary(sp_global, canary));
    b.emit(Instr::End);
    Ok(StackRewrite {
        function: Function {
            type_index: f.type_index,
            locals: f.locals.clone(),
            body: b.out,
        },
        map: b.map,
        trap_offset,
    })
}

/// Instruments every defined function of `m`.
pub fn apply_stack_pass(m: &Module, cfg: &StackConfig) -> Result<(Module, SiteTable), PassError> {
    let mut out = m.clone();
    let mut sites = SiteTable::new();
    apply_with(&mut out, cfg, &mut sites)?;
    Ok((out, sites))
}

pub(crate) fn apply_with(m: &mut Module, cfg: &StackConfig, sites: &mut SiteTable) -> Result<PassSummary, PassError> {
    match m.global_type(cfg.sp_global) {
        Some(g) if g.mutable && g.val_type == ValType::I32 => {}
        _ => return Err(PassError::SpGlobalMissing(cfg.sp_global)),
    }
    let mut rng = seeded_rng(Some(cfg.seed));
    let module_canary: u64 = rng.gen();
    let imported = m.num_imported_funcs();
    let skip = m.exported_func(super::TRACE_BITS_EXPORT);
    let mut rewritten = 0;

    for i in 0..m.functions.len() {
        let func = imported + i as u32;
        if Some(func) == skip {
            continue;
        }
        let canary = match cfg.mode {
            CanaryMode::PerFunction => rng.gen(),
            CanaryMode::PerModule => module_canary,
        };
        let f = &m.functions[i];
        let ty = &m.types[f.type_index as usize];
        let rw = instrument_function_stack(f, ty, cfg.sp_global, canary)
            .map_err(|_| PassError::MultiValueUnsupported(func))?;
        sites.remap(func, &rw.map);
        sites.push(Site {
            function: func,
            offset: rw.trap_offset,
            kind: SiteKind::StackCanary,
            id: canary,
        });
        m.functions[i] = rw.function;
        rewritten += 1;
    }
    Ok(PassSummary {
        pass: "stack",
        functions: rewritten,
        sites: rewritten,
        warnings: Vec::new(),
    })
}
