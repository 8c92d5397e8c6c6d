//! Edge coverage.
//!
//! Every branch site gets a shim that bumps one byte of a 64 KiB trace map at
//! `cur ^ prev` and then stores `cur >> 1` as the new `prev`, the classic AFL
//! edge hash. The map lives in one page appended to linear memory and is
//! exposed through an exported accessor.

use rand::Rng;

use super::sites::{Site, SiteKind, SiteTable};
use super::{seeded_rng, BodyBuilder, PassError, PassSummary};
use crate::ir::{
    BlockType, ConstExpr, Export, ExportKind, FuncType, Function, Instr, LoadOp, MemArg, Module, NumOp,
    StoreOp, ValType,
};

/// Exported accessor returning the trace map's base address.
pub const TRACE_BITS_EXPORT: &str = "__fuzzm_trace_bits";
/// Exported initializer, added only when the module has no `_start`.
pub const INIT_EXPORT: &str = "__fuzzm_init";
pub const MAP_SIZE: u32 = 65536;
const PAGE_SIZE: u64 = 65536;
const MAX_PAGES: u32 = 65536;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageConfig {
    /// Seed of the branch-id stream.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoverageSiteKind {
    FunctionEntry,
    If,
    Else,
    Loop,
    BrIfFallthrough,
    EndTarget,
}

/// A marked instruction. The entry shim goes before `index`, every other shim
/// right after it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MarkedSite {
    pub index: usize,
    pub kind: CoverageSiteKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoverageGlobals {
    pub prev_location: u32,
    pub trace_bits_base: u32,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Frame {
    Func,
    Block,
    Loop,
    If,
}

/// Marks the function entry, every `if`/`else`/`loop`, every `br_if`, and every
/// `end` that closes a block targeted by a conditional or table branch.
/// Branches to a loop land on its already-marked header; branches to the
/// function label leave the function, so neither marks an `end`.
pub fn mark_branch_sites(body: &[Instr]) -> Vec<MarkedSite> {
    let mut marks = vec![MarkedSite {
        index: 0,
        kind: CoverageSiteKind::FunctionEntry,
    }];
    let mut frames = vec![Frame::Func];
    let mut pending = vec![false];

    fn target(frames: &[Frame], pending: &mut [bool], label: u32) {
        let Some(d) = frames.len().checked_sub(1 + label as usize) else { return };
        if matches!(frames[d], Frame::Block | Frame::If) {
            pending[d] = true;
        }
    }

    for (index, instr) in body.iter().enumerate() {
        let mut mark = |kind| marks.push(MarkedSite { index, kind });
        match instr {
            Instr::Block(_) | Instr::Loop(_) | Instr::If(_) => {
                let (frame, kind) = match instr {
                    Instr::Block(_) => (Frame::Block, None),
                    Instr::Loop(_) => (Frame::Loop, Some(CoverageSiteKind::Loop)),
                    _ => (Frame::If, Some(CoverageSiteKind::If)),
                };
                if let Some(kind) = kind {
                    mark(kind);
                }
                frames.push(frame);
                pending.push(false);
            }
            Instr::Else => mark(CoverageSiteKind::Else),
            Instr::BrIf(l) => {
                mark(CoverageSiteKind::BrIfFallthrough);
                target(&frames, &mut pending, *l);
            }
            Instr::BrTable { targets, default } => {
                for l in targets.iter().chain(std::iter::once(default)) {
                    target(&frames, &mut pending, *l);
                }
            }
            Instr::End => {
                frames.pop();
                if pending.pop() == Some(true) {
                    mark(CoverageSiteKind::EndTarget);
                }
            }
            _ => {}
        }
    }
    marks
}

/// The 13-instruction edge shim.
pub fn emit_coverage_shim(cur_location: u16, globals: CoverageGlobals, scratch: u32) -> Vec<Instr> {
    let cur = cur_location as i32;
    vec![
        Instr::I32Const(cur),
        Instr::GlobalGet(globals.prev_location),
        Instr::Num(NumOp::I32Xor),
        Instr::GlobalGet(globals.trace_bits_base),
        Instr::Num(NumOp::I32Add),
        Instr::LocalTee(scratch),
        Instr::LocalGet(scratch),
        Instr::Load(LoadOp::I32Load8U, MemArg::new(0, 0)),
        Instr::I32Const(1),
        Instr::Num(NumOp::I32Add),
        Instr::Store(StoreOp::I32Store8, MemArg::new(0, 0)),
        Instr::I32Const(cur >> 1),
        Instr::GlobalSet(globals.prev_location),
    ]
}

pub const SHIM_LEN: usize = 13;

/// Zero-fills the trace map with 128-byte strides and resets `prev`.
fn emit_init(globals: CoverageGlobals, cursor: u32) -> Vec<Instr> {
    let mut seq = vec![
        Instr::GlobalGet(globals.trace_bits_base),
        Instr::LocalSet(cursor),
        Instr::Loop(BlockType::Empty),
    ];
    for k in 0..16 {
        seq.extend([
            Instr::LocalGet(cursor),
            Instr::I64Const(0),
            Instr::Store(StoreOp::I64Store, MemArg::new(3, k * 8)),
        ]);
    }
    seq.extend([
        Instr::LocalGet(cursor),
        Instr::I32Const(128),
        Instr::Num(NumOp::I32Add),
        Instr::LocalTee(cursor),
        Instr::GlobalGet(globals.trace_bits_base),
        Instr::I32Const(MAP_SIZE as i32),
        Instr::Num(NumOp::I32Add),
        Instr::Num(NumOp::I32LtU),
        Instr::BrIf(0),
        Instr::End,
        Instr::I32Const(0),
        Instr::GlobalSet(globals.prev_location),
    ]);
    seq
}

struct Shimmed {
    body: Vec<Instr>,
    map: Vec<u32>,
    /// (offset of the shim's first instruction, id)
    shims: Vec<(u32, u16)>,
}

fn insert_shims(
    body: &[Instr],
    prefix: Vec<Instr>,
    globals: CoverageGlobals,
    scratch: u32,
    rng: &mut impl Rng,
) -> Shimmed {
    let marks = mark_branch_sites(body);
    let mut b = BodyBuilder::with_capacity(body.len() + marks.len() * SHIM_LEN + prefix.len());
    b.emit_all(prefix);
    let mut shims = Vec::with_capacity(marks.len());
    let mut shim = |b: &mut BodyBuilder| {
        let id: u16 = rng.gen();
        shims.push((b.pos(), id));
        b.emit_all(emit_coverage_shim(id, globals, scratch));
    };
    shim(&mut b);
    let mut next = marks.iter().skip(1).peekable();
    for (i, instr) in body.iter().enumerate() {
        b.keep(instr.clone());
        while next.next_if(|m| m.index == i).is_some() {
            shim(&mut b);
        }
    }
    Shimmed {
        body: b.out,
        map: b.map,
        shims,
    }
}

/// Inserts shims into every defined function, adds the trace map, the two
/// globals, the accessor and the `_start` initialization.
pub fn apply_coverage_pass(m: &Module, cfg: &CoverageConfig) -> Result<(Module, SiteTable), PassError> {
    let mut out = m.clone();
    let mut sites = SiteTable::new();
    apply_with(&mut out, cfg, &mut sites)?;
    Ok((out, sites))
}

pub(crate) fn apply_with(m: &mut Module, cfg: &CoverageConfig, sites: &mut SiteTable) -> Result<PassSummary, PassError> {
    let mem = m.memory.as_mut().ok_or(PassError::NoMemory)?;
    let base = mem.min as u64 * PAGE_SIZE;
    if mem.min >= MAX_PAGES || mem.max.is_some_and(|max| max >= MAX_PAGES) {
        return Err(PassError::MemoryExhausted);
    }
    mem.min += 1;
    if let Some(max) = mem.max.as_mut() {
        *max += 1;
    }

    let globals = CoverageGlobals {
        prev_location: m.add_global(ValType::I32, true, ConstExpr::I32(0)),
        trace_bits_base: m.add_global(ValType::I32, true, ConstExpr::I32(base as u32 as i32)),
    };
    let mut rng = seeded_rng(Some(cfg.seed));
    let imported = m.num_imported_funcs();
    let start = m.exported_func("_start").filter(|&f| f >= imported);
    let mut warnings = Vec::new();
    let mut site_count = 0;
    let defined = m.functions.len();

    for i in 0..defined {
        let func = imported + i as u32;
        let params = m.types[m.functions[i].type_index as usize].params.len();
        let f = &mut m.functions[i];
        let scratch = f.add_fresh_local(params, ValType::I32);
        let prefix = if Some(func) == start {
            let cursor = f.add_fresh_local(params, ValType::I32);
            emit_init(globals, cursor)
        } else {
            Vec::new()
        };
        let shimmed = insert_shims(&f.body, prefix, globals, scratch, &mut rng);
        f.body = shimmed.body;
        sites.remap(func, &shimmed.map);
        for (offset, id) in shimmed.shims {
            sites.push(Site {
                function: func,
                offset,
                kind: SiteKind::Coverage,
                id: id as u64,
            });
            site_count += 1;
        }
    }

    let getter_ty = m.intern_type(FuncType::new([], [ValType::I32]));
    let getter = m.add_function(Function {
        type_index: getter_ty,
        locals: vec![],
        body: vec![Instr::GlobalGet(globals.trace_bits_base), Instr::End],
    });
    m.exports.push(Export {
        name: TRACE_BITS_EXPORT.to_string(),
        kind: ExportKind::Func,
        index: getter,
    });

    if start.is_none() {
        warnings.push(format!(
            "no `_start` export; trace map initialization exported as `{INIT_EXPORT}`"
        ));
        let init_ty = m.intern_type(FuncType::new([], []));
        let mut body = emit_init(globals, 0);
        body.push(Instr::End);
        let init = m.add_function(Function {
            type_index: init_ty,
            locals: vec![ValType::I32],
            body,
        });
        m.exports.push(Export {
            name: INIT_EXPORT.to_string(),
            kind: ExportKind::Func,
            index: init,
        });
    }

    Ok(PassSummary {
        pass: "coverage",
        functions: defined,
        sites: site_count,
        warnings,
    })
}
