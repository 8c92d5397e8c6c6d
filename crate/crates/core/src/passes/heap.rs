//! Heap canaries.
//!
//! Allocation entry points request 20 extra bytes and lay the chunk out as
//!
//! ```text
//! data+0   size requested by the caller (4 bytes)
//! data+4   underflow canary (8 bytes)
//! data+12  payload, returned to the caller
//! data+12+size  overflow canary (8 bytes)
//! ```
//!
//! Deallocation entry points step the pointer back by 12 and check both
//! canaries before the allocator's own code runs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use super::sites::{Site, SiteKind, SiteTable};
use super::{wrap_redirecting_returns, BodyBuilder, PassError, PassSummary};
use crate::ir::{
    BlockType, FuncType, Function, Instr, LoadOp, MemArg, Module, NumOp, StoreOp, ValType,
};

/// Bytes added to every allocation request.
pub const INFLATION: i32 = 20;
/// Distance from the allocator's pointer to the user pointer.
pub const PAYLOAD_OFFSET: i32 = 12;
pub const UNDERFLOW_CANARY_OFFSET: u32 = 4;
/// Largest request that can be inflated without wrapping.
pub const MAX_REQUEST: u32 = u32::MAX - INFLATION as u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HeapFn {
    Malloc,
    Calloc,
    Realloc,
    Free,
}

impl HeapFn {
    pub const ALL: [HeapFn; 4] = [HeapFn::Malloc, HeapFn::Calloc, HeapFn::Realloc, HeapFn::Free];

    pub fn name(self) -> &'static str {
        match self {
            HeapFn::Malloc => "malloc",
            HeapFn::Calloc => "calloc",
            HeapFn::Realloc => "realloc",
            HeapFn::Free => "free",
        }
    }

    pub fn signature(self) -> FuncType {
        use ValType::I32;
        match self {
            HeapFn::Malloc => FuncType::new([I32], [I32]),
            HeapFn::Calloc | HeapFn::Realloc => FuncType::new([I32, I32], [I32]),
            HeapFn::Free => FuncType::new([I32], []),
        }
    }

    pub fn allocates(self) -> bool {
        self != HeapFn::Free
    }

    pub fn deallocates(self) -> bool {
        matches!(self, HeapFn::Free | HeapFn::Realloc)
    }
}

impl fmt::Display for HeapFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeapFn {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HeapFn::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown heap function `{s}`"))
    }
}

/// Explicit function indices that take precedence over export and name
/// lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeapOverrides(pub BTreeMap<HeapFn, u32>);

impl HeapOverrides {
    pub fn set(&mut self, kind: HeapFn, func: u32) {
        self.0.insert(kind, func);
    }

    /// Parses `name=index`, e.g. `malloc=12`.
    pub fn parse_entry(s: &str) -> Result<(HeapFn, u32), String> {
        let (name, idx) = s.split_once('=').ok_or_else(|| format!("expected name=index, got `{s}`"))?;
        let kind = name.trim().parse()?;
        let idx = idx.trim().parse().map_err(|_| format!("bad function index in `{s}`"))?;
        Ok((kind, idx))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeapConfig {
    /// One canary for the whole module.
    pub canary: u64,
    pub overrides: HeapOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeapEntry {
    pub func: u32,
    pub kind: HeapFn,
    /// Parameter holding the size (allocs) or pointer (deallocs).
    pub arg: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeapFnMap {
    pub allocs: Vec<HeapEntry>,
    pub deallocs: Vec<HeapEntry>,
}

impl HeapFnMap {
    pub fn is_empty(&self) -> bool {
        self.allocs.is_empty() && self.deallocs.is_empty()
    }

    /// Distinct functions with their kind, in index order.
    pub fn functions(&self) -> BTreeMap<u32, HeapFn> {
        self.allocs
            .iter()
            .chain(&self.deallocs)
            .map(|e| (e.func, e.kind))
            .collect()
    }
}

/// Resolves allocator entry points: overrides, then exports, then the name
/// section.
pub fn identify_heap_functions(m: &Module, overrides: &HeapOverrides) -> HeapFnMap {
    let mut map = HeapFnMap::default();
    for kind in HeapFn::ALL {
        let func = overrides
            .0
            .get(&kind)
            .copied()
            .or_else(|| m.exported_func(kind.name()))
            .or_else(|| {
                m.names
                    .as_ref()
                    .and_then(|n| n.functions.iter().find(|(_, v)| *v == kind.name()).map(|(k, _)| *k))
            });
        let Some(func) = func else { continue };
        if kind.allocates() {
            let arg = if kind == HeapFn::Malloc { 0 } else { 1 };
            map.allocs.push(HeapEntry { func, kind, arg });
        }
        if kind.deallocates() {
            map.deallocs.push(HeapEntry { func, kind, arg: 0 });
        }
    }
    map
}

/// A rewritten allocator entry point.
#[derive(Debug, Clone)]
pub struct HeapRewrite {
    pub function: Function,
    pub map: Vec<u32>,
    pub underflow_trap: Option<u32>,
    pub overflow_trap: Option<u32>,
}

fn check_signature(ty: &FuncType, kind: HeapFn, func: u32) -> Result<(), PassError> {
    if *ty == kind.signature() {
        Ok(())
    } else {
        Err(PassError::SignatureMismatch {
            func,
            kind: kind.name(),
        })
    }
}

/// `if (arg > limit) return 0;`
fn emit_size_guard(b: &mut BodyBuilder, value: Vec<Instr>, limit: Instr, gt: NumOp) {
    b.emit_all(value);
    b.emit(limit);
    b.emit(Instr::Num(gt));
    b.emit(Instr::If(BlockType::Empty));
    b.emit(Instr::I32Const(0));
    b.emit(Instr::Return);
    b.emit(Instr::End);
}

/// Pointer adjustment and both canary checks, skipped for null. Returns the
/// offsets of the underflow and overflow traps.
fn emit_dealloc_preamble(b: &mut BodyBuilder, ptr: u32, canary: u64) -> (u32, u32) {
    let c = canary as i64;
    b.emit_all([
        Instr::LocalGet(ptr),
        Instr::If(BlockType::Empty),
        Instr::LocalGet(ptr),
        Instr::I32Const(PAYLOAD_OFFSET),
        Instr::Num(NumOp::I32Sub),
        Instr::LocalSet(ptr),
        Instr::Block(BlockType::Empty),
        Instr::LocalGet(ptr),
        Instr::Load(LoadOp::I64Load, MemArg::new(2, UNDERFLOW_CANARY_OFFSET)),
        Instr::I64Const(c),
        Instr::Num(NumOp::I64Eq),
        Instr::BrIf(0),
    ]);
    let under = b.emit(Instr::Unreachable);
    b.emit_all([
        Instr::End,
        Instr::Block(BlockType::Empty),
        Instr::LocalGet(ptr),
        Instr::Load(LoadOp::I32Load, MemArg::new(2, 0)),
        Instr::LocalGet(ptr),
        Instr::Num(NumOp::I32Add),
        Instr::Load(LoadOp::I64Load, MemArg::new(0, PAYLOAD_OFFSET as u32)),
        Instr::I64Const(c),
        Instr::Num(NumOp::I64Eq),
        Instr::BrIf(0),
    ]);
    let over = b.emit(Instr::Unreachable);
    b.emit_all([Instr::End, Instr::End]);
    (under, over)
}

/// Rewrites `malloc`, `calloc` or `realloc`. For `realloc` the dealloc
/// preamble on the old pointer runs first.
pub fn instrument_alloc_function(
    f: &Function,
    ty: &FuncType,
    kind: HeapFn,
    canary: u64,
) -> Result<HeapRewrite, PassError> {
    if !kind.allocates() {
        return Err(PassError::SignatureMismatch {
            func: f.type_index,
            kind: kind.name(),
        });
    }
    check_signature(ty, kind, f.type_index)?;
    let params = ty.params.len();
    let mut func = Function {
        type_index: f.type_index,
        locals: f.locals.clone(),
        body: Vec::new(),
    };
    let req = func.add_fresh_local(params, ValType::I32);
    let data = func.add_fresh_local(params, ValType::I32);
    let mut b = BodyBuilder::with_capacity(f.body.len());
    let mut traps = (None, None);

    match kind {
        HeapFn::Malloc | HeapFn::Realloc => {
            let size = if kind == HeapFn::Malloc { 0 } else { 1 };
            if kind == HeapFn::Realloc {
                let (u, o) = emit_dealloc_preamble(&mut b, 0, canary);
                traps = (Some(u), Some(o));
            }
            emit_size_guard(
                &mut b,
                vec![Instr::LocalGet(size)],
                Instr::I32Const(MAX_REQUEST as i32),
                NumOp::I32GtU,
            );
            b.emit_all([
                Instr::LocalGet(size),
                Instr::LocalSet(req),
                Instr::LocalGet(size),
                Instr::I32Const(INFLATION),
                Instr::Num(NumOp::I32Add),
                Instr::LocalSet(size),
            ]);
        }
        HeapFn::Calloc => {
            let product = func.add_fresh_local(params, ValType::I64);
            emit_size_guard(
                &mut b,
                vec![
                    Instr::LocalGet(0),
                    Instr::Num(NumOp::I64ExtendI32U),
                    Instr::LocalGet(1),
                    Instr::Num(NumOp::I64ExtendI32U),
                    Instr::Num(NumOp::I64Mul),
                    Instr::LocalTee(product),
                ],
                Instr::I64Const(MAX_REQUEST as i64),
                NumOp::I64GtU,
            );
            b.emit_all([
                Instr::LocalGet(product),
                Instr::Num(NumOp::I32WrapI64),
                Instr::LocalSet(req),
                Instr::I32Const(1),
                Instr::LocalSet(0),
                Instr::LocalGet(req),
                Instr::I32Const(INFLATION),
                Instr::Num(NumOp::I32Add),
                Instr::LocalSet(1),
            ]);
        }
        HeapFn::Free => unreachable!(),
    }

    // The wrapper block collects every exit so the postamble sees the
    // allocator's result on the stack.
    let body_end = f.body.len() - 1;
    wrap_redirecting_returns(&mut b, &f.body[..body_end], BlockType::Value(ValType::I32));
    b.keep(Instr::End);
    emit_alloc_postamble(&mut b, req, data, canary);
    b.emit(Instr::End);

    func.body = b.out;
    Ok(HeapRewrite {
        function: func,
        map: b.map,
        underflow_trap: traps.0,
        overflow_trap: traps.1,
    })
}

/// Consumes the allocator's pointer and leaves the user pointer (or 0).
fn emit_alloc_postamble(b: &mut BodyBuilder, req: u32, data: u32, canary: u64) {
    let c = canary as i64;
    b.emit_all([
        Instr::LocalTee(data),
        Instr::Num(NumOp::I32Eqz),
        Instr::If(BlockType::Value(ValType::I32)),
        Instr::I32Const(0),
        Instr::Else,
        Instr::LocalGet(data),
        Instr::LocalGet(req),
        Instr::Store(StoreOp::I32Store, MemArg::new(2, 0)),
        Instr::LocalGet(data),
        Instr::I64Const(c),
        Instr::Store(StoreOp::I64Store, MemArg::new(2, UNDERFLOW_CANARY_OFFSET)),
        Instr::LocalGet(data),
        Instr::LocalGet(req),
        Instr::Num(NumOp::I32Add),
        Instr::I64Const(c),
        Instr::Store(StoreOp::I64Store, MemArg::new(0, PAYLOAD_OFFSET as u32)),
        Instr::LocalGet(data),
        Instr::I32Const(PAYLOAD_OFFSET),
        Instr::Num(NumOp::I32Add),
        Instr::End,
    ]);
}

/// Rewrites `free` (or `realloc`, preamble only) to check both canaries and
/// hand the allocator its own pointer.
pub fn instrument_dealloc_function(
    f: &Function,
    ty: &FuncType,
    kind: HeapFn,
    canary: u64,
) -> Result<HeapRewrite, PassError> {
    if !kind.deallocates() {
        return Err(PassError::SignatureMismatch {
            func: f.type_index,
            kind: kind.name(),
        });
    }
    check_signature(ty, kind, f.type_index)?;
    let mut b = BodyBuilder::with_capacity(f.body.len());
    let (u, o) = emit_dealloc_preamble(&mut b, 0, canary);
    for instr in &f.body {
        b.keep(instr.clone());
    }
    Ok(HeapRewrite {
        function: Function {
            type_index: f.type_index,
            locals: f.locals.clone(),
            body: b.out,
        },
        map: b.map,
        underflow_trap: Some(u),
        overflow_trap: Some(o),
    })
}

/// Instruments every resolved allocator entry point of `m`.
pub fn apply_heap_pass(m: &Module, cfg: &HeapConfig) -> Result<(Module, SiteTable), PassError> {
    let mut out = m.clone();
    let mut sites = SiteTable::new();
    apply_with(&mut out, cfg, &mut sites)?;
    Ok((out, sites))
}

pub(crate) fn apply_with(m: &mut Module, cfg: &HeapConfig, sites: &mut SiteTable) -> Result<PassSummary, PassError> {
    let map = identify_heap_functions(m, &cfg.overrides);
    let mut warnings = Vec::new();
    if map.is_empty() {
        warnings.push("no allocator functions found; heap canaries skipped".to_string());
    }
    let mut functions = 0;
    let mut site_count = 0;

    for (func, kind) in map.functions() {
        let Some(f) = m.defined_func(func) else {
            warnings.push(format!("{kind} (function {func}) is imported or out of range; skipped"));
            continue;
        };
        let ty = m.func_type(func).expect("defined function has a type");
        let rw = if kind.allocates() {
            instrument_alloc_function(f, ty, kind, cfg.canary)
        } else {
            instrument_dealloc_function(f, ty, kind, cfg.canary)
        }
        .map_err(|e| match e {
            PassError::SignatureMismatch { kind, .. } => PassError::SignatureMismatch { func, kind },
            other => other,
        })?;

        sites.remap(func, &rw.map);
        for (trap, site_kind) in [
            (rw.underflow_trap, SiteKind::HeapUnderflow),
            (rw.overflow_trap, SiteKind::HeapOverflow),
        ] {
            if let Some(offset) = trap {
                sites.push(Site {
                    function: func,
                    offset,
                    kind: site_kind,
                    id: cfg.canary,
                });
                site_count += 1;
            }
        }
        *m.defined_func_mut(func).expect("checked above") = rw.function;
        functions += 1;
    }
    Ok(PassSummary {
        pass: "heap",
        functions,
        sites: site_count,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{validate_module, Export, ExportKind, Limits, NameSection};

    fn alloc_module() -> Module {
        let mut m = Module {
            memory: Some(Limits { min: 1, max: None }),
            ..Default::default()
        };
        for kind in HeapFn::ALL {
            let t = m.intern_type(kind.signature());
            let body = if kind.allocates() {
                vec![Instr::LocalGet(0), Instr::End]
            } else {
                vec![Instr::End]
            };
            let idx = m.add_function(Function {
                type_index: t,
                locals: vec![],
                body,
            });
            m.exports.push(Export {
                name: kind.name().into(),
                kind: ExportKind::Func,
                index: idx,
            });
        }
        m
    }

    #[test]
    fn layout_constants() {
        assert_eq!(INFLATION, 4 + 8 + 8);
        assert_eq!(PAYLOAD_OFFSET, 4 + 8);
        assert_eq!(MAX_REQUEST, 0xFFFF_FFEB);
    }

    #[test]
    fn identify_via_exports_and_realloc_in_both_lists() {
        let m = alloc_module();
        let map = identify_heap_functions(&m, &HeapOverrides::default());
        assert_eq!(map.allocs.len(), 3);
        assert_eq!(map.deallocs.len(), 2);
        assert!(map.deallocs.iter().any(|e| e.kind == HeapFn::Realloc && e.arg == 0));
        assert!(map.allocs.iter().any(|e| e.kind == HeapFn::Realloc && e.arg == 1));
    }

    #[test]
    fn identify_via_name_section() {
        let mut m = Module::default();
        let mut names = NameSection::default();
        names.functions.insert(7, "calloc".into());
        m.names = Some(names);
        let map = identify_heap_functions(&m, &HeapOverrides::default());
        assert_eq!(
            map.allocs,
            vec![HeapEntry {
                func: 7,
                kind: HeapFn::Calloc,
                arg: 1
            }]
        );
    }

    #[test]
    fn override_beats_export() {
        let m = alloc_module();
        let mut ov = HeapOverrides::default();
        let (k, i) = HeapOverrides::parse_entry("malloc=12").unwrap();
        ov.set(k, i);
        let map = identify_heap_functions(&m, &ov);
        assert_eq!(map.allocs[0].func, 12);
        assert!(HeapOverrides::parse_entry("mallocx=1").is_err());
        assert!(HeapOverrides::parse_entry("malloc").is_err());
    }

    #[test]
    fn instrumented_module_validates_with_sites() {
        let m = alloc_module();
        let cfg = HeapConfig {
            canary: 0x1122_3344_5566_7788,
            overrides: HeapOverrides::default(),
        };
        let (out, sites) = apply_heap_pass(&m, &cfg).unwrap();
        assert!(validate_module(&out).is_valid(), "{}", validate_module(&out));
        // realloc and free each carry an underflow and an overflow trap.
        assert_eq!(sites.count(SiteKind::HeapUnderflow), 2);
        assert_eq!(sites.count(SiteKind::HeapOverflow), 2);
        for s in sites.iter() {
            let body = &out.defined_func(s.function).unwrap().body;
            assert_eq!(body[s.offset as usize], Instr::Unreachable);
        }
        // malloc gains exactly two locals, calloc three.
        assert_eq!(out.functions[0].locals, vec![ValType::I32, ValType::I32]);
        assert_eq!(out.functions[1].locals, vec![ValType::I32, ValType::I32, ValType::I64]);
    }

    #[test]
    fn no_allocator_is_a_no_op() {
        let mut m = Module::default();
        m.types.push(FuncType::new([], []));
        m.functions.push(Function {
            type_index: 0,
            locals: vec![],
            body: vec![Instr::End],
        });
        let (out, sites) = apply_heap_pass(
            &m,
            &HeapConfig {
                canary: 1,
                overrides: HeapOverrides::default(),
            },
        )
        .unwrap();
        assert_eq!(out, m);
        assert!(sites.is_empty());
    }

    #[test]
    fn signature_mismatch_is_reported() {
        let mut m = Module::default();
        let t = m.intern_type(FuncType::new([ValType::I64], [ValType::I32]));
        m.functions.push(Function {
            type_index: t,
            locals: vec![],
            body: vec![Instr::I32Const(0), Instr::End],
        });
        m.exports.push(Export {
            name: "malloc".into(),
            kind: ExportKind::Func,
            index: 0,
        });
        let err = apply_heap_pass(
            &m,
            &HeapConfig {
                canary: 1,
                overrides: HeapOverrides::default(),
            },
        )
        .unwrap_err();
        assert_eq!(err, PassError::SignatureMismatch { func: 0, kind: "malloc" });
    }
}
