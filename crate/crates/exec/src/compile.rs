//! One-time lowering of function bodies into an executable form. Instruction
//! indices are preserved so that a trap's offset names the instruction in the
//! module as written; branch targets and operand-stack heights are resolved
//! here instead of at run time.

use std::collections::HashMap;

use wafl_core::ir::{
    validate_module, BlockType, ConstExpr, ExportKind, FuncType, ImportDesc, Instr, LoadOp, Module, NumOp, StoreOp,
};

use crate::wasi::{HostFn, MODULE as WASI_MODULE};
use crate::ExecError;

/// Branch target meaning "return from the function".
pub(crate) const RETURN: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
pub(crate) struct BrTarget {
    pub pc: u32,
    /// Values carried to the target (0 or 1).
    pub keep: u32,
    /// Operand height at the target, relative to the frame's operand base.
    pub height: u32,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Op {
    Unreachable,
    Nop,
    If { else_pc: u32 },
    Else { end_pc: u32 },
    Br(BrTarget),
    BrIf(BrTarget),
    BrTable(u32),
    Return,
    Call(u32),
    CallIndirect(u32),
    Drop,
    Select,
    LocalGet(u32),
    LocalSet(u32),
    LocalTee(u32),
    GlobalGet(u32),
    GlobalSet(u32),
    Load(LoadOp, u32),
    Store(StoreOp, u32),
    MemorySize,
    MemoryGrow,
    Const(u64),
    Num(NumOp),
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledFunc {
    pub params: u32,
    pub locals: u32,
    pub results: u32,
    pub ops: Vec<Op>,
    pub tables: Vec<Vec<BrTarget>>,
}

#[derive(Debug, Clone)]
pub(crate) struct ImportedFunc {
    pub name: String,
    pub host: Option<HostFn>,
}

/// A validated module lowered for execution. Compile once, instantiate for
/// every run.
#[derive(Debug, Clone)]
pub struct CompiledModule {
    pub(crate) module: Module,
    pub(crate) imports: Vec<ImportedFunc>,
    pub(crate) funcs: Vec<CompiledFunc>,
    /// Type of every function in the combined index space.
    pub(crate) func_types: Vec<FuncType>,
    pub(crate) exports: HashMap<String, u32>,
}

enum Fixup {
    Op(usize),
    Table(usize, usize),
}

struct Ctl {
    is_loop: bool,
    opener: usize,
    height: u32,
    arity: u32,
    fixups: Vec<Fixup>,
    if_pc: Option<usize>,
    else_pc: Option<usize>,
}

impl CompiledModule {
    pub fn new(m: &Module) -> Result<Self, ExecError> {
        let report = validate_module(m);
        if !report.is_valid() {
            return Err(ExecError::Invalid(report.to_string()));
        }
        let mut imports = Vec::new();
        for imp in &m.imports {
            match &imp.desc {
                ImportDesc::Func(t) => {
                    let host = (imp.module == WASI_MODULE)
                        .then(|| HostFn::resolve(&imp.name))
                        .flatten()
                        .filter(|h| h.signature() == m.types[*t as usize]);
                    imports.push(ImportedFunc {
                        name: format!("{}.{}", imp.module, imp.name),
                        host,
                    });
                }
                _ => return Err(ExecError::UnsupportedImport(format!("{}.{}", imp.module, imp.name))),
            }
        }
        for g in &m.globals {
            if matches!(g.init, ConstExpr::GlobalGet(_)) {
                return Err(ExecError::UnsupportedImport("global initializer references an import".into()));
            }
        }
        let func_types = (0..m.num_funcs()).map(|f| m.func_type(f).unwrap().clone()).collect::<Vec<_>>();
        let funcs = m
            .functions
            .iter()
            .map(|f| compile_function(m, &func_types, &m.types[f.type_index as usize], f.locals.len() as u32, &f.body))
            .collect();
        let exports = m
            .exports
            .iter()
            .filter(|e| e.kind == ExportKind::Func)
            .map(|e| (e.name.clone(), e.index))
            .collect();
        Ok(CompiledModule {
            module: m.clone(),
            imports,
            funcs,
            func_types,
            exports,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ExecError> {
        let m = wafl_core::ir::parse_module(bytes).map_err(|e| ExecError::Parse(e.to_string()))?;
        Self::new(&m)
    }

    pub fn module(&self) -> &Module {
        &self.module
    }

    pub fn export(&self, name: &str) -> Option<u32> {
        self.exports.get(name).copied()
    }

    pub fn num_imported_funcs(&self) -> u32 {
        self.imports.len() as u32
    }
}

fn arity(bt: BlockType) -> u32 {
    bt.arity() as u32
}

fn compile_function(m: &Module, func_types: &[FuncType], ty: &FuncType, locals: u32, body: &[Instr]) -> CompiledFunc {
    let mut ops = Vec::with_capacity(body.len());
    let mut tables: Vec<Vec<BrTarget>> = Vec::new();
    let mut ctl = vec![Ctl {
        is_loop: false,
        opener: 0,
        height: 0,
        arity: ty.results.len() as u32,
        fixups: Vec::new(),
        if_pc: None,
        else_pc: None,
    }];
    let mut h: u32 = 0;

    // Resolves a label to a target, registering a fixup for forward branches.
    fn target(ctl: &mut [Ctl], label: u32, fixup: Fixup) -> BrTarget {
        let idx = ctl.len() - 1 - label as usize;
        let c = &mut ctl[idx];
        if idx == 0 {
            return BrTarget {
                pc: RETURN,
                keep: c.arity,
                height: 0,
            };
        }
        if c.is_loop {
            BrTarget {
                pc: c.opener as u32 + 1,
                keep: 0,
                height: c.height,
            }
        } else {
            c.fixups.push(fixup);
            BrTarget {
                pc: 0,
                keep: c.arity,
                height: c.height,
            }
        }
    }

    for (pc, instr) in body.iter().enumerate() {
        let op = match instr {
            Instr::Unreachable => {
                h = ctl.last().unwrap().height;
                Op::Unreachable
            }
            Instr::Nop => Op::Nop,
            Instr::Block(bt) | Instr::Loop(bt) => {
                ctl.push(Ctl {
                    is_loop: matches!(instr, Instr::Loop(_)),
                    opener: pc,
                    height: h,
                    arity: arity(*bt),
                    fixups: Vec::new(),
                    if_pc: None,
                    else_pc: None,
                });
                Op::Nop
            }
            Instr::If(bt) => {
                h = h.saturating_sub(1);
                ctl.push(Ctl {
                    is_loop: false,
                    opener: pc,
                    height: h,
                    arity: arity(*bt),
                    fixups: Vec::new(),
                    if_pc: Some(pc),
                    else_pc: None,
                });
                Op::If { else_pc: 0 }
            }
            Instr::Else => {
                let c = ctl.last_mut().unwrap();
                c.else_pc = Some(pc);
                h = c.height;
                Op::Else { end_pc: 0 }
            }
            Instr::End => {
                let c = ctl.pop().unwrap();
                if ctl.is_empty() {
                    Op::Return
                } else {
                    let after = pc as u32 + 1;
                    for f in c.fixups {
                        match f {
                            Fixup::Op(at) => match &mut ops[at] {
                                Op::Br(t) | Op::BrIf(t) => t.pc = after,
                                _ => unreachable!(),
                            },
                            Fixup::Table(t, i) => tables[t][i].pc = after,
                        }
                    }
                    if let Some(i) = c.if_pc {
                        let else_target = c.else_pc.map_or(after, |e| e as u32 + 1);
                        ops[i] = Op::If { else_pc: else_target };
                    }
                    if let Some(e) = c.else_pc {
                        ops[e] = Op::Else { end_pc: after };
                    }
                    h = c.height + c.arity;
                    Op::Nop
                }
            }
            Instr::Br(l) => {
                let t = target(&mut ctl, *l, Fixup::Op(pc));
                h = ctl.last().unwrap().height;
                Op::Br(t)
            }
            Instr::BrIf(l) => {
                h = h.saturating_sub(1);
                Op::BrIf(target(&mut ctl, *l, Fixup::Op(pc)))
            }
            Instr::BrTable { targets, default } => {
                let t = tables.len();
                let entries = targets
                    .iter()
                    .chain(std::iter::once(default))
                    .enumerate()
                    .map(|(i, l)| target(&mut ctl, *l, Fixup::Table(t, i)))
                    .collect();
                tables.push(entries);
                h = ctl.last().unwrap().height;
                Op::BrTable(t as u32)
            }
            Instr::Return => {
                h = ctl.last().unwrap().height;
                Op::Return
            }
            Instr::Call(f) => {
                let ft = &func_types[*f as usize];
                h = h.saturating_sub(ft.params.len() as u32) + ft.results.len() as u32;
                Op::Call(*f)
            }
            Instr::CallIndirect { type_index } => {
                let ft = &m.types[*type_index as usize];
                h = h.saturating_sub(ft.params.len() as u32 + 1) + ft.results.len() as u32;
                Op::CallIndirect(*type_index)
            }
            Instr::Drop => {
                h = h.saturating_sub(1);
                Op::Drop
            }
            Instr::Select => {
                h = h.saturating_sub(2);
                Op::Select
            }
            Instr::LocalGet(i) => {
                h += 1;
                Op::LocalGet(*i)
            }
            Instr::LocalSet(i) => {
                h = h.saturating_sub(1);
                Op::LocalSet(*i)
            }
            Instr::LocalTee(i) => Op::LocalTee(*i),
            Instr::GlobalGet(i) => {
                h += 1;
                Op::GlobalGet(*i)
            }
            Instr::GlobalSet(i) => {
                h = h.saturating_sub(1);
                Op::GlobalSet(*i)
            }
            Instr::Load(op, ma) => Op::Load(*op, ma.offset),
            Instr::Store(op, ma) => {
                h = h.saturating_sub(2);
                Op::Store(*op, ma.offset)
            }
            Instr::MemorySize => {
                h += 1;
                Op::MemorySize
            }
            Instr::MemoryGrow => Op::MemoryGrow,
            Instr::I32Const(v) => {
                h += 1;
                Op::Const(*v as u32 as u64)
            }
            Instr::I64Const(v) => {
                h += 1;
                Op::Const(*v as u64)
            }
            Instr::F32Const(v) => {
                h += 1;
                Op::Const(*v as u64)
            }
            Instr::F64Const(v) => {
                h += 1;
                Op::Const(*v)
            }
            Instr::Num(op) => {
                let (params, _) = op.signature();
                h = h.saturating_sub(params.len() as u32) + 1;
                Op::Num(*op)
            }
        };
        ops.push(op);
    }

    CompiledFunc {
        params: ty.params.len() as u32,
        locals,
        results: ty.results.len() as u32,
        ops,
        tables,
    }
}
