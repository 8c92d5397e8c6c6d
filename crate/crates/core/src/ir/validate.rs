//! Module validation following the WebAssembly MVP typing rules.
//!
//! Function bodies are checked with the standard operand-stack/control-stack
//! algorithm. Checking of a body stops at its first error; other functions and
//! module-level items are still checked so one report lists every problem.

use std::collections::HashSet;
use std::fmt;

use super::instr::{BlockType, Instr};
use super::types::*;

const MAX_PAGES: u32 = 65_536;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    /// Combined-space function index, when the error is inside a body.
    pub function: Option<u32>,
    /// Instruction position within the body.
    pub instr: Option<usize>,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.function, self.instr) {
            (Some(func), Some(i)) => write!(f, "func {func} @{i}: {}", self.message),
            (Some(func), None) => write!(f, "func {func}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub errors: Vec<ValidationError>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    fn module_error(&mut self, message: impl Into<String>) {
        self.errors.push(ValidationError {
            function: None,
            instr: None,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.errors.is_empty() {
            return f.write_str("valid");
        }
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

/// Checks `m` and returns every problem found. An empty report means the
/// module type-checks.
pub fn validate_module(m: &Module) -> ValidationReport {
    let mut report = ValidationReport::default();

    for (i, t) in m.types.iter().enumerate() {
        if t.results.len() > 1 {
            report.module_error(format!("type {i}: multiple results are not supported"));
        }
    }

    let mut tables = usize::from(m.table.is_some());
    let mut memories = usize::from(m.memory.is_some());
    for imp in &m.imports {
        match &imp.desc {
            ImportDesc::Func(t) => {
                if *t as usize >= m.types.len() {
                    report.module_error(format!(
                        "import {}.{}: unknown type {t}",
                        imp.module, imp.name
                    ));
                }
            }
            ImportDesc::Table(t) => {
                tables += 1;
                check_table_limits(&mut report, &t.limits);
            }
            ImportDesc::Memory(l) => {
                memories += 1;
                check_memory_limits(&mut report, l);
            }
            ImportDesc::Global(_) => {}
        }
    }
    if tables > 1 {
        report.module_error("multiple tables");
    }
    if memories > 1 {
        report.module_error("multiple memories");
    }
    if let Some(t) = &m.table {
        check_table_limits(&mut report, &t.limits);
    }
    if let Some(l) = &m.memory {
        check_memory_limits(&mut report, l);
    }

    let imported_globals = m.num_imported_globals();
    for (i, g) in m.globals.iter().enumerate() {
        let idx = imported_globals + i as u32;
        match const_expr_type(m, &g.init, imported_globals) {
            Ok(t) if t == g.ty.val_type => {}
            Ok(t) => report.module_error(format!(
                "global {idx}: initializer has type {t}, expected {}",
                g.ty.val_type
            )),
            Err(e) => report.module_error(format!("global {idx}: {e}")),
        }
    }

    let mut names = HashSet::new();
    for e in &m.exports {
        if !names.insert(e.name.as_str()) {
            report.module_error(format!("duplicate export name {:?}", e.name));
        }
        let in_range = match e.kind {
            ExportKind::Func => e.index < m.num_funcs(),
            ExportKind::Table => e.index == 0 && tables > 0,
            ExportKind::Memory => e.index == 0 && memories > 0,
            ExportKind::Global => e.index < m.num_globals(),
        };
        if !in_range {
            report.module_error(format!("export {:?}: index {} out of range", e.name, e.index));
        }
    }

    if let Some(start) = m.start {
        match m.func_type(start) {
            None => report.module_error(format!("start function {start} out of range")),
            Some(t) if !t.params.is_empty() || !t.results.is_empty() => {
                report.module_error("start function must have type () -> ()")
            }
            Some(_) => {}
        }
    }

    for (i, seg) in m.elements.iter().enumerate() {
        if tables == 0 {
            report.module_error(format!("element segment {i}: no table"));
        }
        check_offset(&mut report, m, &seg.offset, imported_globals, "element segment", i);
        for f in &seg.functions {
            if *f >= m.num_funcs() {
                report.module_error(format!("element segment {i}: function {f} out of range"));
            }
        }
    }
    for (i, seg) in m.data.iter().enumerate() {
        if memories == 0 {
            report.module_error(format!("data segment {i}: no memory"));
        }
        check_offset(&mut report, m, &seg.offset, imported_globals, "data segment", i);
    }

    let imported_funcs = m.num_imported_funcs();
    for (i, f) in m.functions.iter().enumerate() {
        let func = imported_funcs + i as u32;
        let Some(ty) = m.types.get(f.type_index as usize) else {
            report.errors.push(ValidationError {
                function: Some(func),
                instr: None,
                message: format!("unknown type {}", f.type_index),
            });
            continue;
        };
        if let Err((pos, message)) = FuncValidator::new(m, ty, f, memories > 0, tables > 0).run() {
            report.errors.push(ValidationError {
                function: Some(func),
                instr: pos,
                message,
            });
        }
    }

    report
}

fn check_table_limits(report: &mut ValidationReport, l: &Limits) {
    if let Some(max) = l.max {
        if l.min > max {
            report.module_error("table size minimum must not be greater than maximum");
        }
    }
}

fn check_memory_limits(report: &mut ValidationReport, l: &Limits) {
    if l.min > MAX_PAGES || l.max.is_some_and(|m| m > MAX_PAGES) {
        report.module_error("memory size must be at most 65536 pages (4GiB)");
    }
    if let Some(max) = l.max {
        if l.min > max {
            report.module_error("memory size minimum must not be greater than maximum");
        }
    }
}

fn check_offset(
    report: &mut ValidationReport,
    m: &Module,
    e: &ConstExpr,
    imported_globals: u32,
    what: &str,
    i: usize,
) {
    match const_expr_type(m, e, imported_globals) {
        Ok(ValType::I32) => {}
        Ok(t) => report.module_error(format!("{what} {i}: offset has type {t}, expected i32")),
        Err(msg) => report.module_error(format!("{what} {i}: {msg}")),
    }
}

fn const_expr_type(m: &Module, e: &ConstExpr, imported_globals: u32) -> Result<ValType, String> {
    Ok(match e {
        ConstExpr::I32(_) => ValType::I32,
        ConstExpr::I64(_) => ValType::I64,
        ConstExpr::F32(_) => ValType::F32,
        ConstExpr::F64(_) => ValType::F64,
        ConstExpr::GlobalGet(g) => {
            if *g >= imported_globals {
                return Err(format!(
                    "constant expression may only read imported globals (global {g})"
                ));
            }
            let t = m.global_type(*g).unwrap();
            if t.mutable {
                return Err(format!("constant expression reads mutable global {g}"));
            }
            t.val_type
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FrameKind {
    Func,
    Block,
    Loop,
    If,
    Else,
}

struct Frame {
    kind: FrameKind,
    results: Vec<ValType>,
    height: usize,
    unreachable: bool,
}

impl Frame {
    fn label_types(&self) -> &[ValType] {
        match self.kind {
            FrameKind::Loop => &[],
            _ => &self.results,
        }
    }
}

type Check<T> = Result<T, String>;

struct FuncValidator<'a> {
    m: &'a Module,
    ty: &'a FuncType,
    f: &'a Function,
    has_memory: bool,
    has_table: bool,
    locals: Vec<ValType>,
    /// `None` marks a value of unknown type in unreachable code.
    vals: Vec<Option<ValType>>,
    frames: Vec<Frame>,
}

impl<'a> FuncValidator<'a> {
    fn new(m: &'a Module, ty: &'a FuncType, f: &'a Function, has_memory: bool, has_table: bool) -> Self {
        let mut locals = ty.params.clone();
        locals.extend_from_slice(&f.locals);
        FuncValidator {
            m,
            ty,
            f,
            has_memory,
            has_table,
            locals,
            vals: Vec::new(),
            frames: Vec::new(),
        }
    }

    fn run(mut self) -> Result<(), (Option<usize>, String)> {
        self.frames.push(Frame {
            kind: FrameKind::Func,
            results: self.ty.results.clone(),
            height: 0,
            unreachable: false,
        });
        for (pos, instr) in self.f.body.iter().enumerate() {
            if self.frames.is_empty() {
                return Err((Some(pos), "operators remaining after end of function".into()));
            }
            self.step(instr).map_err(|e| (Some(pos), e))?;
        }
        if !self.frames.is_empty() {
            return Err((None, "function body must end with `end`".into()));
        }
        Ok(())
    }

    fn push(&mut self, t: ValType) {
        self.vals.push(Some(t));
    }

    fn pop(&mut self) -> Check<Option<ValType>> {
        let frame = self.frames.last().unwrap();
        if self.vals.len() == frame.height {
            if frame.unreachable {
                return Ok(None);
            }
            return Err("type mismatch: operand stack underflow".into());
        }
        Ok(self.vals.pop().unwrap())
    }

    fn pop_expect(&mut self, expect: ValType) -> Check<()> {
        match self.pop()? {
            None => Ok(()),
            Some(t) if t == expect => Ok(()),
            Some(t) => Err(format!("type mismatch: expected {expect}, found {t}")),
        }
    }

    fn pop_all(&mut self, types: &[ValType]) -> Check<()> {
        for t in types.iter().rev() {
            self.pop_expect(*t)?;
        }
        Ok(())
    }

    fn push_all(&mut self, types: &[ValType]) {
        for t in types {
            self.push(*t);
        }
    }

    fn set_unreachable(&mut self) {
        let frame = self.frames.last_mut().unwrap();
        self.vals.truncate(frame.height);
        frame.unreachable = true;
    }

    fn push_frame(&mut self, kind: FrameKind, bt: BlockType) {
        self.frames.push(Frame {
            kind,
            results: bt.results(),
            height: self.vals.len(),
            unreachable: false,
        });
    }

    fn label(&self, depth: u32) -> Check<Vec<ValType>> {
        let n = self.frames.len();
        if depth as usize >= n {
            return Err(format!("unknown label {depth}"));
        }
        Ok(self.frames[n - 1 - depth as usize].label_types().to_vec())
    }

    fn check_frame_exit(&mut self) -> Check<()> {
        let results = self.frames.last().unwrap().results.clone();
        self.pop_all(&results)?;
        if self.vals.len() != self.frames.last().unwrap().height {
            return Err("type mismatch: values remaining on stack at end of block".into());
        }
        Ok(())
    }

    fn local(&self, idx: u32) -> Check<ValType> {
        self.locals
            .get(idx as usize)
            .copied()
            .ok_or_else(|| format!("unknown local {idx}"))
    }

    fn need_memory(&self) -> Check<()> {
        if self.has_memory {
            Ok(())
        } else {
            Err("unknown memory 0".into())
        }
    }

    fn step(&mut self, instr: &Instr) -> Check<()> {
        match instr {
            Instr::Unreachable => self.set_unreachable(),
            Instr::Nop => {}
            Instr::Block(bt) => self.push_frame(FrameKind::Block, *bt),
            Instr::Loop(bt) => self.push_frame(FrameKind::Loop, *bt),
            Instr::If(bt) => {
                self.pop_expect(ValType::I32)?;
                self.push_frame(FrameKind::If, *bt);
            }
            Instr::Else => {
                if self.frames.last().unwrap().kind != FrameKind::If {
                    return Err("else found outside of an `if` block".into());
                }
                self.check_frame_exit()?;
                let frame = self.frames.last_mut().unwrap();
                frame.kind = FrameKind::Else;
                frame.unreachable = false;
            }
            Instr::End => {
                self.check_frame_exit()?;
                let frame = self.frames.pop().unwrap();
                if frame.kind == FrameKind::If && !frame.results.is_empty() {
                    return Err("type mismatch: if without else must not produce a value".into());
                }
                if frame.kind != FrameKind::Func {
                    self.push_all(&frame.results);
                }
            }
            Instr::Br(l) => {
                let types = self.label(*l)?;
                self.pop_all(&types)?;
                self.set_unreachable();
            }
            Instr::BrIf(l) => {
                self.pop_expect(ValType::I32)?;
                let types = self.label(*l)?;
                self.pop_all(&types)?;
                self.push_all(&types);
            }
            Instr::BrTable { targets, default } => {
                self.pop_expect(ValType::I32)?;
                let types = self.label(*default)?;
                for t in targets {
                    if self.label(*t)? != types {
                        return Err("type mismatch: br_table targets have inconsistent types".into());
                    }
                }
                self.pop_all(&types)?;
                self.set_unreachable();
            }
            Instr::Return => {
                let results = self.ty.results.clone();
                self.pop_all(&results)?;
                self.set_unreachable();
            }
            Instr::Call(f) => {
                let ty = self
                    .m
                    .func_type(*f)
                    .ok_or_else(|| format!("unknown function {f}"))?
                    .clone();
                self.pop_all(&ty.params)?;
                self.push_all(&ty.results);
            }
            Instr::CallIndirect { type_index } => {
                if !self.has_table {
                    return Err("unknown table 0".into());
                }
                let ty = self
                    .m
                    .types
                    .get(*type_index as usize)
                    .ok_or_else(|| format!("unknown type {type_index}"))?
                    .clone();
                self.pop_expect(ValType::I32)?;
                self.pop_all(&ty.params)?;
                self.push_all(&ty.results);
            }
            Instr::Drop => {
                self.pop()?;
            }
            Instr::Select => {
                self.pop_expect(ValType::I32)?;
                let a = self.pop()?;
                let b = self.pop()?;
                match (a, b) {
                    (Some(x), Some(y)) if x != y => {
                        return Err(format!("type mismatch: select operands {y} and {x}"))
                    }
                    (Some(t), _) | (None, Some(t)) => self.push(t),
                    (None, None) => self.vals.push(None),
                }
            }
            Instr::LocalGet(i) => {
                let t = self.local(*i)?;
                self.push(t);
            }
            Instr::LocalSet(i) => {
                let t = self.local(*i)?;
                self.pop_expect(t)?;
            }
            Instr::LocalTee(i) => {
                let t = self.local(*i)?;
                self.pop_expect(t)?;
                self.push(t);
            }
            Instr::GlobalGet(g) => {
                let t = self.m.global_type(*g).ok_or_else(|| format!("unknown global {g}"))?;
                self.push(t.val_type);
            }
            Instr::GlobalSet(g) => {
                let t = self.m.global_type(*g).ok_or_else(|| format!("unknown global {g}"))?;
                if !t.mutable {
                    return Err(format!("global {g} is immutable"));
                }
                self.pop_expect(t.val_type)?;
            }
            Instr::Load(op, arg) => {
                self.need_memory()?;
                if 1u64 << arg.align > u64::from(op.width()) {
                    return Err("alignment must not be larger than natural".into());
                }
                self.pop_expect(ValType::I32)?;
                self.push(op.val_type());
            }
            Instr::Store(op, arg) => {
                self.need_memory()?;
                if 1u64 << arg.align > u64::from(op.width()) {
                    return Err("alignment must not be larger than natural".into());
                }
                self.pop_expect(op.val_type())?;
                self.pop_expect(ValType::I32)?;
            }
            Instr::MemorySize => {
                self.need_memory()?;
                self.push(ValType::I32);
            }
            Instr::MemoryGrow => {
                self.need_memory()?;
                self.pop_expect(ValType::I32)?;
                self.push(ValType::I32);
            }
            Instr::I32Const(_) => self.push(ValType::I32),
            Instr::I64Const(_) => self.push(ValType::I64),
            Instr::F32Const(_) => self.push(ValType::F32),
            Instr::F64Const(_) => self.push(ValType::F64),
            Instr::Num(op) => {
                let (params, result) = op.signature();
                self.pop_all(params)?;
                self.push(result);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::NumOp;

    fn single(results: &[ValType], body: Vec<Instr>) -> Module {
        Module {
            types: vec![FuncType::new([], results.to_vec())],
            functions: vec![Function {
                type_index: 0,
                locals: vec![],
                body,
            }],
            ..Default::default()
        }
    }

    #[test]
    fn const_matches_result() {
        let m = single(&[ValType::I32], vec![Instr::I32Const(1), Instr::End]);
        assert!(validate_module(&m).is_valid());
    }

    #[test]
    fn wrong_result_type_is_reported() {
        let m = single(&[ValType::I32], vec![Instr::I64Const(1), Instr::End]);
        let r = validate_module(&m);
        assert_eq!(r.errors.len(), 1);
        assert_eq!(r.errors[0].function, Some(0));
        assert!(r.errors[0].message.contains("type mismatch"), "{r}");
    }

    #[test]
    fn unreachable_makes_stack_polymorphic() {
        let m = single(
            &[ValType::I32],
            vec![Instr::Unreachable, Instr::Num(NumOp::I32Add), Instr::End],
        );
        assert!(validate_module(&m).is_valid());
    }

    #[test]
    fn branch_depth_out_of_range() {
        let m = single(&[], vec![Instr::Block(BlockType::Empty), Instr::Br(2), Instr::End, Instr::End]);
        let r = validate_module(&m);
        assert_eq!(r.errors[0].instr, Some(1));
    }

    #[test]
    fn loop_label_takes_no_values() {
        // br 0 to a loop carries nothing even though the loop yields i32.
        let m = single(
            &[ValType::I32],
            vec![
                Instr::Loop(BlockType::Value(ValType::I32)),
                Instr::I32Const(0),
                Instr::BrIf(0),
                Instr::I32Const(7),
                Instr::End,
                Instr::End,
            ],
        );
        assert!(validate_module(&m).is_valid(), "{}", validate_module(&m));
    }

    #[test]
    fn if_without_else_cannot_yield() {
        let m = single(
            &[ValType::I32],
            vec![
                Instr::I32Const(1),
                Instr::If(BlockType::Value(ValType::I32)),
                Instr::I32Const(2),
                Instr::End,
                Instr::End,
            ],
        );
        assert!(!validate_module(&m).is_valid());
    }

    #[test]
    fn trailing_instructions_rejected() {
        let m = single(&[], vec![Instr::End, Instr::Nop]);
        assert!(!validate_module(&m).is_valid());
        let m = single(&[], vec![Instr::Nop]);
        assert!(!validate_module(&m).is_valid());
    }

    #[test]
    fn global_init_type_mismatch() {
        let mut m = Module::default();
        m.add_global(ValType::I32, true, ConstExpr::I64(0));
        let r = validate_module(&m);
        assert_eq!(r.errors.len(), 1);
        assert!(r.errors[0].message.contains("initializer"));
    }

    #[test]
    fn memory_instructions_need_memory() {
        let m = single(
            &[ValType::I32],
            vec![Instr::I32Const(0), Instr::Load(crate::ir::LoadOp::I32Load, Default::default()), Instr::End],
        );
        assert!(validate_module(&m).errors[0].message.contains("memory"));
    }

    #[test]
    fn every_function_is_reported() {
        let mut m = single(&[ValType::I32], vec![Instr::I64Const(1), Instr::End]);
        m.functions.push(m.functions[0].clone());
        m.exports.push(Export {
            name: "x".into(),
            kind: ExportKind::Func,
            index: 9,
        });
        assert_eq!(validate_module(&m).errors.len(), 3);
    }
}
