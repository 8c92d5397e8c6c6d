//! Instances and the interpreter loop.

use wafl_core::ir::{ConstExpr, LoadOp, StoreOp};

use crate::compile::{BrTarget, CompiledModule, Op, RETURN};
use crate::numeric;
use crate::outcome::{ExecOutcome, ExecStatus, RunLimits, TrapKind};
use crate::trace::{TraceMap, MAP_SIZE};
use crate::wasi::{HostAction, WasiConfig, WasiState};
use crate::ExecError;

pub const PAGE_SIZE: usize = 65536;
const WASM_MAX_PAGES: u32 = 65536;

/// Observes calls to and returns from defined functions.
pub trait ExecHook {
    fn on_call(&mut self, _func: u32, _args: &[u64], _memory: &[u8]) {}
    fn on_return(&mut self, _func: u32, _results: &[u64], _memory: &[u8]) {}
}

/// The hook that does nothing; monomorphizes away.
pub struct NoHook;

impl ExecHook for NoHook {}

struct Frame {
    /// Defined-function index.
    func: u32,
    pc: usize,
    fp: usize,
}

enum Completion {
    Returned(Vec<u64>),
    Exit(i32),
    Trap(TrapKind, u32, u32),
    FuelExhausted,
}

/// A live instance: memory, globals, table and WASI state. Single-threaded.
pub struct Instance<'m> {
    module: &'m CompiledModule,
    memory: Vec<u8>,
    mem_max: u32,
    globals: Vec<u64>,
    table: Vec<Option<u32>>,
    wasi: WasiState,
    executed: u64,
}

impl CompiledModule {
    /// Fresh memory, globals and table; data and element segments applied.
    pub fn instantiate(&self, cfg: &WasiConfig) -> Result<Instance<'_>, ExecError> {
        for imp in &self.imports {
            match imp.host {
                Some(h) if !h.needs_preopen() || cfg.preopen.is_some() => {}
                _ => return Err(ExecError::UnsupportedImport(imp.name.clone())),
            }
        }
        let m = &self.module;
        let (memory, mem_max) = match m.memory_limits() {
            Some(l) => (vec![0u8; l.min as usize * PAGE_SIZE], l.max.unwrap_or(WASM_MAX_PAGES)),
            None => (Vec::new(), 0),
        };
        let globals = m
            .globals
            .iter()
            .map(|g| match g.init {
                ConstExpr::I32(v) => v as u32 as u64,
                ConstExpr::I64(v) => v as u64,
                ConstExpr::F32(v) => v as u64,
                ConstExpr::F64(v) => v,
                ConstExpr::GlobalGet(_) => 0,
            })
            .collect();
        let table = vec![None; m.table_type().map_or(0, |t| t.limits.min as usize)];
        let mut inst = Instance {
            module: self,
            memory,
            mem_max,
            globals,
            table,
            wasi: WasiState::new(cfg),
            executed: 0,
        };
        for seg in &m.elements {
            let off = inst.offset(seg.offset) as usize;
            let end = off + seg.functions.len();
            if end > inst.table.len() {
                return Err(ExecError::InstantiationTrap("element segment out of bounds".into()));
            }
            for (slot, f) in inst.table[off..end].iter_mut().zip(&seg.functions) {
                *slot = Some(*f);
            }
        }
        for seg in &m.data {
            let off = inst.offset(seg.offset) as usize;
            let end = off + seg.bytes.len();
            if end > inst.memory.len() {
                return Err(ExecError::InstantiationTrap("data segment out of bounds".into()));
            }
            inst.memory[off..end].copy_from_slice(&seg.bytes);
        }
        if let Some(start) = m.start {
            let limits = RunLimits::default();
            match inst.execute(start, &[], &limits, &mut NoHook) {
                Completion::Returned(_) => {}
                _ => return Err(ExecError::InstantiationTrap("start function did not return".into())),
            }
            inst.executed = 0;
        }
        Ok(inst)
    }
}

fn load(mem: &[u8], addr: u64, op: LoadOp) -> Option<u64> {
    let w = op.width() as usize;
    let a = usize::try_from(addr).ok()?;
    let bytes = mem.get(a..a.checked_add(w)?)?;
    let mut buf = [0u8; 8];
    buf[..w].copy_from_slice(bytes);
    let raw = u64::from_le_bytes(buf);
    Some(match op {
        LoadOp::I32Load | LoadOp::F32Load | LoadOp::I64Load | LoadOp::F64Load => raw,
        LoadOp::I32Load8S => raw as u8 as i8 as i32 as u32 as u64,
        LoadOp::I32Load8U | LoadOp::I64Load8U => raw as u8 as u64,
        LoadOp::I32Load16S => raw as u16 as i16 as i32 as u32 as u64,
        LoadOp::I32Load16U | LoadOp::I64Load16U => raw as u16 as u64,
        LoadOp::I64Load8S => raw as u8 as i8 as i64 as u64,
        LoadOp::I64Load16S => raw as u16 as i16 as i64 as u64,
        LoadOp::I64Load32S => raw as u32 as i32 as i64 as u64,
        LoadOp::I64Load32U => raw as u32 as u64,
    })
}

fn store(mem: &mut [u8], addr: u64, op: StoreOp, v: u64) -> Option<()> {
    let w = op.width() as usize;
    let a = usize::try_from(addr).ok()?;
    let bytes = mem.get_mut(a..a.checked_add(w)?)?;
    bytes.copy_from_slice(&v.to_le_bytes()[..w]);
    Some(())
}

impl<'m> Instance<'m> {
    fn offset(&self, e: ConstExpr) -> u32 {
        match e {
            ConstExpr::I32(v) => v as u32,
            ConstExpr::GlobalGet(g) => self.globals.get(g as usize).copied().unwrap_or(0) as u32,
            _ => 0,
        }
    }

    pub fn module(&self) -> &'m CompiledModule {
        self.module
    }

    pub fn memory(&self) -> &[u8] {
        &self.memory
    }

    pub fn memory_mut(&mut self) -> &mut [u8] {
        &mut self.memory
    }

    pub fn globals(&self) -> &[u64] {
        &self.globals
    }

    /// Calls `_start` and captures the outcome.
    pub fn run_start(&mut self, limits: &RunLimits) -> Result<ExecOutcome, ExecError> {
        self.run_start_with_hook(limits, &mut NoHook)
    }

    pub fn run_start_with_hook<H: ExecHook>(&mut self, limits: &RunLimits, hook: &mut H) -> Result<ExecOutcome, ExecError> {
        let start = self.module.export("_start").ok_or_else(|| ExecError::MissingExport("_start".into()))?;
        let ty = &self.module.func_types[start as usize];
        if !ty.params.is_empty() || !ty.results.is_empty() {
            return Err(ExecError::BadSignature("_start".into()));
        }
        Ok(self.run_export(start, &[], limits, hook).0)
    }

    /// Calls an exported function; returns the outcome and any results.
    /// A normal return is reported as `Exit(0)`.
    pub fn invoke(&mut self, name: &str, args: &[u64], limits: &RunLimits) -> Result<(ExecOutcome, Vec<u64>), ExecError> {
        self.invoke_with_hook(name, args, limits, &mut NoHook)
    }

    pub fn invoke_with_hook<H: ExecHook>(
        &mut self,
        name: &str,
        args: &[u64],
        limits: &RunLimits,
        hook: &mut H,
    ) -> Result<(ExecOutcome, Vec<u64>), ExecError> {
        let f = self.module.export(name).ok_or_else(|| ExecError::MissingExport(name.into()))?;
        if self.module.func_types[f as usize].params.len() != args.len() {
            return Err(ExecError::BadSignature(name.into()));
        }
        Ok(self.run_export(f, args, limits, hook))
    }

    fn run_export<H: ExecHook>(&mut self, f: u32, args: &[u64], limits: &RunLimits, hook: &mut H) -> (ExecOutcome, Vec<u64>) {
        let before = self.executed;
        let completion = self.execute(f, args, limits, hook);
        let (status, results) = match completion {
            Completion::Returned(r) => (ExecStatus::Exit(0), r),
            Completion::Exit(c) => (ExecStatus::Exit(c), vec![]),
            Completion::Trap(kind, function, offset) => (ExecStatus::Trap { kind, function, offset }, vec![]),
            Completion::FuelExhausted => (ExecStatus::FuelExhausted, vec![]),
        };
        let outcome = ExecOutcome {
            status,
            stdout: std::mem::take(&mut self.wasi.stdout),
            stderr: std::mem::take(&mut self.wasi.stderr),
            instructions_executed: self.executed - before,
        };
        (outcome, results)
    }

    /// Copies the trace map through the exported accessor.
    pub fn read_trace_bits(&mut self) -> Result<TraceMap, ExecError> {
        let base = self.trace_bits_base()?;
        Ok(TraceMap::from_slice(&self.memory[base..base + MAP_SIZE]))
    }

    /// Address of the trace map, validated against the memory size.
    pub fn trace_bits_base(&mut self) -> Result<usize, ExecError> {
        let f = self
            .module
            .export(wafl_core::passes::TRACE_BITS_EXPORT)
            .ok_or(ExecError::AccessorMissing)?;
        let ty = &self.module.func_types[f as usize];
        if !ty.params.is_empty() || ty.results.len() != 1 {
            return Err(ExecError::AccessorMissing);
        }
        let limits = RunLimits {
            fuel: 10_000,
            ..RunLimits::default()
        };
        let saved = self.executed;
        let result = self.execute(f, &[], &limits, &mut NoHook);
        self.executed = saved;
        let Completion::Returned(r) = result else {
            return Err(ExecError::AccessorMissing);
        };
        let base = r[0] as u32 as usize;
        if base + MAP_SIZE > self.memory.len() {
            return Err(ExecError::AccessorOutOfBounds {
                address: base as u32,
                memory: self.memory.len(),
            });
        }
        Ok(base)
    }

    fn trap(&self, kind: TrapKind, func: u32, pc: usize) -> Completion {
        Completion::Trap(kind, self.module.num_imported_funcs() + func, pc as u32)
    }

    fn execute<H: ExecHook>(&mut self, entry: u32, args: &[u64], limits: &RunLimits, hook: &mut H) -> Completion {
        let module = self.module;
        let imported = module.num_imported_funcs();
        let fuel_end = self.executed.saturating_add(limits.fuel);
        let max_pages = limits.max_pages.min(self.mem_max);

        if entry < imported {
            return match self.call_host(entry, args) {
                HostAction::Exit(c) => Completion::Exit(c),
                HostAction::Return(v) => Completion::Returned(vec![v as u64]),
            };
        }

        let mut stack: Vec<u64> = Vec::with_capacity(1024);
        let mut frames: Vec<Frame> = Vec::with_capacity(64);
        let mut func = entry - imported;
        let mut code = &module.funcs[func as usize];
        stack.extend_from_slice(args);
        let mut fp = 0usize;
        stack.resize(fp + (code.params + code.locals) as usize, 0);
        let mut base = stack.len();
        let mut pc = 0usize;
        hook.on_call(entry, args, &self.memory);

        macro_rules! branch {
            ($t:expr) => {{
                let t: BrTarget = $t;
                if t.pc == RETURN {
                    do_return!();
                } else {
                    let to = base + t.height as usize;
                    if t.keep == 1 {
                        let v = *stack.last().unwrap();
                        stack.truncate(to);
                        stack.push(v);
                    } else {
                        stack.truncate(to);
                    }
                    pc = t.pc as usize;
                    continue;
                }
            }};
        }

        macro_rules! do_return {
            () => {{
                let n = code.results as usize;
                let results_at = stack.len() - n;
                hook.on_return(imported + func, &stack[results_at..], &self.memory);
                stack.copy_within(results_at.., fp);
                stack.truncate(fp + n);
                match frames.pop() {
                    None => return Completion::Returned(stack),
                    Some(caller) => {
                        func = caller.func;
                        code = &module.funcs[func as usize];
                        pc = caller.pc;
                        fp = caller.fp;
                        base = fp + (code.params + code.locals) as usize;
                        continue;
                    }
                }
            }};
        }

        macro_rules! trap {
            ($k:expr) => {
                return self.trap($k, func, pc)
            };
        }

        macro_rules! ea {
            ($off:expr) => {
                stack.pop().unwrap() as u32 as u64 + $off as u64
            };
        }

        loop {
            if self.executed >= fuel_end {
                return Completion::FuelExhausted;
            }
            self.executed += 1;
            match code.ops[pc] {
                Op::Nop => {}
                Op::Unreachable => trap!(TrapKind::Unreachable),
                Op::If { else_pc } => {
                    if stack.pop().unwrap() as u32 == 0 {
                        pc = else_pc as usize;
                        continue;
                    }
                }
                Op::Else { end_pc } => {
                    pc = end_pc as usize;
                    continue;
                }
                Op::Br(t) => branch!(t),
                Op::BrIf(t) => {
                    if stack.pop().unwrap() as u32 != 0 {
                        branch!(t);
                    }
                }
                Op::BrTable(idx) => {
                    let i = stack.pop().unwrap() as u32 as usize;
                    let table = &code.tables[idx as usize];
                    let t = table[i.min(table.len() - 1)];
                    branch!(t);
                }
                Op::Return => do_return!(),
                Op::Call(f) | Op::CallIndirect(f) => {
                    let callee = if let Op::CallIndirect(type_index) = code.ops[pc] {
                        let i = stack.pop().unwrap() as u32 as usize;
                        let Some(&Some(callee)) = self.table.get(i) else {
                            trap!(TrapKind::UninitializedTableEntry);
                        };
                        if module.func_types[callee as usize] != module.module.types[type_index as usize] {
                            trap!(TrapKind::IndirectCallMismatch);
                        }
                        callee
                    } else {
                        f
                    };
                    if callee < imported {
                        let n = module.func_types[callee as usize].params.len();
                        let at = stack.len() - n;
                        let action = self.call_host(callee, &stack[at..]);
                        stack.truncate(at);
                        match action {
                            HostAction::Exit(c) => return Completion::Exit(c),
                            HostAction::Return(v) => stack.push(v as u64),
                        }
                    } else {
                        if frames.len() + 1 >= limits.max_call_depth as usize {
                            trap!(TrapKind::CallStackExhausted);
                        }
                        frames.push(Frame { func, pc: pc + 1, fp });
                        func = callee - imported;
                        code = &module.funcs[func as usize];
                        fp = stack.len() - code.params as usize;
                        hook.on_call(callee, &stack[fp..], &self.memory);
                        stack.resize(stack.len() + code.locals as usize, 0);
                        base = stack.len();
                        pc = 0;
                        continue;
                    }
                }
                Op::Drop => {
                    stack.pop();
                }
                Op::Select => {
                    let c = stack.pop().unwrap() as u32;
                    let b = stack.pop().unwrap();
                    if c == 0 {
                        *stack.last_mut().unwrap() = b;
                    }
                }
                Op::LocalGet(i) => stack.push(stack[fp + i as usize]),
                Op::LocalSet(i) => stack[fp + i as usize] = stack.pop().unwrap(),
                Op::LocalTee(i) => stack[fp + i as usize] = *stack.last().unwrap(),
                Op::GlobalGet(i) => stack.push(self.globals[i as usize]),
                Op::GlobalSet(i) => self.globals[i as usize] = stack.pop().unwrap(),
                Op::Load(op, off) => {
                    let addr = ea!(off);
                    match load(&self.memory, addr, op) {
                        Some(v) => stack.push(v),
                        None => trap!(TrapKind::MemoryOutOfBounds),
                    }
                }
                Op::Store(op, off) => {
                    let v = stack.pop().unwrap();
                    let addr = ea!(off);
                    if store(&mut self.memory, addr, op, v).is_none() {
                        trap!(TrapKind::MemoryOutOfBounds);
                    }
                }
                Op::MemorySize => stack.push((self.memory.len() / PAGE_SIZE) as u64),
                Op::MemoryGrow => {
                    let delta = *stack.last().unwrap() as u32;
                    let old = (self.memory.len() / PAGE_SIZE) as u32;
                    let result = match old.checked_add(delta) {
                        Some(new) if new <= max_pages => {
                            self.memory.resize(new as usize * PAGE_SIZE, 0);
                            old
                        }
                        _ => u32::MAX,
                    };
                    *stack.last_mut().unwrap() = result as u64;
                }
                Op::Const(v) => stack.push(v),
                Op::Num(op) => {
                    if let Err(k) = numeric::eval(op, &mut stack) {
                        trap!(k);
                    }
                }
            }
            pc += 1;
        }
    }

    fn call_host(&mut self, f: u32, args: &[u64]) -> HostAction {
        let host = self.module.imports[f as usize].host.expect("checked at instantiation");
        self.wasi.call(host, &mut self.memory, args, self.executed)
    }
}
