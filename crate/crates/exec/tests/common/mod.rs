#![allow(dead_code)]

use wafl_exec::{HostAction, HostFn, TrapKind, WasiConfig, WasiState};
use wafl_testkit::Case;
use wasmi::{TrapCode, Engine, Extern, Linker, Module, Store, Val};

pub fn config(case: &Case) -> WasiConfig {
    let mut cfg = WasiConfig {
        args: case.args.iter().map(|a| a.as_bytes().to_vec()).collect(),
        env: case.env.iter().map(|e| e.as_bytes().to_vec()).collect(),
        stdin: case.stdin.clone(),
        ..Default::default()
    };
    for (name, data) in &case.files {
        cfg = cfg.file(name.clone(), data.clone());
    }
    cfg
}

/// What a reference run produced, in the interpreter's terms.
#[derive(Debug, PartialEq, Eq)]
pub struct Observed {
    pub status: Result<i32, TrapKind>,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
}

fn trap_kind(code: TrapCode) -> TrapKind {
    match code {
        TrapCode::UnreachableCodeReached => TrapKind::Unreachable,
        TrapCode::MemoryOutOfBounds => TrapKind::MemoryOutOfBounds,
        TrapCode::TableOutOfBounds | TrapCode::IndirectCallToNull => TrapKind::UninitializedTableEntry,
        TrapCode::IntegerDivisionByZero => TrapKind::DivByZero,
        TrapCode::IntegerOverflow | TrapCode::BadConversionToInteger => TrapKind::IntegerOverflow,
        TrapCode::StackOverflow => TrapKind::CallStackExhausted,
        TrapCode::BadSignature => TrapKind::IndirectCallMismatch,
        other => panic!("unexpected reference trap {other:?}"),
    }
}

fn to_val(ty: wasmi::ValType, raw: u64) -> Val {
    match ty {
        wasmi::ValType::I32 => Val::I32(raw as i32),
        wasmi::ValType::I64 => Val::I64(raw as i64),
        wasmi::ValType::F32 => Val::F32(wasmi::F32::from_bits(raw as u32)),
        wasmi::ValType::F64 => Val::F64(wasmi::F64::from_bits(raw)),
        other => panic!("unsupported type {other:?}"),
    }
}

pub fn from_val(v: &Val) -> u64 {
    match v {
        Val::I32(x) => *x as u32 as u64,
        Val::I64(x) => *x as u64,
        Val::F32(x) => x.to_bits() as u64,
        Val::F64(x) => x.to_bits(),
        other => panic!("unsupported value {other:?}"),
    }
}

/// Runs `_start` under wasmi with the same WASI host state. wasmi needs
/// more native stack than a test thread has for some unoptimized fixtures.
pub fn reference_run(bytes: &[u8], cfg: &WasiConfig) -> Observed {
    let (bytes, cfg) = (bytes.to_vec(), cfg.clone());
    std::thread::Builder::new()
        .stack_size(256 << 20)
        .spawn(move || reference_run_here(&bytes, &cfg))
        .unwrap()
        .join()
        .unwrap()
}

fn reference_run_here(bytes: &[u8], cfg: &WasiConfig) -> Observed {
    let engine = Engine::default();
    let module = Module::new(&engine, bytes).expect("reference compile");
    let mut store = Store::new(&engine, WasiState::new(cfg));
    let mut linker = Linker::<WasiState>::new(&engine);
    for import in module.imports() {
        let host = HostFn::resolve(import.name()).expect("known import");
        let ty = import.ty().func().expect("function import").clone();
        let results = ty.results().to_vec();
        linker
            .func_new(import.module(), import.name(), ty, move |mut caller, params, out| {
                let memory = caller.get_export("memory").and_then(Extern::into_memory).expect("memory");
                let args: Vec<u64> = params.iter().map(from_val).collect();
                let (mem, state) = memory.data_and_store_mut(&mut caller);
                match state.call(host, mem, &args, 0) {
                    HostAction::Exit(code) => Err(wasmi::Error::i32_exit(code)),
                    HostAction::Return(v) => {
                        if let Some(ty) = results.first() {
                            out[0] = to_val(*ty, v as u64);
                        }
                        Ok(())
                    }
                }
            })
            .unwrap();
    }
    let instance = linker.instantiate_and_start(&mut store, &module).expect("reference instantiate");
    let start = instance.get_func(&store, "_start").expect("_start");
    let status = match start.call(&mut store, &[], &mut []) {
        Ok(()) => Ok(0),
        Err(e) => match e.i32_exit_status() {
            Some(code) => Ok(code),
            None => Err(trap_kind(e.as_trap_code().unwrap_or_else(|| panic!("reference error {e}")))),
        },
    };
    let state = store.data_mut();
    Observed {
        status,
        stdout: std::mem::take(&mut state.stdout),
        stderr: std::mem::take(&mut state.stderr),
    }
}

/// Invokes an export under wasmi, without imports.
pub fn reference_invoke(bytes: &[u8], name: &str, args: &[u64]) -> Result<Vec<u64>, TrapKind> {
    let engine = Engine::default();
    let module = Module::new(&engine, bytes).expect("reference compile");
    let mut store = Store::new(&engine, ());
    let instance = Linker::<()>::new(&engine).instantiate_and_start(&mut store, &module).unwrap();
    let f = instance.get_func(&store, name).expect("export");
    let ty = f.ty(&store);
    let params: Vec<Val> = ty.params().iter().zip(args).map(|(t, a)| to_val(*t, *a)).collect();
    let mut results: Vec<Val> = ty.results().iter().map(|t| to_val(*t, 0)).collect();
    match f.call(&mut store, &params, &mut results) {
        Ok(()) => Ok(results.iter().map(from_val).collect()),
        Err(e) => Err(trap_kind(e.as_trap_code().expect("trap"))),
    }
}
