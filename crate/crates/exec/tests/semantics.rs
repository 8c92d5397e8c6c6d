mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use wafl_core::ir::{encode_module, parse_module};
use wafl_core::passes::{instrument, CoverageConfig, PipelineConfig};
use wafl_core::SiteKind;
use wafl_exec::{
    classify_crash, CompiledModule, CrashClass, ExecError, ExecHook, ExecStatus, RunLimits, TrapKind, WasiConfig,
    MAP_SIZE,
};
use wafl_testkit::assemble;

const WASI: &str = "wasi_snapshot_preview1";

fn compile(wat: &str) -> CompiledModule {
    CompiledModule::from_bytes(&assemble(wat)).unwrap()
}

fn start(wat: &str, limits: &RunLimits) -> wafl_exec::ExecOutcome {
    compile(wat).instantiate(&WasiConfig::default()).unwrap().run_start(limits).unwrap()
}

#[test]
fn fd_write_only_module_instantiates() {
    let cm = compile(&format!(
        r#"(module (import "{WASI}" "fd_write" (func (param i32 i32 i32 i32) (result i32))) (memory 1))"#
    ));
    assert!(cm.instantiate(&WasiConfig::default()).is_ok());
}

#[test]
fn path_open_without_directory_is_unsupported() {
    let cm = compile(&format!(
        r#"(module (import "{WASI}" "path_open"
             (func (param i32 i32 i32 i32 i32 i64 i64 i32 i32) (result i32))) (memory 1))"#
    ));
    assert!(matches!(
        cm.instantiate(&WasiConfig::default()),
        Err(ExecError::UnsupportedImport(n)) if n.contains("path_open")
    ));
    let with_dir = WasiConfig {
        preopen: Some(BTreeMap::new()),
        ..Default::default()
    };
    assert!(cm.instantiate(&with_dir).is_ok());
}

#[test]
fn unknown_imports_are_unsupported() {
    for wat in [
        r#"(module (import "env" "f" (func)))"#,
        r#"(module (import "wasi_snapshot_preview1" "sock_recv" (func)))"#,
        r#"(module (import "wasi_snapshot_preview1" "fd_write" (func (param i32) (result i32))))"#,
    ] {
        assert!(matches!(
            compile(wat).instantiate(&WasiConfig::default()),
            Err(ExecError::UnsupportedImport(_))
        ));
    }
}

#[test]
fn data_segment_beyond_memory_traps_at_instantiation() {
    let cm = compile(r#"(module (memory 1) (data (i32.const 65535) "ab"))"#);
    assert!(matches!(
        cm.instantiate(&WasiConfig::default()),
        Err(ExecError::InstantiationTrap(_))
    ));
    let cm = compile(r#"(module (memory 1) (data (i32.const 65534) "ab"))"#);
    assert_eq!(&cm.instantiate(&WasiConfig::default()).unwrap().memory()[65534..], b"ab");
}

#[test]
fn echo_copies_stdin_to_stdout() {
    for name in ["echo.O0", "echo.O2"] {
        let cm = CompiledModule::from_bytes(wafl_testkit::compiled(name)).unwrap();
        let input = b"round trip \x00\xff bytes\n".repeat(40);
        let out = cm
            .instantiate(&WasiConfig::with_stdin(input.clone()))
            .unwrap()
            .run_start(&RunLimits::default())
            .unwrap();
        assert_eq!(out.status, ExecStatus::Exit(0));
        assert_eq!(out.stdout, input);
    }
}

#[test]
fn unreachable_first_instruction() {
    let out = start(
        r#"(module (func $a) (func $start unreachable) (export "_start" (func $start)))"#,
        &RunLimits::default(),
    );
    assert_eq!(
        out.status,
        ExecStatus::Trap {
            kind: TrapKind::Unreachable,
            function: 1,
            offset: 0
        }
    );
}

#[test]
fn trap_offsets_count_instructions() {
    let out = start(
        r#"(module (memory 1) (func (export "_start")
             (block (nop) (drop (i32.load (i32.const 70000))))))"#,
        &RunLimits::default(),
    );
    // block, nop, i32.const, i32.load
    assert_eq!(
        out.status,
        ExecStatus::Trap {
            kind: TrapKind::MemoryOutOfBounds,
            function: 0,
            offset: 3
        }
    );
}

#[test]
fn infinite_loop_exhausts_fuel_exactly() {
    let wat = r#"(module (func (export "_start") (loop (br 0))))"#;
    let limits = RunLimits {
        fuel: 1000,
        ..RunLimits::default()
    };
    let out = start(wat, &limits);
    assert_eq!(out.status, ExecStatus::FuelExhausted);
    assert_eq!(out.instructions_executed, 1000);
}

#[test]
fn br_table_out_of_range_takes_default() {
    let cm = compile(
        r#"(module (func (export "f") (param i32) (result i32)
             (block (block (block (br_table 0 1 2 (local.get 0))) (return (i32.const 10)))
               (return (i32.const 11)))
             (i32.const 12)))"#,
    );
    let mut inst = cm.instantiate(&WasiConfig::default()).unwrap();
    let mut call = |i: u32| inst.invoke("f", &[i as u64], &RunLimits::default()).unwrap().1[0];
    assert_eq!([call(0), call(1), call(2)], [10, 11, 12]);
    for i in [3, 4, 1000, u32::MAX] {
        assert_eq!(call(i), 12);
    }
}

#[test]
fn memory_grow_returns_old_size_or_minus_one() {
    let cm = compile(
        r#"(module (memory 1 3) (func (export "g") (param i32) (result i32) (memory.grow (local.get 0)))
             (func (export "s") (result i32) (memory.size)))"#,
    );
    let mut inst = cm.instantiate(&WasiConfig::default()).unwrap();
    let l = RunLimits::default();
    let mut grow = |d: u32| inst.invoke("g", &[d as u64], &l).unwrap().1[0] as u32;
    assert_eq!(grow(1), 1);
    assert_eq!(grow(0), 2);
    assert_eq!(grow(2), u32::MAX);
    assert_eq!(grow(1), 2);
    assert_eq!(grow(1), u32::MAX);
    assert_eq!(inst.invoke("s", &[], &l).unwrap().1[0], 3);

    // The run limit caps growth below the declared maximum.
    let cm = compile(r#"(module (memory 1) (func (export "g") (param i32) (result i32) (memory.grow (local.get 0))))"#);
    let mut inst = cm.instantiate(&WasiConfig::default()).unwrap();
    let l = RunLimits {
        max_pages: 4,
        ..RunLimits::default()
    };
    assert_eq!(inst.invoke("g", &[3], &l).unwrap().1[0], 1);
    assert_eq!(inst.invoke("g", &[1], &l).unwrap().1[0] as u32, u32::MAX);
}

#[test]
fn grow_mem_fixture_counts_grows() {
    let out = wafl_exec::run_once(&wafl_testkit::wat_fixture("grow_mem"), &WasiConfig::default(), &RunLimits::default()).unwrap();
    assert_eq!(out.status, ExecStatus::Exit(5));
}

#[test]
fn deep_recursion_exhausts_call_stack() {
    let out = start(
        r#"(module (func $f (call $f)) (export "_start" (func $f)))"#,
        &RunLimits::default(),
    );
    assert!(matches!(out.status, ExecStatus::Trap { kind: TrapKind::CallStackExhausted, .. }));
}

#[test]
fn indirect_call_traps() {
    let wat = r#"(module (type $v (func)) (type $i (func (result i32)))
        (table 3 funcref) (elem (i32.const 0) $a)
        (func $a)
        (func (export "f") (param i32) (call_indirect (type $v) (local.get 0)))
        (func (export "g") (result i32) (call_indirect (type $i) (i32.const 0))))"#;
    let cm = compile(wat);
    let mut inst = cm.instantiate(&WasiConfig::default()).unwrap();
    let l = RunLimits::default();
    let kind = |o: wafl_exec::ExecOutcome| match o.status {
        ExecStatus::Trap { kind, .. } => Some(kind),
        _ => None,
    };
    assert_eq!(kind(inst.invoke("f", &[0], &l).unwrap().0), None);
    assert_eq!(kind(inst.invoke("f", &[1], &l).unwrap().0), Some(TrapKind::UninitializedTableEntry));
    assert_eq!(kind(inst.invoke("f", &[9], &l).unwrap().0), Some(TrapKind::UninitializedTableEntry));
    assert_eq!(kind(inst.invoke("g", &[], &l).unwrap().0), Some(TrapKind::IndirectCallMismatch));
}

#[test]
fn proc_exit_code_is_not_a_crash() {
    let out = wafl_exec::run_once(wafl_testkit::compiled("exitcode.O2"), &WasiConfig::with_stdin(vec![7]), &RunLimits::default()).unwrap();
    assert_eq!(out.status, ExecStatus::Exit(7));
    assert_eq!(classify_crash(&out, &Default::default()), CrashClass::NotACrash);
}

#[test]
fn missing_start_is_reported() {
    let cm = CompiledModule::from_bytes(&wafl_testkit::wat_fixture("no_start")).unwrap();
    let mut inst = cm.instantiate(&WasiConfig::default()).unwrap();
    assert!(matches!(inst.run_start(&RunLimits::default()), Err(ExecError::MissingExport(_))));
    let (_, r) = inst.invoke("add", &[2, 40], &RunLimits::default()).unwrap();
    assert_eq!(r, vec![42]);
}

fn instrumented(bytes: &[u8], seed: u64) -> (Vec<u8>, wafl_core::SiteTable) {
    let m = parse_module(bytes).unwrap();
    let out = instrument(&m, &PipelineConfig::all(Some(seed), Some(seed))).unwrap();
    (encode_module(&out.module).unwrap(), out.sites)
}

#[test]
fn unrun_instance_has_zero_trace_map() {
    let (bytes, _) = instrumented(wafl_testkit::compiled("magic.O2"), 3);
    let cm = CompiledModule::from_bytes(&bytes).unwrap();
    let mut inst = cm.instantiate(&WasiConfig::default()).unwrap();
    let map = inst.read_trace_bits().unwrap();
    assert_eq!(map.len(), MAP_SIZE);
    assert_eq!(map.edges_hit(), 0);
}

#[test]
fn accessor_missing_or_out_of_bounds() {
    let cm = CompiledModule::from_bytes(wafl_testkit::compiled("magic.O2")).unwrap();
    let mut inst = cm.instantiate(&WasiConfig::default()).unwrap();
    assert_eq!(inst.read_trace_bits().unwrap_err(), ExecError::AccessorMissing);

    let cm = compile(
        r#"(module (memory 2) (func (export "__fuzzm_trace_bits") (result i32) (i32.const 65537)))"#,
    );
    let mut inst = cm.instantiate(&WasiConfig::default()).unwrap();
    assert!(matches!(inst.read_trace_bits(), Err(ExecError::AccessorOutOfBounds { address: 65537, .. })));
    let cm = compile(
        r#"(module (memory 2) (func (export "__fuzzm_trace_bits") (result i32) (i32.const 65536)))"#,
    );
    assert!(cm.instantiate(&WasiConfig::default()).unwrap().read_trace_bits().is_ok());
}

#[test]
fn straight_line_program_hits_one_counter_per_site() {
    for k in [1usize, 2, 5, 17] {
        let funcs: String = (1..k).map(|i| format!("(func $f{i})")).collect();
        let calls: String = (1..k).map(|i| format!("(call $f{i})")).collect();
        let wat = format!(r#"(module (memory 1) {funcs} (func (export "_start") {calls}))"#);
        let m = parse_module(&assemble(&wat)).unwrap();
        let cfg = PipelineConfig {
            coverage: Some(CoverageConfig { seed: k as u64 }),
            ..Default::default()
        };
        let out = instrument(&m, &cfg).unwrap();
        let ids: BTreeMap<u32, u16> = out
            .sites
            .iter()
            .filter(|s| s.kind == SiteKind::Coverage)
            .map(|s| (s.function, s.id as u16))
            .collect();
        assert_eq!(ids.len(), k);

        // Execution order: _start's entry, then each callee in turn.
        let start_fn = (k - 1) as u32;
        let order = std::iter::once(start_fn).chain(0..start_fn);
        let mut expected = BTreeMap::<usize, u8>::new();
        let mut prev = 0u16;
        for f in order {
            let cur = ids[&f];
            *expected.entry((cur ^ prev) as usize).or_default() += 1;
            prev = cur >> 1;
        }

        let cm = CompiledModule::from_bytes(&encode_module(&out.module).unwrap()).unwrap();
        let mut inst = cm.instantiate(&WasiConfig::default()).unwrap();
        assert_eq!(inst.run_start(&RunLimits::default()).unwrap().status, ExecStatus::Exit(0));
        let got: BTreeMap<usize, u8> = inst.read_trace_bits().unwrap().nonzero().collect();
        assert_eq!(got, expected, "k={k}");
        if expected.values().all(|c| *c == 1) {
            assert_eq!(got.len(), k);
        }
    }
}

#[test]
fn stack_smash_is_a_stack_canary_crash() {
    let (bytes, sites) = instrumented(&wafl_testkit::wat_fixture("stack_smash"), 11);
    let cm = CompiledModule::from_bytes(&bytes).unwrap();
    let run = |input: &[u8]| {
        cm.instantiate(&WasiConfig::with_stdin(input.to_vec()))
            .unwrap()
            .run_start(&RunLimits::default())
            .unwrap()
    };
    let benign = run(b"1234");
    assert_eq!(benign.status, ExecStatus::Exit(0));
    assert_eq!(benign.stdout, b"ok\n");
    let smashed = run(b"0123456789abcdef");
    assert_eq!(classify_crash(&smashed, &sites), CrashClass::StackCanary, "{}", smashed.status);
    // Uninstrumented, the same overflow goes unnoticed.
    let plain = wafl_exec::run_once(&wafl_testkit::wat_fixture("stack_smash"), &WasiConfig::with_stdin(&b"0123456789abcdef"[..]), &RunLimits::default()).unwrap();
    assert!(!classify_crash(&plain, &sites).is_crash());
}

#[derive(Default)]
struct Recorder {
    calls: Vec<(u32, Vec<u64>)>,
    returns: Vec<(u32, Vec<u64>)>,
}

impl ExecHook for Recorder {
    fn on_call(&mut self, func: u32, args: &[u64], _memory: &[u8]) {
        self.calls.push((func, args.to_vec()));
    }
    fn on_return(&mut self, func: u32, results: &[u64], _memory: &[u8]) {
        self.returns.push((func, results.to_vec()));
    }
}

#[test]
fn hooks_see_calls_and_returns() {
    let cm = compile(
        r#"(module (func $sq (param i32) (result i32) (i32.mul (local.get 0) (local.get 0)))
             (func (export "_start") (drop (call $sq (i32.const 7))) (drop (call $sq (i32.const 3)))))"#,
    );
    let mut inst = cm.instantiate(&WasiConfig::default()).unwrap();
    let mut rec = Recorder::default();
    inst.run_start_with_hook(&RunLimits::default(), &mut rec).unwrap();
    assert_eq!(rec.calls, vec![(1, vec![]), (0, vec![7]), (0, vec![3])]);
    assert_eq!(rec.returns, vec![(0, vec![49]), (0, vec![9]), (1, vec![])]);
}

#[test]
fn runs_are_deterministic() {
    let (bytes, _) = instrumented(wafl_testkit::compiled("fsm.O2"), 5);
    let cm = CompiledModule::from_bytes(&bytes).unwrap();
    let cfg = WasiConfig {
        seed: 99,
        ..WasiConfig::with_stdin(&b"let q = \"x\" # c\n"[..])
    };
    let once = || {
        let mut inst = cm.instantiate(&cfg).unwrap();
        let out = inst.run_start(&RunLimits::default()).unwrap();
        (out, inst.read_trace_bits().unwrap())
    };
    let (a, ta) = once();
    let (b, tb) = once();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert!(ta.edges_hit() > 3);
}

#[test]
fn instances_are_isolated() {
    let cm = compile(
        r#"(module (memory 1) (global $g (mut i32) (i32.const 0))
             (func (export "_start") (i32.store (i32.const 8) (i32.const 77)) (global.set $g (i32.const 5))))"#,
    );
    let mut a = cm.instantiate(&WasiConfig::default()).unwrap();
    let b = cm.instantiate(&WasiConfig::default()).unwrap();
    a.run_start(&RunLimits::default()).unwrap();
    assert_eq!(a.memory()[8], 77);
    assert_eq!(a.globals()[0], 5);
    assert!(b.memory().iter().all(|x| *x == 0));
    assert_eq!(b.globals()[0], 0);
    let c = cm.instantiate(&WasiConfig::default()).unwrap();
    assert_eq!(c.memory()[8], 0);
}

#[test]
fn random_and_clock_are_seeded() {
    let wat = format!(
        r#"(module (import "{WASI}" "random_get" (func $r (param i32 i32) (result i32)))
             (import "{WASI}" "clock_time_get" (func $c (param i32 i64 i32) (result i32)))
             (memory 1)
             (func (export "_start") (drop (call $r (i32.const 0) (i32.const 16)))
               (drop (call $c (i32.const 1) (i64.const 0) (i32.const 16)))))"#
    );
    let cm = compile(&wat);
    let run = |seed| {
        let mut inst = cm.instantiate(&WasiConfig { seed, ..Default::default() }).unwrap();
        inst.run_start(&RunLimits::default()).unwrap();
        inst.memory()[..24].to_vec()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1)[..16], run(2)[..16]);
    assert_eq!(run(1)[16..], run(2)[16..]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fuel_bounds_instruction_count(fuel in 1u64..200_000, input in prop::collection::vec(any::<u8>(), 0..64)) {
        let cm = CompiledModule::from_bytes(wafl_testkit::compiled("wc.O0")).unwrap();
        let limits = RunLimits { fuel, ..RunLimits::default() };
        let out = cm.instantiate(&WasiConfig::with_stdin(input)).unwrap().run_start(&limits).unwrap();
        prop_assert!(out.instructions_executed <= fuel);
        if out.status == ExecStatus::FuelExhausted {
            prop_assert_eq!(out.instructions_executed, fuel);
        }
    }
}
