use std::collections::HashSet;

use wafl_core::ir::{encode_module, parse_module};
use wafl_core::passes::{instrument, PipelineConfig};
use wafl_core::SiteTable;
use wafl_exec::{CompiledModule, CrashClass, ExecStatus};
use wafl_fuzz::bucket::digest;
use wafl_fuzz::output::OutputDir;
use wafl_fuzz::{execute, has_new_bits, record_crash, Campaign, Delivery, FuzzConfig, FuzzError, Novelty, Virgin};

fn instrumented(bytes: &[u8]) -> (CompiledModule, SiteTable) {
    let m = parse_module(bytes).unwrap();
    let out = instrument(&m, &PipelineConfig::all(Some(1), Some(2))).unwrap();
    let bytes = encode_module(&out.module).unwrap();
    (CompiledModule::from_bytes(&bytes).unwrap(), out.sites)
}

fn empty_seed() -> Vec<(String, Vec<u8>)> {
    vec![("empty".into(), vec![])]
}

fn campaign(bytes: &[u8], config: FuzzConfig) -> Campaign {
    let (m, sites) = instrumented(bytes);
    let mut c = Campaign::new(m, sites, config).unwrap();
    c.add_seeds(&empty_seed()).unwrap();
    c
}

#[test]
fn magic_demo_yields_a_stack_canary_crash() {
    for seed in 1..=3 {
        let config = FuzzConfig {
            rng_seed: seed,
            max_execs: Some(200_000),
            max_crashes: Some(1),
            ..FuzzConfig::default()
        };
        let mut c = campaign(wafl_testkit::compiled("magic.O2"), config);
        let stats = c.run(|_| {}).unwrap();
        let crash = &c.crashes()[0];
        assert_eq!(crash.class, CrashClass::StackCanary, "seed {seed}");
        assert!(crash.input.starts_with(b"42"));
        assert_eq!(stats.crashes_by_oracle.total(), stats.crashes);
        assert_eq!(stats.paths, c.queue().len() as u64);
    }
}

#[test]
fn input_independent_program_has_one_path() {
    let config = FuzzConfig {
        max_execs: Some(3000),
        ..FuzzConfig::default()
    };
    let mut c = campaign(wafl_testkit::compiled("constant.O2"), config);
    let stats = c.run(|_| {}).unwrap();
    assert_eq!(stats.paths, 1);
    assert_eq!(stats.crashes, 0);
    assert_eq!(stats.execs, 3000);
}

const HANG_ON_H: &str = r#"(module
  (import "wasi_snapshot_preview1" "fd_read" (func $read (param i32 i32 i32 i32) (result i32)))
  (memory (export "memory") 1)
  (global $sp (mut i32) (i32.const 4096))
  (func (export "_start")
    (i32.store (i32.const 16) (i32.const 64))
    (i32.store (i32.const 20) (i32.const 1))
    (drop (call $read (i32.const 0) (i32.const 16) (i32.const 1) (i32.const 24)))
    (if (i32.eq (i32.load8_u (i32.const 64)) (i32.const 0x68))
      (then (loop $l (br $l))))
    (if (i32.eq (i32.load8_u (i32.const 64)) (i32.const 0x62))
      (then (drop (i32.div_u (i32.const 1) (i32.load8_u (i32.const 65)))))))
)"#;

#[test]
fn hangs_are_never_crashes() {
    let config = FuzzConfig {
        fuel: 100_000,
        max_execs: Some(4000),
        ..FuzzConfig::default()
    };
    let mut c = campaign(&wafl_testkit::assemble(HANG_ON_H), config);
    let stats = c.run(|_| {}).unwrap();
    assert!(stats.timeouts > 0, "{stats:?}");
    assert!(c.crashes().iter().all(|r| r.outcome != ExecStatus::FuelExhausted));
    assert!(c.crashes().iter().all(|r| matches!(r.class, CrashClass::BuiltinTrap(_))));
}

const TWO_PATHS: &str = r#"(module
  (import "wasi_snapshot_preview1" "fd_read" (func $read (param i32 i32 i32 i32) (result i32)))
  (memory (export "memory") 1)
  (global $sp (mut i32) (i32.const 4096))
  (func $boom unreachable)
  (func (export "_start")
    (i32.store (i32.const 16) (i32.const 64))
    (i32.store (i32.const 20) (i32.const 1))
    (drop (call $read (i32.const 0) (i32.const 16) (i32.const 1) (i32.const 24)))
    (if (i32.eq (i32.load8_u (i32.const 64)) (i32.const 0x61))
      (then (call $boom)))
    (if (i32.eq (i32.load8_u (i32.const 64)) (i32.const 0x62))
      (then (call $boom))))
)"#;

#[test]
fn crash_deduplication_is_by_path() {
    let (m, sites) = instrumented(&wafl_testkit::assemble(TWO_PATHS));
    let d = Delivery::default();
    let run = |input: &[u8]| execute(&m, &sites, &d, 100_000, input).unwrap();
    let mut crash_virgin = Virgin::default();
    let zero = std::time::Duration::ZERO;

    let a = run(b"a");
    assert!(a.class.is_crash());
    let first = record_crash(&a, b"a", &mut crash_virgin, 0, zero).expect("first crash admitted");
    assert!(record_crash(&run(b"a"), b"a", &mut crash_virgin, 1, zero).is_none());

    let b = run(b"b");
    let second = record_crash(&b, b"b", &mut crash_virgin, 1, zero).expect("other path admitted");
    assert_eq!(first.site, second.site);
    assert_ne!(first.signature, second.signature);

    // Benign outcomes are never recorded.
    assert!(record_crash(&run(b"c"), b"c", &mut Virgin::default(), 0, zero).is_none());
}

#[test]
fn campaigns_are_reproducible() {
    let run = || {
        let config = FuzzConfig {
            rng_seed: 9,
            max_execs: Some(5000),
            ..FuzzConfig::default()
        };
        let mut c = campaign(wafl_testkit::compiled("fsm.O2"), config);
        c.run(|_| {}).unwrap();
        c.queue().iter().map(|e| e.input.clone()).collect::<Vec<_>>()
    };
    let a = run();
    assert!(a.len() > 3);
    assert_eq!(a, run());
}

#[test]
fn every_queue_entry_adds_bits() {
    let config = FuzzConfig {
        rng_seed: 4,
        max_execs: Some(6000),
        ..FuzzConfig::default()
    };
    let (m, sites) = instrumented(wafl_testkit::compiled("calc.O2"));
    let mut c = Campaign::new(m.clone(), sites.clone(), config).unwrap();
    c.add_seeds(&[("seed".into(), b"1 2 +".to_vec())]).unwrap();
    c.run(|_| {}).unwrap();
    assert!(c.queue().len() > 3);
    let mut virgin = Virgin::default();
    let mut bits = 0;
    for e in c.queue() {
        let exec = execute(&m, &sites, &Delivery::default(), 1_000_000, &e.input).unwrap();
        assert_eq!(exec.map.signature(), e.signature);
        assert_ne!(has_new_bits(&mut virgin, &exec.map), Novelty::None);
        assert!(virgin.bits() > bits);
        bits = virgin.bits();
    }
    assert_eq!(virgin.bits(), c.virgin().bits());
}

#[test]
fn saved_artifacts_replay_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let bytes = wafl_testkit::compiled("magic.O0");
    let config = FuzzConfig {
        rng_seed: 2,
        max_execs: Some(20_000),
        ..FuzzConfig::default()
    };
    let (m, sites) = instrumented(bytes);
    let mut c = Campaign::new(m.clone(), sites.clone(), config.clone())
        .unwrap()
        .with_output(dir.path(), false)
        .unwrap();
    c.add_seeds(&empty_seed()).unwrap();
    let stats = c.run(|_| {}).unwrap();
    let paths = c.queue().len();
    let crashes = c.crashes().len();
    let bits = c.virgin().bits();

    let out = OutputDir::open(dir.path(), true).unwrap();
    let saved: Vec<_> = out.queue_files().unwrap().into_iter().chain(out.crash_files().unwrap()).collect();
    assert_eq!(saved.len(), paths + crashes);
    for path in &saved {
        let rec = OutputDir::record_for(path).unwrap();
        let exec = execute(&m, &sites, &Delivery::default(), config.fuel, &std::fs::read(path).unwrap()).unwrap();
        assert_eq!(exec.outcome.status.to_string(), rec.status, "{}", path.display());
        assert_eq!(exec.class.to_string(), rec.class);
        assert_eq!(digest(&exec.map), rec.signature);
    }
    let names: HashSet<String> = saved.iter().map(|p| p.file_name().unwrap().to_string_lossy().into()).collect();
    assert!(names.contains("id_000000"));
    let on_disk: wafl_fuzz::CampaignStats =
        serde_json::from_slice(&std::fs::read(dir.path().join("stats.json")).unwrap()).unwrap();
    assert_eq!(on_disk.execs, stats.execs);
    assert!(dir.path().join("fuzzer_setup.json").exists());

    // Starting over in the same directory is refused; resuming continues.
    assert!(matches!(
        Campaign::new(m.clone(), sites.clone(), config.clone()).unwrap().with_output(dir.path(), false),
        Err(FuzzError::Io(_))
    ));
    let mut resumed = Campaign::new(m, sites, FuzzConfig { max_execs: Some(2000), ..config })
        .unwrap()
        .with_output(dir.path(), true)
        .unwrap();
    resumed.resume().unwrap();
    assert_eq!(resumed.queue().len(), paths);
    assert_eq!(resumed.crashes().len(), crashes);
    assert_eq!(resumed.virgin().bits(), bits);
    let after = resumed.run(|_| {}).unwrap();
    assert_eq!(after.execs, stats.execs + 2000);
    assert_eq!(after.start_unix, stats.start_unix);
}

#[test]
fn file_delivery_reaches_the_program() {
    let (m, sites) = instrumented(wafl_testkit::compiled("catfile.O2"));
    let config = FuzzConfig {
        max_execs: Some(500),
        delivery: Delivery::from_template("catfile @@"),
        ..FuzzConfig::default()
    };
    let mut c = Campaign::new(m.clone(), sites.clone(), config.clone()).unwrap();
    c.add_seeds(&[("seed".into(), b"hello".to_vec())]).unwrap();
    c.run(|_| {}).unwrap();
    let exec = execute(&m, &sites, &config.delivery, config.fuel, b"file body").unwrap();
    assert_eq!(exec.outcome.status, ExecStatus::Exit(0));
    assert_eq!(exec.outcome.stdout, b"file body");
}

#[test]
fn seeds_are_validated() {
    let (m, sites) = instrumented(&wafl_testkit::assemble(TWO_PATHS));
    let mut c = Campaign::new(m, sites, FuzzConfig::default()).unwrap();
    let issues = c.add_seeds(&[("crashing".into(), b"a".to_vec())]);
    assert!(matches!(issues, Err(FuzzError::AllSeedsInvalid)));
    assert_eq!(c.crashes().len(), 1);
    let issues = c.add_seeds(&[("ok".into(), b"z".to_vec()), ("same".into(), b"y".to_vec())]).unwrap();
    assert_eq!(issues, vec![wafl_fuzz::SeedIssue::Redundant("same".into())]);

    let plain = CompiledModule::from_bytes(wafl_testkit::compiled("magic.O2")).unwrap();
    assert!(matches!(
        Campaign::new(plain, SiteTable::new(), FuzzConfig::default()),
        Err(FuzzError::Exec(wafl_exec::ExecError::AccessorMissing))
    ));
}
