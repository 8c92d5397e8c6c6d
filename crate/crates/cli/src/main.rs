use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use wafl_core::ir::{encode_module, parse_module, ParseError};
use wafl_core::passes::{instrument, HeapFn, HeapOverrides, PassError, PipelineConfig};
use wafl_core::SiteTable;
use wafl_exec::{CompiledModule, ExecError, ExecStatus, RunLimits};
use wafl_fuzz::bucket::digest;
use wafl_fuzz::{bucket, Campaign, CampaignStats, Delivery, FuzzConfig, FuzzError};

/// Exit codes: 0 success, 1 unreadable or invalid input, 2 usage error or
/// unsupported module, 10 crash, 11 fuel exhausted.
#[derive(Parser)]
#[command(name = "wafl", version, about = "Canary hardening and coverage-guided fuzzing for WebAssembly binaries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Instrument a module with canaries and coverage feedback.
    Instrument(InstrumentArgs),
    /// Execute a module once on one input.
    Run(RunArgs),
    /// Fuzz an instrumented module.
    Fuzz(FuzzArgs),
    /// Dump the coverage map of one execution.
    Cov(RunArgs),
}

#[derive(Args)]
struct InstrumentArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    no_stack_canaries: bool,
    #[arg(long)]
    no_heap_canaries: bool,
    #[arg(long)]
    no_coverage: bool,
    /// Global holding the shadow stack pointer.
    #[arg(long, default_value_t = 0)]
    sp_global: u32,
    #[arg(long)]
    canary_seed: Option<u64>,
    #[arg(long)]
    cov_seed: Option<u64>,
    /// Allocator by function index, e.g. `malloc=12`; repeatable.
    #[arg(long, value_name = "KIND=FUNC")]
    alloc: Vec<String>,
    /// Deallocator by function index, e.g. `free=13` or `13`; repeatable.
    #[arg(long, value_name = "FUNC")]
    dealloc: Vec<String>,
}

#[derive(Args, Clone)]
struct Exec {
    module: PathBuf,
    /// SiteTable sidecar; defaults to `<module>.sites.json` when present.
    #[arg(long)]
    sites: Option<PathBuf>,
    /// Instruction budget per execution.
    #[arg(long, default_value_t = RunLimits::default().fuel)]
    fuel: u64,
    /// Command line for the program; `@@` is replaced by the input file.
    #[arg(long, value_name = "TEMPLATE")]
    argv: Option<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    exec: Exec,
    /// Input file; `-` reads stdin. Empty input when omitted.
    input: Option<PathBuf>,
}

#[derive(Args)]
struct FuzzArgs {
    #[command(flatten)]
    exec: Exec,
    /// Directory of seed inputs.
    #[arg(long)]
    seeds: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    /// Time budget, e.g. `90`, `90s`, `10m`, `2h`.
    #[arg(long, value_parser = parse_duration)]
    time: Option<Duration>,
    /// Execution budget per campaign.
    #[arg(long)]
    execs: Option<u64>,
    /// Stop a campaign once it has saved this many crashes.
    #[arg(long)]
    max_crashes: Option<u64>,
    #[arg(long)]
    resume: bool,
    /// Independent campaigns in `<output>/job_N`.
    #[arg(long, default_value_t = 1)]
    jobs: u32,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    /// Skip the deterministic mutation stages.
    #[arg(long)]
    no_deterministic: bool,
    #[arg(long, default_value_t = wafl_fuzz::mutate::DEFAULT_MAX_INPUT_LEN)]
    max_len: usize,
}

fn parse_duration(s: &str) -> Result<Duration, String> {
    let (num, unit) = s.split_at(s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len()));
    let n: u64 = num.parse().map_err(|_| format!("bad duration `{s}`"))?;
    let secs = match unit {
        "" | "s" => n,
        "m" => n * 60,
        "h" => n * 3600,
        _ => return Err(format!("bad duration unit in `{s}`")),
    };
    Ok(Duration::from_secs(secs))
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(msg: impl std::fmt::Display) -> Self {
        Failure {
            code: 2,
            error: anyhow!("{msg}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }
}

impl From<ParseError> for Failure {
    fn from(e: ParseError) -> Self {
        let code = if matches!(e, ParseError::UnsupportedFeature(_)) { 2 } else { 1 };
        Failure { code, error: e.into() }
    }
}

impl From<PassError> for Failure {
    fn from(e: PassError) -> Self {
        let code = if matches!(e, PassError::InvalidInput(_)) { 1 } else { 2 };
        Failure { code, error: e.into() }
    }
}

impl From<ExecError> for Failure {
    fn from(e: ExecError) -> Self {
        let code = match e {
            ExecError::Parse(_) | ExecError::Invalid(_) => 1,
            _ => 2,
        };
        Failure { code, error: e.into() }
    }
}

impl From<FuzzError> for Failure {
    fn from(e: FuzzError) -> Self {
        match e {
            FuzzError::Exec(e) => e.into(),
            FuzzError::NoStart => Failure::usage("module does not export _start"),
            other => Failure {
                code: 1,
                error: other.into(),
            },
        }
    }
}

type CliResult = Result<ExitCode, Failure>;

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

fn sidecar(module: &Path) -> PathBuf {
    let mut s = module.as_os_str().to_owned();
    s.push(".sites.json");
    PathBuf::from(s)
}

fn cmd_instrument(a: InstrumentArgs) -> CliResult {
    if a.input == a.output {
        return Err(Failure::usage("output path must differ from the input path"));
    }
    let mut cfg = PipelineConfig::all(a.canary_seed, a.cov_seed);
    if a.no_heap_canaries {
        cfg.heap = None;
    }
    if a.no_stack_canaries {
        cfg.stack = None;
    }
    if a.no_coverage {
        cfg.coverage = None;
    }
    if !cfg.any_enabled() {
        return Err(Failure::usage("all passes are disabled"));
    }
    if let Some(stack) = &mut cfg.stack {
        stack.sp_global = a.sp_global;
    }
    if let Some(heap) = &mut cfg.heap {
        heap.overrides = overrides(&a.alloc, &a.dealloc).map_err(Failure::usage)?;
    } else if !a.alloc.is_empty() || !a.dealloc.is_empty() {
        return Err(Failure::usage("--alloc/--dealloc need the heap pass"));
    }

    let module = parse_module(&read(&a.input)?)?;
    let out = instrument(&module, &cfg)?;
    let bytes = encode_module(&out.module).map_err(anyhow::Error::from)?;
    fs::write(&a.output, bytes).with_context(|| format!("cannot write {}", a.output.display()))?;
    let side = sidecar(&a.output);
    fs::write(&side, out.sites.to_json()).with_context(|| format!("cannot write {}", side.display()))?;

    for s in &out.summaries {
        println!("{:<8} {} functions instrumented, {} sites", s.pass, s.functions, s.sites);
        for w in &s.warnings {
            println!("         warning: {w}");
        }
    }
    println!("wrote {} and {}", a.output.display(), side.display());
    Ok(ExitCode::SUCCESS)
}

fn overrides(alloc: &[String], dealloc: &[String]) -> Result<HeapOverrides, String> {
    let mut o = HeapOverrides::default();
    for entry in alloc {
        let (kind, idx) = HeapOverrides::parse_entry(entry)?;
        if !kind.allocates() {
            return Err(format!("`{entry}` is not an allocator"));
        }
        o.set(kind, idx);
    }
    for entry in dealloc {
        let (kind, idx) = match entry.parse::<u32>() {
            Ok(idx) => (HeapFn::Free, idx),
            Err(_) => HeapOverrides::parse_entry(entry)?,
        };
        if kind != HeapFn::Free {
            return Err(format!("`{entry}` is not a deallocator"));
        }
        o.set(kind, idx);
    }
    Ok(o)
}

struct Loaded {
    module: CompiledModule,
    sites: SiteTable,
    delivery: Delivery,
}

fn load(e: &Exec) -> Result<Loaded, Failure> {
    let module = CompiledModule::from_bytes(&read(&e.module)?)?;
    let sites = match &e.sites {
        Some(p) => Some(p.clone()),
        None => Some(sidecar(&e.module)).filter(|p| p.exists()),
    };
    let sites = match sites {
        Some(p) => SiteTable::from_json(&String::from_utf8_lossy(&read(&p)?))
            .with_context(|| format!("bad site table {}", p.display()))?,
        None => SiteTable::new(),
    };
    let delivery = e.argv.as_deref().map(Delivery::from_template).unwrap_or_default();
    Ok(Loaded {
        module,
        sites,
        delivery,
    })
}

fn read_input(p: &Option<PathBuf>) -> anyhow::Result<Vec<u8>> {
    match p {
        None => Ok(Vec::new()),
        Some(p) if p.as_os_str() == "-" => {
            let mut buf = Vec::new();
            std::io::stdin().read_to_end(&mut buf)?;
            Ok(buf)
        }
        Some(p) => read(p),
    }
}

fn cmd_run(a: RunArgs) -> CliResult {
    let l = load(&a.exec)?;
    if l.module.export("_start").is_none() {
        return Err(Failure::usage("module does not export _start"));
    }
    let input = read_input(&a.input)?;
    let mut inst = l.module.instantiate(&l.delivery.wasi_config(&input))?;
    let outcome = inst.run_start(&RunLimits {
        fuel: a.exec.fuel,
        ..RunLimits::default()
    })?;
    let class = wafl_exec::classify_crash(&outcome, &l.sites);
    std::io::stdout().write_all(&outcome.stdout).context("stdout")?;
    let mut err = std::io::stderr().lock();
    err.write_all(&outcome.stderr).context("stderr")?;
    writeln!(err, "status: {}", outcome.status).context("stderr")?;
    writeln!(err, "oracle: {}", class.oracle()).context("stderr")?;
    writeln!(err, "class: {class}").context("stderr")?;
    writeln!(err, "instructions: {}", outcome.instructions_executed).context("stderr")?;
    if let Ok(map) = inst.read_trace_bits() {
        let b = bucket::classify_counts(&map);
        writeln!(err, "edges: {}", b.edges()).context("stderr")?;
        writeln!(err, "signature: {}", digest(&b)).context("stderr")?;
    }
    Ok(ExitCode::from(match outcome.status {
        _ if class.is_crash() => 10,
        ExecStatus::FuelExhausted => 11,
        _ => 0,
    }))
}

fn cmd_cov(a: RunArgs) -> CliResult {
    let l = load(&a.exec)?;
    let input = read_input(&a.input)?;
    let mut inst = l.module.instantiate(&l.delivery.wasi_config(&input))?;
    // Probe the accessor first so uninstrumented modules fail fast.
    inst.trace_bits_base()?;
    let outcome = inst.run_start(&RunLimits {
        fuel: a.exec.fuel,
        ..RunLimits::default()
    })?;
    let map = inst.read_trace_bits()?;
    let mut out = std::io::stdout().lock();
    for (i, c) in map.nonzero() {
        writeln!(out, "{i:5} {c:3} {:3}", bucket::bucket(c)).context("stdout")?;
    }
    writeln!(out, "edges: {}", map.edges_hit()).context("stdout")?;
    eprintln!("status: {}", outcome.status);
    Ok(ExitCode::SUCCESS)
}

fn read_seeds(dir: &Option<PathBuf>) -> anyhow::Result<Vec<(String, Vec<u8>)>> {
    let Some(dir) = dir else {
        return Ok(vec![("empty".into(), Vec::new())]);
    };
    let mut seeds = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot list {}", dir.display()))? {
        let path = entry?.path();
        if path.is_file() {
            let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
            seeds.push((name, read(&path)?));
        }
    }
    seeds.sort();
    if seeds.is_empty() {
        anyhow::bail!("no seed files in {}", dir.display());
    }
    Ok(seeds)
}

fn stats_line(job: Option<u32>, s: &CampaignStats) -> String {
    let prefix = job.map(|j| format!("[job {j}] ")).unwrap_or_default();
    format!(
        "{prefix}execs {} ({:.0}/s)  paths {}  crashes {} (stack {}, heap {}, builtin {})  timeouts {}  edges {}",
        s.execs,
        s.execs_per_sec,
        s.paths,
        s.crashes,
        s.crashes_by_oracle.stack_canary,
        s.crashes_by_oracle.heap_canary,
        s.crashes_by_oracle.builtin,
        s.timeouts,
        s.edges
    )
}

fn run_campaign(
    l: &Loaded,
    config: FuzzConfig,
    out: &Path,
    resume: bool,
    seeds: &[(String, Vec<u8>)],
    job: Option<u32>,
) -> Result<CampaignStats, Failure> {
    let mut c = Campaign::new(l.module.clone(), l.sites.clone(), config)?.with_output(out, resume)?;
    if resume {
        c.resume()?;
    } else {
        for issue in c.add_seeds(seeds)? {
            eprintln!("seed issue: {issue:?}");
        }
    }
    let stats = c.run(|s| eprintln!("{}", stats_line(job, s)))?;
    Ok(stats)
}

fn cmd_fuzz(a: FuzzArgs) -> CliResult {
    let l = load(&a.exec)?;
    if l.module.export("_start").is_none() {
        return Err(Failure::usage("module does not export _start"));
    }
    if a.jobs == 0 {
        return Err(Failure::usage("--jobs must be at least 1"));
    }
    let seeds = if a.resume { Vec::new() } else { read_seeds(&a.seeds)? };
    let config = |job: u32| FuzzConfig {
        fuel: a.exec.fuel,
        max_input_len: a.max_len,
        deterministic: !a.no_deterministic,
        delivery: l.delivery.clone(),
        rng_seed: a.rng_seed.wrapping_add(job as u64),
        max_execs: a.execs,
        max_time: a.time,
        max_crashes: a.max_crashes,
        ..FuzzConfig::default()
    };
    let results: Vec<Result<CampaignStats, Failure>> = if a.jobs == 1 {
        vec![run_campaign(&l, config(0), &a.output, a.resume, &seeds, None)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..a.jobs)
                .map(|j| {
                    let (l, seeds, cfg) = (&l, &seeds, config(j));
                    let dir = a.output.join(format!("job_{j}"));
                    scope.spawn(move || run_campaign(l, cfg, &dir, a.resume, seeds, Some(j)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("campaign thread panicked")).collect()
        })
    };
    let mut failed = None;
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => println!("{}", stats_line((a.jobs > 1).then_some(j as u32), &s)),
            Err(e) => failed = Some(e),
        }
    }
    match failed {
        Some(e) => Err(e),
        None => Ok(ExitCode::SUCCESS),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Instrument(a) => cmd_instrument(a),
        Command::Run(a) => cmd_run(a),
        Command::Fuzz(a) => cmd_fuzz(a),
        Command::Cov(a) => cmd_cov(a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
