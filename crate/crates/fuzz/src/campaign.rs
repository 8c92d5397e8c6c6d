//! The fuzzing loop.

use std::path::Path;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wafl_core::SiteTable;
use wafl_exec::{classify_crash, CompiledModule, CrashClass, ExecOutcome, ExecStatus, RunLimits, MAP_SIZE};

use crate::bucket::{classify_counts, digest, has_new_bits, BucketMap, Novelty, Signature, Virgin};
use crate::delivery::Delivery;
use crate::mutate::{havoc, splice, Stage, DEFAULT_MAX_INPUT_LEN};
use crate::output::{parse_id, CaseRecord, FuzzerSetup, OutputDir, SeedInfo};
use crate::FuzzError;

#[derive(Debug, Clone)]
pub struct FuzzConfig {
    /// Instructions per execution before the run counts as a hang.
    pub fuel: u64,
    pub max_input_len: usize,
    /// Run the deterministic stages once per queue entry before havoc.
    pub deterministic: bool,
    /// Longer entries go straight to havoc; deterministic stages cost about
    /// 500 executions per input byte.
    pub det_max_len: usize,
    pub delivery: Delivery,
    pub rng_seed: u64,
    pub max_execs: Option<u64>,
    pub max_time: Option<Duration>,
    /// Stop once this many unique crashes are known.
    pub max_crashes: Option<u64>,
    pub havoc_rounds: u32,
    pub splice_rounds: u32,
    /// How often stats are persisted and reported.
    pub stats_interval: Duration,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            fuel: 1_000_000,
            max_input_len: DEFAULT_MAX_INPUT_LEN,
            deterministic: true,
            det_max_len: 64,
            delivery: Delivery::default(),
            rng_seed: 0,
            max_execs: None,
            max_time: None,
            max_crashes: None,
            havoc_rounds: 256,
            splice_rounds: 32,
            stats_interval: Duration::from_secs(1),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounts {
    #[serde(rename = "stack-canary")]
    pub stack_canary: u64,
    #[serde(rename = "heap-canary")]
    pub heap_canary: u64,
    pub builtin: u64,
}

impl OracleCounts {
    pub fn total(&self) -> u64 {
        self.stack_canary + self.heap_canary + self.builtin
    }

    fn count(&mut self, class: CrashClass) {
        match class {
            CrashClass::StackCanary => self.stack_canary += 1,
            CrashClass::HeapUnderflow | CrashClass::HeapOverflow => self.heap_canary += 1,
            CrashClass::BuiltinTrap(_) => self.builtin += 1,
            CrashClass::NotACrash => {}
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub execs: u64,
    pub execs_per_sec: f64,
    pub paths: u64,
    pub crashes: u64,
    pub crashes_by_oracle: OracleCounts,
    /// Executions that ran out of fuel.
    pub timeouts: u64,
    pub edges: u64,
    pub start_unix: u64,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone)]
pub struct QueueEntry {
    pub id: usize,
    pub input: Vec<u8>,
    pub signature: Signature,
    pub exec_time: Duration,
    pub fuel_used: u64,
    pub discovered: Duration,
    pub parent: Option<usize>,
    pub favored: bool,
    pub fuzzed: bool,
    pub det_done: bool,
}

impl QueueEntry {
    /// Smaller is better: cheap to run and short.
    fn score(&self) -> u64 {
        self.fuel_used.max(1).saturating_mul(self.input.len().max(1) as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashReport {
    pub id: usize,
    pub input: Vec<u8>,
    pub class: CrashClass,
    pub outcome: ExecStatus,
    /// (function, offset) of the trap.
    pub site: Option<(u32, u32)>,
    pub signature: Signature,
    pub discovered: Duration,
}

/// One execution, classified.
pub struct Execution {
    pub outcome: ExecOutcome,
    pub map: BucketMap,
    pub class: CrashClass,
    pub elapsed: Duration,
}

/// Admits a crash iff its path adds bits to the crash accumulator.
pub fn record_crash(
    exec: &Execution,
    input: &[u8],
    crash_virgin: &mut Virgin,
    id: usize,
    discovered: Duration,
) -> Option<CrashReport> {
    if !exec.class.is_crash() || has_new_bits(crash_virgin, &exec.map) == Novelty::None {
        return None;
    }
    let site = match exec.outcome.status {
        ExecStatus::Trap { function, offset, .. } => Some((function, offset)),
        _ => None,
    };
    Some(CrashReport {
        id,
        input: input.to_vec(),
        class: exec.class,
        outcome: exec.outcome.status,
        site,
        signature: exec.map.signature(),
        discovered,
    })
}

/// Runs `input` once on a fresh instance.
pub fn execute(
    module: &CompiledModule,
    sites: &SiteTable,
    delivery: &Delivery,
    fuel: u64,
    input: &[u8],
) -> Result<Execution, FuzzError> {
    let started = Instant::now();
    let mut inst = module.instantiate(&delivery.wasi_config(input))?;
    let limits = RunLimits {
        fuel,
        ..RunLimits::default()
    };
    let outcome = inst.run_start(&limits)?;
    let map = classify_counts(&inst.read_trace_bits()?);
    let class = classify_crash(&outcome, sites);
    Ok(Execution {
        outcome,
        map,
        class,
        elapsed: started.elapsed(),
    })
}

type Progress<'a> = &'a mut dyn FnMut(&CampaignStats);

pub struct Campaign {
    module: CompiledModule,
    sites: SiteTable,
    config: FuzzConfig,
    rng: ChaCha8Rng,
    virgin: Virgin,
    crash_virgin: Virgin,
    queue: Vec<QueueEntry>,
    crashes: Vec<CrashReport>,
    stats: CampaignStats,
    /// Cheapest entry covering each edge.
    top_rated: Vec<Option<usize>>,
    cull_needed: bool,
    pending_favored: usize,
    cursor: usize,
    started: Instant,
    /// Execs carried over from a resumed campaign.
    prior_execs: u64,
    prior_elapsed: f64,
    last_report: Instant,
    output: Option<OutputDir>,
}

impl Campaign {
    /// Checks that the module can be fuzzed: `_start` and the trace-bits
    /// accessor are exported.
    pub fn new(module: CompiledModule, sites: SiteTable, config: FuzzConfig) -> Result<Self, FuzzError> {
        if module.export("_start").is_none() {
            return Err(FuzzError::NoStart);
        }
        // A probe run surfaces a missing accessor or unsupported imports.
        execute(&module, &sites, &config.delivery, 1, &[])?;
        let now = Instant::now();
        Ok(Campaign {
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            module,
            sites,
            config,
            virgin: Virgin::default(),
            crash_virgin: Virgin::default(),
            queue: Vec::new(),
            crashes: Vec::new(),
            stats: CampaignStats {
                start_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
                ..Default::default()
            },
            top_rated: vec![None; MAP_SIZE],
            cull_needed: false,
            pending_favored: 0,
            cursor: 0,
            started: now,
            prior_execs: 0,
            prior_elapsed: 0.0,
            last_report: now,
            output: None,
        })
    }

    /// Persists the campaign under `dir`. With `resume`, previously saved
    /// queue entries and crashes are replayed instead of running seeds.
    pub fn with_output(mut self, dir: &Path, resume: bool) -> Result<Self, FuzzError> {
        self.output = Some(OutputDir::open(dir, resume)?);
        Ok(self)
    }

    pub fn queue(&self) -> &[QueueEntry] {
        &self.queue
    }

    pub fn crashes(&self) -> &[CrashReport] {
        &self.crashes
    }

    pub fn stats(&self) -> &CampaignStats {
        &self.stats
    }

    pub fn virgin(&self) -> &Virgin {
        &self.virgin
    }

    fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }

    fn budget_exhausted(&self) -> bool {
        let execs = self.stats.execs - self.prior_execs;
        self.config.max_execs.is_some_and(|m| execs >= m)
            || self.config.max_time.is_some_and(|t| self.elapsed() >= t)
            || self.config.max_crashes.is_some_and(|m| self.stats.crashes >= m)
    }

    fn execute(&mut self, input: &[u8]) -> Result<Execution, FuzzError> {
        self.stats.execs += 1;
        execute(&self.module, &self.sites, &self.config.delivery, self.config.fuel, input)
    }

    fn record(&self, id: usize, parent: Option<usize>, exec: &Execution, discovered: Duration) -> CaseRecord {
        CaseRecord {
            id,
            parent,
            status: exec.outcome.status.to_string(),
            class: exec.class.to_string(),
            signature: digest(&exec.map),
            edges: exec.map.edges(),
            instructions: exec.outcome.instructions_executed,
            discovered_ms: discovered.as_millis() as u64,
        }
    }

    fn admit(&mut self, input: Vec<u8>, exec: &Execution, parent: Option<usize>, save: bool) -> Result<(), FuzzError> {
        let id = self.queue.len();
        let discovered = self.elapsed();
        if save {
            if let Some(out) = &self.output {
                out.save_queue_entry(&input, &self.record(id, parent, exec, discovered))?;
            }
        }
        let entry = QueueEntry {
            id,
            input,
            signature: exec.map.signature(),
            exec_time: exec.elapsed,
            fuel_used: exec.outcome.instructions_executed,
            discovered,
            parent,
            favored: false,
            fuzzed: false,
            det_done: false,
        };
        for edge in entry.signature.edges() {
            let slot = &mut self.top_rated[edge as usize];
            if slot.is_none_or(|cur| entry.score() < self.queue[cur].score()) {
                *slot = Some(id);
                self.cull_needed = true;
            }
        }
        self.queue.push(entry);
        self.stats.paths = self.queue.len() as u64;
        self.stats.edges = self.virgin.edges() as u64;
        Ok(())
    }

    fn keep_crash(&mut self, exec: &Execution, input: &[u8], save: bool) -> Result<bool, FuzzError> {
        let id = self.crashes.len();
        let discovered = self.elapsed();
        let Some(report) = record_crash(exec, input, &mut self.crash_virgin, id, discovered) else {
            return Ok(false);
        };
        if save {
            if let Some(out) = &self.output {
                out.save_crash(input, exec.class.oracle(), &self.record(id, None, exec, discovered))?;
            }
        }
        self.stats.crashes_by_oracle.count(report.class);
        self.stats.crashes = self.crashes.len() as u64 + 1;
        self.crashes.push(report);
        Ok(true)
    }

    /// Executes one candidate and keeps it if it is interesting.
    fn process(&mut self, input: Vec<u8>, parent: Option<usize>, progress: Progress) -> Result<(), FuzzError> {
        let exec = self.execute(&input)?;
        if exec.class.is_crash() {
            self.keep_crash(&exec, &input, true)?;
        } else if exec.outcome.status == ExecStatus::FuelExhausted {
            self.stats.timeouts += 1;
        } else if has_new_bits(&mut self.virgin, &exec.map) != Novelty::None {
            self.admit(input, &exec, parent, true)?;
        }
        self.maybe_report(progress)
    }

    fn refresh_stats(&mut self) {
        let elapsed = self.prior_elapsed + self.elapsed().as_secs_f64();
        self.stats.elapsed_secs = elapsed;
        self.stats.execs_per_sec = if elapsed > 0.0 { self.stats.execs as f64 / elapsed } else { 0.0 };
    }

    fn maybe_report(&mut self, progress: Progress) -> Result<(), FuzzError> {
        if self.last_report.elapsed() < self.config.stats_interval {
            return Ok(());
        }
        self.last_report = Instant::now();
        self.refresh_stats();
        if let Some(out) = &self.output {
            out.write_stats(&self.stats)?;
        }
        progress(&self.stats);
        Ok(())
    }

    /// Dry-runs the seeds, three times each. Crashing, hanging and unstable
    /// seeds are reported and skipped; the campaign needs at least one
    /// usable seed.
    pub fn add_seeds(&mut self, seeds: &[(String, Vec<u8>)]) -> Result<Vec<SeedIssue>, FuzzError> {
        let mut issues = Vec::new();
        for (i, (name, input)) in seeds.iter().enumerate() {
            let runs = (0..3).map(|_| self.execute(input)).collect::<Result<Vec<_>, _>>()?;
            let first = &runs[0];
            if runs.iter().any(|r| r.map != first.map || r.outcome != first.outcome) {
                issues.push(SeedIssue::Unstable(name.clone()));
            }
            if first.class.is_crash() {
                log::warn!("seed {name} crashes: {}", first.class);
                self.keep_crash(first, input, true)?;
                issues.push(SeedIssue::Crashes(name.clone(), first.class));
            } else if first.outcome.status == ExecStatus::FuelExhausted {
                log::warn!("seed {name} exhausts the fuel limit");
                issues.push(SeedIssue::Hangs(name.clone()));
            } else if has_new_bits(&mut self.virgin, &first.map) != Novelty::None || (i == 0 && self.queue.is_empty()) {
                self.admit(input.clone(), first, None, true)?;
            } else {
                issues.push(SeedIssue::Redundant(name.clone()));
            }
        }
        if self.queue.is_empty() {
            return Err(FuzzError::AllSeedsInvalid);
        }
        if let Some(out) = &self.output {
            let hex = |b: &[u8]| Sha256::digest(b).iter().map(|x| format!("{x:02x}")).collect::<String>();
            out.write_setup(&FuzzerSetup {
                module_sha256: hex(&wafl_core::ir::encode_module(self.module.module()).unwrap_or_default()),
                seeds: seeds
                    .iter()
                    .map(|(n, s)| SeedInfo {
                        name: n.clone(),
                        sha256: hex(s),
                        len: s.len(),
                    })
                    .collect(),
                rng_seed: self.config.rng_seed,
                wasi_seed: self.config.delivery.wasi_seed,
                fuel: self.config.fuel,
                argv: self.config.delivery.argv.clone(),
                max_input_len: self.config.max_input_len,
                deterministic: self.config.deterministic,
            })?;
        }
        Ok(issues)
    }

    /// Rebuilds queue, crashes and coverage from a saved campaign by
    /// replaying every saved test case.
    pub fn resume(&mut self) -> Result<(), FuzzError> {
        let out = self.output.as_ref().ok_or(FuzzError::NothingToResume)?;
        let queue = out.queue_files()?;
        let crashes = out.crash_files()?;
        let prior = out.read_stats()?;
        for (expected, path) in queue.iter().enumerate() {
            if parse_id(path) != Some(expected) {
                return Err(FuzzError::Corrupt(format!("unexpected queue file {}", path.display())));
            }
            let input = std::fs::read(path)?;
            let parent = crate::output::OutputDir::record_for(path).ok().and_then(|r| r.parent);
            let exec = execute(&self.module, &self.sites, &self.config.delivery, self.config.fuel, &input)?;
            has_new_bits(&mut self.virgin, &exec.map);
            self.admit(input, &exec, parent, false)?;
        }
        for path in &crashes {
            let input = std::fs::read(path)?;
            let exec = execute(&self.module, &self.sites, &self.config.delivery, self.config.fuel, &input)?;
            if !self.keep_crash(&exec, &input, false)? {
                log::warn!("saved crash {} no longer adds a new path", path.display());
            }
        }
        if self.queue.is_empty() {
            return Err(FuzzError::NothingToResume);
        }
        if let Some(p) = prior {
            self.stats.execs = p.execs;
            self.stats.timeouts = p.timeouts;
            self.stats.start_unix = p.start_unix;
            self.prior_elapsed = p.elapsed_secs;
        }
        self.prior_execs = self.stats.execs;
        // Deterministic stages are not repeated for entries already fuzzed.
        let resumed = self.queue.len();
        for e in &mut self.queue[..resumed] {
            e.det_done = true;
        }
        Ok(())
    }

    /// Marks a minimal set of cheap entries that together cover every edge.
    fn cull_queue(&mut self) {
        self.cull_needed = false;
        let mut covered = vec![false; MAP_SIZE];
        for e in &mut self.queue {
            e.favored = false;
        }
        for edge in 0..MAP_SIZE {
            let Some(best) = self.top_rated[edge] else { continue };
            if covered[edge] {
                continue;
            }
            let entry = &mut self.queue[best];
            entry.favored = true;
            for e in entry.signature.edges() {
                covered[e as usize] = true;
            }
        }
        self.pending_favored = self.queue.iter().filter(|e| e.favored && !e.fuzzed).count();
    }

    /// Round-robin over the queue, mostly skipping entries that are not
    /// favored or were already fuzzed.
    fn next_entry(&mut self) -> usize {
        loop {
            let idx = self.cursor % self.queue.len();
            self.cursor = idx + 1;
            let e = &self.queue[idx];
            let skip_chance = if self.pending_favored > 0 {
                if e.favored && !e.fuzzed {
                    0
                } else {
                    99
                }
            } else if !e.favored && self.queue.len() > 10 {
                if e.fuzzed {
                    95
                } else {
                    75
                }
            } else {
                0
            };
            if self.rng.gen_range(0..100) >= skip_chance {
                return idx;
            }
        }
    }

    fn fuzz_one(&mut self, idx: usize, progress: Progress) -> Result<(), FuzzError> {
        let input = self.queue[idx].input.clone();
        if self.config.deterministic && !self.queue[idx].det_done && input.len() <= self.config.det_max_len {
            for stage in Stage::DETERMINISTIC {
                for variant in stage.variants(&input) {
                    if self.budget_exhausted() {
                        return Ok(());
                    }
                    self.process(variant, Some(idx), progress)?;
                }
            }
            self.queue[idx].det_done = true;
        }
        for _ in 0..self.config.havoc_rounds {
            if self.budget_exhausted() {
                return Ok(());
            }
            let candidate = havoc(&input, &mut self.rng, self.config.max_input_len);
            self.process(candidate, Some(idx), progress)?;
        }
        if self.queue.len() > 1 {
            for _ in 0..self.config.splice_rounds {
                if self.budget_exhausted() {
                    return Ok(());
                }
                let others: Vec<usize> = (0..self.queue.len()).filter(|i| *i != idx).collect();
                let other = *others.choose(&mut self.rng).unwrap();
                let Some(mixed) = splice(&input, &self.queue[other].input, &mut self.rng) else {
                    continue;
                };
                let candidate = havoc(&mixed, &mut self.rng, self.config.max_input_len);
                self.process(candidate, Some(idx), progress)?;
            }
        }
        let e = &mut self.queue[idx];
        if !e.fuzzed {
            e.fuzzed = true;
            if e.favored {
                self.pending_favored = self.pending_favored.saturating_sub(1);
            }
        }
        Ok(())
    }

    /// Fuzzes until the exec or time budget runs out (forever without one).
    /// `progress` is called every stats interval.
    pub fn run(&mut self, mut progress: impl FnMut(&CampaignStats)) -> Result<CampaignStats, FuzzError> {
        if self.queue.is_empty() {
            return Err(FuzzError::AllSeedsInvalid);
        }
        while !self.budget_exhausted() {
            if self.cull_needed {
                self.cull_queue();
            }
            let idx = self.next_entry();
            self.fuzz_one(idx, &mut progress)?;
        }
        self.refresh_stats();
        if let Some(out) = &self.output {
            out.write_stats(&self.stats)?;
        }
        progress(&self.stats);
        Ok(self.stats.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SeedIssue {
    Crashes(String, CrashClass),
    Hangs(String),
    Unstable(String),
    /// Adds no coverage over earlier seeds.
    Redundant(String),
}

/// Convenience wrapper: dry-run `seeds`, then fuzz under `config`.
pub fn fuzz_loop(
    module: CompiledModule,
    sites: SiteTable,
    seeds: &[(String, Vec<u8>)],
    config: FuzzConfig,
) -> Result<(CampaignStats, Vec<CrashReport>), FuzzError> {
    let mut c = Campaign::new(module, sites, config)?;
    c.add_seeds(seeds)?;
    let stats = c.run(|_| {})?;
    Ok((stats, c.crashes))
}
