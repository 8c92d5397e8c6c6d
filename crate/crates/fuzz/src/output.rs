//! On-disk campaign layout: `queue/id_NNNNNN`, `crashes/id_NNNNNN_<oracle>`,
//! `stats.json` and `fuzzer_setup.json`. Each test case has a JSON record of
//! its outcome and signature under `.state/` next to it.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::campaign::CampaignStats;

/// Recorded result of one saved test case, for replay checks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: usize,
    pub parent: Option<usize>,
    /// Human-readable execution status, e.g. `exit 0`.
    pub status: String,
    /// Crash class; `none` for queue entries.
    pub class: String,
    /// SHA-256 of the bucketed trace map.
    pub signature: String,
    pub edges: usize,
    pub instructions: u64,
    pub discovered_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub name: String,
    pub sha256: String,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzerSetup {
    pub module_sha256: String,
    pub seeds: Vec<SeedInfo>,
    pub rng_seed: u64,
    pub wasi_seed: u64,
    pub fuel: u64,
    pub argv: Vec<String>,
    pub max_input_len: usize,
    pub deterministic: bool,
}

pub struct OutputDir {
    root: PathBuf,
}

pub fn queue_name(id: usize) -> String {
    format!("id_{id:06}")
}

pub fn crash_name(id: usize, oracle: &str) -> String {
    format!("id_{id:06}_{oracle}")
}

impl OutputDir {
    /// Opens `root`, creating the layout. Refuses a directory that already
    /// holds queue entries unless `resume` is set.
    pub fn open(root: &Path, resume: bool) -> io::Result<Self> {
        let out = OutputDir { root: root.to_path_buf() };
        let has_queue = out.list("queue")?.next().is_some();
        if has_queue && !resume {
            return Err(io::Error::new(
                io::ErrorKind::AlreadyExists,
                format!("{} already holds a campaign; pass --resume to continue it", root.display()),
            ));
        }
        for dir in ["queue/.state", "crashes/.state"] {
            fs::create_dir_all(root.join(dir))?;
        }
        Ok(out)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn list(&self, dir: &str) -> io::Result<impl Iterator<Item = PathBuf>> {
        let entries = match fs::read_dir(self.root.join(dir)) {
            Ok(rd) => rd.collect::<io::Result<Vec<_>>>()?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e),
        };
        let mut paths: Vec<PathBuf> = entries
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("id_")))
            .collect();
        paths.sort();
        Ok(paths.into_iter())
    }

    pub fn queue_files(&self) -> io::Result<Vec<PathBuf>> {
        Ok(self.list("queue")?.collect())
    }

    pub fn crash_files(&self) -> io::Result<Vec<PathBuf>> {
        Ok(self.list("crashes")?.collect())
    }

    fn write_case(&self, dir: &str, name: &str, input: &[u8], record: &CaseRecord) -> io::Result<()> {
        fs::write(self.root.join(dir).join(name), input)?;
        let json = serde_json::to_vec_pretty(record).map_err(io::Error::other)?;
        fs::write(self.root.join(dir).join(".state").join(format!("{name}.json")), json)
    }

    pub fn save_queue_entry(&self, input: &[u8], record: &CaseRecord) -> io::Result<()> {
        self.write_case("queue", &queue_name(record.id), input, record)
    }

    pub fn save_crash(&self, input: &[u8], oracle: &str, record: &CaseRecord) -> io::Result<()> {
        self.write_case("crashes", &crash_name(record.id, oracle), input, record)
    }

    /// The record saved next to a queue or crash file.
    pub fn record_for(case: &Path) -> io::Result<CaseRecord> {
        let name = case.file_name().unwrap_or_default().to_string_lossy();
        let path = case.parent().unwrap_or(Path::new(".")).join(".state").join(format!("{name}.json"));
        serde_json::from_slice(&fs::read(path)?).map_err(io::Error::other)
    }

    pub fn write_stats(&self, stats: &CampaignStats) -> io::Result<()> {
        self.write_json("stats.json", stats)
    }

    pub fn read_stats(&self) -> io::Result<Option<CampaignStats>> {
        match fs::read(self.root.join("stats.json")) {
            Ok(b) => Ok(Some(serde_json::from_slice(&b).map_err(io::Error::other)?)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn write_setup(&self, setup: &FuzzerSetup) -> io::Result<()> {
        self.write_json("fuzzer_setup.json", setup)
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> io::Result<()> {
        // Write-then-rename so readers never see a torn file.
        let tmp = self.root.join(format!(".{name}.tmp"));
        fs::write(&tmp, serde_json::to_vec_pretty(value).map_err(io::Error::other)?)?;
        fs::rename(tmp, self.root.join(name))
    }
}

/// Parses the numeric id out of `id_000123` or `id_000123_builtin`.
pub fn parse_id(path: &Path) -> Option<usize> {
    let name = path.file_name()?.to_str()?;
    name.strip_prefix("id_")?.get(..6)?.parse().ok()
}
