//! The WASI snapshot-preview1 subset: in-memory stdio, argv/environ,
//! deterministic clocks and randomness, and an optional read-only virtual
//! directory preopened at fd 3.

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wafl_core::ir::{FuncType, ValType};

pub const MODULE: &str = "wasi_snapshot_preview1";

pub const ERRNO_SUCCESS: u32 = 0;
pub const ERRNO_BADF: u32 = 8;
pub const ERRNO_FAULT: u32 = 21;
pub const ERRNO_INVAL: u32 = 28;
pub const ERRNO_NOENT: u32 = 44;
pub const ERRNO_SPIPE: u32 = 70;
pub const ERRNO_NOTCAPABLE: u32 = 76;

/// Descriptor of the preopened virtual directory.
pub const PREOPEN_FD: u32 = 3;
/// Fixed start of the deterministic realtime clock (2020-01-01T00:00:00Z).
const EPOCH_NS: u64 = 1_577_836_800_000_000_000;

/// Host side of one run.
#[derive(Debug, Clone, Default)]
pub struct WasiConfig {
    /// argv, including argv\[0\].
    pub args: Vec<Vec<u8>>,
    /// `KEY=VALUE` entries.
    pub env: Vec<Vec<u8>>,
    pub stdin: Vec<u8>,
    /// Seed for `random_get`.
    pub seed: u64,
    /// Files of the virtual directory at fd 3. `None` disables the directory
    /// and the path imports that go with it.
    pub preopen: Option<BTreeMap<String, Vec<u8>>>,
    /// Bytes kept per output stream; later writes still report success.
    pub max_output: Option<usize>,
}

impl WasiConfig {
    pub fn with_stdin(stdin: impl Into<Vec<u8>>) -> Self {
        WasiConfig {
            args: vec![b"prog".to_vec()],
            stdin: stdin.into(),
            ..Default::default()
        }
    }

    pub fn arg(mut self, a: impl Into<Vec<u8>>) -> Self {
        self.args.push(a.into());
        self
    }

    pub fn file(mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) -> Self {
        self.preopen.get_or_insert_with(BTreeMap::new).insert(name.into(), contents.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostFn {
    ArgsGet,
    ArgsSizesGet,
    EnvironGet,
    EnvironSizesGet,
    FdRead,
    FdWrite,
    FdClose,
    FdSeek,
    FdFdstatGet,
    ProcExit,
    RandomGet,
    ClockTimeGet,
    PathOpen,
    FdPrestatGet,
    FdPrestatDirName,
}

impl HostFn {
    pub fn resolve(name: &str) -> Option<HostFn> {
        Some(match name {
            "args_get" => HostFn::ArgsGet,
            "args_sizes_get" => HostFn::ArgsSizesGet,
            "environ_get" => HostFn::EnvironGet,
            "environ_sizes_get" => HostFn::EnvironSizesGet,
            "fd_read" => HostFn::FdRead,
            "fd_write" => HostFn::FdWrite,
            "fd_close" => HostFn::FdClose,
            "fd_seek" => HostFn::FdSeek,
            "fd_fdstat_get" => HostFn::FdFdstatGet,
            "proc_exit" => HostFn::ProcExit,
            "random_get" => HostFn::RandomGet,
            "clock_time_get" => HostFn::ClockTimeGet,
            "path_open" => HostFn::PathOpen,
            "fd_prestat_get" => HostFn::FdPrestatGet,
            "fd_prestat_dir_name" => HostFn::FdPrestatDirName,
            _ => return None,
        })
    }

    /// Functions that only exist together with the virtual directory.
    pub fn needs_preopen(self) -> bool {
        matches!(self, HostFn::PathOpen | HostFn::FdPrestatGet | HostFn::FdPrestatDirName)
    }

    pub fn signature(self) -> FuncType {
        use ValType::{I32, I64};
        match self {
            HostFn::ArgsGet
            | HostFn::ArgsSizesGet
            | HostFn::EnvironGet
            | HostFn::EnvironSizesGet
            | HostFn::FdFdstatGet
            | HostFn::RandomGet
            | HostFn::FdPrestatGet => FuncType::new([I32, I32], [I32]),
            HostFn::FdRead | HostFn::FdWrite => FuncType::new([I32, I32, I32, I32], [I32]),
            HostFn::FdClose => FuncType::new([I32], [I32]),
            HostFn::FdSeek => FuncType::new([I32, I64, I32, I32], [I32]),
            HostFn::ProcExit => FuncType::new([I32], []),
            HostFn::ClockTimeGet => FuncType::new([I32, I64, I32], [I32]),
            HostFn::PathOpen => FuncType::new([I32, I32, I32, I32, I32, I64, I64, I32, I32], [I32]),
            HostFn::FdPrestatDirName => FuncType::new([I32, I32, I32], [I32]),
        }
    }
}

/// What the interpreter does after a host call.
pub enum HostAction {
    Return(u32),
    Exit(i32),
}

struct OpenFile {
    data: Vec<u8>,
    pos: u64,
}

/// Per-run WASI host state; reusable by other engines.
pub struct WasiState {
    args: Vec<Vec<u8>>,
    env: Vec<Vec<u8>>,
    stdin: Vec<u8>,
    stdin_pos: usize,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    max_output: usize,
    rng: ChaCha8Rng,
    preopen: Option<BTreeMap<String, Vec<u8>>>,
    files: BTreeMap<u32, OpenFile>,
    next_fd: u32,
}

struct Fault;

fn slice(mem: &[u8], ptr: u32, len: u32) -> Result<&[u8], Fault> {
    let start = ptr as usize;
    let end = start.checked_add(len as usize).ok_or(Fault)?;
    mem.get(start..end).ok_or(Fault)
}

fn slice_mut(mem: &mut [u8], ptr: u32, len: u32) -> Result<&mut [u8], Fault> {
    let start = ptr as usize;
    let end = start.checked_add(len as usize).ok_or(Fault)?;
    mem.get_mut(start..end).ok_or(Fault)
}

fn read_u32(mem: &[u8], ptr: u32) -> Result<u32, Fault> {
    Ok(u32::from_le_bytes(slice(mem, ptr, 4)?.try_into().unwrap()))
}

fn write_u32(mem: &mut [u8], ptr: u32, v: u32) -> Result<(), Fault> {
    slice_mut(mem, ptr, 4)?.copy_from_slice(&v.to_le_bytes());
    Ok(())
}

fn write_u64(mem: &mut [u8], ptr: u32, v: u64) -> Result<(), Fault> {
    slice_mut(mem, ptr, 8)?.copy_from_slice(&v.to_le_bytes());
    Ok(())
}

/// Iovec list as (ptr, len) pairs.
fn iovecs(mem: &[u8], ptr: u32, count: u32) -> Result<Vec<(u32, u32)>, Fault> {
    (0..count)
        .map(|i| {
            let base = ptr.checked_add(i.checked_mul(8).ok_or(Fault)?).ok_or(Fault)?;
            Ok((read_u32(mem, base)?, read_u32(mem, base.checked_add(4).ok_or(Fault)?)?))
        })
        .collect()
}

impl WasiState {
    pub fn new(cfg: &WasiConfig) -> Self {
        WasiState {
            args: cfg.args.clone(),
            env: cfg.env.clone(),
            stdin: cfg.stdin.clone(),
            stdin_pos: 0,
            stdout: Vec::new(),
            stderr: Vec::new(),
            max_output: cfg.max_output.unwrap_or(16 << 20),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            preopen: cfg.preopen.clone(),
            files: BTreeMap::new(),
            next_fd: PREOPEN_FD + 1,
        }
    }

    /// Runs `f`; `executed` drives the clocks.
    pub fn call(&mut self, f: HostFn, mem: &mut [u8], args: &[u64], executed: u64) -> HostAction {
        let a = |i: usize| args[i] as u32;
        let r = match f {
            HostFn::ProcExit => return HostAction::Exit(a(0) as i32),
            HostFn::ArgsSizesGet => Self::sizes_get(&self.args, mem, a(0), a(1)),
            HostFn::ArgsGet => Self::strings_get(&self.args, mem, a(0), a(1)),
            HostFn::EnvironSizesGet => Self::sizes_get(&self.env, mem, a(0), a(1)),
            HostFn::EnvironGet => Self::strings_get(&self.env, mem, a(0), a(1)),
            HostFn::FdWrite => self.fd_write(mem, a(0), a(1), a(2), a(3)),
            HostFn::FdRead => self.fd_read(mem, a(0), a(1), a(2), a(3)),
            HostFn::FdClose => Ok(self.fd_close(a(0))),
            HostFn::FdSeek => self.fd_seek(mem, a(0), args[1] as i64, a(2), a(3)),
            HostFn::FdFdstatGet => self.fd_fdstat_get(mem, a(0), a(1)),
            HostFn::RandomGet => slice_mut(mem, a(0), a(1)).map(|buf| {
                self.rng.fill_bytes(buf);
                ERRNO_SUCCESS
            }),
            HostFn::ClockTimeGet => {
                if a(0) > 3 {
                    Ok(ERRNO_INVAL)
                } else {
                    // One nanosecond per executed instruction.
                    let base = if a(0) == 0 { EPOCH_NS } else { 0 };
                    write_u64(mem, a(2), base + executed).map(|_| ERRNO_SUCCESS)
                }
            }
            HostFn::FdPrestatGet => self.fd_prestat_get(mem, a(0), a(1)),
            HostFn::FdPrestatDirName => self.fd_prestat_dir_name(mem, a(0), a(1), a(2)),
            HostFn::PathOpen => self.path_open(mem, a(0), a(2), a(3), a(4), a(8)),
        };
        HostAction::Return(r.unwrap_or(ERRNO_FAULT))
    }

    fn sizes_get(list: &[Vec<u8>], mem: &mut [u8], count_ptr: u32, size_ptr: u32) -> Result<u32, Fault> {
        write_u32(mem, count_ptr, list.len() as u32)?;
        write_u32(mem, size_ptr, list.iter().map(|s| s.len() as u32 + 1).sum())?;
        Ok(ERRNO_SUCCESS)
    }

    fn strings_get(list: &[Vec<u8>], mem: &mut [u8], ptrs: u32, buf: u32) -> Result<u32, Fault> {
        let mut at = buf;
        for (i, s) in list.iter().enumerate() {
            write_u32(mem, ptrs.checked_add(4 * i as u32).ok_or(Fault)?, at)?;
            let dst = slice_mut(mem, at, s.len() as u32 + 1)?;
            dst[..s.len()].copy_from_slice(s);
            dst[s.len()] = 0;
            at = at.checked_add(s.len() as u32 + 1).ok_or(Fault)?;
        }
        Ok(ERRNO_SUCCESS)
    }

    fn fd_write(&mut self, mem: &mut [u8], fd: u32, iovs: u32, count: u32, nwritten: u32) -> Result<u32, Fault> {
        let limit = self.max_output;
        let sink = match fd {
            1 => &mut self.stdout,
            2 => &mut self.stderr,
            _ if fd == PREOPEN_FD && self.preopen.is_some() || self.files.contains_key(&fd) => {
                return Ok(ERRNO_NOTCAPABLE)
            }
            _ => return Ok(ERRNO_BADF),
        };
        let mut total = 0u32;
        for (ptr, len) in iovecs(mem, iovs, count)? {
            let data = slice(mem, ptr, len)?;
            let room = limit.saturating_sub(sink.len()).min(data.len());
            sink.extend_from_slice(&data[..room]);
            total = total.wrapping_add(len);
        }
        write_u32(mem, nwritten, total)?;
        Ok(ERRNO_SUCCESS)
    }

    fn fd_read(&mut self, mem: &mut [u8], fd: u32, iovs: u32, count: u32, nread: u32) -> Result<u32, Fault> {
        let list = iovecs(mem, iovs, count)?;
        let (src, pos): (&[u8], usize) = match fd {
            0 => (&self.stdin, self.stdin_pos),
            _ => match self.files.get(&fd) {
                Some(f) => (&f.data, f.pos.min(f.data.len() as u64) as usize),
                None => return Ok(ERRNO_BADF),
            },
        };
        let mut at = pos;
        for (ptr, len) in list {
            let dst = slice_mut(mem, ptr, len)?;
            let n = dst.len().min(src.len() - at);
            dst[..n].copy_from_slice(&src[at..at + n]);
            at += n;
            if n < len as usize {
                break;
            }
        }
        write_u32(mem, nread, (at - pos) as u32)?;
        if fd == 0 {
            self.stdin_pos = at;
        } else if let Some(f) = self.files.get_mut(&fd) {
            f.pos = at as u64;
        }
        Ok(ERRNO_SUCCESS)
    }

    fn fd_close(&mut self, fd: u32) -> u32 {
        if self.files.remove(&fd).is_some() || fd <= 2 || (fd == PREOPEN_FD && self.preopen.is_some()) {
            ERRNO_SUCCESS
        } else {
            ERRNO_BADF
        }
    }

    fn fd_seek(&mut self, mem: &mut [u8], fd: u32, delta: i64, whence: u32, out: u32) -> Result<u32, Fault> {
        let Some(f) = self.files.get_mut(&fd) else {
            return Ok(if fd <= 2 { ERRNO_SPIPE } else { ERRNO_BADF });
        };
        let base = match whence {
            0 => 0,
            1 => f.pos as i64,
            2 => f.data.len() as i64,
            _ => return Ok(ERRNO_INVAL),
        };
        let Some(pos) = base.checked_add(delta).filter(|p| *p >= 0) else {
            return Ok(ERRNO_INVAL);
        };
        f.pos = pos as u64;
        write_u64(mem, out, f.pos)?;
        Ok(ERRNO_SUCCESS)
    }

    fn fd_fdstat_get(&mut self, mem: &mut [u8], fd: u32, out: u32) -> Result<u32, Fault> {
        let filetype: u8 = match fd {
            0..=2 => 2,
            _ if fd == PREOPEN_FD && self.preopen.is_some() => 3,
            _ if self.files.contains_key(&fd) => 4,
            _ => return Ok(ERRNO_BADF),
        };
        let buf = slice_mut(mem, out, 24)?;
        buf.fill(0);
        buf[0] = filetype;
        buf[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        buf[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        Ok(ERRNO_SUCCESS)
    }

    fn fd_prestat_get(&mut self, mem: &mut [u8], fd: u32, out: u32) -> Result<u32, Fault> {
        if fd != PREOPEN_FD || self.preopen.is_none() {
            return Ok(ERRNO_BADF);
        }
        write_u32(mem, out, 0)?;
        write_u32(mem, out.checked_add(4).ok_or(Fault)?, 1)?;
        Ok(ERRNO_SUCCESS)
    }

    fn fd_prestat_dir_name(&mut self, mem: &mut [u8], fd: u32, ptr: u32, len: u32) -> Result<u32, Fault> {
        if fd != PREOPEN_FD || self.preopen.is_none() {
            return Ok(ERRNO_BADF);
        }
        if len < 1 {
            return Ok(ERRNO_INVAL);
        }
        slice_mut(mem, ptr, 1)?[0] = b'/';
        Ok(ERRNO_SUCCESS)
    }

    fn path_open(&mut self, mem: &mut [u8], dirfd: u32, path: u32, len: u32, oflags: u32, fd_out: u32) -> Result<u32, Fault> {
        let Some(dir) = self.preopen.as_ref().filter(|_| dirfd == PREOPEN_FD) else {
            return Ok(ERRNO_BADF);
        };
        // creat, directory, excl, trunc
        if oflags & 0b1111 != 0 {
            return Ok(ERRNO_NOTCAPABLE);
        }
        let raw = slice(mem, path, len)?;
        let Ok(name) = std::str::from_utf8(raw) else {
            return Ok(ERRNO_INVAL);
        };
        let name = name.trim_start_matches('/').trim_start_matches("./");
        let Some(data) = dir.get(name) else {
            return Ok(ERRNO_NOENT);
        };
        let fd = self.next_fd;
        self.files.insert(fd, OpenFile {
            data: data.clone(),
            pos: 0,
        });
        self.next_fd += 1;
        write_u32(mem, fd_out, fd)?;
        Ok(ERRNO_SUCCESS)
    }
}
