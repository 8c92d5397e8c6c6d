//! Adapter for running a module under an external WASI runtime, one process
//! per run. The external runtime cannot expose the trace map, so the adapter
//! only reports exit status and output; a crash is inferred from the runtime
//! reporting a trap.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use crate::ExecError;

#[derive(Debug, Clone)]
pub struct ExternalRuntime {
    /// Runtime executable, e.g. `wasmtime`.
    pub program: PathBuf,
    /// Arguments placed before the module path.
    pub args: Vec<String>,
    /// Exit status the runtime uses for traps.
    pub trap_status: Option<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalOutcome {
    pub status: Option<i32>,
    pub trapped: bool,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
}

impl ExternalRuntime {
    pub fn run(&self, module: &std::path::Path, argv: &[String], stdin: &[u8]) -> Result<ExternalOutcome, ExecError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .arg(module)
            .args(argv)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ExecError::External(e.to_string()))?;
        if let Some(mut s) = child.stdin.take() {
            // A runtime that exits early closes the pipe; that is not an error.
            let _ = s.write_all(stdin);
        }
        let out = child.wait_with_output().map_err(|e| ExecError::External(e.to_string()))?;
        let status = out.status.code();
        let trapped = match self.trap_status {
            Some(t) => status == Some(t),
            None => status.is_none() || String::from_utf8_lossy(&out.stderr).contains("wasm trap"),
        };
        Ok(ExternalOutcome {
            status,
            trapped,
            stdout: out.stdout,
            stderr: out.stderr,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_runtime_is_an_error() {
        let rt = ExternalRuntime {
            program: "/nonexistent/runtime".into(),
            args: vec![],
            trap_status: None,
        };
        assert!(matches!(rt.run("x.wasm".as_ref(), &[], b""), Err(ExecError::External(_))));
    }

    #[test]
    fn status_and_output_are_captured() {
        let rt = ExternalRuntime {
            program: "sh".into(),
            args: vec!["-c".into(), "cat; echo err >&2; exit 134".into()],
            trap_status: Some(134),
        };
        let out = rt.run("module.wasm".as_ref(), &[], b"abc").unwrap();
        assert_eq!(out.stdout, b"abc");
        assert!(out.trapped);
        assert_eq!(out.status, Some(134));
    }
}
