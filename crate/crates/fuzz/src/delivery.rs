use std::collections::BTreeMap;

use wafl_exec::WasiConfig;

/// Placeholder in an argv template that stands for the input file.
pub const FILE_PLACEHOLDER: &str = "@@";
/// Name of the virtual file holding the input when `@@` is used.
pub const INPUT_FILE: &str = ".cur_input";

/// How a test case reaches the program: stdin, or a file named on the
/// command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    /// argv including argv\[0\].
    pub argv: Vec<String>,
    /// Seed of the program's `random_get`.
    pub wasi_seed: u64,
}

impl Default for Delivery {
    fn default() -> Self {
        Delivery {
            argv: vec!["prog".into()],
            wasi_seed: 0,
        }
    }
}

impl Delivery {
    /// Parses a whitespace-separated template such as `prog -x @@`.
    pub fn from_template(template: &str) -> Self {
        let argv: Vec<String> = template.split_whitespace().map(str::to_string).collect();
        Delivery {
            argv: if argv.is_empty() { vec!["prog".into()] } else { argv },
            wasi_seed: 0,
        }
    }

    pub fn uses_file(&self) -> bool {
        self.argv.iter().any(|a| a.contains(FILE_PLACEHOLDER))
    }

    pub fn wasi_config(&self, input: &[u8]) -> WasiConfig {
        let path = format!("/{INPUT_FILE}");
        let mut cfg = WasiConfig {
            args: self
                .argv
                .iter()
                .map(|a| a.replace(FILE_PLACEHOLDER, &path).into_bytes())
                .collect(),
            seed: self.wasi_seed,
            ..Default::default()
        };
        if self.uses_file() {
            cfg.preopen = Some(BTreeMap::from([(INPUT_FILE.to_string(), input.to_vec())]));
        } else {
            cfg.stdin = input.to_vec();
        }
        cfg
    }
}
