//! Fixture corpus for tests: freestanding C programs compiled to wasm32 at
//! two optimization levels (see `fixtures/build.sh`) plus hand-written WAT
//! modules.

macro_rules! compiled {
    ($($name:literal),* $(,)?) => {
        &[$(
            Fixture {
                name: concat!($name, ".O0"),
                wasm: include_bytes!(concat!("../fixtures/wasm/", $name, ".O0.wasm")),
            },
            Fixture {
                name: concat!($name, ".O2"),
                wasm: include_bytes!(concat!("../fixtures/wasm/", $name, ".O2.wasm")),
            },
        )*]
    };
}

macro_rules! wat_sources {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../fixtures/wat/", $name, ".wat")))),*]
    };
}

#[derive(Debug, Clone, Copy)]
pub struct Fixture {
    pub name: &'static str,
    pub wasm: &'static [u8],
}

impl Fixture {
    /// Program name without the optimization suffix.
    pub fn program(&self) -> &'static str {
        self.name.split('.').next().unwrap_or(self.name)
    }
}

pub const COMPILED: &[Fixture] = compiled!(
    "args", "b64", "calc", "catfile", "collatz", "constant", "dispatch", "echo", "exitcode", "fnv", "fsm",
    "grow", "heapscript", "list", "magic", "matmul", "rle", "sort", "wc",
);

const WAT: &[(&str, &str)] = wat_sources!("control", "grow_mem", "no_start", "spin", "stack_smash");

/// A compiled fixture by full name, e.g. `magic.O2`.
pub fn compiled(name: &str) -> &'static [u8] {
    COMPILED
        .iter()
        .find(|f| f.name == name)
        .unwrap_or_else(|| panic!("no compiled fixture `{name}`"))
        .wasm
}

pub fn wat_source(name: &str) -> &'static str {
    WAT.iter()
        .find(|(n, _)| *n == name)
        .unwrap_or_else(|| panic!("no WAT fixture `{name}`"))
        .1
}

/// Assembles a WAT fixture by name.
pub fn wat_fixture(name: &str) -> Vec<u8> {
    assemble(wat_source(name))
}

pub fn assemble(src: &str) -> Vec<u8> {
    wat::parse_str(src).unwrap_or_else(|e| panic!("bad WAT: {e}"))
}

/// Every fixture module, compiled and hand-written.
pub fn corpus() -> Vec<(String, Vec<u8>)> {
    COMPILED
        .iter()
        .map(|f| (f.name.to_string(), f.wasm.to_vec()))
        .chain(WAT.iter().map(|(n, src)| (format!("{n}.wat"), assemble(src))))
        .collect()
}

/// One benign execution: stdin, argv (including argv\[0\]) and optional
/// virtual files.
#[derive(Debug, Clone, Default)]
pub struct Case {
    pub stdin: Vec<u8>,
    pub args: Vec<String>,
    pub env: Vec<String>,
    pub files: Vec<(String, Vec<u8>)>,
}

impl Case {
    pub fn stdin(bytes: impl Into<Vec<u8>>) -> Self {
        Case {
            stdin: bytes.into(),
            args: vec!["prog".into()],
            ..Default::default()
        }
    }
}

/// Inputs that run every program to a normal exit.
pub fn benign_cases(program: &str) -> Vec<Case> {
    let s = |b: &[u8]| Case::stdin(b.to_vec());
    match program {
        "args" => vec![
            Case {
                args: vec!["args".into(), "one".into(), "two words".into()],
                env: vec!["HOME=/".into(), "LANG=C".into()],
                ..Default::default()
            },
            Case::stdin(Vec::new()),
        ],
        "catfile" => vec![Case {
            args: vec!["catfile".into(), "/input.txt".into()],
            files: vec![("input.txt".into(), b"OK file contents\n".to_vec())],
            ..Default::default()
        }],
        "magic" => vec![s(b""), s(b"x"), s(b"4"), s(b"4x"), s(b"42"), s(b"42abc"), s(b"42abcdefg")],
        "heapscript" => vec![
            s(b""),
            s(b"a\x00\x10w\x00\x05\x41p\x00f\x00"),
            s(b"a\x01\x08w\x01\x07\x7fc\x02\x03\x04r\x01\x04w\x01\x03\x01p\x01p\x02f\x01f\x02"),
            s(b"r\x03\x05w\x03\x04\x09p\x03r\x03\x01p\x03f\x03f\x03"),
        ],
        "calc" => vec![s(b"1 2 +"), s(b"6 7 * 5 -\n100 3 /\n"), s(b"2147483647 1 +"), s(b"5 0 /"), s(b"+")],
        "exitcode" => vec![s(b""), s(b"\x00"), s(b"\x07"), s(b"\xff")],
        "matmul" => vec![s(b""), s(b"0123456789abcdefghijklmnopqrstuv"), s(&[255u8; 32])],
        "dispatch" => vec![s(b""), s(b"\x00\x05\x02\x03\x04\x00\x03\x07\x01\x09\x04\x00")],
        "grow" => vec![s(b""), s(b"abc"), s(&[b'z'; 300])],
        "list" => vec![s(b""), s(b"hello world"), s(b"the quick brown fox jumps over the lazy dog")],
        "wc" => vec![s(b""), s(b"one two  three\nfour\n"), s(&b"a\n".repeat(150))],
        "fsm" => vec![s(b"let x = 42; # note\ny = \"s\\\"t\" + z_1"), s(b""), s(b"\"unterminated")],
        "collatz" => vec![s(b""), s(b"x"), s(b"12345678")],
        "no_start" => vec![],
        "control" => vec![s(b""), s(b"\x00"), s(b"\x05"), s(b"\x3b"), s(b"\xff")],
        "grow_mem" => vec![s(b"")],
        "stack_smash" => vec![s(b""), s(b"12345678")],
        "spin" => vec![],
        _ => vec![s(b""), s(b"hello\n"), s(b"The quick brown fox\njumps over the lazy dog.\n"), s(&[0u8, 1, 2, 250, 255])],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_large_enough() {
        let corpus = corpus();
        assert!(corpus.len() >= 20);
        for (name, bytes) in &corpus {
            assert_eq!(&bytes[..4], b"\0asm", "{name}");
        }
    }

    #[test]
    fn program_names() {
        assert_eq!(COMPILED[0].program(), "args");
        assert!(benign_cases("echo").len() >= 3);
    }
}
