//! Structured, pass-friendly representation of WebAssembly MVP modules.

mod encode;
mod instr;
mod parse;
mod types;
mod validate;

pub use encode::{encode_module, EncodeError};
pub use instr::{BlockType, Instr, LoadOp, MemArg, NumOp, StoreOp};
pub use parse::{parse_module, ParseError};
pub use types::*;
pub use validate::{validate_module, ValidationError, ValidationReport};
