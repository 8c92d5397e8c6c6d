//! Instruction set of the WebAssembly MVP.
//!
//! Bodies are kept as flat sequences with explicit `end` markers; nesting is
//! recovered by counting openers (`block`, `loop`, `if`) against `end`.

use std::fmt;

use super::types::ValType;

/// Result type of a structured block. MVP blocks yield at most one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockType {
    Empty,
    Value(ValType),
}

impl BlockType {
    pub fn arity(self) -> usize {
        match self {
            BlockType::Empty => 0,
            BlockType::Value(_) => 1,
        }
    }

    pub fn results(self) -> Vec<ValType> {
        match self {
            BlockType::Empty => Vec::new(),
            BlockType::Value(t) => vec![t],
        }
    }

    pub fn from_results(results: &[ValType]) -> Option<BlockType> {
        match results {
            [] => Some(BlockType::Empty),
            [t] => Some(BlockType::Value(*t)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MemArg {
    /// log2 of the alignment hint.
    pub align: u32,
    pub offset: u32,
}

impl MemArg {
    pub const fn new(align: u32, offset: u32) -> Self {
        MemArg { align, offset }
    }
}

macro_rules! mem_ops {
    ($(#[$m:meta])* $name:ident { $($variant:ident = $op:literal, $text:literal, $ty:ident, $width:literal;)* }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        #[repr(u8)]
        pub enum $name {
            $($variant = $op,)*
        }

        impl $name {
            pub fn from_byte(b: u8) -> Option<Self> {
                match b {
                    $($op => Some($name::$variant),)*
                    _ => None,
                }
            }

            pub fn opcode(self) -> u8 {
                self as u8
            }

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $text,)*
                }
            }

            /// Value type moved between the stack and memory.
            pub fn val_type(self) -> ValType {
                match self {
                    $($name::$variant => ValType::$ty,)*
                }
            }

            /// Number of bytes touched in linear memory.
            pub fn width(self) -> u32 {
                match self {
                    $($name::$variant => $width,)*
                }
            }
        }
    };
}

mem_ops!(
    /// Memory loads, discriminant is the opcode.
    LoadOp {
        I32Load = 0x28, "i32.load", I32, 4;
        I64Load = 0x29, "i64.load", I64, 8;
        F32Load = 0x2a, "f32.load", F32, 4;
        F64Load = 0x2b, "f64.load", F64, 8;
        I32Load8S = 0x2c, "i32.load8_s", I32, 1;
        I32Load8U = 0x2d, "i32.load8_u", I32, 1;
        I32Load16S = 0x2e, "i32.load16_s", I32, 2;
        I32Load16U = 0x2f, "i32.load16_u", I32, 2;
        I64Load8S = 0x30, "i64.load8_s", I64, 1;
        I64Load8U = 0x31, "i64.load8_u", I64, 1;
        I64Load16S = 0x32, "i64.load16_s", I64, 2;
        I64Load16U = 0x33, "i64.load16_u", I64, 2;
        I64Load32S = 0x34, "i64.load32_s", I64, 4;
        I64Load32U = 0x35, "i64.load32_u", I64, 4;
    }
);

mem_ops!(
    /// Memory stores, discriminant is the opcode.
    StoreOp {
        I32Store = 0x36, "i32.store", I32, 4;
        I64Store = 0x37, "i64.store", I64, 8;
        F32Store = 0x38, "f32.store", F32, 4;
        F64Store = 0x39, "f64.store", F64, 8;
        I32Store8 = 0x3a, "i32.store8", I32, 1;
        I32Store16 = 0x3b, "i32.store16", I32, 2;
        I64Store8 = 0x3c, "i64.store8", I64, 1;
        I64Store16 = 0x3d, "i64.store16", I64, 2;
        I64Store32 = 0x3e, "i64.store32", I64, 4;
    }
);

macro_rules! num_ops {
    ($($variant:ident = $op:literal, $text:literal, [$($p:ident),*] -> $r:ident;)*) => {
        /// Stack-only numeric instructions (opcodes `0x45..=0xbf`).
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        #[repr(u8)]
        pub enum NumOp {
            $($variant = $op,)*
        }

        impl NumOp {
            pub const ALL: &'static [NumOp] = &[$(NumOp::$variant,)*];

            pub fn from_byte(b: u8) -> Option<Self> {
                match b {
                    $($op => Some(NumOp::$variant),)*
                    _ => None,
                }
            }

            pub fn opcode(self) -> u8 {
                self as u8
            }

            pub fn name(self) -> &'static str {
                match self {
                    $(NumOp::$variant => $text,)*
                }
            }

            /// Operand types (bottom first) and the single result type.
            pub fn signature(self) -> (&'static [ValType], ValType) {
                match self {
                    $(NumOp::$variant => (&[$(ValType::$p),*], ValType::$r),)*
                }
            }
        }
    };
}

num_ops! {
    I32Eqz = 0x45, "i32.eqz", [I32] -> I32;
    I32Eq = 0x46, "i32.eq", [I32, I32] -> I32;
    I32Ne = 0x47, "i32.ne", [I32, I32] -> I32;
    I32LtS = 0x48, "i32.lt_s", [I32, I32] -> I32;
    I32LtU = 0x49, "i32.lt_u", [I32, I32] -> I32;
    I32GtS = 0x4a, "i32.gt_s", [I32, I32] -> I32;
    I32GtU = 0x4b, "i32.gt_u", [I32, I32] -> I32;
    I32LeS = 0x4c, "i32.le_s", [I32, I32] -> I32;
    I32LeU = 0x4d, "i32.le_u", [I32, I32] -> I32;
    I32GeS = 0x4e, "i32.ge_s", [I32, I32] -> I32;
    I32GeU = 0x4f, "i32.ge_u", [I32, I32] -> I32;
    I64Eqz = 0x50, "i64.eqz", [I64] -> I32;
    I64Eq = 0x51, "i64.eq", [I64, I64] -> I32;
    I64Ne = 0x52, "i64.ne", [I64, I64] -> I32;
    I64LtS = 0x53, "i64.lt_s", [I64, I64] -> I32;
    I64LtU = 0x54, "i64.lt_u", [I64, I64] -> I32;
    I64GtS = 0x55, "i64.gt_s", [I64, I64] -> I32;
    I64GtU = 0x56, "i64.gt_u", [I64, I64] -> I32;
    I64LeS = 0x57, "i64.le_s", [I64, I64] -> I32;
    I64LeU = 0x58, "i64.le_u", [I64, I64] -> I32;
    I64GeS = 0x59, "i64.ge_s", [I64, I64] -> I32;
    I64GeU = 0x5a, "i64.ge_u", [I64, I64] -> I32;
    F32Eq = 0x5b, "f32.eq", [F32, F32] -> I32;
    F32Ne = 0x5c, "f32.ne", [F32, F32] -> I32;
    F32Lt = 0x5d, "f32.lt", [F32, F32] -> I32;
    F32Gt = 0x5e, "f32.gt", [F32, F32] -> I32;
    F32Le = 0x5f, "f32.le", [F32, F32] -> I32;
    F32Ge = 0x60, "f32.ge", [F32, F32] -> I32;
    F64Eq = 0x61, "f64.eq", [F64, F64] -> I32;
    F64Ne = 0x62, "f64.ne", [F64, F64] -> I32;
    F64Lt = 0x63, "f64.lt", [F64, F64] -> I32;
    F64Gt = 0x64, "f64.gt", [F64, F64] -> I32;
    F64Le = 0x65, "f64.le", [F64, F64] -> I32;
    F64Ge = 0x66, "f64.ge", [F64, F64] -> I32;
    I32Clz = 0x67, "i32.clz", [I32] -> I32;
    I32Ctz = 0x68, "i32.ctz", [I32] -> I32;
    I32Popcnt = 0x69, "i32.popcnt", [I32] -> I32;
    I32Add = 0x6a, "i32.add", [I32, I32] -> I32;
    I32Sub = 0x6b, "i32.sub", [I32, I32] -> I32;
    I32Mul = 0x6c, "i32.mul", [I32, I32] -> I32;
    I32DivS = 0x6d, "i32.div_s", [I32, I32] -> I32;
    I32DivU = 0x6e, "i32.div_u", [I32, I32] -> I32;
    I32RemS = 0x6f, "i32.rem_s", [I32, I32] -> I32;
    I32RemU = 0x70, "i32.rem_u", [I32, I32] -> I32;
    I32And = 0x71, "i32.and", [I32, I32] -> I32;
    I32Or = 0x72, "i32.or", [I32, I32] -> I32;
    I32Xor = 0x73, "i32.xor", [I32, I32] -> I32;
    I32Shl = 0x74, "i32.shl", [I32, I32] -> I32;
    I32ShrS = 0x75, "i32.shr_s", [I32, I32] -> I32;
    I32ShrU = 0x76, "i32.shr_u", [I32, I32] -> I32;
    I32Rotl = 0x77, "i32.rotl", [I32, I32] -> I32;
    I32Rotr = 0x78, "i32.rotr", [I32, I32] -> I32;
    I64Clz = 0x79, "i64.clz", [I64] -> I64;
    I64Ctz = 0x7a, "i64.ctz", [I64] -> I64;
    I64Popcnt = 0x7b, "i64.popcnt", [I64] -> I64;
    I64Add = 0x7c, "i64.add", [I64, I64] -> I64;
    I64Sub = 0x7d, "i64.sub", [I64, I64] -> I64;
    I64Mul = 0x7e, "i64.mul", [I64, I64] -> I64;
    I64DivS = 0x7f, "i64.div_s", [I64, I64] -> I64;
    I64DivU = 0x80, "i64.div_u", [I64, I64] -> I64;
    I64RemS = 0x81, "i64.rem_s", [I64, I64] -> I64;
    I64RemU = 0x82, "i64.rem_u", [I64, I64] -> I64;
    I64And = 0x83, "i64.and", [I64, I64] -> I64;
    I64Or = 0x84, "i64.or", [I64, I64] -> I64;
    I64Xor = 0x85, "i64.xor", [I64, I64] -> I64;
    I64Shl = 0x86, "i64.shl", [I64, I64] -> I64;
    I64ShrS = 0x87, "i64.shr_s", [I64, I64] -> I64;
    I64ShrU = 0x88, "i64.shr_u", [I64, I64] -> I64;
    I64Rotl = 0x89, "i64.rotl", [I64, I64] -> I64;
    I64Rotr = 0x8a, "i64.rotr", [I64, I64] -> I64;
    F32Abs = 0x8b, "f32.abs", [F32] -> F32;
    F32Neg = 0x8c, "f32.neg", [F32] -> F32;
    F32Ceil = 0x8d, "f32.ceil", [F32] -> F32;
    F32Floor = 0x8e, "f32.floor", [F32] -> F32;
    F32Trunc = 0x8f, "f32.trunc", [F32] -> F32;
    F32Nearest = 0x90, "f32.nearest", [F32] -> F32;
    F32Sqrt = 0x91, "f32.sqrt", [F32] -> F32;
    F32Add = 0x92, "f32.add", [F32, F32] -> F32;
    F32Sub = 0x93, "f32.sub", [F32, F32] -> F32;
    F32Mul = 0x94, "f32.mul", [F32, F32] -> F32;
    F32Div = 0x95, "f32.div", [F32, F32] -> F32;
    F32Min = 0x96, "f32.min", [F32, F32] -> F32;
    F32Max = 0x97, "f32.max", [F32, F32] -> F32;
    F32Copysign = 0x98, "f32.copysign", [F32, F32] -> F32;
    F64Abs = 0x99, "f64.abs", [F64] -> F64;
    F64Neg = 0x9a, "f64.neg", [F64] -> F64;
    F64Ceil = 0x9b, "f64.ceil", [F64] -> F64;
    F64Floor = 0x9c, "f64.floor", [F64] -> F64;
    F64Trunc = 0x9d, "f64.trunc", [F64] -> F64;
    F64Nearest = 0x9e, "f64.nearest", [F64] -> F64;
    F64Sqrt = 0x9f, "f64.sqrt", [F64] -> F64;
    F64Add = 0xa0, "f64.add", [F64, F64] -> F64;
    F64Sub = 0xa1, "f64.sub", [F64, F64] -> F64;
    F64Mul = 0xa2, "f64.mul", [F64, F64] -> F64;
    F64Div = 0xa3, "f64.div", [F64, F64] -> F64;
    F64Min = 0xa4, "f64.min", [F64, F64] -> F64;
    F64Max = 0xa5, "f64.max", [F64, F64] -> F64;
    F64Copysign = 0xa6, "f64.copysign", [F64, F64] -> F64;
    I32WrapI64 = 0xa7, "i32.wrap_i64", [I64] -> I32;
    I32TruncF32S = 0xa8, "i32.trunc_f32_s", [F32] -> I32;
    I32TruncF32U = 0xa9, "i32.trunc_f32_u", [F32] -> I32;
    I32TruncF64S = 0xaa, "i32.trunc_f64_s", [F64] -> I32;
    I32TruncF64U = 0xab, "i32.trunc_f64_u", [F64] -> I32;
    I64ExtendI32S = 0xac, "i64.extend_i32_s", [I32] -> I64;
    I64ExtendI32U = 0xad, "i64.extend_i32_u", [I32] -> I64;
    I64TruncF32S = 0xae, "i64.trunc_f32_s", [F32] -> I64;
    I64TruncF32U = 0xaf, "i64.trunc_f32_u", [F32] -> I64;
    I64TruncF64S = 0xb0, "i64.trunc_f64_s", [F64] -> I64;
    I64TruncF64U = 0xb1, "i64.trunc_f64_u", [F64] -> I64;
    F32ConvertI32S = 0xb2, "f32.convert_i32_s", [I32] -> F32;
    F32ConvertI32U = 0xb3, "f32.convert_i32_u", [I32] -> F32;
    F32ConvertI64S = 0xb4, "f32.convert_i64_s", [I64] -> F32;
    F32ConvertI64U = 0xb5, "f32.convert_i64_u", [I64] -> F32;
    F32DemoteF64 = 0xb6, "f32.demote_f64", [F64] -> F32;
    F64ConvertI32S = 0xb7, "f64.convert_i32_s", [I32] -> F64;
    F64ConvertI32U = 0xb8, "f64.convert_i32_u", [I32] -> F64;
    F64ConvertI64S = 0xb9, "f64.convert_i64_s", [I64] -> F64;
    F64ConvertI64U = 0xba, "f64.convert_i64_u", [I64] -> F64;
    F64PromoteF32 = 0xbb, "f64.promote_f32", [F32] -> F64;
    I32ReinterpretF32 = 0xbc, "i32.reinterpret_f32", [F32] -> I32;
    I64ReinterpretF64 = 0xbd, "i64.reinterpret_f64", [F64] -> I64;
    F32ReinterpretI32 = 0xbe, "f32.reinterpret_i32", [I32] -> F32;
    F64ReinterpretI64 = 0xbf, "f64.reinterpret_i64", [I64] -> F64;
}

/// One MVP instruction with its immediates.
///
/// Float constants are stored as raw bits so that NaN payloads survive a
/// round trip and structural equality stays reflexive.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Instr {
    Unreachable,
    Nop,
    Block(BlockType),
    Loop(BlockType),
    If(BlockType),
    Else,
    End,
    Br(u32),
    BrIf(u32),
    BrTable { targets: Vec<u32>, default: u32 },
    Return,
    Call(u32),
    CallIndirect { type_index: u32 },
    Drop,
    Select,
    LocalGet(u32),
    LocalSet(u32),
    LocalTee(u32),
    GlobalGet(u32),
    GlobalSet(u32),
    Load(LoadOp, MemArg),
    Store(StoreOp, MemArg),
    MemorySize,
    MemoryGrow,
    I32Const(i32),
    I64Const(i64),
    F32Const(u32),
    F64Const(u64),
    Num(NumOp),
}

impl Instr {
    /// `block`, `loop` and `if` increase the nesting depth.
    pub fn opens_block(&self) -> bool {
        matches!(self, Instr::Block(_) | Instr::Loop(_) | Instr::If(_))
    }

    pub fn closes_block(&self) -> bool {
        matches!(self, Instr::End)
    }

    pub fn i32_add() -> Instr {
        Instr::Num(NumOp::I32Add)
    }

    pub fn i32_sub() -> Instr {
        Instr::Num(NumOp::I32Sub)
    }
}

impl fmt::Display for BlockType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockType::Empty => Ok(()),
            BlockType::Value(t) => write!(f, " (result {t})"),
        }
    }
}

fn fmt_memarg(f: &mut fmt::Formatter<'_>, m: &MemArg) -> fmt::Result {
    if m.offset != 0 {
        write!(f, " offset={}", m.offset)?;
    }
    write!(f, " align={}", 1u64 << m.align.min(63))
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instr::Unreachable => f.write_str("unreachable"),
            Instr::Nop => f.write_str("nop"),
            Instr::Block(bt) => write!(f, "block{bt}"),
            Instr::Loop(bt) => write!(f, "loop{bt}"),
            Instr::If(bt) => write!(f, "if{bt}"),
            Instr::Else => f.write_str("else"),
            Instr::End => f.write_str("end"),
            Instr::Br(l) => write!(f, "br {l}"),
            Instr::BrIf(l) => write!(f, "br_if {l}"),
            Instr::BrTable { targets, default } => {
                f.write_str("br_table")?;
                for t in targets {
                    write!(f, " {t}")?;
                }
                write!(f, " {default}")
            }
            Instr::Return => f.write_str("return"),
            Instr::Call(i) => write!(f, "call {i}"),
            Instr::CallIndirect { type_index } => write!(f, "call_indirect (type {type_index})"),
            Instr::Drop => f.write_str("drop"),
            Instr::Select => f.write_str("select"),
            Instr::LocalGet(i) => write!(f, "local.get {i}"),
            Instr::LocalSet(i) => write!(f, "local.set {i}"),
            Instr::LocalTee(i) => write!(f, "local.tee {i}"),
            Instr::GlobalGet(i) => write!(f, "global.get {i}"),
            Instr::GlobalSet(i) => write!(f, "global.set {i}"),
            Instr::Load(op, m) => {
                f.write_str(op.name())?;
                fmt_memarg(f, m)
            }
            Instr::Store(op, m) => {
                f.write_str(op.name())?;
                fmt_memarg(f, m)
            }
            Instr::MemorySize => f.write_str("memory.size"),
            Instr::MemoryGrow => f.write_str("memory.grow"),
            Instr::I32Const(v) => write!(f, "i32.const {v}"),
            Instr::I64Const(v) => write!(f, "i64.const {v}"),
            Instr::F32Const(bits) => write!(f, "f32.const {}", f32::from_bits(*bits)),
            Instr::F64Const(bits) => write!(f, "f64.const {}", f64::from_bits(*bits)),
            Instr::Num(op) => f.write_str(op.name()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_opcodes_are_contiguous() {
        for (i, op) in NumOp::ALL.iter().enumerate() {
            assert_eq!(op.opcode() as usize, 0x45 + i, "{}", op.name());
            assert_eq!(NumOp::from_byte(op.opcode()), Some(*op));
        }
        assert_eq!(NumOp::ALL.len(), 0xbf - 0x45 + 1);
        assert_eq!(NumOp::from_byte(0xc0), None);
    }

    #[test]
    fn display_is_wat_like() {
        let s = Instr::Store(StoreOp::I64Store, MemArg::new(3, 12)).to_string();
        assert_eq!(s, "i64.store offset=12 align=8");
        let s = Instr::BrTable { targets: vec![0, 2], default: 1 }.to_string();
        assert_eq!(s, "br_table 0 2 1");
    }
}
