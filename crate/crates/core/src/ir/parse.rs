//! Binary decoder for WebAssembly version 1 (MVP).

use std::collections::BTreeMap;

use thiserror::Error;

use super::instr::{BlockType, Instr, LoadOp, MemArg, NumOp, StoreOp};
use super::types::*;

pub const MAGIC: &[u8; 4] = b"\0asm";
pub const VERSION: [u8; 4] = [1, 0, 0, 0];

/// Implementation limit on declared locals per function.
const MAX_LOCALS: u64 = 50_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("malformed binary at offset {offset:#x}: {reason}")]
    MalformedBinary { offset: usize, reason: String },
    #[error("unsupported feature: {0}")]
    UnsupportedFeature(String),
}

type Result<T> = std::result::Result<T, ParseError>;

fn unsupported<T>(what: &str) -> Result<T> {
    Err(ParseError::UnsupportedFeature(what.to_string()))
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    /// Absolute offset of `data[0]` in the original binary.
    base: usize,
}

impl<'a> Reader<'a> {
    fn new(data: &'a [u8], base: usize) -> Self {
        Reader { data, pos: 0, base }
    }

    fn offset(&self) -> usize {
        self.base + self.pos
    }

    fn err<T>(&self, reason: impl Into<String>) -> Result<T> {
        Err(ParseError::MalformedBinary {
            offset: self.offset(),
            reason: reason.into(),
        })
    }

    fn eof(&self) -> bool {
        self.pos >= self.data.len()
    }

    fn byte(&mut self) -> Result<u8> {
        match self.data.get(self.pos) {
            Some(&b) => {
                self.pos += 1;
                Ok(b)
            }
            None => self.err("unexpected end of input"),
        }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return self.err(format!("expected {n} more bytes"));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let mut result: u64 = 0;
        let mut shift = 0;
        loop {
            let b = self.byte()?;
            if shift == 28 && b & 0x70 != 0 {
                return self.err("integer too large");
            }
            result |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return Ok(result as u32);
            }
            shift += 7;
            if shift > 28 {
                return self.err("integer representation too long");
            }
        }
    }

    fn signed(&mut self, bits: u32) -> Result<i64> {
        let mut result: i64 = 0;
        let mut shift = 0u32;
        let max_bytes = bits.div_ceil(7);
        for i in 0..max_bytes {
            let b = self.byte()?;
            result |= i64::from(b & 0x7f) << shift;
            shift += 7;
            if b & 0x80 == 0 {
                if i == max_bytes - 1 {
                    // Unused bits of the final byte must be a sign extension.
                    let used = bits - 7 * (max_bytes - 1);
                    let rest = (b & 0x7f) >> (used - 1);
                    let expect = if b & (1 << (used - 1)) != 0 {
                        0x7f >> (used - 1)
                    } else {
                        0
                    };
                    if used < 7 && rest != expect {
                        return self.err("integer too large");
                    }
                }
                if shift < 64 && b & 0x40 != 0 {
                    result |= -1i64 << shift;
                }
                return Ok(result);
            }
        }
        self.err("integer representation too long")
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(self.signed(32)? as i32)
    }

    fn i64(&mut self) -> Result<i64> {
        self.signed(64)
    }

    fn name(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let at = self.offset();
        let raw = self.bytes(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| ParseError::MalformedBinary {
            offset: at,
            reason: "malformed UTF-8 encoding".into(),
        })
    }

    fn vec_len(&mut self) -> Result<usize> {
        let n = self.u32()? as usize;
        // Every element takes at least one byte.
        if n > self.data.len() - self.pos {
            return self.err("vector length exceeds remaining bytes");
        }
        Ok(n)
    }

    fn val_type(&mut self) -> Result<ValType> {
        let b = self.byte()?;
        match b {
            0x7b => unsupported("simd (v128)"),
            0x70 | 0x6f => unsupported("reference-types"),
            _ => match ValType::from_byte(b) {
                Some(t) => Ok(t),
                None => {
                    self.pos -= 1;
                    self.err(format!("invalid value type {b:#04x}"))
                }
            },
        }
    }

    fn limits(&mut self) -> Result<Limits> {
        match self.byte()? {
            0x00 => Ok(Limits {
                min: self.u32()?,
                max: None,
            }),
            0x01 => {
                let min = self.u32()?;
                let max = self.u32()?;
                Ok(Limits {
                    min,
                    max: Some(max),
                })
            }
            0x02 | 0x03 => unsupported("threads (shared memory)"),
            0x04..=0x07 => unsupported("memory64"),
            b => {
                self.pos -= 1;
                self.err(format!("invalid limits flag {b:#04x}"))
            }
        }
    }

    fn table_type(&mut self) -> Result<TableType> {
        match self.byte()? {
            0x70 => {}
            0x6f => return unsupported("reference-types (externref table)"),
            b => {
                self.pos -= 1;
                return self.err(format!("invalid element type {b:#04x}"));
            }
        }
        Ok(TableType {
            limits: self.limits()?,
        })
    }

    fn global_type(&mut self) -> Result<GlobalType> {
        let val_type = self.val_type()?;
        let mutable = match self.byte()? {
            0 => false,
            1 => true,
            _ => {
                self.pos -= 1;
                return self.err("invalid mutability");
            }
        };
        Ok(GlobalType { val_type, mutable })
    }

    fn const_expr(&mut self) -> Result<ConstExpr> {
        let op = self.byte()?;
        let expr = match op {
            0x41 => ConstExpr::I32(self.i32()?),
            0x42 => ConstExpr::I64(self.i64()?),
            0x43 => ConstExpr::F32(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap())),
            0x44 => ConstExpr::F64(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap())),
            0x23 => ConstExpr::GlobalGet(self.u32()?),
            0xd0 | 0xd2 => return unsupported("reference-types"),
            _ => {
                self.pos -= 1;
                return self.err(format!("invalid constant expression opcode {op:#04x}"));
            }
        };
        match self.byte()? {
            0x0b => Ok(expr),
            0x6a | 0x6b | 0x6c | 0x7c | 0x7d | 0x7e => unsupported("extended-const"),
            _ => {
                self.pos -= 1;
                self.err("constant expression must be a single instruction")
            }
        }
    }

    fn block_type(&mut self) -> Result<BlockType> {
        let b = self.data.get(self.pos).copied();
        match b {
            Some(0x40) => {
                self.pos += 1;
                Ok(BlockType::Empty)
            }
            Some(b) if ValType::from_byte(b).is_some() => {
                self.pos += 1;
                Ok(BlockType::Value(ValType::from_byte(b).unwrap()))
            }
            Some(0x7b) => unsupported("simd (v128)"),
            Some(0x70) | Some(0x6f) => unsupported("reference-types"),
            Some(_) => {
                // A non-negative s33 is a type index: multi-value block type.
                let idx = self.signed(33)?;
                if idx >= 0 {
                    unsupported("multi-value (typed block)")
                } else {
                    self.err("invalid block type")
                }
            }
            None => self.err("unexpected end of input"),
        }
    }

    fn memarg(&mut self) -> Result<MemArg> {
        let align = self.u32()?;
        if align >= 64 {
            return unsupported("multi-memory (memarg flags)");
        }
        let offset = self.u32()?;
        Ok(MemArg { align, offset })
    }

    fn zero_byte(&mut self, what: &str) -> Result<()> {
        match self.byte()? {
            0 => Ok(()),
            _ => unsupported(what),
        }
    }

    fn instr(&mut self) -> Result<Instr> {
        let op = self.byte()?;
        let instr = match op {
            0x00 => Instr::Unreachable,
            0x01 => Instr::Nop,
            0x02 => Instr::Block(self.block_type()?),
            0x03 => Instr::Loop(self.block_type()?),
            0x04 => Instr::If(self.block_type()?),
            0x05 => Instr::Else,
            0x0b => Instr::End,
            0x0c => Instr::Br(self.u32()?),
            0x0d => Instr::BrIf(self.u32()?),
            0x0e => {
                let n = self.vec_len()?;
                let mut targets = Vec::with_capacity(n);
                for _ in 0..n {
                    targets.push(self.u32()?);
                }
                Instr::BrTable {
                    targets,
                    default: self.u32()?,
                }
            }
            0x0f => Instr::Return,
            0x10 => Instr::Call(self.u32()?),
            0x11 => {
                let type_index = self.u32()?;
                self.zero_byte("reference-types (call_indirect table index)")?;
                Instr::CallIndirect { type_index }
            }
            0x12 | 0x13 => return unsupported("tail-call"),
            0x06..=0x0a | 0x18 | 0x19 => return unsupported("exception-handling"),
            0x1a => Instr::Drop,
            0x1b => Instr::Select,
            0x1c => return unsupported("reference-types (typed select)"),
            0x20 => Instr::LocalGet(self.u32()?),
            0x21 => Instr::LocalSet(self.u32()?),
            0x22 => Instr::LocalTee(self.u32()?),
            0x23 => Instr::GlobalGet(self.u32()?),
            0x24 => Instr::GlobalSet(self.u32()?),
            0x25 | 0x26 => return unsupported("reference-types (table.get/set)"),
            0x28..=0x35 => Instr::Load(LoadOp::from_byte(op).unwrap(), self.memarg()?),
            0x36..=0x3e => Instr::Store(StoreOp::from_byte(op).unwrap(), self.memarg()?),
            0x3f => {
                self.zero_byte("multi-memory")?;
                Instr::MemorySize
            }
            0x40 => {
                self.zero_byte("multi-memory")?;
                Instr::MemoryGrow
            }
            0x41 => Instr::I32Const(self.i32()?),
            0x42 => Instr::I64Const(self.i64()?),
            0x43 => Instr::F32Const(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap())),
            0x44 => Instr::F64Const(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap())),
            0x45..=0xbf => Instr::Num(NumOp::from_byte(op).unwrap()),
            0xc0..=0xc4 => return unsupported("sign-extension operators"),
            0xd0..=0xd2 => return unsupported("reference-types"),
            0xfc => return unsupported("bulk-memory / saturating float-to-int (0xfc prefix)"),
            0xfd => return unsupported("simd (0xfd prefix)"),
            0xfe => return unsupported("threads (0xfe prefix)"),
            _ => {
                self.pos -= 1;
                return self.err(format!("illegal opcode {op:#04x}"));
            }
        };
        Ok(instr)
    }
}

/// Decodes a complete WebAssembly binary.
pub fn parse_module(bytes: &[u8]) -> Result<Module> {
    let mut r = Reader::new(bytes, 0);
    if r.bytes(4).ok() != Some(&MAGIC[..]) {
        return Err(ParseError::MalformedBinary {
            offset: 0,
            reason: "magic header not detected".into(),
        });
    }
    match r.bytes(4) {
        Ok(v) if v == VERSION => {}
        Ok([0x0d, 0x00, 0x01, 0x00]) => return unsupported("component model"),
        _ => {
            return Err(ParseError::MalformedBinary {
                offset: 4,
                reason: "unknown binary version".into(),
            })
        }
    }

    let mut m = Module::default();
    let mut func_types: Vec<u32> = Vec::new();
    let mut last_id = 0u8;
    let mut saw_code = false;

    while !r.eof() {
        let id_at = r.offset();
        let id = r.byte()?;
        let size = r.u32()? as usize;
        let start = r.offset();
        let payload = r.bytes(size)?;
        let mut s = Reader::new(payload, start);

        if id == 0 {
            let name = s.name()?;
            let data = payload[s.pos..].to_vec();
            if name == "name" && m.names.is_none() {
                // Malformed name sections are kept as opaque blobs, as custom
                // section contents never affect validity.
                match parse_name_section(&data, start + s.pos) {
                    Ok(n) => m.names = Some(n),
                    Err(_) => m.customs.push(CustomSection {
                        name,
                        data,
                        placement: last_id,
                    }),
                }
            } else {
                m.customs.push(CustomSection {
                    name,
                    data,
                    placement: last_id,
                });
            }
            continue;
        }

        if id == 12 {
            return unsupported("bulk-memory (data count section)");
        }
        if id > 12 {
            return Err(ParseError::MalformedBinary {
                offset: id_at,
                reason: format!("unknown section id {id}"),
            });
        }
        if id <= last_id {
            return Err(ParseError::MalformedBinary {
                offset: id_at,
                reason: "unexpected section order".into(),
            });
        }
        last_id = id;

        match id {
            1 => {
                for _ in 0..s.vec_len()? {
                    match s.byte()? {
                        0x60 => {}
                        0x5e | 0x5f | 0x4e | 0x4f | 0x50 => return unsupported("gc"),
                        _ => {
                            s.pos -= 1;
                            return s.err("invalid function type form");
                        }
                    }
                    let mut params = Vec::new();
                    for _ in 0..s.vec_len()? {
                        params.push(s.val_type()?);
                    }
                    let mut results = Vec::new();
                    for _ in 0..s.vec_len()? {
                        results.push(s.val_type()?);
                    }
                    if results.len() > 1 {
                        return unsupported("multi-value (function results)");
                    }
                    m.types.push(FuncType { params, results });
                }
            }
            2 => {
                for _ in 0..s.vec_len()? {
                    let module = s.name()?;
                    let name = s.name()?;
                    let desc = match s.byte()? {
                        0x00 => ImportDesc::Func(s.u32()?),
                        0x01 => ImportDesc::Table(s.table_type()?),
                        0x02 => ImportDesc::Memory(s.limits()?),
                        0x03 => ImportDesc::Global(s.global_type()?),
                        0x04 => return unsupported("exception-handling (tag import)"),
                        b => {
                            s.pos -= 1;
                            return s.err(format!("invalid import kind {b:#04x}"));
                        }
                    };
                    m.imports.push(Import { module, name, desc });
                }
            }
            3 => {
                for _ in 0..s.vec_len()? {
                    func_types.push(s.u32()?);
                }
            }
            4 => {
                let n = s.vec_len()?;
                if n > 1 {
                    return unsupported("reference-types (multiple tables)");
                }
                for _ in 0..n {
                    m.table = Some(s.table_type()?);
                }
            }
            5 => {
                let n = s.vec_len()?;
                if n > 1 {
                    return unsupported("multi-memory");
                }
                for _ in 0..n {
                    m.memory = Some(s.limits()?);
                }
            }
            6 => {
                for _ in 0..s.vec_len()? {
                    let ty = s.global_type()?;
                    let init = s.const_expr()?;
                    m.globals.push(Global { ty, init });
                }
            }
            7 => {
                for _ in 0..s.vec_len()? {
                    let name = s.name()?;
                    let kind_at = s.pos;
                    let kind = match ExportKind::from_byte(s.byte()?) {
                        Some(k) => k,
                        None => {
                            s.pos = kind_at;
                            return s.err("invalid export kind");
                        }
                    };
                    let index = s.u32()?;
                    m.exports.push(Export { name, kind, index });
                }
            }
            8 => m.start = Some(s.u32()?),
            9 => {
                for _ in 0..s.vec_len()? {
                    match s.u32()? {
                        0 => {}
                        _ => return unsupported("bulk-memory / reference-types (element segment flags)"),
                    }
                    let offset = s.const_expr()?;
                    let mut functions = Vec::new();
                    for _ in 0..s.vec_len()? {
                        functions.push(s.u32()?);
                    }
                    m.elements.push(ElementSegment { offset, functions });
                }
            }
            10 => {
                saw_code = true;
                let n = s.vec_len()?;
                if n != func_types.len() {
                    return s.err("function and code section have inconsistent lengths");
                }
                for &type_index in &func_types {
                    let size = s.u32()? as usize;
                    let body_start = s.offset();
                    let raw = s.bytes(size)?;
                    let mut b = Reader::new(raw, body_start);
                    let f = parse_body(&mut b, type_index)?;
                    m.functions.push(f);
                }
            }
            11 => {
                for _ in 0..s.vec_len()? {
                    match s.u32()? {
                        0 => {}
                        _ => return unsupported("bulk-memory (passive/explicit data segment)"),
                    }
                    let offset = s.const_expr()?;
                    let len = s.vec_len()?;
                    let bytes = s.bytes(len)?.to_vec();
                    m.data.push(DataSegment { offset, bytes });
                }
            }
            _ => unreachable!(),
        }
        if !s.eof() {
            return s.err("section size mismatch");
        }
    }

    if !saw_code && !func_types.is_empty() {
        return Err(ParseError::MalformedBinary {
            offset: bytes.len(),
            reason: "function and code section have inconsistent lengths".into(),
        });
    }
    Ok(m)
}

fn parse_body(b: &mut Reader<'_>, type_index: u32) -> Result<Function> {
    let mut locals = Vec::new();
    let mut total: u64 = 0;
    for _ in 0..b.vec_len()? {
        let count = b.u32()?;
        total += u64::from(count);
        if total > MAX_LOCALS {
            return b.err("too many locals");
        }
        let ty = b.val_type()?;
        locals.extend(std::iter::repeat_n(ty, count as usize));
    }
    let mut body = Vec::new();
    let mut depth: usize = 0;
    loop {
        if b.eof() {
            return b.err("unexpected end of function body");
        }
        let instr = b.instr()?;
        match &instr {
            Instr::Block(_) | Instr::Loop(_) | Instr::If(_) => depth += 1,
            Instr::End => {
                if depth == 0 {
                    body.push(instr);
                    break;
                }
                depth -= 1;
            }
            _ => {}
        }
        body.push(instr);
    }
    if !b.eof() {
        return b.err("trailing bytes after function end");
    }
    Ok(Function {
        type_index,
        locals,
        body,
    })
}

fn parse_name_section(data: &[u8], base: usize) -> Result<NameSection> {
    let mut r = Reader::new(data, base);
    let mut names = NameSection::default();
    while !r.eof() {
        let id = r.byte()?;
        let size = r.u32()? as usize;
        let start = r.offset();
        let payload = r.bytes(size)?;
        let mut s = Reader::new(payload, start);
        match id {
            0 => {
                names.module = Some(s.name()?);
            }
            1 => {
                let mut map = BTreeMap::new();
                for _ in 0..s.vec_len()? {
                    let idx = s.u32()?;
                    let name = s.name()?;
                    map.insert(idx, name);
                }
                names.functions = map;
            }
            _ => {
                names.other.push((id, payload.to_vec()));
                continue;
            }
        }
        if !s.eof() {
            return s.err("name subsection size mismatch");
        }
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: [u8; 8] = [0, b'a', b's', b'm', 1, 0, 0, 0];

    #[test]
    fn header_only_module_is_empty() {
        let m = parse_module(&HEADER).unwrap();
        assert_eq!(m, Module::default());
    }

    #[test]
    fn identity_function_by_hand() {
        // (func (param i32) (result i32) local.get 0)
        let mut b = HEADER.to_vec();
        b.extend([0x01, 0x06, 0x01, 0x60, 0x01, 0x7f, 0x01, 0x7f]); // type
        b.extend([0x03, 0x02, 0x01, 0x00]); // func
        b.extend([0x0a, 0x06, 0x01, 0x04, 0x00, 0x20, 0x00, 0x0b]); // code
        let m = parse_module(&b).unwrap();
        assert_eq!(m.types, vec![FuncType::new([ValType::I32], [ValType::I32])]);
        assert_eq!(m.functions.len(), 1);
        assert_eq!(m.functions[0].body, vec![Instr::LocalGet(0), Instr::End]);
        assert!(m.functions[0].locals.is_empty());
    }

    #[test]
    fn truncated_code_section_is_malformed() {
        let mut b = HEADER.to_vec();
        b.extend([0x01, 0x04, 0x01, 0x60, 0x00, 0x00]);
        b.extend([0x03, 0x02, 0x01, 0x00]);
        b.extend([0x0a, 0x04, 0x01, 0x02, 0x00]); // declares 4 bytes, has 3
        match parse_module(&b) {
            Err(ParseError::MalformedBinary { .. }) => {}
            other => panic!("expected MalformedBinary, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        assert!(matches!(
            parse_module(b"\0asx\x01\0\0\0"),
            Err(ParseError::MalformedBinary { offset: 0, .. })
        ));
        assert!(matches!(
            parse_module(b"\0asm\x02\0\0\0"),
            Err(ParseError::MalformedBinary { offset: 4, .. })
        ));
        assert!(parse_module(b"\0as").is_err());
    }

    #[test]
    fn multi_value_type_is_unsupported() {
        let mut b = HEADER.to_vec();
        b.extend([0x01, 0x06, 0x01, 0x60, 0x00, 0x02, 0x7f, 0x7f]);
        assert_eq!(
            parse_module(&b),
            Err(ParseError::UnsupportedFeature("multi-value (function results)".into()))
        );
    }

    #[test]
    fn simd_prefix_is_unsupported() {
        let mut b = HEADER.to_vec();
        b.extend([0x01, 0x04, 0x01, 0x60, 0x00, 0x00]);
        b.extend([0x03, 0x02, 0x01, 0x00]);
        b.extend([0x0a, 0x06, 0x01, 0x04, 0x00, 0xfd, 0x0c, 0x0b]);
        assert!(matches!(
            parse_module(&b),
            Err(ParseError::UnsupportedFeature(f)) if f.contains("simd")
        ));
    }

    #[test]
    fn leb_edge_cases() {
        let mut r = Reader::new(&[0xff, 0xff, 0xff, 0xff, 0x0f], 0);
        assert_eq!(r.u32().unwrap(), u32::MAX);
        let mut r = Reader::new(&[0xff, 0xff, 0xff, 0xff, 0x1f], 0);
        assert!(r.u32().is_err());
        let mut r = Reader::new(&[0x80, 0x80, 0x80, 0x80, 0x78], 0);
        assert_eq!(r.i32().unwrap(), i32::MIN);
        let mut r = Reader::new(&[0x7f], 0);
        assert_eq!(r.i32().unwrap(), -1);
        let mut r = Reader::new(&[0xff, 0xff, 0xff, 0xff, 0x07], 0);
        assert_eq!(r.i32().unwrap(), i32::MAX);
        let mut r = Reader::new(&[0xff, 0xff, 0xff, 0xff, 0x4f], 0);
        assert!(r.i32().is_err());
        let mut r = Reader::new(
            &[0x80, 0x80, 0x80, 0x80, 0x80, 0x80, 0x80, 0x80, 0x80, 0x7f],
            0,
        );
        assert_eq!(r.i64().unwrap(), i64::MIN);
    }

    #[test]
    fn custom_sections_keep_placement() {
        let mut b = HEADER.to_vec();
        b.extend([0x00, 0x04, 0x03, b'a', b'b', b'c']);
        b.extend([0x01, 0x04, 0x01, 0x60, 0x00, 0x00]);
        b.extend([0x00, 0x03, 0x01, b'z', 0x42]);
        let m = parse_module(&b).unwrap();
        assert_eq!(m.customs.len(), 2);
        assert_eq!((m.customs[0].name.as_str(), m.customs[0].placement), ("abc", 0));
        assert_eq!(m.customs[1].data, vec![0x42]);
        assert_eq!(m.customs[1].placement, 1);
    }
}
