//! Binary encoder, the inverse of [`parse_module`](super::parse_module).

use thiserror::Error;

use super::instr::{BlockType, Instr};
use super::parse::{MAGIC, VERSION};
use super::types::*;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("{what} ({value}) does not fit in a u32 LEB128 field")]
    EncodingOverflow { what: &'static str, value: u64 },
}

type Result<T> = std::result::Result<T, EncodeError>;

#[derive(Default)]
struct Sink {
    buf: Vec<u8>,
}

impl Sink {
    fn byte(&mut self, b: u8) {
        self.buf.push(b);
    }

    fn u32(&mut self, mut v: u32) {
        loop {
            let b = (v & 0x7f) as u8;
            v >>= 7;
            if v == 0 {
                self.buf.push(b);
                return;
            }
            self.buf.push(b | 0x80);
        }
    }

    fn len(&mut self, what: &'static str, n: usize) -> Result<()> {
        let v = u32::try_from(n).map_err(|_| EncodeError::EncodingOverflow {
            what,
            value: n as u64,
        })?;
        self.u32(v);
        Ok(())
    }

    fn i64(&mut self, mut v: i64) {
        loop {
            let b = (v & 0x7f) as u8;
            v >>= 7;
            let done = (v == 0 && b & 0x40 == 0) || (v == -1 && b & 0x40 != 0);
            if done {
                self.buf.push(b);
                return;
            }
            self.buf.push(b | 0x80);
        }
    }

    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    fn name(&mut self, s: &str) -> Result<()> {
        self.len("name length", s.len())?;
        self.bytes(s.as_bytes());
        Ok(())
    }

    fn limits(&mut self, l: &Limits) {
        match l.max {
            None => {
                self.byte(0x00);
                self.u32(l.min);
            }
            Some(max) => {
                self.byte(0x01);
                self.u32(l.min);
                self.u32(max);
            }
        }
    }

    fn const_expr(&mut self, e: &ConstExpr) {
        self.instr(&e.to_instr());
        self.byte(0x0b);
    }

    fn block_type(&mut self, bt: &BlockType) {
        match bt {
            BlockType::Empty => self.byte(0x40),
            BlockType::Value(t) => self.byte(t.to_byte()),
        }
    }

    fn instr(&mut self, i: &Instr) {
        match i {
            Instr::Unreachable => self.byte(0x00),
            Instr::Nop => self.byte(0x01),
            Instr::Block(bt) => {
                self.byte(0x02);
                self.block_type(bt);
            }
            Instr::Loop(bt) => {
                self.byte(0x03);
                self.block_type(bt);
            }
            Instr::If(bt) => {
                self.byte(0x04);
                self.block_type(bt);
            }
            Instr::Else => self.byte(0x05),
            Instr::End => self.byte(0x0b),
            Instr::Br(l) => {
                self.byte(0x0c);
                self.u32(*l);
            }
            Instr::BrIf(l) => {
                self.byte(0x0d);
                self.u32(*l);
            }
            Instr::BrTable { targets, default } => {
                self.byte(0x0e);
                self.u32(targets.len() as u32);
                for t in targets {
                    self.u32(*t);
                }
                self.u32(*default);
            }
            Instr::Return => self.byte(0x0f),
            Instr::Call(f) => {
                self.byte(0x10);
                self.u32(*f);
            }
            Instr::CallIndirect { type_index } => {
                self.byte(0x11);
                self.u32(*type_index);
                self.byte(0x00);
            }
            Instr::Drop => self.byte(0x1a),
            Instr::Select => self.byte(0x1b),
            Instr::LocalGet(i) => {
                self.byte(0x20);
                self.u32(*i);
            }
            Instr::LocalSet(i) => {
                self.byte(0x21);
                self.u32(*i);
            }
            Instr::LocalTee(i) => {
                self.byte(0x22);
                self.u32(*i);
            }
            Instr::GlobalGet(i) => {
                self.byte(0x23);
                self.u32(*i);
            }
            Instr::GlobalSet(i) => {
                self.byte(0x24);
                self.u32(*i);
            }
            Instr::Load(op, m) => {
                self.byte(op.opcode());
                self.u32(m.align);
                self.u32(m.offset);
            }
            Instr::Store(op, m) => {
                self.byte(op.opcode());
                self.u32(m.align);
                self.u32(m.offset);
            }
            Instr::MemorySize => {
                self.byte(0x3f);
                self.byte(0x00);
            }
            Instr::MemoryGrow => {
                self.byte(0x40);
                self.byte(0x00);
            }
            Instr::I32Const(v) => {
                self.byte(0x41);
                self.i64(i64::from(*v));
            }
            Instr::I64Const(v) => {
                self.byte(0x42);
                self.i64(*v);
            }
            Instr::F32Const(bits) => {
                self.byte(0x43);
                self.bytes(&bits.to_le_bytes());
            }
            Instr::F64Const(bits) => {
                self.byte(0x44);
                self.bytes(&bits.to_le_bytes());
            }
            Instr::Num(op) => self.byte(op.opcode()),
        }
    }

    fn section(&mut self, id: u8, payload: Sink) -> Result<()> {
        self.byte(id);
        self.len("section size", payload.buf.len())?;
        self.bytes(&payload.buf);
        Ok(())
    }
}

/// Encodes a module. Sections without content are omitted, so an empty
/// module encodes to the bare 8-byte header.
pub fn encode_module(m: &Module) -> Result<Vec<u8>> {
    let mut out = Sink::default();
    out.bytes(MAGIC);
    out.bytes(&VERSION);

    emit_customs(&mut out, m, 0)?;
    for id in 1..=11u8 {
        if let Some(payload) = standard_section(m, id)? {
            out.section(id, payload)?;
        }
        if id == 11 {
            if let Some(names) = &m.names {
                let payload = name_section(names)?;
                out.section(0, payload)?;
            }
        }
        emit_customs(&mut out, m, id)?;
    }
    // Placements past the data section (e.g. hand-edited) still go last.
    for c in m.customs.iter().filter(|c| c.placement > 11) {
        emit_custom(&mut out, c)?;
    }
    Ok(out.buf)
}

fn emit_customs(out: &mut Sink, m: &Module, placement: u8) -> Result<()> {
    for c in m.customs.iter().filter(|c| c.placement == placement) {
        emit_custom(out, c)?;
    }
    Ok(())
}

fn emit_custom(out: &mut Sink, c: &CustomSection) -> Result<()> {
    let mut s = Sink::default();
    s.name(&c.name)?;
    s.bytes(&c.data);
    out.section(0, s)
}

fn name_section(n: &NameSection) -> Result<Sink> {
    let mut s = Sink::default();
    s.name("name")?;
    if let Some(module) = &n.module {
        let mut sub = Sink::default();
        sub.name(module)?;
        s.byte(0);
        s.len("name subsection", sub.buf.len())?;
        s.bytes(&sub.buf);
    }
    if !n.functions.is_empty() {
        let mut sub = Sink::default();
        sub.len("function name count", n.functions.len())?;
        for (idx, name) in &n.functions {
            sub.u32(*idx);
            sub.name(name)?;
        }
        s.byte(1);
        s.len("name subsection", sub.buf.len())?;
        s.bytes(&sub.buf);
    }
    for (id, data) in &n.other {
        s.byte(*id);
        s.len("name subsection", data.len())?;
        s.bytes(data);
    }
    Ok(s)
}

fn standard_section(m: &Module, id: u8) -> Result<Option<Sink>> {
    let mut s = Sink::default();
    match id {
        1 if !m.types.is_empty() => {
            s.len("type count", m.types.len())?;
            for t in &m.types {
                s.byte(0x60);
                s.len("param count", t.params.len())?;
                for p in &t.params {
                    s.byte(p.to_byte());
                }
                s.len("result count", t.results.len())?;
                for r in &t.results {
                    s.byte(r.to_byte());
                }
            }
        }
        2 if !m.imports.is_empty() => {
            s.len("import count", m.imports.len())?;
            for i in &m.imports {
                s.name(&i.module)?;
                s.name(&i.name)?;
                match &i.desc {
                    ImportDesc::Func(t) => {
                        s.byte(0x00);
                        s.u32(*t);
                    }
                    ImportDesc::Table(t) => {
                        s.byte(0x01);
                        s.byte(0x70);
                        s.limits(&t.limits);
                    }
                    ImportDesc::Memory(l) => {
                        s.byte(0x02);
                        s.limits(l);
                    }
                    ImportDesc::Global(g) => {
                        s.byte(0x03);
                        s.byte(g.val_type.to_byte());
                        s.byte(g.mutable as u8);
                    }
                }
            }
        }
        3 if !m.functions.is_empty() => {
            s.len("function count", m.functions.len())?;
            for f in &m.functions {
                s.u32(f.type_index);
            }
        }
        4 if m.table.is_some() => {
            let t = m.table.as_ref().unwrap();
            s.u32(1);
            s.byte(0x70);
            s.limits(&t.limits);
        }
        5 if m.memory.is_some() => {
            s.u32(1);
            s.limits(m.memory.as_ref().unwrap());
        }
        6 if !m.globals.is_empty() => {
            s.len("global count", m.globals.len())?;
            for g in &m.globals {
                s.byte(g.ty.val_type.to_byte());
                s.byte(g.ty.mutable as u8);
                s.const_expr(&g.init);
            }
        }
        7 if !m.exports.is_empty() => {
            s.len("export count", m.exports.len())?;
            for e in &m.exports {
                s.name(&e.name)?;
                s.byte(e.kind.to_byte());
                s.u32(e.index);
            }
        }
        8 if m.start.is_some() => s.u32(m.start.unwrap()),
        9 if !m.elements.is_empty() => {
            s.len("element segment count", m.elements.len())?;
            for e in &m.elements {
                s.u32(0);
                s.const_expr(&e.offset);
                s.len("element count", e.functions.len())?;
                for f in &e.functions {
                    s.u32(*f);
                }
            }
        }
        10 if !m.functions.is_empty() => {
            s.len("function count", m.functions.len())?;
            for f in &m.functions {
                let body = function_body(f)?;
                s.len("function body size", body.buf.len())?;
                s.bytes(&body.buf);
            }
        }
        11 if !m.data.is_empty() => {
            s.len("data segment count", m.data.len())?;
            for d in &m.data {
                s.u32(0);
                s.const_expr(&d.offset);
                s.len("data segment size", d.bytes.len())?;
                s.bytes(&d.bytes);
            }
        }
        _ => return Ok(None),
    }
    Ok(Some(s))
}

fn function_body(f: &Function) -> Result<Sink> {
    // Run-length groups of identical consecutive local types.
    let mut groups: Vec<(usize, ValType)> = Vec::new();
    for &t in &f.locals {
        match groups.last_mut() {
            Some((n, last)) if *last == t => *n += 1,
            _ => groups.push((1, t)),
        }
    }
    let mut s = Sink::default();
    s.len("local group count", groups.len())?;
    for (n, t) in groups {
        s.len("local count", n)?;
        s.byte(t.to_byte());
    }
    for i in &f.body {
        s.instr(i);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    #[test]
    fn empty_module_is_header_only() {
        let b = encode_module(&Module::default()).unwrap();
        assert_eq!(b, b"\0asm\x01\0\0\0");
    }

    #[test]
    fn signed_leb_matches_known_encodings() {
        let cases: &[(i64, &[u8])] = &[
            (0, &[0x00]),
            (-1, &[0x7f]),
            (63, &[0x3f]),
            (64, &[0xc0, 0x00]),
            (-64, &[0x40]),
            (-65, &[0xbf, 0x7f]),
            (i32::MIN as i64, &[0x80, 0x80, 0x80, 0x80, 0x78]),
        ];
        for (v, expect) in cases {
            let mut s = Sink::default();
            s.i64(*v);
            assert_eq!(&s.buf[..], *expect, "value {v}");
        }
    }

    #[test]
    fn many_functions_need_multibyte_lengths() {
        let mut m = Module::default();
        m.types.push(FuncType::default());
        for _ in 0..128 {
            m.functions.push(Function {
                type_index: 0,
                locals: vec![],
                body: vec![Instr::Nop, Instr::End],
            });
        }
        let b = encode_module(&m).unwrap();
        let back = parse_module(&b).unwrap();
        assert_eq!(back, m);
        // function section: id 3, size 130 (2-byte LEB), count 128 (2-byte LEB)
        let pos = b.windows(3).position(|w| w == [0x03, 0x82, 0x01]).unwrap();
        assert_eq!(&b[pos + 3..pos + 5], &[0x80, 0x01]);
    }

    #[test]
    fn locals_are_grouped() {
        let f = Function {
            type_index: 0,
            locals: vec![ValType::I32, ValType::I32, ValType::I64, ValType::I32],
            body: vec![Instr::End],
        };
        let s = function_body(&f).unwrap();
        assert_eq!(s.buf, vec![3, 2, 0x7f, 1, 0x7e, 1, 0x7f, 0x0b]);
    }
}
