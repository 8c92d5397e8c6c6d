use std::collections::BTreeMap;
use std::fmt;

use super::instr::Instr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ValType {
    I32,
    I64,
    F32,
    F64,
}

impl ValType {
    pub fn from_byte(b: u8) -> Option<ValType> {
        match b {
            0x7f => Some(ValType::I32),
            0x7e => Some(ValType::I64),
            0x7d => Some(ValType::F32),
            0x7c => Some(ValType::F64),
            _ => None,
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            ValType::I32 => 0x7f,
            ValType::I64 => 0x7e,
            ValType::F32 => 0x7d,
            ValType::F64 => 0x7c,
        }
    }
}

impl fmt::Display for ValType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ValType::I32 => "i32",
            ValType::I64 => "i64",
            ValType::F32 => "f32",
            ValType::F64 => "f64",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct FuncType {
    pub params: Vec<ValType>,
    pub results: Vec<ValType>,
}

impl FuncType {
    pub fn new(params: impl Into<Vec<ValType>>, results: impl Into<Vec<ValType>>) -> Self {
        FuncType {
            params: params.into(),
            results: results.into(),
        }
    }
}

impl fmt::Display for FuncType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{p}")?;
        }
        f.write_str(") -> (")?;
        for (i, r) in self.results.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{r}")?;
        }
        f.write_str(")")
    }
}

/// Page-count (memory) or element-count (table) limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Limits {
    pub min: u32,
    pub max: Option<u32>,
}

/// An MVP table; the element type is always `funcref`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TableType {
    pub limits: Limits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GlobalType {
    pub val_type: ValType,
    pub mutable: bool,
}

/// Constant initializer expression (single instruction followed by `end`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstExpr {
    I32(i32),
    I64(i64),
    F32(u32),
    F64(u64),
    GlobalGet(u32),
}

impl ConstExpr {
    pub fn to_instr(self) -> Instr {
        match self {
            ConstExpr::I32(v) => Instr::I32Const(v),
            ConstExpr::I64(v) => Instr::I64Const(v),
            ConstExpr::F32(v) => Instr::F32Const(v),
            ConstExpr::F64(v) => Instr::F64Const(v),
            ConstExpr::GlobalGet(i) => Instr::GlobalGet(i),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ImportDesc {
    Func(u32),
    Table(TableType),
    Memory(Limits),
    Global(GlobalType),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Import {
    pub module: String,
    pub name: String,
    pub desc: ImportDesc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExportKind {
    Func,
    Table,
    Memory,
    Global,
}

impl ExportKind {
    pub fn from_byte(b: u8) -> Option<ExportKind> {
        match b {
            0 => Some(ExportKind::Func),
            1 => Some(ExportKind::Table),
            2 => Some(ExportKind::Memory),
            3 => Some(ExportKind::Global),
            _ => None,
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            ExportKind::Func => 0,
            ExportKind::Table => 1,
            ExportKind::Memory => 2,
            ExportKind::Global => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Export {
    pub name: String,
    pub kind: ExportKind,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Global {
    pub ty: GlobalType,
    pub init: ConstExpr,
}

/// A defined (non-imported) function.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Function {
    pub type_index: u32,
    /// Declared locals, excluding parameters.
    pub locals: Vec<ValType>,
    /// Instruction sequence; always terminated by the function-level `end`.
    pub body: Vec<Instr>,
}

impl Function {
    /// Appends a local and returns its index. Parameters occupy the first
    /// `param_count` indices, so existing locals never move.
    pub fn add_fresh_local(&mut self, param_count: usize, ty: ValType) -> u32 {
        let index = (param_count + self.locals.len()) as u32;
        self.locals.push(ty);
        index
    }
}

/// MVP active element segment for table 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ElementSegment {
    pub offset: ConstExpr,
    pub functions: Vec<u32>,
}

/// MVP active data segment for memory 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DataSegment {
    pub offset: ConstExpr,
    pub bytes: Vec<u8>,
}

/// Decoded "name" custom section. Subsections other than the function map are
/// kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct NameSection {
    pub module: Option<String>,
    pub functions: BTreeMap<u32, String>,
    pub other: Vec<(u8, Vec<u8>)>,
}

/// An opaque custom section. `placement` is the id of the last standard
/// section that preceded it (0 when it came before all of them).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CustomSection {
    pub name: String,
    pub data: Vec<u8>,
    pub placement: u8,
}

/// A decoded WebAssembly module.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Module {
    pub types: Vec<FuncType>,
    pub imports: Vec<Import>,
    pub functions: Vec<Function>,
    pub table: Option<TableType>,
    pub memory: Option<Limits>,
    pub globals: Vec<Global>,
    pub exports: Vec<Export>,
    pub start: Option<u32>,
    pub elements: Vec<ElementSegment>,
    pub data: Vec<DataSegment>,
    pub names: Option<NameSection>,
    pub customs: Vec<CustomSection>,
}

impl Module {
    pub fn num_imported_funcs(&self) -> u32 {
        self.imports
            .iter()
            .filter(|i| matches!(i.desc, ImportDesc::Func(_)))
            .count() as u32
    }

    pub fn num_imported_globals(&self) -> u32 {
        self.imports
            .iter()
            .filter(|i| matches!(i.desc, ImportDesc::Global(_)))
            .count() as u32
    }

    pub fn num_funcs(&self) -> u32 {
        self.num_imported_funcs() + self.functions.len() as u32
    }

    pub fn num_globals(&self) -> u32 {
        self.num_imported_globals() + self.globals.len() as u32
    }

    /// Type index of a function in the combined (imports first) index space.
    pub fn func_type_index(&self, func: u32) -> Option<u32> {
        let imported = self.num_imported_funcs();
        if func < imported {
            self.imports
                .iter()
                .filter_map(|i| match i.desc {
                    ImportDesc::Func(t) => Some(t),
                    _ => None,
                })
                .nth(func as usize)
        } else {
            self.functions
                .get((func - imported) as usize)
                .map(|f| f.type_index)
        }
    }

    pub fn func_type(&self, func: u32) -> Option<&FuncType> {
        self.func_type_index(func)
            .and_then(|t| self.types.get(t as usize))
    }

    pub fn global_type(&self, global: u32) -> Option<GlobalType> {
        let imported = self.num_imported_globals();
        if global < imported {
            self.imports
                .iter()
                .filter_map(|i| match i.desc {
                    ImportDesc::Global(g) => Some(g),
                    _ => None,
                })
                .nth(global as usize)
        } else {
            self.globals.get((global - imported) as usize).map(|g| g.ty)
        }
    }

    /// The function import at `func`, if it is imported.
    pub fn func_import(&self, func: u32) -> Option<&Import> {
        self.imports
            .iter()
            .filter(|i| matches!(i.desc, ImportDesc::Func(_)))
            .nth(func as usize)
    }

    /// Defined function for a combined-space index.
    pub fn defined_func(&self, func: u32) -> Option<&Function> {
        func.checked_sub(self.num_imported_funcs())
            .and_then(|i| self.functions.get(i as usize))
    }

    pub fn defined_func_mut(&mut self, func: u32) -> Option<&mut Function> {
        let imported = self.num_imported_funcs();
        func.checked_sub(imported)
            .and_then(move |i| self.functions.get_mut(i as usize))
    }

    pub fn memory_limits(&self) -> Option<Limits> {
        self.memory.or_else(|| {
            self.imports.iter().find_map(|i| match i.desc {
                ImportDesc::Memory(l) => Some(l),
                _ => None,
            })
        })
    }

    pub fn table_type(&self) -> Option<TableType> {
        self.table.or_else(|| {
            self.imports.iter().find_map(|i| match i.desc {
                ImportDesc::Table(t) => Some(t),
                _ => None,
            })
        })
    }

    pub fn export(&self, name: &str) -> Option<&Export> {
        self.exports.iter().find(|e| e.name == name)
    }

    pub fn exported_func(&self, name: &str) -> Option<u32> {
        self.exports
            .iter()
            .find(|e| e.name == name && e.kind == ExportKind::Func)
            .map(|e| e.index)
    }

    pub fn func_name(&self, func: u32) -> Option<&str> {
        self.names
            .as_ref()
            .and_then(|n| n.functions.get(&func))
            .map(String::as_str)
    }

    /// Index of an identical signature, appending one if none exists.
    pub fn intern_type(&mut self, ty: FuncType) -> u32 {
        if let Some(i) = self.types.iter().position(|t| *t == ty) {
            return i as u32;
        }
        self.types.push(ty);
        (self.types.len() - 1) as u32
    }

    /// Appends a defined global after all imported globals and returns its
    /// index in the combined global space.
    pub fn add_global(&mut self, val_type: ValType, mutable: bool, init: ConstExpr) -> u32 {
        self.globals.push(Global {
            ty: GlobalType { val_type, mutable },
            init,
        });
        self.num_globals() - 1
    }

    /// Appends a defined function and returns its combined-space index.
    pub fn add_function(&mut self, func: Function) -> u32 {
        self.functions.push(func);
        self.num_funcs() - 1
    }

    /// Adds a local to a defined function; see [`Function::add_fresh_local`].
    pub fn add_fresh_local(&mut self, func: u32, ty: ValType) -> Option<u32> {
        let params = self.func_type(func)?.params.len();
        let f = self.defined_func_mut(func)?;
        Some(f.add_fresh_local(params, ty))
    }

    pub fn custom(&self, name: &str) -> Option<&CustomSection> {
        self.customs.iter().find(|c| c.name == name)
    }
}
