//! A small line-oriented SSA intermediate representation.
//!
//! Programs have two value types, `i64` and `ptr`. Aggregates are byte ranges
//! addressed with `ptradd`. Besides the ordinary opcodes the IR carries the
//! handful of instrumentation opcodes (`strip`, `check`, `shadowload`, `tag`)
//! the pass emits, so instrumented programs can be printed and re-parsed.
//!
//! ```text
//! extern @print_i64(i64)
//! global @table 24
//!
//! func @main() -> i64 {
//! entry:
//!   %p = malloc 24
//!   %q = ptradd %p, 8
//!   store 8 42, %q
//!   %v = load i64 8, %q
//!   callext @print_i64(%v)
//!   ret 0
//! }
//! ```

mod parse;
mod print;
mod validate;

pub use parse::{parse, parse_module, ParseError, SourceMap};
pub use print::pretty_print;
pub use validate::{validate, value_types, Cfg, DiagKind, DiagLoc, Diagnostic};

use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Type {
    I64,
    Ptr,
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Type::I64 => "i64",
            Type::Ptr => "ptr",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Operand {
    Value(String),
    Const(i64),
}

impl Operand {
    pub fn value(name: impl Into<String>) -> Self {
        Operand::Value(name.into())
    }

    pub fn as_value(&self) -> Option<&str> {
        match self {
            Operand::Value(v) => Some(v),
            Operand::Const(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalDef {
    pub name: String,
    pub size: u64,
    pub init: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternDecl {
    pub name: String,
    pub params: Vec<Type>,
    pub ret: Option<Type>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub ty: Type,
    /// Passed by value: tags are stripped at internal call sites.
    pub byval: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrBlock {
    pub label: String,
    pub instrs: Vec<IrInstr>,
}

impl IrBlock {
    pub fn terminator(&self) -> Option<&IrInstr> {
        self.instrs.last().filter(|i| i.op.is_terminator())
    }

    pub fn successors(&self) -> Vec<&str> {
        match self.terminator().map(|t| &t.op) {
            Some(Op::Br { target }) => vec![target.as_str()],
            Some(Op::BrCond { then_to, else_to, .. }) => vec![then_to.as_str(), else_to.as_str()],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrFunction {
    pub name: String,
    pub params: Vec<Param>,
    pub ret: Option<Type>,
    pub blocks: Vec<IrBlock>,
}

impl IrFunction {
    pub fn block(&self, label: &str) -> Option<&IrBlock> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    /// Every value name defined in the function, parameters first.
    pub fn defined_values(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str()).chain(
            self.blocks
                .iter()
                .flat_map(|b| b.instrs.iter().filter_map(|i| i.result.as_deref())),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IrProgram {
    pub globals: Vec<GlobalDef>,
    pub externs: Vec<ExternDecl>,
    /// Functions run, in order, before `main`.
    pub ctors: Vec<String>,
    pub functions: Vec<IrFunction>,
}

impl IrProgram {
    pub fn function(&self, name: &str) -> Option<&IrFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&GlobalDef> {
        self.globals.iter().find(|g| g.name == name)
    }

    pub fn external(&self, name: &str) -> Option<&ExternDecl> {
        self.externs.iter().find(|e| e.name == name)
    }

    pub fn is_ctor(&self, name: &str) -> bool {
        self.ctors.iter().any(|c| c == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpPred {
    Eq,
    Ne,
    Slt,
    Sle,
    Sgt,
    Sge,
    Ult,
    Ule,
    Ugt,
    Uge,
}

impl CmpPred {
    pub const ALL: [CmpPred; 10] = [
        CmpPred::Eq,
        CmpPred::Ne,
        CmpPred::Slt,
        CmpPred::Sle,
        CmpPred::Sgt,
        CmpPred::Sge,
        CmpPred::Ult,
        CmpPred::Ule,
        CmpPred::Ugt,
        CmpPred::Uge,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            CmpPred::Eq => "eq",
            CmpPred::Ne => "ne",
            CmpPred::Slt => "slt",
            CmpPred::Sle => "sle",
            CmpPred::Sgt => "sgt",
            CmpPred::Sge => "sge",
            CmpPred::Ult => "ult",
            CmpPred::Ule => "ule",
            CmpPred::Ugt => "ugt",
            CmpPred::Uge => "uge",
        }
    }

    pub fn eval(self, a: u64, b: u64) -> bool {
        let (sa, sb) = (a as i64, b as i64);
        match self {
            CmpPred::Eq => a == b,
            CmpPred::Ne => a != b,
            CmpPred::Slt => sa < sb,
            CmpPred::Sle => sa <= sb,
            CmpPred::Sgt => sa > sb,
            CmpPred::Sge => sa >= sb,
            CmpPred::Ult => a < b,
            CmpPred::Ule => a <= b,
            CmpPred::Ugt => a > b,
            CmpPred::Uge => a >= b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    SDiv,
    UDiv,
    SRem,
    URem,
    And,
    Or,
    Xor,
    Shl,
    LShr,
    AShr,
}

impl BinOp {
    pub const ALL: [BinOp; 13] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::SDiv,
        BinOp::UDiv,
        BinOp::SRem,
        BinOp::URem,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Shl,
        BinOp::LShr,
        BinOp::AShr,
    ];

    pub fn mnemonic(self) -> &'static str {
        match self {
            BinOp::Add => "add",
            BinOp::Sub => "sub",
            BinOp::Mul => "mul",
            BinOp::SDiv => "sdiv",
            BinOp::UDiv => "udiv",
            BinOp::SRem => "srem",
            BinOp::URem => "urem",
            BinOp::And => "and",
            BinOp::Or => "or",
            BinOp::Xor => "xor",
            BinOp::Shl => "shl",
            BinOp::LShr => "lshr",
            BinOp::AShr => "ashr",
        }
    }

    /// `None` on division or remainder by zero.
    pub fn eval(self, a: u64, b: u64) -> Option<u64> {
        let (sa, sb) = (a as i64, b as i64);
        Some(match self {
            BinOp::Add => a.wrapping_add(b),
            BinOp::Sub => a.wrapping_sub(b),
            BinOp::Mul => a.wrapping_mul(b),
            BinOp::SDiv => sa.checked_div(sb).or_else(|| (sb == -1).then_some(sa.wrapping_neg()))? as u64,
            BinOp::UDiv => a.checked_div(b)?,
            BinOp::SRem => sa.checked_rem(sb).or_else(|| (sb == -1).then_some(0))? as u64,
            BinOp::URem => a.checked_rem(b)?,
            BinOp::And => a & b,
            BinOp::Or => a | b,
            BinOp::Xor => a ^ b,
            BinOp::Shl => a.wrapping_shl(b as u32),
            BinOp::LShr => a.wrapping_shr(b as u32),
            BinOp::AShr => sa.wrapping_shr(b as u32) as u64,
        })
    }
}

/// What a check does when the access is out of bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckMode {
    /// Clamp the address to the object boundary.
    Saturate,
    /// Stop the program.
    Trap,
    /// Send the access to the discard sink.
    Oblivious,
}

impl CheckMode {
    pub fn mnemonic(self) -> &'static str {
        match self {
            CheckMode::Saturate => "sat",
            CheckMode::Trap => "trap",
            CheckMode::Oblivious => "obl",
        }
    }
}

/// Which operation a check guards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckKind {
    Load,
    Store,
    /// Pointer argument of an internal call.
    Arg,
}

impl CheckKind {
    pub fn mnemonic(self) -> &'static str {
        match self {
            CheckKind::Load => "load",
            CheckKind::Store => "store",
            CheckKind::Arg => "arg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Alloca { size: u64 },
    Malloc { size: Operand },
    Free { ptr: Operand },
    GlobalAddr { global: String },
    PtrAdd { ptr: Operand, offset: Operand },
    Cast { ptr: Operand },
    PtrToInt { ptr: Operand },
    IntToPtr { value: Operand },
    Phi { ty: Type, incoming: Vec<(String, Operand)> },
    Load { ty: Type, size: u8, ptr: Operand },
    Store { size: u8, value: Operand, ptr: Operand },
    ICmp { pred: CmpPred, lhs: Operand, rhs: Operand },
    Bin { op: BinOp, lhs: Operand, rhs: Operand },
    Call { callee: String, args: Vec<Operand> },
    CallExt { callee: String, args: Vec<Operand> },
    Br { target: String },
    BrCond { cond: Operand, then_to: String, else_to: String },
    Ret { value: Option<Operand> },
    /// Clears the tag region of a pointer.
    Strip { ptr: Operand },
    /// Bounds-checks an access through `ptr` against the object described
    /// by `base`; yields the address to use.
    Check { mode: CheckMode, kind: CheckKind, size: u8, ptr: Operand, base: Operand },
    /// Reads the tagged base pointer held in a shadow global.
    ShadowLoad { global: String },
    /// Tags an untagged object base as an object of `size` requested bytes.
    Tag { ptr: Operand, size: u64 },
}

impl Op {
    pub fn is_terminator(&self) -> bool {
        matches!(self, Op::Br { .. } | Op::BrCond { .. } | Op::Ret { .. })
    }

    pub fn is_phi(&self) -> bool {
        matches!(self, Op::Phi { .. })
    }

    pub fn mnemonic(&self) -> &'static str {
        match self {
            Op::Alloca { .. } => "alloca",
            Op::Malloc { .. } => "malloc",
            Op::Free { .. } => "free",
            Op::GlobalAddr { .. } => "gaddr",
            Op::PtrAdd { .. } => "ptradd",
            Op::Cast { .. } => "cast",
            Op::PtrToInt { .. } => "ptrtoint",
            Op::IntToPtr { .. } => "inttoptr",
            Op::Phi { .. } => "phi",
            Op::Load { .. } => "load",
            Op::Store { .. } => "store",
            Op::ICmp { .. } => "icmp",
            Op::Bin { op, .. } => op.mnemonic(),
            Op::Call { .. } => "call",
            Op::CallExt { .. } => "callext",
            Op::Br { .. } => "br",
            Op::BrCond { .. } => "brcond",
            Op::Ret { .. } => "ret",
            Op::Strip { .. } => "strip",
            Op::Check { .. } => "check",
            Op::ShadowLoad { .. } => "shadowload",
            Op::Tag { .. } => "tag",
        }
    }

    /// Operands in source order (phi incomings included).
    pub fn operands(&self) -> Vec<&Operand> {
        match self {
            Op::Alloca { .. } | Op::GlobalAddr { .. } | Op::ShadowLoad { .. } | Op::Br { .. } => vec![],
            Op::Malloc { size } => vec![size],
            Op::Free { ptr }
            | Op::Cast { ptr }
            | Op::PtrToInt { ptr }
            | Op::Strip { ptr }
            | Op::Tag { ptr, .. }
            | Op::Load { ptr, .. } => vec![ptr],
            Op::IntToPtr { value } => vec![value],
            Op::PtrAdd { ptr, offset } => vec![ptr, offset],
            Op::Phi { incoming, .. } => incoming.iter().map(|(_, v)| v).collect(),
            Op::Store { value, ptr, .. } => vec![value, ptr],
            Op::ICmp { lhs, rhs, .. } | Op::Bin { lhs, rhs, .. } => vec![lhs, rhs],
            Op::Call { args, .. } | Op::CallExt { args, .. } => args.iter().collect(),
            Op::BrCond { cond, .. } => vec![cond],
            Op::Ret { value } => value.iter().collect(),
            Op::Check { ptr, base, .. } => vec![ptr, base],
        }
    }

    pub fn operands_mut(&mut self) -> Vec<&mut Operand> {
        match self {
            Op::Alloca { .. } | Op::GlobalAddr { .. } | Op::ShadowLoad { .. } | Op::Br { .. } => vec![],
            Op::Malloc { size } => vec![size],
            Op::Free { ptr }
            | Op::Cast { ptr }
            | Op::PtrToInt { ptr }
            | Op::Strip { ptr }
            | Op::Tag { ptr, .. }
            | Op::Load { ptr, .. } => vec![ptr],
            Op::IntToPtr { value } => vec![value],
            Op::PtrAdd { ptr, offset } => vec![ptr, offset],
            Op::Phi { incoming, .. } => incoming.iter_mut().map(|(_, v)| v).collect(),
            Op::Store { value, ptr, .. } => vec![value, ptr],
            Op::ICmp { lhs, rhs, .. } | Op::Bin { lhs, rhs, .. } => vec![lhs, rhs],
            Op::Call { args, .. } | Op::CallExt { args, .. } => args.iter_mut().collect(),
            Op::BrCond { cond, .. } => vec![cond],
            Op::Ret { value } => value.iter_mut().collect(),
            Op::Check { ptr, base, .. } => vec![ptr, base],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrInstr {
    pub result: Option<String>,
    pub op: Op,
}

impl IrInstr {
    pub fn new(result: Option<&str>, op: Op) -> Self {
        IrInstr {
            result: result.map(str::to_owned),
            op,
        }
    }

    pub fn effect(op: Op) -> Self {
        IrInstr { result: None, op }
    }
}

/// Position of an instruction inside a program.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstrLoc {
    pub func: String,
    pub block: String,
    pub index: usize,
}

impl fmt::Display for InstrLoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}/{}#{}", self.func, self.block, self.index)
    }
}
