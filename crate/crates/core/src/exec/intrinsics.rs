//! External functions the interpreter provides. They play the role of
//! uninstrumented library code and only ever see raw addresses.

use super::LoadError;
use crate::ir::{ExternDecl, Type};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intrinsic {
    /// `putchar(i64)`: writes the low byte.
    PutChar,
    /// `print_i64(i64)`: decimal and a newline.
    PrintI64,
    /// `print_str(ptr)`: bytes up to the first NUL.
    PrintStr,
    /// `write(ptr, i64)`: a byte range.
    Write,
    /// `read_byte() -> i64`: next input byte, -1 at end of input.
    ReadByte,
    /// `exit(i64)`: terminates the program.
    Exit,
}

impl Intrinsic {
    pub const ALL: [Intrinsic; 6] = [
        Intrinsic::PutChar,
        Intrinsic::PrintI64,
        Intrinsic::PrintStr,
        Intrinsic::Write,
        Intrinsic::ReadByte,
        Intrinsic::Exit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Intrinsic::PutChar => "putchar",
            Intrinsic::PrintI64 => "print_i64",
            Intrinsic::PrintStr => "print_str",
            Intrinsic::Write => "write",
            Intrinsic::ReadByte => "read_byte",
            Intrinsic::Exit => "exit",
        }
    }

    pub fn signature(self) -> (&'static [Type], Option<Type>) {
        match self {
            Intrinsic::PutChar | Intrinsic::PrintI64 | Intrinsic::Exit => (&[Type::I64], None),
            Intrinsic::PrintStr => (&[Type::Ptr], None),
            Intrinsic::Write => (&[Type::Ptr, Type::I64], None),
            Intrinsic::ReadByte => (&[], Some(Type::I64)),
        }
    }

    pub(super) fn bind(decl: &ExternDecl) -> Result<Intrinsic, LoadError> {
        let found = Intrinsic::ALL
            .into_iter()
            .find(|i| i.name() == decl.name)
            .ok_or_else(|| LoadError::UnknownExtern(decl.name.clone()))?;
        let (params, ret) = found.signature();
        if params != decl.params.as_slice() || ret != decl.ret {
            return Err(LoadError::Signature(decl.name.clone()));
        }
        Ok(found)
    }
}

/// Longest string `print_str` will scan before giving up.
pub const MAX_STRING: u64 = 1 << 20;
