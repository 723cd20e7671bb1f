use std::fmt::{self, Write};

use super::{IrFunction, IrInstr, IrProgram, Op, Operand};

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Value(v) => write!(f, "%{v}"),
            Operand::Const(c) => write!(f, "{c}"),
        }
    }
}

fn join<T: fmt::Display>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Alloca { size } => write!(f, "alloca {size}"),
            Op::Malloc { size } => write!(f, "malloc {size}"),
            Op::Free { ptr } => write!(f, "free {ptr}"),
            Op::GlobalAddr { global } => write!(f, "gaddr @{global}"),
            Op::PtrAdd { ptr, offset } => write!(f, "ptradd {ptr}, {offset}"),
            Op::Cast { ptr } => write!(f, "cast {ptr}"),
            Op::PtrToInt { ptr } => write!(f, "ptrtoint {ptr}"),
            Op::IntToPtr { value } => write!(f, "inttoptr {value}"),
            Op::Phi { ty, incoming } => write!(
                f,
                "phi {ty} {}",
                join(incoming.iter().map(|(b, v)| format!("[{b}, {v}]")))
            ),
            Op::Load { ty, size, ptr } => write!(f, "load {ty} {size}, {ptr}"),
            Op::Store { size, value, ptr } => write!(f, "store {size} {value}, {ptr}"),
            Op::ICmp { pred, lhs, rhs } => write!(f, "icmp {} {lhs}, {rhs}", pred.mnemonic()),
            Op::Bin { op, lhs, rhs } => write!(f, "{} {lhs}, {rhs}", op.mnemonic()),
            Op::Call { callee, args } => write!(f, "call @{callee}({})", join(args)),
            Op::CallExt { callee, args } => write!(f, "callext @{callee}({})", join(args)),
            Op::Br { target } => write!(f, "br {target}"),
            Op::BrCond { cond, then_to, else_to } => write!(f, "brcond {cond}, {then_to}, {else_to}"),
            Op::Ret { value: Some(v) } => write!(f, "ret {v}"),
            Op::Ret { value: None } => write!(f, "ret"),
            Op::Strip { ptr } => write!(f, "strip {ptr}"),
            Op::Check {
                mode,
                kind,
                size,
                ptr,
                base,
            } => write!(f, "check {} {} {size}, {ptr}, {base}", mode.mnemonic(), kind.mnemonic()),
            Op::ShadowLoad { global } => write!(f, "shadowload @{global}"),
            Op::Tag { ptr, size } => write!(f, "tag {ptr}, {size}"),
        }
    }
}

impl fmt::Display for IrInstr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.result {
            Some(r) => write!(f, "%{r} = {}", self.op),
            None => write!(f, "{}", self.op),
        }
    }
}

fn print_function(out: &mut String, func: &IrFunction) {
    let params = join(func.params.iter().map(|p| {
        if p.byval {
            format!("{} byval %{}", p.ty, p.name)
        } else {
            format!("{} %{}", p.ty, p.name)
        }
    }));
    let _ = write!(out, "func @{}({params})", func.name);
    if let Some(ret) = func.ret {
        let _ = write!(out, " -> {ret}");
    }
    out.push_str(" {\n");
    if func.blocks.is_empty() {
        out.push_str("entry:\n  ret\n");
    }
    for block in &func.blocks {
        let _ = writeln!(out, "{}:", block.label);
        for instr in &block.instrs {
            let _ = writeln!(out, "  {instr}");
        }
    }
    out.push_str("}\n");
}

/// Renders a program in the textual syntax accepted by [`super::parse`].
pub fn pretty_print(p: &IrProgram) -> String {
    let mut out = String::new();
    for e in &p.externs {
        let _ = write!(out, "extern @{}({})", e.name, join(&e.params));
        if let Some(ret) = e.ret {
            let _ = write!(out, " -> {ret}");
        }
        out.push('\n');
    }
    for g in &p.globals {
        let _ = write!(out, "global @{} {}", g.name, g.size);
        if let Some(init) = &g.init {
            let bytes: Vec<String> = init.iter().map(|b| format!("{b:02x}")).collect();
            let _ = write!(out, " = [{}]", bytes.join(" "));
        }
        out.push('\n');
    }
    for c in &p.ctors {
        let _ = writeln!(out, "ctor @{c}");
    }
    for func in &p.functions {
        out.push('\n');
        print_function(&mut out, func);
    }
    out
}
