//! Structural, SSA and type validation.

use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{IrFunction, IrProgram, Op, Operand, Type};

/// Where a diagnostic points, by index into the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiagLoc {
    Program,
    Global(usize),
    Extern(usize),
    Function(usize),
    Block(usize, usize),
    Instr(usize, usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiagKind {
    Duplicate,
    Undefined,
    UseBeforeDef,
    Type,
    Structure,
    Phi,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub loc: DiagLoc,
    pub kind: DiagKind,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            DiagKind::Duplicate => "duplicate definition",
            DiagKind::Undefined => "undefined reference",
            DiagKind::UseBeforeDef => "use before definition",
            DiagKind::Type => "type mismatch",
            DiagKind::Structure => "malformed program",
            DiagKind::Phi => "invalid phi",
            DiagKind::Unreachable => "unreachable code",
        };
        write!(f, "{kind}: {}", self.message)
    }
}

/// Control-flow graph of one function with immediate dominators.
#[derive(Debug, Clone)]
pub struct Cfg {
    pub succs: Vec<Vec<usize>>,
    pub preds: Vec<Vec<usize>>,
    pub reachable: Vec<bool>,
    /// Immediate dominator of each reachable block; the entry maps to itself.
    idom: Vec<Option<usize>>,
}

impl Cfg {
    /// Builds the graph; branch targets that name no block are ignored.
    pub fn new(func: &IrFunction) -> Self {
        let n = func.blocks.len();
        let index: HashMap<&str, usize> = func
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (b.label.as_str(), i))
            .collect();
        let mut succs = vec![Vec::new(); n];
        let mut preds = vec![Vec::new(); n];
        for (i, block) in func.blocks.iter().enumerate() {
            for target in block.successors() {
                if let Some(&t) = index.get(target) {
                    if !succs[i].contains(&t) {
                        succs[i].push(t);
                        preds[t].push(i);
                    }
                }
            }
        }
        // reverse postorder from the entry
        let mut reachable = vec![false; n];
        let mut post = Vec::with_capacity(n);
        if n > 0 {
            let mut stack = vec![(0usize, 0usize)];
            reachable[0] = true;
            while let Some((b, next)) = stack.pop() {
                if let Some(&s) = succs[b].get(next) {
                    stack.push((b, next + 1));
                    if !reachable[s] {
                        reachable[s] = true;
                        stack.push((s, 0));
                    }
                } else {
                    post.push(b);
                }
            }
        }
        let rpo: Vec<usize> = post.iter().rev().copied().collect();
        let mut order = vec![usize::MAX; n];
        for (i, &b) in rpo.iter().enumerate() {
            order[b] = i;
        }
        let mut idom: Vec<Option<usize>> = vec![None; n];
        if n > 0 {
            idom[0] = Some(0);
        }
        let intersect = |idom: &[Option<usize>], mut a: usize, mut b: usize| {
            while a != b {
                while order[a] > order[b] {
                    a = idom[a].expect("processed");
                }
                while order[b] > order[a] {
                    b = idom[b].expect("processed");
                }
            }
            a
        };
        let mut changed = true;
        while changed {
            changed = false;
            for &b in rpo.iter().skip(1) {
                let mut new_idom: Option<usize> = None;
                for &p in &preds[b] {
                    if idom[p].is_some() {
                        new_idom = Some(match new_idom {
                            None => p,
                            Some(cur) => intersect(&idom, p, cur),
                        });
                    }
                }
                if new_idom.is_some() && idom[b] != new_idom {
                    idom[b] = new_idom;
                    changed = true;
                }
            }
        }
        Cfg {
            succs,
            preds,
            reachable,
            idom,
        }
    }

    /// Whether block `a` dominates block `b` (reflexive). Unreachable blocks
    /// are dominated by nothing.
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        if !self.reachable[b] || !self.reachable[a] {
            return false;
        }
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            match self.idom[cur] {
                Some(next) if next != cur => cur = next,
                _ => return false,
            }
        }
    }
}

/// Type of every value a function defines, given the program's callees.
pub fn value_types(program: &IrProgram, func: &IrFunction) -> HashMap<String, Type> {
    let mut types = HashMap::new();
    for p in &func.params {
        types.insert(p.name.clone(), p.ty);
    }
    for block in &func.blocks {
        for instr in &block.instrs {
            if let (Some(r), Some(ty)) = (&instr.result, result_type(program, &instr.op)) {
                types.insert(r.clone(), ty);
            }
        }
    }
    types
}

fn result_type(program: &IrProgram, op: &Op) -> Option<Type> {
    match op {
        Op::Alloca { .. }
        | Op::Malloc { .. }
        | Op::GlobalAddr { .. }
        | Op::PtrAdd { .. }
        | Op::Cast { .. }
        | Op::IntToPtr { .. }
        | Op::Strip { .. }
        | Op::Check { .. }
        | Op::ShadowLoad { .. }
        | Op::Tag { .. } => Some(Type::Ptr),
        Op::PtrToInt { .. } | Op::ICmp { .. } | Op::Bin { .. } => Some(Type::I64),
        Op::Phi { ty, .. } | Op::Load { ty, .. } => Some(*ty),
        Op::Call { callee, .. } => program.function(callee).and_then(|f| f.ret),
        Op::CallExt { callee, .. } => program.external(callee).and_then(|e| e.ret),
        Op::Free { .. } | Op::Store { .. } | Op::Br { .. } | Op::BrCond { .. } | Op::Ret { .. } => None,
    }
}

/// Returns every problem found; empty iff the program is well formed.
pub fn validate(p: &IrProgram) -> Vec<Diagnostic> {
    let mut v = Validator {
        program: p,
        diags: Vec::new(),
    };
    v.program_level();
    for (fi, func) in p.functions.iter().enumerate() {
        v.function(fi, func);
    }
    v.diags
}

struct Validator<'a> {
    program: &'a IrProgram,
    diags: Vec<Diagnostic>,
}

impl<'a> Validator<'a> {
    fn push(&mut self, loc: DiagLoc, kind: DiagKind, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            loc,
            kind,
            message: message.into(),
        });
    }

    fn program_level(&mut self) {
        let p = self.program;
        let mut names: HashSet<&str> = HashSet::new();
        for (i, g) in p.globals.iter().enumerate() {
            if !names.insert(&g.name) {
                self.push(DiagLoc::Global(i), DiagKind::Duplicate, format!("@{} is defined twice", g.name));
            }
            if g.size == 0 {
                self.push(DiagLoc::Global(i), DiagKind::Structure, format!("global @{} has size 0", g.name));
            }
            if let Some(init) = &g.init {
                if init.len() as u64 > g.size {
                    self.push(
                        DiagLoc::Global(i),
                        DiagKind::Structure,
                        format!("initializer of @{} has {} bytes but the global holds {}", g.name, init.len(), g.size),
                    );
                }
            }
        }
        for (i, e) in p.externs.iter().enumerate() {
            if !names.insert(&e.name) {
                self.push(DiagLoc::Extern(i), DiagKind::Duplicate, format!("@{} is defined twice", e.name));
            }
        }
        for (i, f) in p.functions.iter().enumerate() {
            if !names.insert(&f.name) {
                self.push(DiagLoc::Function(i), DiagKind::Duplicate, format!("@{} is defined twice", f.name));
            }
        }
        match p.functions.iter().filter(|f| f.name == "main").count() {
            1 => {}
            0 => self.push(DiagLoc::Program, DiagKind::Structure, "no function named @main"),
            _ => {}
        }
        for ctor in &p.ctors {
            match p.function(ctor) {
                None => self.push(DiagLoc::Program, DiagKind::Undefined, format!("ctor @{ctor} is not a function")),
                Some(f) if !f.params.is_empty() => {
                    self.push(DiagLoc::Program, DiagKind::Type, format!("ctor @{ctor} must take no parameters"))
                }
                Some(_) => {}
            }
        }
    }

    fn function(&mut self, fi: usize, func: &IrFunction) {
        let p = self.program;
        if func.blocks.is_empty() {
            self.push(DiagLoc::Function(fi), DiagKind::Structure, format!("@{} has no blocks", func.name));
            return;
        }
        let mut labels = HashSet::new();
        for (bi, b) in func.blocks.iter().enumerate() {
            if !labels.insert(b.label.as_str()) {
                self.push(DiagLoc::Block(fi, bi), DiagKind::Duplicate, format!("block `{}` is defined twice", b.label));
            }
        }

        // definition sites
        let mut defs: HashMap<&str, (usize, usize)> = HashMap::new();
        for param in &func.params {
            if defs.insert(&param.name, (usize::MAX, 0)).is_some() {
                self.push(DiagLoc::Function(fi), DiagKind::Duplicate, format!("%{} is defined twice", param.name));
            }
            if param.byval && param.ty != Type::Ptr {
                self.push(DiagLoc::Function(fi), DiagKind::Type, format!("byval parameter %{} must be a ptr", param.name));
            }
        }
        for (bi, b) in func.blocks.iter().enumerate() {
            for (ii, instr) in b.instrs.iter().enumerate() {
                if let Some(r) = &instr.result {
                    if defs.insert(r, (bi, ii)).is_some() {
                        self.push(DiagLoc::Instr(fi, bi, ii), DiagKind::Duplicate, format!("%{r} is defined twice"));
                    }
                }
            }
        }

        let types = value_types(p, func);
        let cfg = Cfg::new(func);

        for (bi, b) in func.blocks.iter().enumerate() {
            let bloc = DiagLoc::Block(fi, bi);
            match b.instrs.last() {
                Some(t) if t.op.is_terminator() => {}
                _ => self.push(bloc, DiagKind::Structure, format!("block `{}` does not end with a terminator", b.label)),
            }
            let mut seen_non_phi = false;
            for (ii, instr) in b.instrs.iter().enumerate() {
                let loc = DiagLoc::Instr(fi, bi, ii);
                if instr.op.is_terminator() && ii + 1 != b.instrs.len() {
                    self.push(loc, DiagKind::Structure, format!("`{}` must be the last instruction of its block", instr.op.mnemonic()));
                }
                if instr.op.is_phi() {
                    if seen_non_phi {
                        self.push(loc, DiagKind::Phi, "phi nodes must come first in their block");
                    }
                    if !cfg.reachable[bi] {
                        self.push(loc, DiagKind::Unreachable, format!("phi in unreachable block `{}`", b.label));
                    }
                } else {
                    seen_non_phi = true;
                }
                self.instruction(func, &types, &cfg, &defs, loc, (bi, ii));
            }
        }
    }

    fn instruction(
        &mut self,
        func: &IrFunction,
        types: &HashMap<String, Type>,
        cfg: &Cfg,
        defs: &HashMap<&str, (usize, usize)>,
        loc: DiagLoc,
        (bi, ii): (usize, usize),
    ) {
        let p = self.program;
        let instr = &func.blocks[bi].instrs[ii];
        let op = &instr.op;

        // operand definitions and dominance
        if let Op::Phi { incoming, .. } = op {
            let mut seen = HashSet::new();
            for (label, value) in incoming {
                let Some(pred) = func.block_index(label) else {
                    self.push(loc, DiagKind::Undefined, format!("phi names unknown block `{label}`"));
                    continue;
                };
                if !cfg.preds[bi].contains(&pred) {
                    self.push(loc, DiagKind::Phi, format!("`{label}` is not a predecessor of `{}`", func.blocks[bi].label));
                }
                if !seen.insert(pred) {
                    self.push(loc, DiagKind::Phi, format!("phi lists `{label}` twice"));
                }
                if let Operand::Value(v) = value {
                    self.check_def(defs, cfg, loc, v, |db, _| db == usize::MAX || !cfg.reachable[pred] || cfg.dominates(db, pred));
                }
            }
            if cfg.reachable[bi] {
                for &pred in &cfg.preds[bi] {
                    if cfg.reachable[pred] && !seen.contains(&pred) {
                        self.push(
                            loc,
                            DiagKind::Phi,
                            format!("phi is missing an incoming value for `{}`", func.blocks[pred].label),
                        );
                    }
                }
            }
        } else {
            for operand in op.operands() {
                if let Operand::Value(v) = operand {
                    self.check_def(defs, cfg, loc, v, |db, di| {
                        db == usize::MAX || (db == bi && di < ii) || (db != bi && cfg.dominates(db, bi))
                    });
                }
            }
        }
        let ty_of = |o: &Operand| -> Option<Type> {
            match o {
                Operand::Const(_) => Some(Type::I64),
                Operand::Value(v) => types.get(v).copied(),
            }
        };
        let mut expect = |this: &mut Self, o: &Operand, want: Type, role: &str| {
            if let Some(have) = ty_of(o) {
                if have != want {
                    this.push(loc, DiagKind::Type, format!("{role} of `{}` must be {want}, found {have} {o}", op.mnemonic()));
                }
            }
        };
        let valid_size = |s: u8| matches!(s, 1 | 2 | 4 | 8);

        match op {
            Op::Alloca { size } => {
                if *size == 0 {
                    self.push(loc, DiagKind::Structure, "alloca of 0 bytes");
                }
            }
            Op::Malloc { size } => expect(self, size, Type::I64, "size"),
            Op::Free { ptr } | Op::Cast { ptr } | Op::PtrToInt { ptr } | Op::Strip { ptr } => {
                expect(self, ptr, Type::Ptr, "operand")
            }
            Op::GlobalAddr { global } | Op::ShadowLoad { global } => {
                if p.global(global).is_none() {
                    self.push(loc, DiagKind::Undefined, format!("unknown global @{global}"));
                }
            }
            Op::PtrAdd { ptr, offset } => {
                expect(self, ptr, Type::Ptr, "pointer");
                expect(self, offset, Type::I64, "offset");
            }
            Op::IntToPtr { value } => expect(self, value, Type::I64, "operand"),
            Op::Phi { ty, incoming } => {
                for (_, v) in incoming {
                    expect(self, v, *ty, "incoming value");
                }
            }
            Op::Load { ty, size, ptr } => {
                expect(self, ptr, Type::Ptr, "address");
                if !valid_size(*size) {
                    self.push(loc, DiagKind::Type, format!("load size must be 1, 2, 4 or 8, found {size}"));
                } else if *ty == Type::Ptr && *size != 8 {
                    self.push(loc, DiagKind::Type, "pointers are loaded with size 8");
                }
            }
            Op::Store { size, value, ptr } => {
                expect(self, ptr, Type::Ptr, "address");
                if !valid_size(*size) {
                    self.push(loc, DiagKind::Type, format!("store size must be 1, 2, 4 or 8, found {size}"));
                } else if ty_of(value) == Some(Type::Ptr) && *size != 8 {
                    self.push(loc, DiagKind::Type, "pointers are stored with size 8");
                }
            }
            Op::ICmp { lhs, rhs, .. } => {
                if let (Some(a), Some(b)) = (ty_of(lhs), ty_of(rhs)) {
                    if a != b {
                        self.push(loc, DiagKind::Type, format!("icmp compares {a} with {b}"));
                    }
                }
            }
            Op::Bin { lhs, rhs, .. } => {
                expect(self, lhs, Type::I64, "left operand");
                expect(self, rhs, Type::I64, "right operand");
            }
            Op::Call { callee, args } => match p.function(callee) {
                None => {
                    let hint = if p.external(callee).is_some() { " (use callext for externals)" } else { "" };
                    self.push(loc, DiagKind::Undefined, format!("unknown function @{callee}{hint}"));
                }
                Some(f) => {
                    let params: Vec<Type> = f.params.iter().map(|p| p.ty).collect();
                    self.call_sig(loc, callee, &params, f.ret, args, instr.result.is_some(), &mut expect);
                }
            },
            Op::CallExt { callee, args } => match p.external(callee) {
                None => self.push(loc, DiagKind::Undefined, format!("unknown external @{callee}")),
                Some(e) => self.call_sig(loc, callee, &e.params, e.ret, args, instr.result.is_some(), &mut expect),
            },
            Op::Br { target } => self.label(func, loc, target),
            Op::BrCond { cond, then_to, else_to } => {
                expect(self, cond, Type::I64, "condition");
                self.label(func, loc, then_to);
                self.label(func, loc, else_to);
            }
            Op::Ret { value } => match (value, func.ret) {
                (None, None) => {}
                (Some(v), Some(want)) => expect(self, v, want, "return value"),
                (Some(_), None) => self.push(loc, DiagKind::Type, format!("@{} returns nothing", func.name)),
                (None, Some(want)) => self.push(loc, DiagKind::Type, format!("@{} must return {want}", func.name)),
            },
            Op::Check { size, ptr, base, .. } => {
                expect(self, ptr, Type::Ptr, "pointer");
                expect(self, base, Type::Ptr, "base pointer");
                if !valid_size(*size) {
                    self.push(loc, DiagKind::Type, format!("check size must be 1, 2, 4 or 8, found {size}"));
                }
            }
            Op::Tag { ptr, size } => {
                expect(self, ptr, Type::Ptr, "operand");
                if *size == 0 {
                    self.push(loc, DiagKind::Structure, "tag of a 0-byte object");
                }
            }
        }

        let produces = result_type(p, op).is_some();
        let is_call = matches!(op, Op::Call { .. } | Op::CallExt { .. });
        if instr.result.is_none() && produces && !is_call {
            self.push(loc, DiagKind::Structure, format!("result of `{}` must be named", op.mnemonic()));
        }
        if instr.result.is_some() && !produces && !is_call {
            self.push(loc, DiagKind::Structure, format!("`{}` produces no value", op.mnemonic()));
        }
    }

    fn check_def(
        &mut self,
        defs: &HashMap<&str, (usize, usize)>,
        cfg: &Cfg,
        loc: DiagLoc,
        v: &str,
        dominated: impl Fn(usize, usize) -> bool,
    ) {
        let user_block = match loc {
            DiagLoc::Instr(_, b, _) => b,
            _ => 0,
        };
        match defs.get(v) {
            None => self.push(loc, DiagKind::Undefined, format!("%{v} is never defined")),
            Some(&(db, di)) => {
                if cfg.reachable[user_block] && !dominated(db, di) {
                    self.push(loc, DiagKind::UseBeforeDef, format!("%{v} does not dominate this use"));
                }
            }
        }
    }

    fn label(&mut self, func: &IrFunction, loc: DiagLoc, label: &str) {
        if func.block_index(label).is_none() {
            self.push(loc, DiagKind::Undefined, format!("unknown block `{label}`"));
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn call_sig(
        &mut self,
        loc: DiagLoc,
        callee: &str,
        params: &[Type],
        ret: Option<Type>,
        args: &[Operand],
        named: bool,
        expect: &mut impl FnMut(&mut Self, &Operand, Type, &str),
    ) {
        if params.len() != args.len() {
            self.push(
                loc,
                DiagKind::Type,
                format!("@{callee} takes {} arguments, {} given", params.len(), args.len()),
            );
        } else {
            for (arg, &ty) in args.iter().zip(params) {
                expect(self, arg, ty, "argument");
            }
        }
        if named && ret.is_none() {
            self.push(loc, DiagKind::Type, format!("@{callee} returns nothing"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    fn diags(src: &str) -> Vec<Diagnostic> {
        let (p, _) = parse_module(src).expect("syntax");
        validate(&p)
    }

    #[test]
    fn well_formed_program_is_clean() {
        let src = "extern @print_i64(i64)\nfunc @main() -> i64 {\nentry:\n  %p = malloc 24\n  br loop\nloop:\n  %i = phi i64 [entry, 0], [loop, %j]\n  %j = add %i, 1\n  %c = icmp slt %j, 3\n  brcond %c, loop, exit\nexit:\n  callext @print_i64(%j)\n  ret 0\n}\n";
        assert_eq!(diags(src), vec![]);
    }

    #[test]
    fn store_through_integer_is_a_type_error() {
        let d = diags("func @main() {\nentry:\n  %p = malloc 8\n  %i = ptrtoint %p\n  store 8 1, %i\n  ret\n}\n");
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].kind, DiagKind::Type);
        assert_eq!(d[0].loc, DiagLoc::Instr(0, 0, 2));
    }

    #[test]
    fn phi_from_non_predecessor() {
        let d = diags("func @main() {\nentry:\n  br a\na:\n  br b\nb:\n  %x = phi i64 [entry, 1], [a, 2]\n  ret\n}\n");
        assert!(d.iter().any(|d| d.kind == DiagKind::Phi && d.message.contains("`entry` is not a predecessor")), "{d:?}");
    }

    #[test]
    fn phi_in_unreachable_block() {
        let d = diags("func @main() {\nentry:\n  ret\ndead:\n  %x = phi i64 [dead, 1]\n  br dead\n}\n");
        assert!(d.iter().any(|d| d.kind == DiagKind::Unreachable), "{d:?}");
    }

    #[test]
    fn use_before_def_across_blocks() {
        let d = diags("func @main() {\nentry:\n  %c = add 0, 1\n  brcond %c, a, b\na:\n  %x = add 1, 2\n  br b\nb:\n  %y = add %x, 1\n  ret\n}\n");
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].kind, DiagKind::UseBeforeDef);
    }

    #[test]
    fn missing_main_and_terminator() {
        let d = diags("func @f() {\nentry:\n  %x = add 1, 2\n}\n");
        assert!(d.iter().any(|d| d.message.contains("@main")));
        assert!(d.iter().any(|d| d.message.contains("terminator")));
    }

    #[test]
    fn empty_function() {
        let d = diags("func @main() {\n}\n");
        assert_eq!(d[0].kind, DiagKind::Structure);
    }

    #[test]
    fn dominators_of_a_diamond() {
        let (p, _) = parse_module("func @main() {\nentry:\n  brcond 1, a, b\na:\n  br j\nb:\n  br j\nj:\n  ret\n}\n").unwrap();
        let cfg = Cfg::new(&p.functions[0]);
        assert!(cfg.dominates(0, 3));
        assert!(!cfg.dominates(1, 3));
        assert!(!cfg.dominates(2, 3));
        assert!(cfg.dominates(3, 3));
    }
}
