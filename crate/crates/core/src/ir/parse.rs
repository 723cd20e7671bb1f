//! Line-oriented parser for `.sir` text.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use super::validate::{validate, DiagLoc, Diagnostic};
use super::{
    BinOp, CheckKind, CheckMode, CmpPred, ExternDecl, GlobalDef, IrBlock, IrFunction, IrInstr, IrProgram, Op, Operand,
    Param, Type,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl ParseError {
    fn new(line: usize, col: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            col,
            message: message.into(),
        }
    }
}

/// Source positions of parsed items, keyed by their diagnostic location.
#[derive(Debug, Clone, Default)]
pub struct SourceMap {
    positions: HashMap<DiagLoc, (usize, usize)>,
}

impl SourceMap {
    pub fn position(&self, loc: &DiagLoc) -> Option<(usize, usize)> {
        if let Some(p) = self.positions.get(loc) {
            return Some(*p);
        }
        match *loc {
            DiagLoc::Instr(f, b, _) => self.positions.get(&DiagLoc::Block(f, b)).copied(),
            DiagLoc::Block(f, _) => self.positions.get(&DiagLoc::Function(f)).copied(),
            _ => None,
        }
    }

    /// Converts a validation diagnostic into a located error.
    pub fn locate(&self, diag: &Diagnostic) -> ParseError {
        let (line, col) = self.position(&diag.loc).unwrap_or((1, 1));
        ParseError::new(line, col, diag.to_string())
    }
}

/// Parses and validates; the first problem found is reported with its
/// source position.
pub fn parse(text: &str) -> Result<IrProgram, ParseError> {
    let (program, map) = parse_module(text)?;
    match validate(&program).first() {
        Some(diag) => Err(map.locate(diag)),
        None => Ok(program),
    }
}

/// Syntax-only parse.
pub fn parse_module(text: &str) -> Result<(IrProgram, SourceMap), ParseError> {
    Parser::default().run(text)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Local(String),
    Global(String),
    Int(String),
    Punct(char),
    Arrow,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) | Tok::Int(s) => write!(f, "`{s}`"),
            Tok::Local(s) => write!(f, "`%{s}`"),
            Tok::Global(s) => write!(f, "`@{s}`"),
            Tok::Punct(c) => write!(f, "`{c}`"),
            Tok::Arrow => f.write_str("`->`"),
        }
    }
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn lex(line: &str, line_no: usize) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let take_name = |i: &mut usize| {
        let start = *i;
        while *i < chars.len() && is_name_char(chars[*i]) {
            *i += 1;
        }
        chars[start..*i].iter().collect::<String>()
    };
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        match c {
            '#' => break,
            c if c.is_whitespace() => i += 1,
            '%' | '@' => {
                i += 1;
                let name = take_name(&mut i);
                if name.is_empty() {
                    return Err(ParseError::new(line_no, col, format!("expected a name after `{c}`")));
                }
                out.push((if c == '%' { Tok::Local(name) } else { Tok::Global(name) }, col));
            }
            '-' if chars.get(i + 1) == Some(&'>') => {
                out.push((Tok::Arrow, col));
                i += 2;
            }
            '-' | '0'..='9' => {
                let start = i;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                    i += 1;
                }
                out.push((Tok::Int(chars[start..i].iter().collect()), col));
            }
            c if c.is_ascii_alphabetic() || c == '_' => out.push((Tok::Ident(take_name(&mut i)), col)),
            '(' | ')' | '[' | ']' | '{' | '}' | ',' | '=' | ':' => {
                out.push((Tok::Punct(c), col));
                i += 1;
            }
            other => return Err(ParseError::new(line_no, col, format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

fn parse_int(text: &str) -> Option<i64> {
    let (neg, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let magnitude = if let Some(hex) = digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16).ok()?
    } else {
        digits.parse::<u64>().ok()?
    };
    if neg {
        if magnitude > 1 << 63 {
            None
        } else {
            Some((magnitude as i64).wrapping_neg())
        }
    } else {
        Some(magnitude as i64)
    }
}

/// Cursor over the tokens of one line.
struct Line<'a> {
    toks: &'a [(Tok, usize)],
    pos: usize,
    line: usize,
    width: usize,
}

impl<'a> Line<'a> {
    fn err(&self, message: impl Into<String>) -> ParseError {
        let col = self.toks.get(self.pos).map_or(self.width + 1, |t| t.1);
        ParseError::new(self.line, col, message)
    }

    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.width + 1, |t| t.1)
    }

    fn next(&mut self, what: &str) -> Result<&'a Tok, ParseError> {
        match self.toks.get(self.pos) {
            Some((t, _)) => {
                self.pos += 1;
                Ok(t)
            }
            None => Err(self.err(format!("expected {what}, found end of line"))),
        }
    }

    fn eat(&mut self, p: char) -> bool {
        if self.peek() == Some(&Tok::Punct(p)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: char) -> Result<(), ParseError> {
        if self.eat(p) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{p}`")))
        }
    }

    fn unexpected(&self, what: &str) -> ParseError {
        match self.peek() {
            Some(t) => self.err(format!("expected {what}, found {t}")),
            None => self.err(format!("expected {what}, found end of line")),
        }
    }

    fn done(&self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(t) => Err(self.err(format!("unexpected trailing {t}"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<&'a str, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.unexpected(what)),
        }
    }

    fn global(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Global(s)) => {
                self.pos += 1;
                Ok(s.clone())
            }
            _ => Err(self.unexpected("a `@name`")),
        }
    }

    fn local(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Local(s)) => {
                self.pos += 1;
                Ok(s.clone())
            }
            _ => Err(self.unexpected("a `%value`")),
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        match self.peek() {
            Some(Tok::Int(s)) => {
                let v = parse_int(s).ok_or_else(|| self.err(format!("invalid integer `{s}`")))?;
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.unexpected("an integer")),
        }
    }

    fn uint(&mut self) -> Result<u64, ParseError> {
        let col = self.col();
        let v = self.int()?;
        u64::try_from(v).map_err(|_| ParseError::new(self.line, col, "expected a non-negative integer"))
    }

    fn access_size(&mut self) -> Result<u8, ParseError> {
        let col = self.col();
        let v = self.uint()?;
        u8::try_from(v).map_err(|_| ParseError::new(self.line, col, format!("access size {v} out of range")))
    }

    fn ty(&mut self) -> Result<Type, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == "i64" => {
                self.pos += 1;
                Ok(Type::I64)
            }
            Some(Tok::Ident(s)) if s == "ptr" => {
                self.pos += 1;
                Ok(Type::Ptr)
            }
            _ => Err(self.unexpected("a type (`i64` or `ptr`)")),
        }
    }

    fn operand(&mut self) -> Result<Operand, ParseError> {
        match self.peek() {
            Some(Tok::Local(s)) => {
                self.pos += 1;
                Ok(Operand::Value(s.clone()))
            }
            Some(Tok::Int(_)) => Ok(Operand::Const(self.int()?)),
            _ => Err(self.unexpected("an operand")),
        }
    }

    fn args(&mut self) -> Result<Vec<Operand>, ParseError> {
        self.expect('(')?;
        let mut args = Vec::new();
        if !self.eat(')') {
            loop {
                args.push(self.operand()?);
                if self.eat(')') {
                    break;
                }
                self.expect(',')?;
            }
        }
        Ok(args)
    }
}

#[derive(Default)]
struct Parser {
    program: IrProgram,
    map: SourceMap,
}

impl Parser {
    fn run(mut self, text: &str) -> Result<(IrProgram, SourceMap), ParseError> {
        let mut current: Option<IrFunction> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let toks = lex(raw, line_no)?;
            if toks.is_empty() {
                continue;
            }
            let mut line = Line {
                toks: &toks,
                pos: 0,
                line: line_no,
                width: raw.chars().count(),
            };
            match current.as_mut() {
                None => {
                    if let Some(func) = self.top_level(&mut line)? {
                        current = Some(func);
                    }
                }
                Some(func) => {
                    if line.eat('}') {
                        line.done()?;
                        self.program.functions.push(current.take().expect("open function"));
                    } else {
                        self.body_line(func, &mut line)?;
                    }
                }
            }
        }
        if let Some(func) = current {
            return Err(ParseError::new(
                text.lines().count().max(1),
                1,
                format!("function @{} is missing its closing `}}`", func.name),
            ));
        }
        Ok((self.program, self.map))
    }

    fn top_level(&mut self, line: &mut Line<'_>) -> Result<Option<IrFunction>, ParseError> {
        let start = (line.line, line.col());
        let keyword = line.ident("`func`, `global`, `extern` or `ctor`")?;
        match keyword {
            "global" => {
                let name = line.global()?;
                let size = line.uint()?;
                let init = if line.eat('=') {
                    line.expect('[')?;
                    let mut bytes = Vec::new();
                    while !line.eat(']') {
                        let col = line.col();
                        let text = match line.next("a hex byte or `]`")? {
                            Tok::Int(s) | Tok::Ident(s) => s.as_str(),
                            t => return Err(ParseError::new(line.line, col, format!("expected a hex byte, found {t}"))),
                        };
                        let b = u8::from_str_radix(text, 16)
                            .map_err(|_| ParseError::new(line.line, col, format!("invalid hex byte `{text}`")))?;
                        bytes.push(b);
                    }
                    Some(bytes)
                } else {
                    None
                };
                line.done()?;
                self.map
                    .positions
                    .insert(DiagLoc::Global(self.program.globals.len()), start);
                self.program.globals.push(GlobalDef { name, size, init });
                Ok(None)
            }
            "extern" => {
                let name = line.global()?;
                line.expect('(')?;
                let mut params = Vec::new();
                if !line.eat(')') {
                    loop {
                        params.push(line.ty()?);
                        if line.eat(')') {
                            break;
                        }
                        line.expect(',')?;
                    }
                }
                let ret = self.ret_type(line)?;
                line.done()?;
                self.map
                    .positions
                    .insert(DiagLoc::Extern(self.program.externs.len()), start);
                self.program.externs.push(ExternDecl { name, params, ret });
                Ok(None)
            }
            "ctor" => {
                let name = line.global()?;
                line.done()?;
                self.program.ctors.push(name);
                Ok(None)
            }
            "func" => {
                let name = line.global()?;
                line.expect('(')?;
                let mut params = Vec::new();
                if !line.eat(')') {
                    loop {
                        let ty = line.ty()?;
                        let byval = matches!(line.peek(), Some(Tok::Ident(s)) if s == "byval");
                        if byval {
                            line.pos += 1;
                        }
                        let name = line.local()?;
                        params.push(Param { name, ty, byval });
                        if line.eat(')') {
                            break;
                        }
                        line.expect(',')?;
                    }
                }
                let ret = self.ret_type(line)?;
                line.expect('{')?;
                line.done()?;
                self.map
                    .positions
                    .insert(DiagLoc::Function(self.program.functions.len()), start);
                Ok(Some(IrFunction {
                    name,
                    params,
                    ret,
                    blocks: Vec::new(),
                }))
            }
            other => Err(ParseError::new(
                start.0,
                start.1,
                format!("expected `func`, `global`, `extern` or `ctor`, found `{other}`"),
            )),
        }
    }

    fn ret_type(&self, line: &mut Line<'_>) -> Result<Option<Type>, ParseError> {
        if line.peek() == Some(&Tok::Arrow) {
            line.pos += 1;
            Ok(Some(line.ty()?))
        } else {
            Ok(None)
        }
    }

    fn body_line(&mut self, func: &mut IrFunction, line: &mut Line<'_>) -> Result<(), ParseError> {
        let fidx = self.program.functions.len();
        let start = (line.line, line.col());
        if let (Some(Tok::Ident(label)), Some(Tok::Punct(':'))) = (line.peek(), line.toks.get(1).map(|t| &t.0)) {
            line.pos += 2;
            line.done()?;
            self.map
                .positions
                .insert(DiagLoc::Block(fidx, func.blocks.len()), start);
            func.blocks.push(IrBlock {
                label: label.clone(),
                instrs: Vec::new(),
            });
            return Ok(());
        }
        if func.blocks.is_empty() {
            return Err(line.err("instruction outside of a block; add a `label:` line first"));
        }
        let result = if let Some(Tok::Local(name)) = line.peek() {
            line.pos += 1;
            line.expect('=')?;
            Some(name.clone())
        } else {
            None
        };
        let op = parse_op(line)?;
        line.done()?;
        let bidx = func.blocks.len() - 1;
        let block = &mut func.blocks[bidx];
        self.map
            .positions
            .insert(DiagLoc::Instr(fidx, bidx, block.instrs.len()), start);
        block.instrs.push(IrInstr { result, op });
        Ok(())
    }
}

fn parse_op(line: &mut Line<'_>) -> Result<Op, ParseError> {
    let col = line.col();
    let mnemonic = line.ident("an opcode")?;
    let op = match mnemonic {
        "alloca" => Op::Alloca { size: line.uint()? },
        "malloc" => Op::Malloc { size: line.operand()? },
        "free" => Op::Free { ptr: line.operand()? },
        "gaddr" => Op::GlobalAddr { global: line.global()? },
        "ptradd" => {
            let ptr = line.operand()?;
            line.expect(',')?;
            Op::PtrAdd {
                ptr,
                offset: line.operand()?,
            }
        }
        "cast" => Op::Cast { ptr: line.operand()? },
        "ptrtoint" => Op::PtrToInt { ptr: line.operand()? },
        "inttoptr" => Op::IntToPtr { value: line.operand()? },
        "phi" => {
            let ty = line.ty()?;
            let mut incoming = Vec::new();
            loop {
                line.expect('[')?;
                let label = line.ident("a block label")?.to_owned();
                line.expect(',')?;
                let value = line.operand()?;
                line.expect(']')?;
                incoming.push((label, value));
                if !line.eat(',') {
                    break;
                }
            }
            Op::Phi { ty, incoming }
        }
        "load" => {
            let ty = line.ty()?;
            let size = line.access_size()?;
            line.expect(',')?;
            Op::Load {
                ty,
                size,
                ptr: line.operand()?,
            }
        }
        "store" => {
            let size = line.access_size()?;
            let value = line.operand()?;
            line.expect(',')?;
            Op::Store {
                size,
                value,
                ptr: line.operand()?,
            }
        }
        "icmp" => {
            let pcol = line.col();
            let name = line.ident("a comparison predicate")?;
            let pred = CmpPred::ALL
                .into_iter()
                .find(|p| p.mnemonic() == name)
                .ok_or_else(|| ParseError::new(line.line, pcol, format!("unknown predicate `{name}`")))?;
            let lhs = line.operand()?;
            line.expect(',')?;
            Op::ICmp {
                pred,
                lhs,
                rhs: line.operand()?,
            }
        }
        "call" | "callext" => {
            let callee = line.global()?;
            let args = line.args()?;
            if mnemonic == "call" {
                Op::Call { callee, args }
            } else {
                Op::CallExt { callee, args }
            }
        }
        "br" => Op::Br {
            target: line.ident("a block label")?.to_owned(),
        },
        "brcond" => {
            let cond = line.operand()?;
            line.expect(',')?;
            let then_to = line.ident("a block label")?.to_owned();
            line.expect(',')?;
            Op::BrCond {
                cond,
                then_to,
                else_to: line.ident("a block label")?.to_owned(),
            }
        }
        "ret" => Op::Ret {
            value: if line.peek().is_some() { Some(line.operand()?) } else { None },
        },
        "strip" => Op::Strip { ptr: line.operand()? },
        "check" => {
            let mcol = line.col();
            let mode = match line.ident("a check mode")? {
                "sat" => CheckMode::Saturate,
                "trap" => CheckMode::Trap,
                "obl" => CheckMode::Oblivious,
                other => return Err(ParseError::new(line.line, mcol, format!("unknown check mode `{other}`"))),
            };
            let kcol = line.col();
            let kind = match line.ident("a check kind")? {
                "load" => CheckKind::Load,
                "store" => CheckKind::Store,
                "arg" => CheckKind::Arg,
                other => return Err(ParseError::new(line.line, kcol, format!("unknown check kind `{other}`"))),
            };
            let size = line.access_size()?;
            line.expect(',')?;
            let ptr = line.operand()?;
            line.expect(',')?;
            Op::Check {
                mode,
                kind,
                size,
                ptr,
                base: line.operand()?,
            }
        }
        "shadowload" => Op::ShadowLoad { global: line.global()? },
        "tag" => {
            let ptr = line.operand()?;
            line.expect(',')?;
            Op::Tag {
                ptr,
                size: line.uint()?,
            }
        }
        other => match BinOp::ALL.into_iter().find(|b| b.mnemonic() == other) {
            Some(op) => {
                let lhs = line.operand()?;
                line.expect(',')?;
                Op::Bin {
                    op,
                    lhs,
                    rhs: line.operand()?,
                }
            }
            None => return Err(ParseError::new(line.line, col, format!("unknown opcode `{other}`"))),
        },
    };
    Ok(op)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn malloc_instruction() {
        let (p, _) = parse_module("func @main() {\nentry:\n  %p = malloc 24\n  ret\n}\n").unwrap();
        let instr = &p.functions[0].blocks[0].instrs[0];
        assert_eq!(instr.result.as_deref(), Some("p"));
        assert_eq!(instr.op, Op::Malloc { size: Operand::Const(24) });
    }

    #[test]
    fn duplicate_definition_is_located() {
        let err = parse("func @main() {\nentry:\n  %p = malloc 24\n  %p = malloc 8\n  ret\n}\n").unwrap_err();
        assert_eq!((err.line, err.col), (4, 3));
        assert!(err.message.contains("duplicate definition"), "{err}");
    }

    #[test]
    fn syntax_errors_carry_columns() {
        let err = parse_module("func @main() {\nentry:\n  %p = frobnicate 1\n}\n").unwrap_err();
        assert_eq!((err.line, err.col), (3, 8));
        let err = parse_module("global @g 8 = [zz]\n").unwrap_err();
        assert_eq!((err.line, err.col), (1, 16));
        let err = parse_module("func @main() {\nentry:\n  ret\n").unwrap_err();
        assert!(err.message.contains("closing"));
        let err = parse_module("func @main() {\n  ret\n}\n").unwrap_err();
        assert!(err.message.contains("outside of a block"));
    }

    #[test]
    fn integers() {
        assert_eq!(parse_int("0x10"), Some(16));
        assert_eq!(parse_int("-8"), Some(-8));
        assert_eq!(parse_int("-9223372036854775808"), Some(i64::MIN));
        assert_eq!(parse_int("18446744073709551615"), Some(-1));
        assert_eq!(parse_int("12ab"), None);
    }

    #[test]
    fn globals_and_externs() {
        let (p, _) = parse_module("extern @puts(ptr) -> i64\nglobal @g 4 = [de ad 0b ef]\nctor @init\n").unwrap();
        assert_eq!(p.externs[0].params, vec![Type::Ptr]);
        assert_eq!(p.externs[0].ret, Some(Type::I64));
        assert_eq!(p.globals[0].init.as_deref(), Some(&[0xde, 0xad, 0x0b, 0xef][..]));
        assert_eq!(p.ctors, vec!["init".to_owned()]);
    }
}
