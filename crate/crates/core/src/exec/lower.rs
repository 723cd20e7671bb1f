//! Lowering of IR functions to slot-indexed code for the interpreter.

use std::collections::HashMap;

use super::intrinsics::Intrinsic;
use super::LoadError;
use crate::ir::{BinOp, CheckKind, CheckMode, CmpPred, IrFunction, IrProgram, Op, Operand};

pub(super) type Slot = u32;

#[derive(Debug, Clone, Copy)]
pub(super) enum Val {
    Slot(Slot),
    Imm(u64),
}

#[derive(Debug, Clone)]
pub(super) enum Code {
    Alloca { dst: Slot, size: u64 },
    Malloc { dst: Slot, size: Val },
    Free { ptr: Val },
    Const { dst: Slot, value: u64 },
    PtrAdd { dst: Slot, ptr: Val, offset: Val },
    Move { dst: Slot, src: Val },
    Load { dst: Slot, size: u8, ptr: Val },
    Store { size: u8, value: Val, ptr: Val },
    ICmp { dst: Slot, pred: CmpPred, lhs: Val, rhs: Val },
    Bin { dst: Slot, op: BinOp, lhs: Val, rhs: Val },
    Call { dst: Option<Slot>, func: usize, args: Vec<Val> },
    CallExt { dst: Option<Slot>, intrinsic: Intrinsic, args: Vec<Val> },
    Br { target: usize },
    BrCond { cond: Val, then_to: usize, else_to: usize },
    Ret { value: Option<Val> },
    Strip { dst: Slot, ptr: Val },
    Check { dst: Slot, mode: CheckMode, kind: CheckKind, size: u8, ptr: Val, base: Val },
    ShadowLoad { dst: Slot, addr: u64 },
    Tag { dst: Slot, ptr: Val, size: u64 },
}

#[derive(Debug, Clone)]
pub(super) struct Block {
    pub code: Vec<Code>,
    /// Original instruction index of each entry in `code`.
    pub origin: Vec<usize>,
    /// Parallel phi moves keyed by predecessor block.
    pub phi_edges: Vec<(usize, Vec<(Slot, Val)>)>,
    pub phi_count: u64,
}

#[derive(Debug, Clone)]
pub(super) struct Function {
    pub name: String,
    pub slots: usize,
    pub blocks: Vec<Block>,
    pub labels: Vec<String>,
}

pub(super) struct Lowered {
    pub functions: Vec<Function>,
    pub by_name: HashMap<String, usize>,
}

pub(super) fn lower(program: &IrProgram, global_addr: &HashMap<String, u64>) -> Result<Lowered, LoadError> {
    let by_name: HashMap<String, usize> = program
        .functions
        .iter()
        .enumerate()
        .map(|(i, f)| (f.name.clone(), i))
        .collect();
    let mut intrinsics = HashMap::new();
    for e in &program.externs {
        intrinsics.insert(e.name.as_str(), Intrinsic::bind(e)?);
    }
    let functions = program
        .functions
        .iter()
        .map(|f| lower_function(f, &by_name, &intrinsics, global_addr))
        .collect::<Result<_, _>>()?;
    Ok(Lowered { functions, by_name })
}

fn lower_function(
    func: &IrFunction,
    by_name: &HashMap<String, usize>,
    intrinsics: &HashMap<&str, Intrinsic>,
    global_addr: &HashMap<String, u64>,
) -> Result<Function, LoadError> {
    let mut slots: HashMap<&str, Slot> = HashMap::new();
    for p in &func.params {
        let n = slots.len() as Slot;
        slots.insert(&p.name, n);
    }
    for v in func.defined_values() {
        let n = slots.len() as Slot;
        slots.entry(v).or_insert(n);
    }
    let labels: Vec<String> = func.blocks.iter().map(|b| b.label.clone()).collect();
    let block_of = |l: &str| {
        labels
            .iter()
            .position(|x| x == l)
            .ok_or_else(|| LoadError::Malformed(format!("unknown block {l} in @{}", func.name)))
    };
    let val = |o: &Operand| -> Result<Val, LoadError> {
        match o {
            Operand::Const(c) => Ok(Val::Imm(*c as u64)),
            Operand::Value(v) => slots
                .get(v.as_str())
                .map(|&s| Val::Slot(s))
                .ok_or_else(|| LoadError::Malformed(format!("unknown value %{v} in @{}", func.name))),
        }
    };
    let global = |g: &str| {
        global_addr
            .get(g)
            .copied()
            .ok_or_else(|| LoadError::Malformed(format!("unknown global @{g}")))
    };

    let mut blocks: Vec<Block> = func
        .blocks
        .iter()
        .map(|_| Block {
            code: Vec::new(),
            origin: Vec::new(),
            phi_edges: Vec::new(),
            phi_count: 0,
        })
        .collect();
    for (bi, block) in func.blocks.iter().enumerate() {
        for (ii, instr) in block.instrs.iter().enumerate() {
            let dst = instr.result.as_deref().map(|r| slots[r]);
            let d = || dst.ok_or_else(|| LoadError::Malformed(format!("missing result in @{}", func.name)));
            let code = match &instr.op {
                Op::Phi { incoming, .. } => {
                    let dst = d()?;
                    blocks[bi].phi_count += 1;
                    for (pred, v) in incoming {
                        let p = block_of(pred)?;
                        let v = val(v)?;
                        let edges = &mut blocks[bi].phi_edges;
                        match edges.iter_mut().find(|(q, _)| *q == p) {
                            Some((_, moves)) => moves.push((dst, v)),
                            None => edges.push((p, vec![(dst, v)])),
                        }
                    }
                    continue;
                }
                Op::Alloca { size } => Code::Alloca { dst: d()?, size: *size },
                Op::Malloc { size } => Code::Malloc {
                    dst: d()?,
                    size: val(size)?,
                },
                Op::Free { ptr } => Code::Free { ptr: val(ptr)? },
                Op::GlobalAddr { global: g } => Code::Const {
                    dst: d()?,
                    value: global(g)?,
                },
                Op::PtrAdd { ptr, offset } => Code::PtrAdd {
                    dst: d()?,
                    ptr: val(ptr)?,
                    offset: val(offset)?,
                },
                Op::Cast { ptr } | Op::PtrToInt { ptr } | Op::IntToPtr { value: ptr } => Code::Move {
                    dst: d()?,
                    src: val(ptr)?,
                },
                Op::Load { size, ptr, .. } => Code::Load {
                    dst: d()?,
                    size: *size,
                    ptr: val(ptr)?,
                },
                Op::Store { size, value, ptr } => Code::Store {
                    size: *size,
                    value: val(value)?,
                    ptr: val(ptr)?,
                },
                Op::ICmp { pred, lhs, rhs } => Code::ICmp {
                    dst: d()?,
                    pred: *pred,
                    lhs: val(lhs)?,
                    rhs: val(rhs)?,
                },
                Op::Bin { op, lhs, rhs } => Code::Bin {
                    dst: d()?,
                    op: *op,
                    lhs: val(lhs)?,
                    rhs: val(rhs)?,
                },
                Op::Call { callee, args } => Code::Call {
                    dst,
                    func: *by_name
                        .get(callee)
                        .ok_or_else(|| LoadError::Malformed(format!("unknown function @{callee}")))?,
                    args: args.iter().map(val).collect::<Result<_, _>>()?,
                },
                Op::CallExt { callee, args } => Code::CallExt {
                    dst,
                    intrinsic: *intrinsics
                        .get(callee.as_str())
                        .ok_or_else(|| LoadError::UnknownExtern(callee.clone()))?,
                    args: args.iter().map(val).collect::<Result<_, _>>()?,
                },
                Op::Br { target } => Code::Br {
                    target: block_of(target)?,
                },
                Op::BrCond { cond, then_to, else_to } => Code::BrCond {
                    cond: val(cond)?,
                    then_to: block_of(then_to)?,
                    else_to: block_of(else_to)?,
                },
                Op::Ret { value } => Code::Ret {
                    value: value.as_ref().map(val).transpose()?,
                },
                Op::Strip { ptr } => Code::Strip {
                    dst: d()?,
                    ptr: val(ptr)?,
                },
                Op::Check {
                    mode,
                    kind,
                    size,
                    ptr,
                    base,
                } => Code::Check {
                    dst: d()?,
                    mode: *mode,
                    kind: *kind,
                    size: *size,
                    ptr: val(ptr)?,
                    base: val(base)?,
                },
                Op::ShadowLoad { global: g } => Code::ShadowLoad {
                    dst: d()?,
                    addr: global(g)?,
                },
                Op::Tag { ptr, size } => Code::Tag {
                    dst: d()?,
                    ptr: val(ptr)?,
                    size: *size,
                },
            };
            blocks[bi].code.push(code);
            blocks[bi].origin.push(ii);
        }
        if blocks[bi].code.last().is_none_or(|c| !matches!(c, Code::Br { .. } | Code::BrCond { .. } | Code::Ret { .. })) {
            blocks[bi].code.push(Code::Ret { value: None });
            blocks[bi].origin.push(block.instrs.len());
        }
    }
    if blocks.is_empty() {
        blocks.push(Block {
            code: vec![Code::Ret { value: None }],
            origin: vec![0],
            phi_edges: Vec::new(),
            phi_count: 0,
        });
    }
    Ok(Function {
        name: func.name.clone(),
        slots: slots.len(),
        blocks,
        labels: if labels.is_empty() { vec!["entry".to_owned()] } else { labels },
    })
}
