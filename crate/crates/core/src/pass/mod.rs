//! Instrumentation pass: shadow globals, boundary rules, the integer-use
//! policy and bounds checks in front of every load and store.

mod resolve;
mod rewrite;
mod verify;

use std::fmt;
use std::str::FromStr;

use crate::codec::CodecKind;
use crate::ir::{
    validate, CheckKind, CheckMode, Diagnostic, GlobalDef, IrBlock, IrFunction, IrInstr, IrProgram, Op, Operand,
    Type,
};

pub use resolve::{resolve_baseptr, BaseResolver, BaseptrExpr};
pub use verify::{verify_instrumented, Violation};

use rewrite::FunctionRewriter;

/// Prefix reserved for names the pass invents.
pub const RESERVED_PREFIX: &str = "__sma";

/// Name of the shadow slot holding the tagged base of global `g`.
pub fn shadow_name(global: &str) -> String {
    format!("{RESERVED_PREFIX}_{global}")
}

/// Name of the synthetic constructor that fills the shadow slots.
pub const SHADOW_CTOR: &str = "__sma_ctor";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Mode {
    /// Clamp out-of-bounds accesses into the object.
    #[default]
    Saturate,
    /// Abort on the first out-of-bounds access.
    FailStop,
    /// Discard out-of-bounds writes, manufacture zero for reads.
    Oblivious,
    /// No checks; tags are stripped before every dereference.
    Off,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Saturate, Mode::FailStop, Mode::Oblivious, Mode::Off];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Saturate => "saturate",
            Mode::FailStop => "failstop",
            Mode::Oblivious => "oblivious",
            Mode::Off => "off",
        }
    }

    pub fn check_mode(self) -> Option<CheckMode> {
        match self {
            Mode::Saturate => Some(CheckMode::Saturate),
            Mode::FailStop => Some(CheckMode::Trap),
            Mode::Oblivious => Some(CheckMode::Oblivious),
            Mode::Off => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "saturate" | "sat" => Ok(Mode::Saturate),
            "failstop" | "fail-stop" | "trap" => Ok(Mode::FailStop),
            "oblivious" | "obl" => Ok(Mode::Oblivious),
            "off" | "none" => Ok(Mode::Off),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassConfig {
    pub mode: Mode,
    pub codec: CodecKind,
    /// The memory unit ignores the tag bits, so dereferences need no mask.
    pub address_tagging: bool,
    pub strip_on_ptrtoint: bool,
}

impl Default for PassConfig {
    fn default() -> Self {
        PassConfig {
            mode: Mode::Saturate,
            codec: CodecKind::Buddy,
            address_tagging: false,
            strip_on_ptrtoint: true,
        }
    }
}

impl PassConfig {
    pub fn new(mode: Mode, codec: CodecKind, address_tagging: bool) -> Self {
        PassConfig {
            mode,
            codec,
            address_tagging,
            strip_on_ptrtoint: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PassError {
    #[error("input program is invalid: {}", .0.first().map(|d| d.to_string()).unwrap_or_default())]
    Invalid(Vec<Diagnostic>),
    #[error("`{0}` is not a pointer")]
    NotAPointer(String),
    #[error("unknown value %{0}")]
    UnknownValue(String),
    #[error("unknown function @{0}")]
    UnknownFunction(String),
    #[error("no shadow slot for global @{0}")]
    MissingShadow(String),
    #[error("name `{0}` uses the reserved prefix")]
    ReservedName(String),
}

/// One inserted check and what it guards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckPlan {
    pub func: String,
    pub block: String,
    /// Index of the guarded instruction in the instrumented block.
    pub index: usize,
    pub ptr: Operand,
    pub baseptr: BaseptrExpr,
    pub access_size: u8,
    pub kind: CheckKind,
}

#[derive(Debug, Clone)]
pub struct Instrumented {
    pub program: IrProgram,
    pub plans: Vec<CheckPlan>,
}

fn reject_reserved(p: &IrProgram) -> Result<(), PassError> {
    let reserved = |n: &str| n.starts_with(RESERVED_PREFIX);
    let names = p
        .globals
        .iter()
        .map(|g| g.name.as_str())
        .chain(p.functions.iter().map(|f| f.name.as_str()))
        .chain(p.externs.iter().map(|e| e.name.as_str()));
    for n in names {
        if reserved(n) {
            return Err(PassError::ReservedName(n.to_owned()));
        }
    }
    for f in &p.functions {
        for v in f.params.iter().map(|p| p.name.as_str()).chain(f.defined_values()) {
            if reserved(v) {
                return Err(PassError::ReservedName(v.to_owned()));
            }
        }
    }
    Ok(())
}

/// Runs the whole pipeline on a valid program.
pub fn instrument(program: &IrProgram, cfg: &PassConfig) -> Result<Instrumented, PassError> {
    let diags = validate(program);
    if !diags.is_empty() {
        return Err(PassError::Invalid(diags));
    }
    reject_reserved(program)?;
    let mut p = if cfg.mode == Mode::Off {
        program.clone()
    } else {
        add_shadow_globals(program)
    };
    p = apply_boundary_rules(&p, cfg)?;
    p = integer_use_policy(&p, cfg)?;
    let (p, plans) = insert_checks(&p, cfg)?;
    debug_assert!(validate(&p).is_empty(), "{:?}", validate(&p));
    Ok(Instrumented { program: p, plans })
}

/// Adds one 8-byte shadow slot per global (after the originals, so their
/// layout is unchanged) and a constructor storing each global's tagged base.
pub fn add_shadow_globals(program: &IrProgram) -> IrProgram {
    let mut out = program.clone();
    let mut instrs = Vec::new();
    for (i, g) in program.globals.iter().enumerate() {
        let shadow = shadow_name(&g.name);
        out.globals.push(GlobalDef {
            name: shadow.clone(),
            size: 8,
            init: None,
        });
        let addr = format!("{RESERVED_PREFIX}.g{i}");
        let tagged = format!("{RESERVED_PREFIX}.t{i}");
        let slot = format!("{RESERVED_PREFIX}.s{i}");
        instrs.push(IrInstr::new(Some(&addr), Op::GlobalAddr { global: g.name.clone() }));
        instrs.push(IrInstr::new(
            Some(&tagged),
            Op::Tag {
                ptr: Operand::value(&addr),
                size: g.size,
            },
        ));
        instrs.push(IrInstr::new(Some(&slot), Op::GlobalAddr { global: shadow }));
        instrs.push(IrInstr::effect(Op::Store {
            size: 8,
            value: Operand::value(&tagged),
            ptr: Operand::value(&slot),
        }));
    }
    instrs.push(IrInstr::effect(Op::Ret { value: None }));
    out.functions.push(IrFunction {
        name: SHADOW_CTOR.to_owned(),
        params: Vec::new(),
        ret: None,
        blocks: vec![IrBlock {
            label: "entry".to_owned(),
            instrs,
        }],
    });
    // first, so user constructors already see filled slots
    out.ctors.insert(0, SHADOW_CTOR.to_owned());
    out
}

fn param_types(program: &IrProgram, callee: &str, external: bool) -> Vec<(Type, bool)> {
    if external {
        program
            .external(callee)
            .map(|e| e.params.iter().map(|t| (*t, false)).collect())
            .unwrap_or_default()
    } else {
        program
            .function(callee)
            .map(|f| f.params.iter().map(|p| (p.ty, p.byval)).collect())
            .unwrap_or_default()
    }
}

fn for_each_instrumented<F>(program: &IrProgram, mut f: F) -> Result<IrProgram, PassError>
where
    F: FnMut(&mut FunctionRewriter<'_>) -> Result<(), PassError>,
{
    let mut out = program.clone();
    for (fi, func) in program.functions.iter().enumerate() {
        if func.name == SHADOW_CTOR {
            continue;
        }
        let mut rw = FunctionRewriter::new(program, func);
        f(&mut rw)?;
        out.functions[fi] = rw.finish().0;
    }
    Ok(out)
}

/// Strips pointers leaving for external code and byval copies; checks
/// pointer arguments of internal calls.
pub fn apply_boundary_rules(program: &IrProgram, cfg: &PassConfig) -> Result<IrProgram, PassError> {
    for_each_instrumented(program, |rw| {
        rw.rewrite(|rw, instr| {
            let (callee, args, external) = match &mut instr.op {
                Op::CallExt { callee, args } => (callee.clone(), args, true),
                Op::Call { callee, args } => (callee.clone(), args, false),
                _ => return Ok(()),
            };
            let params = param_types(rw.program(), &callee, external);
            for (arg, (ty, byval)) in args.iter_mut().zip(params) {
                if ty != Type::Ptr {
                    continue;
                }
                if external || byval {
                    if byval && cfg.address_tagging {
                        continue;
                    }
                    *arg = rw.emit_strip(arg.clone());
                } else if let Some(mode) = cfg.mode.check_mode() {
                    let base = rw.base_of(arg)?;
                    *arg = rw.emit_check(mode, CheckKind::Arg, 1, arg.clone(), &base)?;
                }
            }
            Ok(())
        })
    })
}

/// Strips tags from pointers that turn into integers or get compared.
pub fn integer_use_policy(program: &IrProgram, cfg: &PassConfig) -> Result<IrProgram, PassError> {
    for_each_instrumented(program, |rw| {
        rw.rewrite(|rw, instr| {
            match &mut instr.op {
                Op::PtrToInt { ptr } if cfg.strip_on_ptrtoint => {
                    *ptr = rw.emit_strip(ptr.clone());
                }
                Op::ICmp { lhs, rhs, .. } => {
                    if rw.is_ptr(lhs) {
                        *lhs = rw.emit_strip(lhs.clone());
                    }
                    if rw.is_ptr(rhs) {
                        *rhs = rw.emit_strip(rhs.clone());
                    }
                }
                _ => {}
            }
            Ok(())
        })
    })
}

/// Guards every load and store; returns the plans alongside the program.
pub fn insert_checks(program: &IrProgram, cfg: &PassConfig) -> Result<(IrProgram, Vec<CheckPlan>), PassError> {
    let mut out = program.clone();
    let mut plans = Vec::new();
    for (fi, func) in program.functions.iter().enumerate() {
        if func.name == SHADOW_CTOR {
            continue;
        }
        let mut rw = FunctionRewriter::new(program, func);
        let mut pending = Vec::new();
        rw.rewrite(|rw, instr| {
            let (kind, size, ptr) = match &mut instr.op {
                Op::Load { size, ptr, .. } => (CheckKind::Load, *size, ptr),
                Op::Store { size, ptr, .. } => (CheckKind::Store, *size, ptr),
                _ => return Ok(()),
            };
            match cfg.mode.check_mode() {
                None => {
                    if !cfg.address_tagging {
                        *ptr = rw.emit_strip(ptr.clone());
                    }
                }
                Some(mode) => {
                    let base = rw.base_of(ptr)?;
                    let original = ptr.clone();
                    let checked = rw.emit_check(mode, kind, size, original.clone(), &base)?;
                    *ptr = if cfg.address_tagging {
                        checked
                    } else {
                        rw.emit_strip(checked)
                    };
                    pending.push((rw.current_position(), original, base, size, kind));
                }
            }
            Ok(())
        })?;
        let (f, remap) = rw.finish();
        for ((block, index), ptr, baseptr, access_size, kind) in pending {
            plans.push(CheckPlan {
                func: f.name.clone(),
                block: f.blocks[block].label.clone(),
                index: remap(block, index),
                ptr,
                baseptr,
                access_size,
                kind,
            });
        }
        out.functions[fi] = f;
    }
    Ok((out, plans))
}
