//! Static checker for instrumented programs.

use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{Mode, PassConfig, SHADOW_CTOR};
use crate::ir::{validate, CheckKind, InstrLoc, IrFunction, IrProgram, Op, Operand};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub loc: Option<InstrLoc>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.loc {
            Some(loc) => write!(f, "{loc}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks that every dereference of `instrumented` goes through a check of
/// the right kind and size (or a mask when checks are off), and that base
/// pointer temporaries never escape registers.
pub fn verify_instrumented(original: &IrProgram, instrumented: &IrProgram, cfg: &PassConfig) -> Vec<Violation> {
    let mut out: Vec<Violation> = validate(instrumented)
        .into_iter()
        .map(|d| Violation {
            loc: None,
            message: d.to_string(),
        })
        .collect();
    for func in &instrumented.functions {
        if func.name == SHADOW_CTOR {
            continue;
        }
        let before = original.function(&func.name);
        verify_function(func, before, cfg, &mut out);
    }
    out
}

fn verify_function(func: &IrFunction, original: Option<&IrFunction>, cfg: &PassConfig, out: &mut Vec<Violation>) {
    let defs: HashMap<&str, &Op> = func
        .blocks
        .iter()
        .flat_map(|b| b.instrs.iter())
        .filter_map(|i| i.result.as_deref().map(|r| (r, &i.op)))
        .collect();
    let old: HashSet<&str> = original.map(|f| f.defined_values().collect()).unwrap_or_default();
    let temps: HashSet<&str> = defs
        .iter()
        .filter(|(name, op)| !old.contains(*name) && matches!(op, Op::ShadowLoad { .. } | Op::Phi { .. }))
        .map(|(name, _)| *name)
        .collect();
    let def_of = |o: &Operand| o.as_value().and_then(|v| defs.get(v).copied());

    for block in &func.blocks {
        for (index, instr) in block.instrs.iter().enumerate() {
            let loc = || InstrLoc {
                func: func.name.clone(),
                block: block.label.clone(),
                index,
            };
            let mut report = |message: String| out.push(Violation { loc: Some(loc()), message });

            let deref = match &instr.op {
                Op::Load { size, ptr, .. } => Some((CheckKind::Load, *size, ptr)),
                Op::Store { size, ptr, .. } => Some((CheckKind::Store, *size, ptr)),
                _ => None,
            };
            if let Some((kind, size, ptr)) = deref {
                let mut guard = def_of(ptr);
                if !cfg.address_tagging {
                    match guard {
                        Some(Op::Strip { ptr: inner }) => guard = def_of(inner),
                        _ => {
                            report(format!("{} pointer is not masked", instr.op.mnemonic()));
                            continue;
                        }
                    }
                    if cfg.mode == Mode::Off {
                        continue;
                    }
                }
                match (cfg.mode.check_mode(), guard) {
                    (None, _) => {}
                    (Some(want), Some(Op::Check { mode, kind: k, size: s, .. })) => {
                        if *mode != want || *k != kind || *s != size {
                            report(format!(
                                "check {} {} {s} does not match {} {} {size}",
                                mode.mnemonic(),
                                k.mnemonic(),
                                want.mnemonic(),
                                kind.mnemonic()
                            ));
                        }
                    }
                    (Some(_), _) => report(format!("{} is not guarded by a check", instr.op.mnemonic())),
                }
            }

            let escapes: Vec<&Operand> = match &instr.op {
                Op::Store { value, ptr, .. } => vec![value, ptr],
                Op::Call { args, .. } | Op::CallExt { args, .. } => args.iter().collect(),
                Op::Ret { value } => value.iter().collect(),
                Op::PtrToInt { ptr } | Op::PtrAdd { ptr, .. } | Op::Cast { ptr } | Op::Free { ptr } => vec![ptr],
                Op::Load { ptr, .. } | Op::Strip { ptr } => vec![ptr],
                Op::ICmp { lhs, rhs, .. } => vec![lhs, rhs],
                Op::Check { ptr, .. } => vec![ptr],
                Op::Phi { incoming, .. } => {
                    let is_temp = instr.result.as_deref().is_some_and(|r| temps.contains(r));
                    if is_temp {
                        Vec::new()
                    } else {
                        incoming.iter().map(|(_, v)| v).collect()
                    }
                }
                _ => Vec::new(),
            };
            for o in escapes {
                if let Some(v) = o.as_value().filter(|v| temps.contains(v)) {
                    report(format!("base pointer %{v} escapes through {}", instr.op.mnemonic()));
                }
            }
        }
    }
}
