use std::collections::{HashMap, HashSet};

use super::resolve::{BaseResolver, BaseptrExpr};
use super::{shadow_name, PassError, RESERVED_PREFIX};
use crate::ir::{CheckKind, CheckMode, IrBlock, IrFunction, IrInstr, IrProgram, Op, Operand, Type};

/// Rebuilds one function instruction by instruction, letting a callback
/// emit new instructions in front of the current one. Base pointers are
/// materialized on demand, with phis at block heads and shadow loads at
/// predecessor ends where a phi arm needs them.
pub(super) struct FunctionRewriter<'a> {
    program: &'a IrProgram,
    func: &'a IrFunction,
    resolver: BaseResolver<'a>,
    def_block: HashMap<&'a str, usize>,
    used: HashSet<String>,
    counter: usize,
    built: Vec<Vec<IrInstr>>,
    head: Vec<Vec<IrInstr>>,
    tail: Vec<Vec<IrInstr>>,
    phi_bases: HashMap<String, String>,
    current: usize,
}

impl<'a> FunctionRewriter<'a> {
    pub fn new(program: &'a IrProgram, func: &'a IrFunction) -> Self {
        let mut def_block = HashMap::new();
        for (bi, block) in func.blocks.iter().enumerate() {
            for i in &block.instrs {
                if let Some(r) = &i.result {
                    def_block.insert(r.as_str(), bi);
                }
            }
        }
        let used = func
            .params
            .iter()
            .map(|p| p.name.clone())
            .chain(func.defined_values().map(str::to_owned))
            .collect();
        let n = func.blocks.len();
        FunctionRewriter {
            program,
            func,
            resolver: BaseResolver::new(program, func),
            def_block,
            used,
            counter: 0,
            built: vec![Vec::new(); n],
            head: vec![Vec::new(); n],
            tail: vec![Vec::new(); n],
            phi_bases: HashMap::new(),
            current: 0,
        }
    }

    pub fn program(&self) -> &'a IrProgram {
        self.program
    }

    pub fn rewrite<F>(&mut self, mut f: F) -> Result<(), PassError>
    where
        F: FnMut(&mut Self, &mut IrInstr) -> Result<(), PassError>,
    {
        let func = self.func;
        for (bi, block) in func.blocks.iter().enumerate() {
            self.current = bi;
            for instr in &block.instrs {
                let mut instr = instr.clone();
                f(self, &mut instr)?;
                self.built[bi].push(instr);
            }
        }
        Ok(())
    }

    /// Block and index the instruction being rewritten will land at, before
    /// head insertions are accounted for.
    pub fn current_position(&self) -> (usize, usize) {
        (self.current, self.built[self.current].len())
    }

    pub fn is_ptr(&self, op: &Operand) -> bool {
        op.as_value()
            .is_some_and(|v| self.resolver.value_type(v) == Some(Type::Ptr))
    }

    pub fn base_of(&mut self, op: &Operand) -> Result<BaseptrExpr, PassError> {
        self.resolver.resolve_operand(op)
    }

    fn fresh(&mut self, kind: &str) -> String {
        loop {
            let name = format!("{RESERVED_PREFIX}.{kind}{}", self.counter);
            self.counter += 1;
            if self.used.insert(name.clone()) {
                return name;
            }
        }
    }

    fn emit(&mut self, kind: &str, op: Op) -> Operand {
        let name = self.fresh(kind);
        self.built[self.current].push(IrInstr::new(Some(&name), op));
        Operand::Value(name)
    }

    pub fn emit_strip(&mut self, ptr: Operand) -> Operand {
        self.emit("m", Op::Strip { ptr })
    }

    pub fn emit_check(
        &mut self,
        mode: CheckMode,
        kind: CheckKind,
        size: u8,
        ptr: Operand,
        base: &BaseptrExpr,
    ) -> Result<Operand, PassError> {
        let mut sink = Vec::new();
        let base = self.materialize(base, &mut sink)?;
        self.built[self.current].append(&mut sink);
        Ok(self.emit(
            "c",
            Op::Check {
                mode,
                kind,
                size,
                ptr,
                base: Operand::Value(base),
            },
        ))
    }

    fn materialize(&mut self, expr: &BaseptrExpr, sink: &mut Vec<IrInstr>) -> Result<String, PassError> {
        match expr {
            BaseptrExpr::SelfValue(v) => Ok(v.clone()),
            BaseptrExpr::ShadowGlobalLoad(g) => {
                let shadow = shadow_name(g);
                if self.program.global(&shadow).is_none() {
                    return Err(PassError::MissingShadow(g.clone()));
                }
                let name = self.fresh("b");
                sink.push(IrInstr::new(Some(&name), Op::ShadowLoad { global: shadow }));
                Ok(name)
            }
            BaseptrExpr::Inherit(v) => {
                let e = self.resolver.resolve(v)?;
                self.materialize(&e, sink)
            }
            BaseptrExpr::PhiOfBases { phi, arms } => {
                if let Some(u) = expr.uniform() {
                    return self.materialize(&u.clone(), sink);
                }
                if let Some(name) = self.phi_bases.get(phi) {
                    return Ok(name.clone());
                }
                let name = self.fresh("b");
                self.phi_bases.insert(phi.clone(), name.clone());
                let mut incoming = Vec::with_capacity(arms.len());
                for (pred, arm) in arms {
                    let pi = self
                        .func
                        .block_index(pred)
                        .ok_or_else(|| PassError::UnknownValue(pred.clone()))?;
                    let mut pred_sink = Vec::new();
                    let v = self.materialize(arm, &mut pred_sink)?;
                    self.tail[pi].append(&mut pred_sink);
                    incoming.push((pred.clone(), Operand::Value(v)));
                }
                let bi = self.def_block[phi.as_str()];
                self.head[bi].push(IrInstr::new(
                    Some(&name),
                    Op::Phi {
                        ty: Type::Ptr,
                        incoming,
                    },
                ));
                Ok(name)
            }
        }
    }

    /// Assembles the rewritten function plus a map from
    /// [`Self::current_position`] coordinates to final indices.
    pub fn finish(self) -> (IrFunction, impl Fn(usize, usize) -> usize) {
        let mut blocks = Vec::with_capacity(self.built.len());
        let mut shifts = Vec::with_capacity(self.built.len());
        for (((orig, mut instrs), head), mut tail) in self.func.blocks.iter().zip(self.built).zip(self.head).zip(self.tail) {
            let phis = instrs.iter().take_while(|i| i.op.is_phi()).count();
            shifts.push((phis, head.len()));
            instrs.splice(phis..phis, head);
            let term = instrs.len().saturating_sub(1);
            instrs.splice(term..term, tail.drain(..));
            blocks.push(IrBlock {
                label: orig.label.clone(),
                instrs,
            });
        }
        let func = IrFunction {
            name: self.func.name.clone(),
            params: self.func.params.clone(),
            ret: self.func.ret,
            blocks,
        };
        let remap = move |block: usize, index: usize| {
            let (phis, added) = shifts[block];
            if index >= phis {
                index + added
            } else {
                index
            }
        };
        (func, remap)
    }
}
