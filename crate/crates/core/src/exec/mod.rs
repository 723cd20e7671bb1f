//! Interpreter for (instrumented) IR over the simulated address space.

mod intrinsics;
mod lower;
#[cfg(test)]
mod tests;

use std::collections::HashMap;
use std::fmt;

use crate::codec::{saturate, strip, tag_bits, Bounds, CodecKind, TaggedPointer, Verdict, ADDR_MASK, TAG_MASK};
use crate::ir::{validate, CheckKind, CheckMode, Diagnostic, InstrLoc, IrProgram};
use crate::memory::{AddressSpace, FragmentationReport, MemError, Region, DISCARD_BASE};
use crate::pass::{Mode, PassConfig};

pub use intrinsics::{Intrinsic, MAX_STRING};
use lower::{Code, Lowered, Val};

/// Default number of instructions a run may execute.
pub const DEFAULT_BUDGET: u64 = 100_000_000;
/// Default call depth limit.
pub const DEFAULT_MAX_DEPTH: usize = 10_000;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ExecStats {
    pub instrs_total: u64,
    pub checks_executed: u64,
    pub masks_executed: u64,
    pub corrections_overflow: u64,
    pub corrections_underflow: u64,
    pub oob_writes_redirected: u64,
    pub oob_reads_redirected: u64,
}

impl ExecStats {
    pub fn corrections(&self) -> u64 {
        self.corrections_overflow + self.corrections_underflow
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExitStatus {
    Exited(i64),
    Trapped { reason: String, loc: Option<InstrLoc> },
    Segfault(u64),
}

impl ExitStatus {
    pub fn kind(&self) -> &'static str {
        match self {
            ExitStatus::Exited(_) => "exited",
            ExitStatus::Trapped { .. } => "trapped",
            ExitStatus::Segfault(_) => "segfault",
        }
    }
}

impl fmt::Display for ExitStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExitStatus::Exited(c) => write!(f, "exited({c})"),
            ExitStatus::Trapped { reason, loc: Some(l) } => write!(f, "trapped({reason}) at {l}"),
            ExitStatus::Trapped { reason, loc: None } => write!(f, "trapped({reason})"),
            ExitStatus::Segfault(a) => write!(f, "segfault({a:#x})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExecOutcome {
    pub status: ExitStatus,
    pub output: Vec<u8>,
    pub stats: ExecStats,
    pub fragmentation: FragmentationReport,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LoadError {
    #[error("invalid program: {}", .0.first().map(|d| d.to_string()).unwrap_or_default())]
    Invalid(Vec<Diagnostic>),
    #[error("unknown external function @{0}")]
    UnknownExtern(String),
    #[error("external @{0} does not match the intrinsic's signature")]
    Signature(String),
    #[error("global allocation failed: {0}")]
    Memory(#[from] MemError),
    #[error("{0}")]
    Malformed(String),
}

/// A store about to be (or just) performed, as seen by a [`Tracer`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreEvent {
    /// Raw address actually written.
    pub addr: u64,
    pub size: u64,
    /// Bounds decoded by the check guarding this store, if any.
    pub bounds: Option<Bounds>,
    pub loc: InstrLoc,
}

/// Observer hooks around stores.
pub trait Tracer {
    fn before_store(&mut self, _event: &StoreEvent, _memory: &AddressSpace) {}
    fn after_store(&mut self, _event: &StoreEvent, _memory: &AddressSpace) {}
}

/// Tracer that does nothing.
pub struct NoTrace;

impl Tracer for NoTrace {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecConfig {
    pub mode: Mode,
    pub codec: CodecKind,
    pub address_tagging: bool,
    pub budget: u64,
    pub max_depth: usize,
}

impl From<&PassConfig> for ExecConfig {
    fn from(p: &PassConfig) -> Self {
        ExecConfig {
            mode: p.mode,
            codec: p.codec,
            address_tagging: p.address_tagging,
            budget: DEFAULT_BUDGET,
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

struct Frame {
    func: usize,
    block: usize,
    ip: usize,
    slots: Vec<u64>,
    ret_dst: Option<lower::Slot>,
    stack_objects: Vec<u64>,
}

pub struct Machine {
    code: Lowered,
    cfg: ExecConfig,
    ctors: Vec<usize>,
    main: usize,
    mem: AddressSpace,
    globals: HashMap<String, u64>,
    input: Vec<u8>,
    input_pos: usize,
    output: Vec<u8>,
    stats: ExecStats,
    last_check: Option<Bounds>,
}

impl Machine {
    /// Allocates globals and binds externals. The program should already
    /// carry whatever instrumentation `cfg` implies.
    pub fn new(program: &IrProgram, cfg: impl Into<ExecConfig>, input: Vec<u8>) -> Result<Machine, LoadError> {
        let cfg = cfg.into();
        let diags = validate(program);
        if !diags.is_empty() {
            return Err(LoadError::Invalid(diags));
        }
        let mut mem = AddressSpace::new(cfg.codec);
        mem.set_fault_on_unmapped(cfg.mode == Mode::Off);
        let mut globals = HashMap::new();
        for g in &program.globals {
            let (p, _) = mem.allocate(g.size.max(1), Region::Global)?;
            let base = strip(p);
            if let Some(init) = &g.init {
                mem.load_bytes(base, init);
            }
            globals.insert(g.name.clone(), base);
        }
        let code = lower::lower(program, &globals)?;
        let main = *code
            .by_name
            .get("main")
            .ok_or_else(|| LoadError::Malformed("no @main".into()))?;
        let ctors = program.ctors.iter().map(|c| code.by_name[c.as_str()]).collect();
        Ok(Machine {
            code,
            cfg,
            ctors,
            main,
            mem,
            globals,
            input,
            input_pos: 0,
            output: Vec::new(),
            stats: ExecStats::default(),
            last_check: None,
        })
    }

    pub fn memory(&self) -> &AddressSpace {
        &self.mem
    }

    /// Untagged base address of a global.
    pub fn global_address(&self, name: &str) -> Option<u64> {
        self.globals.get(name).copied()
    }

    pub fn stats(&self) -> ExecStats {
        self.stats
    }

    pub fn run(&mut self) -> ExecOutcome {
        self.run_traced(&mut NoTrace)
    }

    /// Runs constructors, then `main`.
    pub fn run_traced<T: Tracer>(&mut self, tracer: &mut T) -> ExecOutcome {
        let mut status = None;
        for i in 0..self.ctors.len() {
            if let Err(s) = self.call(self.ctors[i], tracer) {
                status = Some(s);
                break;
            }
        }
        let status = status.unwrap_or_else(|| match self.call(self.main, tracer) {
            Ok(code) => ExitStatus::Exited(code as i64),
            Err(s) => s,
        });
        ExecOutcome {
            status,
            output: std::mem::take(&mut self.output),
            stats: self.stats,
            fragmentation: self.mem.fragmentation_report(),
        }
    }

    fn trap(&self, reason: &str, frames: &[Frame]) -> ExitStatus {
        let loc = frames.last().map(|f| {
            let func = &self.code.functions[f.func];
            let block = &func.blocks[f.block];
            InstrLoc {
                func: func.name.clone(),
                block: func.labels[f.block].clone(),
                index: block.origin.get(f.ip).copied().unwrap_or(0),
            }
        });
        ExitStatus::Trapped {
            reason: reason.to_owned(),
            loc,
        }
    }

    fn loc(&self, frame: &Frame) -> InstrLoc {
        let func = &self.code.functions[frame.func];
        InstrLoc {
            func: func.name.clone(),
            block: func.labels[frame.block].clone(),
            index: func.blocks[frame.block].origin[frame.ip],
        }
    }

    /// Address the memory unit sees for pointer value `v`.
    fn effective(&self, v: u64) -> Result<u64, ExitStatus> {
        if self.cfg.address_tagging {
            Ok(v & ADDR_MASK)
        } else if v & TAG_MASK != 0 {
            Err(ExitStatus::Segfault(v))
        } else {
            Ok(v)
        }
    }

    fn mem_status(e: MemError) -> ExitStatus {
        match e {
            MemError::Segfault(a) => ExitStatus::Segfault(a),
            other => ExitStatus::Trapped {
                reason: other.to_string(),
                loc: None,
            },
        }
    }

    fn enter(&self, func: usize, args: &[u64], ret_dst: Option<lower::Slot>) -> Frame {
        let f = &self.code.functions[func];
        let mut slots = vec![0u64; f.slots];
        slots[..args.len()].copy_from_slice(args);
        Frame {
            func,
            block: 0,
            ip: 0,
            slots,
            ret_dst,
            stack_objects: Vec::new(),
        }
    }

    fn leave(&mut self, frame: Frame) {
        for id in frame.stack_objects {
            let _ = self.mem.release(id);
        }
    }

    fn check(&mut self, mode: CheckMode, kind: CheckKind, size: u8, ptr: u64, base: u64) -> Result<u64, &'static str> {
        self.stats.checks_executed += 1;
        let base = TaggedPointer(base);
        let bounds = self.cfg.codec.decode(base);
        self.last_check = Some(bounds);
        let addr = ptr & ADDR_MASK;
        let (fixed, verdict) = match saturate(addr, u64::from(size), bounds) {
            Ok(r) => r,
            // object smaller than the access: nothing inside is safe
            Err(_) => (addr, Verdict::Overflow),
        };
        if verdict == Verdict::InBounds {
            return Ok(addr | tag_bits(base));
        }
        let redirect = |stats: &mut ExecStats| match kind {
            CheckKind::Load => stats.oob_reads_redirected += 1,
            CheckKind::Store => stats.oob_writes_redirected += 1,
            CheckKind::Arg => {}
        };
        match mode {
            CheckMode::Saturate => {
                match verdict {
                    Verdict::Overflow => self.stats.corrections_overflow += 1,
                    _ => self.stats.corrections_underflow += 1,
                }
                redirect(&mut self.stats);
                Ok(fixed | tag_bits(base))
            }
            CheckMode::Oblivious => {
                redirect(&mut self.stats);
                Ok(DISCARD_BASE | tag_bits(base))
            }
            CheckMode::Trap => Err(match kind {
                CheckKind::Load => "out-of-bounds load",
                CheckKind::Store => "out-of-bounds store",
                CheckKind::Arg => "out-of-bounds argument",
            }),
        }
    }

    fn intrinsic(&mut self, which: Intrinsic, args: &[u64]) -> Result<Option<u64>, ExitStatus> {
        match which {
            Intrinsic::PutChar => self.output.push(args[0] as u8),
            Intrinsic::PrintI64 => {
                self.output.extend_from_slice(format!("{}\n", args[0] as i64).as_bytes());
            }
            Intrinsic::PrintStr => {
                let start = self.effective(args[0])?;
                for i in 0..MAX_STRING {
                    let b = self.mem.read(start + i, 1).map_err(Self::mem_status)? as u8;
                    if b == 0 {
                        break;
                    }
                    self.output.push(b);
                }
            }
            Intrinsic::Write => {
                let start = self.effective(args[0])?;
                let len = (args[1] as i64).clamp(0, MAX_STRING as i64) as u64;
                for i in 0..len {
                    let b = self.mem.read(start + i, 1).map_err(Self::mem_status)? as u8;
                    self.output.push(b);
                }
            }
            Intrinsic::ReadByte => {
                let v = match self.input.get(self.input_pos) {
                    Some(&b) => {
                        self.input_pos += 1;
                        u64::from(b)
                    }
                    None => u64::MAX,
                };
                return Ok(Some(v));
            }
            Intrinsic::Exit => return Err(ExitStatus::Exited(args[0] as i64)),
        }
        Ok(None)
    }

    fn call<T: Tracer>(&mut self, func: usize, tracer: &mut T) -> Result<u64, ExitStatus> {
        let mut frames = vec![self.enter(func, &[], None)];
        loop {
            if self.stats.instrs_total >= self.cfg.budget {
                return Err(self.trap("budget", &frames));
            }
            self.stats.instrs_total += 1;
            let depth = frames.len();
            let frame = frames.last_mut().expect("frame");
            let fi = frame.func;
            let code = &self.code.functions[fi].blocks[frame.block].code[frame.ip];
            let get = |v: &Val, f: &Frame| match *v {
                Val::Slot(s) => f.slots[s as usize],
                Val::Imm(i) => i,
            };
            let mut next_block = None;
            match code {
                Code::Alloca { dst, size } => {
                    let (dst, size) = (*dst, *size);
                    match self.mem.allocate(size.max(1), Region::Stack) {
                        Ok((p, rec)) => {
                            frame.stack_objects.push(rec.id);
                            frame.slots[dst as usize] = p.raw();
                        }
                        Err(_) => return Err(self.trap("stack exhausted", &frames)),
                    }
                }
                Code::Malloc { dst, size } => {
                    let (dst, size) = (*dst, get(size, frame));
                    let value = match self.mem.allocate(size.max(1), Region::Heap) {
                        Ok((p, _)) => p.raw(),
                        Err(_) => 0,
                    };
                    frame.slots[dst as usize] = value;
                }
                Code::Free { ptr } => {
                    let p = get(ptr, frame);
                    if p != 0 {
                        let addr = p & ADDR_MASK;
                        let id = self
                            .mem
                            .object_at_base(addr)
                            .filter(|o| o.live && o.region == Region::Heap)
                            .map(|o| o.id);
                        match id {
                            Some(id) => {
                                let _ = self.mem.release(id);
                            }
                            None => return Err(self.trap("invalid free", &frames)),
                        }
                    }
                }
                Code::Const { dst, value } => frame.slots[*dst as usize] = *value,
                Code::PtrAdd { dst, ptr, offset } => {
                    frame.slots[*dst as usize] = get(ptr, frame).wrapping_add(get(offset, frame));
                }
                Code::Move { dst, src } => frame.slots[*dst as usize] = get(src, frame),
                Code::Load { dst, size, ptr } => {
                    let (dst, size, p) = (*dst, u64::from(*size), get(ptr, frame));
                    let addr = self.effective(p)?;
                    let v = self.mem.read(addr, size).map_err(Self::mem_status)?;
                    self.last_check = None;
                    frames.last_mut().expect("frame").slots[dst as usize] = v;
                }
                Code::Store { size, value, ptr } => {
                    let (size, v, p) = (u64::from(*size), get(value, frame), get(ptr, frame));
                    let addr = self.effective(p)?;
                    let event = StoreEvent {
                        addr,
                        size,
                        bounds: self.last_check.take(),
                        loc: self.loc(frames.last().expect("frame")),
                    };
                    tracer.before_store(&event, &self.mem);
                    self.mem.write(addr, size, v).map_err(Self::mem_status)?;
                    tracer.after_store(&event, &self.mem);
                }
                Code::ICmp { dst, pred, lhs, rhs } => {
                    frame.slots[*dst as usize] = u64::from(pred.eval(get(lhs, frame), get(rhs, frame)));
                }
                Code::Bin { dst, op, lhs, rhs } => match op.eval(get(lhs, frame), get(rhs, frame)) {
                    Some(v) => frame.slots[*dst as usize] = v,
                    None => return Err(self.trap("arith", &frames)),
                },
                Code::Call { dst, func, args } => {
                    let args: Vec<u64> = args.iter().map(|a| get(a, frame)).collect();
                    if depth >= self.cfg.max_depth {
                        return Err(self.trap("stack overflow", &frames));
                    }
                    let callee = self.enter(*func, &args, *dst);
                    frames.push(callee);
                    continue;
                }
                Code::CallExt { dst, intrinsic, args } => {
                    let (dst, which) = (*dst, *intrinsic);
                    let args: Vec<u64> = args.iter().map(|a| get(a, frame)).collect();
                    let r = self.intrinsic(which, &args)?;
                    if let (Some(d), Some(v)) = (dst, r) {
                        frames.last_mut().expect("frame").slots[d as usize] = v;
                    }
                }
                Code::Br { target } => next_block = Some(*target),
                Code::BrCond { cond, then_to, else_to } => {
                    next_block = Some(if get(cond, frame) != 0 { *then_to } else { *else_to });
                }
                Code::Ret { value } => {
                    let v = value.as_ref().map_or(0, |v| get(v, frame));
                    let done = frames.pop().expect("frame");
                    let dst = done.ret_dst;
                    self.leave(done);
                    match frames.last_mut() {
                        None => return Ok(v),
                        Some(caller) => {
                            if let Some(d) = dst {
                                caller.slots[d as usize] = v;
                            }
                            caller.ip += 1;
                        }
                    }
                    continue;
                }
                Code::Strip { dst, ptr } => {
                    self.stats.masks_executed += 1;
                    frame.slots[*dst as usize] = get(ptr, frame) & ADDR_MASK;
                }
                Code::Check {
                    dst,
                    mode,
                    kind,
                    size,
                    ptr,
                    base,
                } => {
                    let (dst, mode, kind, size) = (*dst, *mode, *kind, *size);
                    let (p, b) = (get(ptr, frame), get(base, frame));
                    match self.check(mode, kind, size, p, b) {
                        Ok(v) => frames.last_mut().expect("frame").slots[dst as usize] = v,
                        Err(reason) => return Err(self.trap(reason, &frames)),
                    }
                }
                Code::ShadowLoad { dst, addr } => {
                    let (dst, addr) = (*dst, *addr);
                    let v = self.mem.read(addr, 8).map_err(Self::mem_status)?;
                    frames.last_mut().expect("frame").slots[dst as usize] = v;
                }
                Code::Tag { dst, ptr, size } => {
                    let (dst, p, size) = (*dst, get(ptr, frame), *size);
                    let addr = p & ADDR_MASK;
                    let tagged = self
                        .cfg
                        .codec
                        .layout(size.max(1))
                        .and_then(|l| l.tag(addr))
                        .map_or(addr, TaggedPointer::raw);
                    frames.last_mut().expect("frame").slots[dst as usize] = tagged;
                }
            }
            let frame = frames.last_mut().expect("frame");
            match next_block {
                None => frame.ip += 1,
                Some(target) => {
                    let from = frame.block;
                    let block = &self.code.functions[frame.func].blocks[target];
                    if let Some((_, moves)) = block.phi_edges.iter().find(|(p, _)| *p == from) {
                        let values: Vec<u64> = moves
                            .iter()
                            .map(|(_, v)| match *v {
                                Val::Slot(s) => frame.slots[s as usize],
                                Val::Imm(i) => i,
                            })
                            .collect();
                        for ((dst, _), v) in moves.iter().zip(values) {
                            frame.slots[*dst as usize] = v;
                        }
                    }
                    self.stats.instrs_total += block.phi_count;
                    frame.block = target;
                    frame.ip = 0;
                }
            }
        }
    }
}

/// Parses nothing, instruments nothing: runs `program` as given.
pub fn run(program: &IrProgram, cfg: &PassConfig, input: &[u8]) -> Result<ExecOutcome, LoadError> {
    Ok(Machine::new(program, cfg, input.to_vec())?.run())
}

/// Instruments `program` for `cfg` and runs the result.
pub fn instrument_and_run(program: &IrProgram, cfg: &PassConfig, input: &[u8]) -> Result<ExecOutcome, RunError> {
    let inst = crate::pass::instrument(program, cfg)?;
    Ok(run(&inst.program, cfg, input)?)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Pass(#[from] crate::pass::PassError),
    #[error(transparent)]
    Load(#[from] LoadError),
}
