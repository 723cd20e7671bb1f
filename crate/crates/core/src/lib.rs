//! Saturation memory access: tolerate spatial memory errors by clamping
//! out-of-bounds accesses to the padded boundary of their object.
//!
//! * [`codec`] encodes object bounds in the high bits of pointers.
//! * [`memory`] is the simulated address space with the padded allocator.
//! * [`ir`] is the SSA program representation with parser and validator.
//! * [`pass`] instruments programs with checks and tag handling.
//! * [`exec`] interprets (instrumented) programs and counts what they do.

pub mod codec;
pub mod exec;
pub mod ir;
pub mod memory;
pub mod pass;

pub use codec::{Bounds, CodecKind, TaggedPointer, Verdict};
pub use ir::{parse, pretty_print, validate, IrProgram};
pub use memory::{AddressSpace, ObjectRecord, Region};
pub use exec::{instrument_and_run, ExecOutcome, ExecStats, ExitStatus, Machine};
pub use pass::{instrument, Mode, PassConfig};
