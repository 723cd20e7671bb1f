//! Runs `.sir` programs under the saturation runtime and evaluates attack,
//! tolerance and benign corpora.

pub mod corpus;
pub mod report;

use std::path::{Path, PathBuf};

use sma_core::codec::CodecKind;
use sma_core::exec::{ExecConfig, ExitStatus, LoadError, Machine, DEFAULT_BUDGET};
use sma_core::ir::{parse, IrProgram, ParseError};
use sma_core::pass::{instrument, Mode, PassConfig, PassError};
use sma_core::ExecOutcome;

pub use corpus::{run_corpus, Category, CorpusEntry, CorpusReport, Manifest, Predicate};
pub use report::{AttackVerdict, RunReport};

/// Process exit codes of the `sma` binary.
pub mod exit_code {
    pub const TRAPPED: i32 = 101;
    pub const SEGFAULT: i32 = 139;
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}:{}:{}: {}", .error.line, .error.col, .error.message)]
    Parse { path: PathBuf, error: ParseError },
    #[error("{path}: {error}")]
    Pass { path: PathBuf, error: PassError },
    #[error("{path}: {error}")]
    Load { path: PathBuf, error: LoadError },
    #[error("bad manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Write { .. } => exit_code::IO,
            _ => exit_code::USAGE,
        }
    }
}

/// Everything that parameterizes one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunConfig {
    pub pass: PassConfig,
    pub budget: u64,
}

impl RunConfig {
    pub fn new(mode: Mode, codec: CodecKind, address_tagging: bool) -> Self {
        RunConfig {
            pass: PassConfig::new(mode, codec, address_tagging),
            budget: DEFAULT_BUDGET,
        }
    }

    fn exec(&self) -> ExecConfig {
        let mut e = ExecConfig::from(&self.pass);
        e.budget = self.budget;
        e
    }
}

pub fn read_program(path: &Path) -> Result<IrProgram, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Read {
        path: path.to_owned(),
        source,
    })?;
    parse(&text).map_err(|error| HarnessError::Parse {
        path: path.to_owned(),
        error,
    })
}

/// Instruments and runs `program`, returning the finished machine so its
/// memory can be inspected.
pub fn execute(
    program: &IrProgram,
    name: &Path,
    cfg: &RunConfig,
    input: &[u8],
) -> Result<(ExecOutcome, Machine), HarnessError> {
    let inst = instrument(program, &cfg.pass).map_err(|error| HarnessError::Pass {
        path: name.to_owned(),
        error,
    })?;
    let mut machine = Machine::new(&inst.program, cfg.exec(), input.to_vec()).map_err(|error| HarnessError::Load {
        path: name.to_owned(),
        error,
    })?;
    let outcome = machine.run();
    Ok((outcome, machine))
}

/// Exit code the CLI reports for a finished run.
pub fn status_exit_code(status: &ExitStatus) -> i32 {
    match status {
        ExitStatus::Exited(c) => (*c & 0xff) as i32,
        ExitStatus::Trapped { .. } => exit_code::TRAPPED,
        ExitStatus::Segfault(_) => exit_code::SEGFAULT,
    }
}
