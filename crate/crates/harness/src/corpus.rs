//! Corpus manifests and multi-mode corpus runs.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{json, Value};
use sma_core::exec::{ExitStatus, Machine};
use sma_core::memory::Region;
use sma_core::pass::Mode;
use sma_core::ExecOutcome;

use crate::report::{AttackVerdict, RunReport};
use crate::{execute, read_program, HarnessError, RunConfig};

pub const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
pub enum Category {
    Benign,
    OverflowWrite,
    OverflowRead,
    Underflow,
    AdjacentCorruption,
    SubObject,
    Tolerance,
}

impl Category {
    pub fn is_attack(self) -> bool {
        !matches!(self, Category::Benign | Category::Tolerance)
    }

    /// Attacks that cross object boundaries, which object-granularity
    /// bounds are meant to stop.
    pub fn is_object_granular(self) -> bool {
        self.is_attack() && self != Category::SubObject
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Observable condition meaning an attack worked.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum Predicate {
    Output { output_contains: String },
    GlobalByte { global: String, offset: u64, equals: u8 },
    /// `heap` is the allocation index among heap objects.
    HeapByte { heap: usize, offset: u64, equals: u8 },
}

impl Predicate {
    pub fn holds(&self, outcome: &ExecOutcome, machine: &Machine) -> bool {
        match self {
            Predicate::Output { output_contains } => {
                let needle = output_contains.as_bytes();
                !needle.is_empty() && outcome.output.windows(needle.len()).any(|w| w == needle)
            }
            Predicate::GlobalByte { global, offset, equals } => machine
                .global_address(global)
                .is_some_and(|base| machine.memory().byte(base + offset) == *equals),
            Predicate::HeapByte { heap, offset, equals } => machine
                .memory()
                .objects()
                .iter()
                .filter(|o| o.region == Region::Heap)
                .nth(*heap)
                .is_some_and(|o| machine.memory().byte(o.base + offset) == *equals),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatusKind {
    Exited,
    Trapped,
    Segfault,
}

impl StatusKind {
    pub fn of(status: &ExitStatus) -> StatusKind {
        match status {
            ExitStatus::Exited(_) => StatusKind::Exited,
            ExitStatus::Trapped { .. } => StatusKind::Trapped,
            ExitStatus::Segfault(_) => StatusKind::Segfault,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub verdict: Option<AttackVerdict>,
    pub status: Option<StatusKind>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    pub saturate: Option<Expectation>,
    pub failstop: Option<Expectation>,
    pub oblivious: Option<Expectation>,
    pub off: Option<Expectation>,
}

impl Expectations {
    pub fn get(&self, mode: Mode) -> Option<Expectation> {
        match mode {
            Mode::Saturate => self.saturate,
            Mode::FailStop => self.failstop,
            Mode::Oblivious => self.oblivious,
            Mode::Off => self.off,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub path: PathBuf,
    pub category: Category,
    #[serde(default)]
    pub input: String,
    pub success: Option<Predicate>,
    #[serde(default)]
    pub expect: Expectations,
    #[serde(default)]
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(rename = "entry", default)]
    pub entries: Vec<CorpusEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest, HarnessError> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|source| HarnessError::Read {
            path: path.clone(),
            source,
        })?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| HarnessError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        for e in &manifest.entries {
            if e.category.is_attack() != e.success.is_some() {
                return Err(HarnessError::Manifest {
                    path: path.clone(),
                    message: format!("{}: attacks need a success predicate, other entries must not have one", e.path.display()),
                });
            }
        }
        Ok(manifest)
    }
}

/// One entry under one mode.
#[derive(Debug, Clone)]
pub struct EntryRun {
    pub entry: CorpusEntry,
    pub report: RunReport,
    pub mismatch: Option<String>,
}

#[derive(Debug, Clone)]
pub struct CorpusReport {
    pub runs: Vec<EntryRun>,
}

fn check_expectation(exp: Option<Expectation>, verdict: AttackVerdict, status: &ExitStatus) -> Option<String> {
    let exp = exp?;
    let mut problems = Vec::new();
    if let Some(v) = exp.verdict.filter(|v| *v != verdict) {
        problems.push(format!("verdict {verdict:?}, expected {v:?}"));
    }
    if let Some(s) = exp.status.filter(|s| *s != StatusKind::of(status)) {
        problems.push(format!("status {status}, expected {s:?}"));
    }
    (!problems.is_empty()).then(|| problems.join("; "))
}

/// Runs every manifest entry under all four modes.
pub fn run_corpus(dir: &Path, base: &RunConfig) -> Result<CorpusReport, HarnessError> {
    let manifest = Manifest::load(dir)?;
    let programs = manifest
        .entries
        .iter()
        .map(|e| read_program(&dir.join(&e.path)))
        .collect::<Result<Vec<_>, _>>()?;
    let jobs: Vec<(usize, Mode)> = (0..manifest.entries.len())
        .flat_map(|i| Mode::ALL.map(|m| (i, m)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(i, mode)| {
            let entry = &manifest.entries[i];
            let mut cfg = *base;
            cfg.pass.mode = mode;
            let (outcome, machine) = execute(&programs[i], &entry.path, &cfg, entry.input.as_bytes())?;
            let verdict = match &entry.success {
                None => AttackVerdict::NotApplicable,
                Some(p) if p.holds(&outcome, &machine) => AttackVerdict::Succeeded,
                Some(_) => AttackVerdict::Blocked,
            };
            let mismatch = check_expectation(entry.expect.get(mode), verdict, &outcome.status);
            Ok(EntryRun {
                entry: entry.clone(),
                report: RunReport {
                    program: entry.path.display().to_string(),
                    cfg,
                    outcome,
                    verdict,
                },
                mismatch,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(CorpusReport { runs })
}

impl CorpusReport {
    pub fn for_mode(&self, mode: Mode) -> impl Iterator<Item = &EntryRun> {
        self.runs.iter().filter(move |r| r.report.cfg.pass.mode == mode)
    }

    /// Fraction of object-granularity attacks blocked; `None` without any.
    pub fn block_rate(&self, mode: Mode) -> Option<f64> {
        let attacks: Vec<_> = self
            .for_mode(mode)
            .filter(|r| r.entry.category.is_object_granular())
            .collect();
        let blocked = attacks
            .iter()
            .filter(|r| r.report.verdict == AttackVerdict::Blocked)
            .count();
        (!attacks.is_empty()).then(|| blocked as f64 / attacks.len() as f64)
    }

    pub fn subobject_succeeded(&self, mode: Mode) -> Vec<String> {
        self.for_mode(mode)
            .filter(|r| r.entry.category == Category::SubObject && r.report.verdict == AttackVerdict::Succeeded)
            .map(|r| r.report.program.clone())
            .collect()
    }

    /// Fraction of tolerance programs that exited normally.
    pub fn tolerance_completion_rate(&self, mode: Mode) -> Option<f64> {
        let runs: Vec<_> = self
            .for_mode(mode)
            .filter(|r| r.entry.category == Category::Tolerance)
            .collect();
        let done = runs
            .iter()
            .filter(|r| matches!(r.report.outcome.status, ExitStatus::Exited(_)))
            .count();
        (!runs.is_empty()).then(|| done as f64 / runs.len() as f64)
    }

    pub fn mismatches(&self) -> Vec<String> {
        self.runs
            .iter()
            .filter_map(|r| {
                r.mismatch
                    .as_ref()
                    .map(|m| format!("{} [{}]: {m}", r.report.program, r.report.cfg.pass.mode))
            })
            .collect()
    }

    pub fn to_json(&self) -> Value {
        let entries: Vec<Value> = self
            .runs
            .iter()
            .map(|r| {
                let mut v = r.report.to_json(true);
                let obj = v.as_object_mut().expect("report is an object");
                obj.insert("category".into(), json!(r.entry.category.to_string()));
                obj.insert("expectation_met".into(), json!(r.mismatch.is_none()));
                obj.insert("mismatch".into(), json!(r.mismatch));
                v
            })
            .collect();
        let per_mode = |f: &dyn Fn(Mode) -> Value| -> Value {
            Value::Object(Mode::ALL.iter().map(|&m| (m.name().to_owned(), f(m))).collect())
        };
        let counts: BTreeMap<String, usize> = self
            .for_mode(Mode::Saturate)
            .fold(BTreeMap::new(), |mut acc, r| {
                *acc.entry(r.entry.category.to_string()).or_default() += 1;
                acc
            });
        json!({
            "entries": entries,
            "block_rate": per_mode(&|m| json!(self.block_rate(m))),
            "subobject_succeeded": per_mode(&|m| json!(self.subobject_succeeded(m))),
            "tolerance_completion_rate": per_mode(&|m| json!(self.tolerance_completion_rate(m))),
            "category_counts": counts,
            "mismatches": self.mismatches(),
            "expectations_met": self.mismatches().is_empty(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expectation_mismatches() {
        let exit = ExitStatus::Exited(0);
        assert_eq!(check_expectation(None, AttackVerdict::Blocked, &exit), None);
        let want = Expectation {
            verdict: Some(AttackVerdict::Blocked),
            status: Some(StatusKind::Trapped),
        };
        let m = check_expectation(Some(want), AttackVerdict::Succeeded, &exit).unwrap();
        assert!(m.contains("verdict Succeeded"), "{m}");
        assert!(m.contains("expected Trapped"), "{m}");
        let trap = ExitStatus::Trapped {
            reason: "x".into(),
            loc: None,
        };
        assert_eq!(check_expectation(Some(want), AttackVerdict::Blocked, &trap), None);
    }

    #[test]
    fn categories() {
        assert!(!Category::Benign.is_attack());
        assert!(!Category::Tolerance.is_attack());
        assert!(Category::SubObject.is_attack());
        assert!(!Category::SubObject.is_object_granular());
        assert!(Category::Underflow.is_object_granular());
    }

    #[test]
    fn unknown_predicate_fields_rejected() {
        let r: Result<Manifest, _> =
            toml::from_str("[[entry]]\npath = \"a\"\ncategory = \"Underflow\"\nsuccess = { stack = 1 }\n");
        assert!(r.is_err());
    }
}
