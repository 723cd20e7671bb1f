//! JSON run reports. Objects are built as `serde_json::Value` maps, which
//! keep keys sorted, so output is stable for golden comparisons.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sma_core::exec::{ExecStats, ExitStatus};
use sma_core::memory::FragmentationReport;
use sma_core::ExecOutcome;

use crate::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackVerdict {
    Blocked,
    Succeeded,
    NotApplicable,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub program: String,
    pub cfg: RunConfig,
    pub outcome: ExecOutcome,
    pub verdict: AttackVerdict,
}

fn stats_json(s: &ExecStats) -> Value {
    json!({
        "instrs_total": s.instrs_total,
        "checks_executed": s.checks_executed,
        "masks_executed": s.masks_executed,
        "corrections_overflow": s.corrections_overflow,
        "corrections_underflow": s.corrections_underflow,
        "oob_writes_redirected": s.oob_writes_redirected,
        "oob_reads_redirected": s.oob_reads_redirected,
    })
}

fn fragmentation_json(f: &FragmentationReport) -> Value {
    let per_object: Vec<Value> = f
        .per_object
        .iter()
        .map(|e| {
            json!({
                "id": e.id,
                "requested": e.requested,
                "rounded": e.rounded,
                "ratio": e.ratio,
            })
        })
        .collect();
    json!({
        "aggregate_ratio": f.aggregate_ratio,
        "per_object": per_object,
    })
}

fn detail_json(status: &ExitStatus) -> Value {
    match status {
        ExitStatus::Exited(_) => Value::Null,
        ExitStatus::Trapped { reason, loc } => json!({
            "reason": reason,
            "at": loc.as_ref().map(|l| l.to_string()),
        }),
        ExitStatus::Segfault(addr) => json!({ "address": format!("{addr:#x}") }),
    }
}

impl RunReport {
    pub fn to_json(&self, with_stats: bool) -> Value {
        let status = &self.outcome.status;
        let exit_code = match status {
            ExitStatus::Exited(c) => json!(c),
            _ => Value::Null,
        };
        json!({
            "program": self.program,
            "mode": self.cfg.pass.mode.name(),
            "codec": self.cfg.pass.codec.name(),
            "address_tagging": self.cfg.pass.address_tagging,
            "status": status.kind(),
            "exit_code": exit_code,
            "detail": detail_json(status),
            "stats": if with_stats { stats_json(&self.outcome.stats) } else { Value::Null },
            "fragmentation": fragmentation_json(&self.outcome.fragmentation),
            "verdict": self.verdict,
        })
    }
}

/// Pretty JSON with a trailing newline.
pub fn render(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json values always serialize");
    s.push('\n');
    s
}
