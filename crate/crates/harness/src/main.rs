use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sma_core::codec::CodecKind;
use sma_core::exec::ExitStatus;
use sma_core::ir::pretty_print;
use sma_core::pass::{instrument, verify_instrumented, Mode};
use sma_harness::report::{render, AttackVerdict, RunReport};
use sma_harness::{execute, read_program, run_corpus, status_exit_code, HarnessError, RunConfig};

#[derive(Parser)]
#[command(name = "sma", version, about = "Saturation memory access: instrument and run .sir programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Copy)]
struct Target {
    /// saturate, failstop, oblivious or off
    #[arg(long, default_value = "saturate")]
    mode: Mode,
    /// buddy or floating
    #[arg(long, default_value = "buddy")]
    codec: CodecKind,
    /// The memory unit ignores pointer tag bits, so dereferences need no mask.
    #[arg(long)]
    address_tagging: bool,
    /// Maximum number of executed instructions.
    #[arg(long, default_value_t = sma_core::exec::DEFAULT_BUDGET)]
    budget: u64,
}

impl Target {
    fn config(&self) -> RunConfig {
        let mut cfg = RunConfig::new(self.mode, self.codec, self.address_tagging);
        cfg.budget = self.budget;
        cfg
    }
}

#[derive(Subcommand)]
enum Command {
    /// Instrument and run one program.
    Run {
        file: PathBuf,
        #[command(flatten)]
        target: Target,
        /// Include execution counters in the report and on stderr.
        #[arg(long)]
        stats: bool,
        /// Write a JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// File whose bytes `read_byte` returns.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run every manifest entry of a corpus directory under all modes.
    Corpus {
        dir: PathBuf,
        #[arg(long, default_value = "buddy")]
        codec: CodecKind,
        #[arg(long)]
        address_tagging: bool,
        #[arg(long, default_value_t = sma_core::exec::DEFAULT_BUDGET)]
        budget: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Parse and validate a program.
    Check { file: PathBuf },
    /// Print the instrumented program.
    Instrument {
        file: PathBuf,
        #[command(flatten)]
        target: Target,
    },
}

fn write_report(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|source| HarnessError::Write {
        path: path.to_owned(),
        source,
    })
}

fn cmd_run(
    file: &Path,
    target: &Target,
    stats: bool,
    report: Option<&Path>,
    input: Option<&Path>,
) -> Result<i32, HarnessError> {
    let program = read_program(file)?;
    let input = match input {
        Some(p) => std::fs::read(p).map_err(|source| HarnessError::Read {
            path: p.to_owned(),
            source,
        })?,
        None => Vec::new(),
    };
    let cfg = target.config();
    let (outcome, _) = execute(&program, file, &cfg, &input)?;
    {
        use std::io::Write;
        let mut out = std::io::stdout().lock();
        let _ = out.write_all(&outcome.output);
        let _ = out.flush();
    }
    match &outcome.status {
        ExitStatus::Exited(_) => {}
        other => eprintln!("sma: {other}"),
    }
    if stats {
        let s = &outcome.stats;
        eprintln!(
            "sma: instrs={} checks={} masks={} corrections={}/{} (overflow/underflow) redirected writes={} reads={}",
            s.instrs_total,
            s.checks_executed,
            s.masks_executed,
            s.corrections_overflow,
            s.corrections_underflow,
            s.oob_writes_redirected,
            s.oob_reads_redirected
        );
    }
    let code = status_exit_code(&outcome.status);
    if let Some(path) = report {
        let rep = RunReport {
            program: file.display().to_string(),
            cfg,
            outcome,
            verdict: AttackVerdict::NotApplicable,
        };
        write_report(path, &render(&rep.to_json(stats)))?;
    }
    Ok(code)
}

fn cmd_corpus(dir: &Path, cfg: &RunConfig, report: Option<&Path>) -> Result<i32, HarnessError> {
    let result = run_corpus(dir, cfg)?;
    let mut runs: Vec<_> = result.runs.iter().collect();
    runs.sort_by(|a, b| (&a.report.program, a.report.cfg.pass.mode.name()).cmp(&(&b.report.program, b.report.cfg.pass.mode.name())));
    for r in &runs {
        println!(
            "{:<40} {:<18} {:<9} {:<13} {:<8} {}",
            r.report.program,
            r.entry.category.to_string(),
            r.report.cfg.pass.mode.name(),
            format!("{:?}", r.report.verdict),
            r.report.outcome.status.kind(),
            if r.mismatch.is_some() { "MISMATCH" } else { "ok" }
        );
    }
    for mode in Mode::ALL {
        let rate = result
            .block_rate(mode)
            .map_or("n/a".to_owned(), |r| format!("{:.3}", r));
        println!("block_rate[{mode}] = {rate}");
    }
    for m in result.mismatches() {
        eprintln!("sma: mismatch: {m}");
    }
    if let Some(path) = report {
        write_report(path, &render(&result.to_json()))?;
    }
    Ok(if result.mismatches().is_empty() { 0 } else { 1 })
}

fn cmd_instrument(file: &Path, target: &Target) -> Result<i32, HarnessError> {
    let program = read_program(file)?;
    let cfg = target.config().pass;
    let inst = instrument(&program, &cfg).map_err(|error| HarnessError::Pass {
        path: file.to_owned(),
        error,
    })?;
    print!("{}", pretty_print(&inst.program));
    let violations = verify_instrumented(&program, &inst.program, &cfg);
    for v in &violations {
        eprintln!("sma: {v}");
    }
    Ok(if violations.is_empty() { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            file,
            target,
            stats,
            report,
            input,
        } => cmd_run(file, target, *stats, report.as_deref(), input.as_deref()),
        Command::Corpus {
            dir,
            codec,
            address_tagging,
            budget,
            report,
        } => {
            let mut cfg = RunConfig::new(Mode::Saturate, *codec, *address_tagging);
            cfg.budget = *budget;
            cmd_corpus(dir, &cfg, report.as_deref())
        }
        Command::Check { file } => read_program(file).map(|_| {
            println!("{}: ok", file.display());
            0
        }),
        Command::Instrument { file, target } => cmd_instrument(file, target),
    };
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("sma: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code.clamp(0, 255) as u8)
}
