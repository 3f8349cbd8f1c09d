use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use hybrid_aim_core::config::{
    parse_demand_table, parse_intersection_spec, parse_signal_program, validate_cross_references,
    ValidationReport,
};
use hybrid_aim_core::sim::{self, HvKnowledge, SweepSpec};
use hybrid_aim_core::{ControllerMode, RunConfig, TurnPolicy};

#[derive(Parser)]
#[command(
    name = "hybrid-aim",
    version,
    about = "Signalized intersection with human and autonomous traffic"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    C,
    P,
    R,
}

impl From<Policy> for TurnPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::C => TurnPolicy::Current,
            Policy::P => TurnPolicy::Permissive,
            Policy::R => TurnPolicy::Restrictive,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Knowledge {
    Observed,
    Unknown,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its summary row.
    Run {
        #[arg(long)]
        intersection: PathBuf,
        #[arg(long)]
        signals: PathBuf,
        #[arg(long)]
        demand: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        cav_ratio: f64,
        #[arg(long, value_enum, default_value = "c")]
        cav_policy: Policy,
        #[arg(long, value_enum, default_value = "c")]
        hv_policy: Policy,
        #[arg(long)]
        actuated: bool,
        #[arg(long)]
        adaptive: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = hybrid_aim_core::DEFAULT_TICK)]
        tick: f64,
        /// What the reservation manager knows about human drivers.
        #[arg(long, value_enum, default_value = "observed")]
        hv_knowledge: Knowledge,
        /// Summary CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        vehicle_log: Option<PathBuf>,
        #[arg(long)]
        signal_trace: Option<PathBuf>,
        #[arg(long)]
        reservation_log: Option<PathBuf>,
    },
    /// Run every combination in a sweep file.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        /// Directory for runs.csv and cells.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check configuration files; cross-checks when one of each is given.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run {
            intersection,
            signals,
            demand,
            cav_ratio,
            cav_policy,
            hv_policy,
            actuated,
            adaptive,
            seed,
            tick,
            hv_knowledge,
            out,
            vehicle_log,
            signal_trace,
            reservation_log,
        } => {
            let mut cfg = RunConfig::new(intersection, signals, demand);
            cfg.params.cav_ratio = cav_ratio;
            cfg.params.cav_policy = cav_policy.into();
            cfg.params.hv_policy = hv_policy.into();
            cfg.params.mode = ControllerMode { actuated, adaptive };
            cfg.params.seed = seed;
            cfg.params.tick = tick;
            cfg.params.options.hv_knowledge = match hv_knowledge {
                Knowledge::Observed => HvKnowledge::Observed,
                Knowledge::Unknown => HvKnowledge::Unknown,
            };
            cfg.output = out.clone();
            cfg.vehicle_log = vehicle_log;
            cfg.signal_trace = signal_trace;
            cfg.reservation_log = reservation_log;
            let summary = sim::run(&cfg)?;
            if out.is_none() {
                sim::emit_summary(&summary, std::io::stdout().lock())?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { spec, out } => {
            let spec = SweepSpec::load(&spec)?;
            let table = sim::sweep(&spec)?;
            fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
            write(&out.join("runs.csv"), |b| table.write_runs(b))?;
            write(&out.join("cells.csv"), |b| table.write_cells(b))?;
            let failed: usize = table.cells.iter().map(|c| c.failed).sum();
            if failed > 0 {
                eprintln!("{failed} run(s) failed; see runs.csv");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { paths } => {
            let report = validate(&paths)?;
            print!("{report}");
            Ok(if report.is_ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
    }
}

fn write(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf).with_context(|| path.display().to_string())
}

fn validate(paths: &[PathBuf]) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();
    let (mut spec, mut program, mut demand) = (Vec::new(), Vec::new(), Vec::new());
    for p in paths {
        let name = p.display().to_string();
        let text = fs::read_to_string(p).with_context(|| name.clone())?;
        let is_csv = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            match parse_demand_table(&text) {
                Ok(d) => demand.push(d),
                Err(e) => report.error(&name, "parse", e.to_string()),
            }
        } else if text.contains("<intersection") {
            match parse_intersection_spec(&text) {
                Ok(d) => spec.push(d),
                Err(e) => report.error(&name, "parse", e.to_string()),
            }
        } else if text.trim_start().starts_with('<') {
            match parse_signal_program(&text) {
                Ok(d) => program.push(d),
                Err(e) => report.error(&name, "parse", e.to_string()),
            }
        } else {
            bail!("{name}: not a signal program, intersection or demand file");
        }
    }
    if let ([s], [p], [d]) = (&spec[..], &program[..], &demand[..]) {
        report.merge(validate_cross_references(s, p, d));
    }
    Ok(report)
}
