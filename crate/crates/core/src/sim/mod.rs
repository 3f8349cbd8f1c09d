//! The discrete-time loop, per-vehicle delay, run summaries and sweeps.

mod engine;
mod output;
mod sweep;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::agents::{Limits, VehicleDims};
use crate::config::{
    parse_demand_table, parse_intersection_spec, parse_signal_program, validate_cross_references,
    DemandParseError, DemandTable, IntersectionParseError, IntersectionSpecDoc, SignalParseError,
    SignalProgramDoc, ValidationReport,
};
use crate::intersection::{Cardinal, ModelError, TurnKind, TurnPolicy, VehicleClass};
use crate::reservation::DEFAULT_BUFFER;
use crate::signal::{ControllerError, ControllerMode};

pub use engine::{simulate, InvariantReport, RunOutput, SignalSample};
pub use output::{emit_summary, write_signal_trace, write_vehicle_log, SUMMARY_HEADER};
pub use sweep::{sweep, CellStats, SweepError, SweepRun, SweepSpec, SweepTable, Variation};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("intersection: {0}")]
    Intersection(#[from] IntersectionParseError),
    #[error("signals: {0}")]
    Signal(#[from] SignalParseError),
    #[error("demand: {0}")]
    Demand(#[from] DemandParseError),
    #[error("configuration is invalid:\n{report}")]
    ConfigInvalid { report: ValidationReport },
    #[error("intersection model: {0}")]
    Model(#[from] ModelError),
    #[error("signal controller: {0}")]
    Controller(#[from] ControllerError),
    #[error("invalid run parameter: {0}")]
    InvalidParams(String),
}

fn read(path: &Path) -> Result<String, RunError> {
    fs::read_to_string(path).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// The three parsed input files.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub intersection: IntersectionSpecDoc,
    pub signals: SignalProgramDoc,
    pub demand: DemandTable,
}

impl Scenario {
    pub fn load(intersection: &Path, signals: &Path, demand: &Path) -> Result<Self, RunError> {
        Ok(Scenario {
            intersection: parse_intersection_spec(&read(intersection)?)?,
            signals: parse_signal_program(&read(signals)?)?,
            demand: parse_demand_table(&read(demand)?)?,
        })
    }

    pub fn validate(&self) -> ValidationReport {
        validate_cross_references(&self.intersection, &self.signals, &self.demand)
    }
}

/// How much the reservation manager knows about human drivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HvKnowledge {
    /// Positions of HVs on the approaches and inside the box.
    Observed,
    /// Only the signal: every HV path is blocked while it may show green.
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub hv_knowledge: HvKnowledge,
    /// Footprint buffer for tiles, m.
    pub buffer: f64,
    /// Seconds simulated after the last bucket ends before giving up.
    pub drain_cap: f64,
    /// See [`crate::demand::SpawnQueue::with_spillback_wait`].
    pub spillback_wait: f64,
    /// Wait after a rejected or cancelled request, s.
    pub request_backoff: f64,
    /// Shortest approach lane, m. Faster roads get longer approaches so that
    /// a fresh arrival cannot reach the box within the reservation lookahead.
    pub min_approach: f64,
    pub limits: Limits,
    pub dims: VehicleDims,
    /// Count safety violations every tick.
    pub check_invariants: bool,
    /// Record signal changes for the trace output.
    pub record_signals: bool,
    /// Keep the reservation log.
    pub record_reservations: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            hv_knowledge: HvKnowledge::Observed,
            buffer: DEFAULT_BUFFER,
            drain_cap: 900.0,
            spillback_wait: crate::demand::DEFAULT_SPILLBACK_WAIT,
            request_backoff: 0.5,
            min_approach: 300.0,
            limits: Limits::default(),
            dims: VehicleDims::default(),
            check_invariants: true,
            record_signals: false,
            record_reservations: false,
        }
    }
}

/// Everything about a run except the input files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunParams {
    pub cav_ratio: f64,
    pub cav_policy: TurnPolicy,
    pub hv_policy: TurnPolicy,
    pub mode: ControllerMode,
    pub seed: u64,
    pub tick: f64,
    pub options: SimOptions,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            cav_ratio: 0.0,
            cav_policy: TurnPolicy::Current,
            hv_policy: TurnPolicy::Current,
            mode: ControllerMode::FIXED,
            seed: 1,
            tick: crate::DEFAULT_TICK,
            options: SimOptions::default(),
        }
    }
}

impl RunParams {
    pub fn check(&self) -> Result<(), RunError> {
        if !(self.tick > 0.0 && self.tick.is_finite()) {
            return Err(RunError::InvalidParams(format!(
                "tick must be positive, got {}",
                self.tick
            )));
        }
        if !(0.0..=1.0).contains(&self.cav_ratio) {
            return Err(RunError::InvalidParams(format!(
                "cav ratio must lie in [0, 1], got {}",
                self.cav_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub intersection: PathBuf,
    pub signals: PathBuf,
    pub demand: PathBuf,
    pub params: RunParams,
    /// Summary CSV.
    pub output: Option<PathBuf>,
    pub vehicle_log: Option<PathBuf>,
    pub signal_trace: Option<PathBuf>,
    pub reservation_log: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(
        intersection: impl Into<PathBuf>,
        signals: impl Into<PathBuf>,
        demand: impl Into<PathBuf>,
    ) -> Self {
        RunConfig {
            intersection: intersection.into(),
            signals: signals.into(),
            demand: demand.into(),
            params: RunParams::default(),
            output: None,
            vehicle_log: None,
            signal_trace: None,
            reservation_log: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleRecord {
    pub id: u32,
    pub class: VehicleClass,
    pub road: Cardinal,
    pub turn: TurnKind,
    pub lane: usize,
    pub scheduled_time: f64,
    pub spawn_time: f64,
    pub entry_time: Option<f64>,
    pub exit_time: Option<f64>,
    /// Unobstructed time from the spawn point to the box exit.
    pub free_flow_time: f64,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("vehicle {0} has not left the box")]
pub struct VehicleNotCompleted(pub u32);

/// Time lost against free flow, counted from the scheduled arrival.
pub fn delay_of(record: &VehicleRecord) -> Result<f64, VehicleNotCompleted> {
    let exit = record.exit_time.ok_or(VehicleNotCompleted(record.id))?;
    Ok((exit - record.scheduled_time - record.free_flow_time).max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub cav_ratio: f64,
    pub cav_policy: TurnPolicy,
    pub hv_policy: TurnPolicy,
    pub mode: ControllerMode,
    pub tick: f64,
    /// Mean over completed vehicles; 0 when none completed.
    pub mean_delay: f64,
    pub mean_delay_human: f64,
    pub mean_delay_auto: f64,
    pub scheduled: usize,
    pub spawned: usize,
    pub completed: usize,
    pub completed_human: usize,
    pub completed_auto: usize,
    /// Spawned but still short of the box exit when the run stopped.
    pub in_system: usize,
    /// Never placed on the road: still waiting at the drain cap, or no lane
    /// serves the action under the active turning policy.
    pub never_spawned: usize,
    pub unroutable: usize,
    pub spillback: bool,
    /// Average, peak and low vehicles per hour per lane over full hours.
    pub vlh: Option<(f64, f64, f64)>,
    /// Simulated seconds.
    pub duration: f64,
}

/// Parse, validate and simulate; writes whichever outputs are configured.
pub fn run(config: &RunConfig) -> Result<RunSummary, RunError> {
    let scenario = Scenario::load(&config.intersection, &config.signals, &config.demand)?;
    let report = scenario.validate();
    if !report.is_ok() {
        return Err(RunError::ConfigInvalid { report });
    }
    let mut params = config.params;
    params.options.record_signals |= config.signal_trace.is_some();
    params.options.record_reservations |= config.reservation_log.is_some();
    let out = simulate(&scenario, &params)?;
    let write = |path: &Path, f: &dyn Fn(&mut Vec<u8>) -> io::Result<()>| {
        let mut buf = Vec::new();
        f(&mut buf)
            .and_then(|_| fs::write(path, &buf))
            .map_err(|source| RunError::Io {
                path: path.to_path_buf(),
                source,
            })
    };
    if let Some(p) = &config.output {
        write(p, &|w| emit_summary(&out.summary, w))?;
    }
    if let Some(p) = &config.vehicle_log {
        write(p, &|w| write_vehicle_log(&out.vehicles, w))?;
    }
    if let Some(p) = &config.signal_trace {
        write(p, &|w| write_signal_trace(&out.signals, params.tick, w))?;
    }
    if let Some(p) = &config.reservation_log {
        write(p, &|w| out.reservations.write_log_csv(&mut *w))?;
    }
    Ok(out.summary)
}
