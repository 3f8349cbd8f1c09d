//! Discrete-time simulation of a single signalized intersection shared by
//! human-driven vehicles (HVs), which obey a ring-and-barrier signal, and
//! connected autonomous vehicles (CAVs), which cross on first-come
//! first-served space-time reservations.
//!
//! The pipeline is split into modules that mirror the experiment flow:
//!
//! * [`config`] parses and validates the signal program, demand table and
//!   intersection description.
//! * [`intersection`] turns the intersection description into lane
//!   geometry, turning profiles and internal trajectories.
//! * [`signal`] runs the ring-and-barrier controller (fixed, actuated,
//!   adaptive).
//! * [`demand`] expands bucketed counts into seeded spawn events.
//! * [`reservation`] admits CAVs onto a tile grid while keeping clear of
//!   the space HVs may use under the current signal.
//! * [`agents`] holds vehicle kinematics and driver decisions.
//! * [`sim`] wires everything into the 0.02 s loop and reports delay.

pub mod agents;
pub mod config;
pub mod demand;
pub mod geometry;
pub mod intersection;
pub mod reservation;
pub mod signal;
pub mod sim;

pub use config::{
    parse_demand_table, parse_intersection_spec, parse_signal_program, validate_cross_references,
    DemandTable, IntersectionSpecDoc, SignalProgramDoc, ValidationReport,
};
pub use intersection::{
    build_model, classify_turn, Cardinal, IntersectionModel, TurnKind, TurnPolicy, VehicleClass,
};
pub use signal::{Color, Controller, ControllerMode};
pub use sim::{run, RunConfig, RunSummary};

/// Default simulation step in seconds.
pub const DEFAULT_TICK: f64 = 0.02;
