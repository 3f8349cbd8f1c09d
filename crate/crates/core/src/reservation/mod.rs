//! Tile reservations for CAVs.
//!
//! The box is split into a square grid of tiles and time into tick slots.
//! A CAV asks for every (tile, slot) cell its buffered body will sweep on
//! the way through; the manager grants first come first served when all
//! cells are free and none may be used by a human driver.

mod hv;
mod manager;
mod tiles;

pub use hv::{
    hv_blocked_region, HvEnvelope, HvObservation, HvRegion, HvTraffic, ObservedKind, RegionParams,
};
pub use manager::{
    Grant, HvCheck, LogEntry, LogOutcome, Rejection, ReleaseReason, ReservationId,
    ReservationManager, ReservationRequest, UnknownReservation,
};
pub use tiles::{
    entry_profile, occupancy, tiles_for, Cell, Corridor, CorridorSet, Profile, Tile, TileGrid,
    PIECE,
};

/// Safety margin added around every vehicle footprint, m.
pub const DEFAULT_BUFFER: f64 = 0.5;
