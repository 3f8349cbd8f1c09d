use std::collections::{BTreeMap, HashMap};
use std::io;

use thiserror::Error;

use super::hv::HvRegion;
use super::tiles::{Cell, CorridorSet};
use crate::intersection::{TrajectoryKey, TurnKind};

pub type ReservationId = u64;

#[derive(Debug, Clone, PartialEq)]
pub struct ReservationRequest {
    pub vehicle: u32,
    pub key: TrajectoryKey,
    pub turn: TurnKind,
    pub entry_tick: i64,
    pub entry_speed: f64,
    /// Cells the vehicle will sweep, sorted by slot.
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grant {
    pub id: ReservationId,
    pub vehicle: u32,
    pub key: TrajectoryKey,
    pub entry_tick: i64,
    pub entry_speed: f64,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    #[error("entry lies beyond the road's reservation horizon")]
    HorizonExceeded,
    #[error("tile {tile} slot {slot} is held by reservation {holder}")]
    TileConflict {
        tile: u16,
        slot: i64,
        holder: ReservationId,
    },
    #[error("tile {tile} slot {slot} may be used by a human driver")]
    HvConflict { tile: u16, slot: i64 },
    #[error("human drivers queued behind the vehicle could reach tile {tile} slot {slot} held by {holder}")]
    FollowerConflict {
        tile: u16,
        slot: i64,
        holder: ReservationId,
    },
}

impl Rejection {
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::HorizonExceeded => "horizon",
            Rejection::TileConflict { .. } => "tile",
            Rejection::HvConflict { .. } => "hv",
            Rejection::FollowerConflict { .. } => "follower",
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("unknown reservation {0}")]
pub struct UnknownReservation(pub ReservationId);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReleaseReason {
    Completed,
    Cancelled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LogOutcome {
    Granted(ReservationId),
    Rejected(Rejection),
    Released(ReservationId, ReleaseReason),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub tick: i64,
    pub vehicle: u32,
    pub key: TrajectoryKey,
    pub turn: TurnKind,
    pub entry_tick: i64,
    pub outcome: LogOutcome,
}

/// Human traffic a request is checked against.
#[derive(Debug, Clone, Copy)]
pub struct HvCheck<'a> {
    pub region: &'a HvRegion,
    pub corridors: &'a CorridorSet,
    /// HVs held back by the requester, released once it is granted. They
    /// must not reach cells already reserved by others.
    pub followers: Option<&'a HvRegion>,
}

/// First-come first-served admission on exclusive (tile, slot) cells.
#[derive(Debug, Clone)]
pub struct ReservationManager {
    horizons: [f64; 4],
    dt: f64,
    occupancy: HashMap<Cell, ReservationId>,
    grants: BTreeMap<ReservationId, Grant>,
    next_id: ReservationId,
    log: Vec<LogEntry>,
    keep_log: bool,
}

impl ReservationManager {
    /// `horizons` in seconds, indexed by road.
    pub fn new(horizons: [f64; 4], dt: f64) -> Self {
        ReservationManager {
            horizons,
            dt,
            occupancy: HashMap::new(),
            grants: BTreeMap::new(),
            next_id: 1,
            log: Vec::new(),
            keep_log: true,
        }
    }

    pub fn without_log(mut self) -> Self {
        self.keep_log = false;
        self
    }

    /// Grant iff the entry is inside the road's horizon, every cell is free,
    /// and no cell touches the HV region.
    pub fn request(
        &mut self,
        now: i64,
        req: ReservationRequest,
        hv: Option<HvCheck<'_>>,
    ) -> Result<ReservationId, Rejection> {
        let result = self.admit(now, &req, hv);
        if self.keep_log {
            self.log.push(LogEntry {
                tick: now,
                vehicle: req.vehicle,
                key: req.key,
                turn: req.turn,
                entry_tick: req.entry_tick,
                outcome: match result {
                    Ok(id) => LogOutcome::Granted(id),
                    Err(r) => LogOutcome::Rejected(r),
                },
            });
        }
        let id = result?;
        for &c in &req.cells {
            self.occupancy.insert(c, id);
        }
        self.grants.insert(
            id,
            Grant {
                id,
                vehicle: req.vehicle,
                key: req.key,
                entry_tick: req.entry_tick,
                entry_speed: req.entry_speed,
                cells: req.cells,
            },
        );
        Ok(id)
    }

    fn admit(
        &mut self,
        now: i64,
        req: &ReservationRequest,
        hv: Option<HvCheck<'_>>,
    ) -> Result<ReservationId, Rejection> {
        let ahead = (req.entry_tick - now) as f64 * self.dt;
        if ahead > self.horizons[req.key.from.index()] + 1e-9 {
            return Err(Rejection::HorizonExceeded);
        }
        for &(tile, slot) in &req.cells {
            if let Some(&holder) = self.occupancy.get(&(tile, slot)) {
                return Err(Rejection::TileConflict { tile, slot, holder });
            }
        }
        if let Some(hv) = hv {
            let exempt = Some((req.key.from, req.key.in_lane));
            if let Some((tile, slot)) = hv.region.first_conflict(hv.corridors, &req.cells, exempt) {
                return Err(Rejection::HvConflict { tile, slot });
            }
            if let Some(f) = hv.followers {
                for g in self.grants.values() {
                    let lane = Some((g.key.from, g.key.in_lane));
                    for &(tile, slot) in g.cells.iter().filter(|c| c.1 >= now) {
                        if f.touches(hv.corridors, (tile, slot), lane) {
                            return Err(Rejection::FollowerConflict {
                                tile,
                                slot,
                                holder: g.id,
                            });
                        }
                    }
                }
            }
        }
        let id = self.next_id;
        self.next_id += 1;
        Ok(id)
    }

    pub fn release(
        &mut self,
        now: i64,
        id: ReservationId,
        reason: ReleaseReason,
    ) -> Result<Grant, UnknownReservation> {
        let g = self.grants.remove(&id).ok_or(UnknownReservation(id))?;
        for c in &g.cells {
            if self.occupancy.get(c) == Some(&id) {
                self.occupancy.remove(c);
            }
        }
        if self.keep_log {
            self.log.push(LogEntry {
                tick: now,
                vehicle: g.vehicle,
                key: g.key,
                turn: crate::intersection::classify_turn(g.key.from, g.key.to)
                    .unwrap_or(TurnKind::Through),
                entry_tick: g.entry_tick,
                outcome: LogOutcome::Released(id, reason),
            });
        }
        Ok(g)
    }

    pub fn grant(&self, id: ReservationId) -> Option<&Grant> {
        self.grants.get(&id)
    }

    pub fn active(&self) -> impl Iterator<Item = &Grant> {
        self.grants.values()
    }

    pub fn holder(&self, cell: Cell) -> Option<ReservationId> {
        self.occupancy.get(&cell).copied()
    }

    pub fn held_cells(&self) -> usize {
        self.occupancy.len()
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn write_log_csv<W: io::Write>(&self, w: W) -> io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "time",
            "vehicle",
            "trajectory",
            "turn",
            "entry_time",
            "outcome",
            "reason",
            "reservation",
        ])?;
        for e in &self.log {
            let (outcome, reason, id) = match e.outcome {
                LogOutcome::Granted(id) => ("granted", "", id.to_string()),
                LogOutcome::Rejected(r) => ("rejected", r.code(), String::new()),
                LogOutcome::Released(id, ReleaseReason::Completed) => {
                    ("completed", "", id.to_string())
                }
                LogOutcome::Released(id, ReleaseReason::Cancelled) => {
                    ("cancelled", "", id.to_string())
                }
            };
            out.write_record([
                format!("{:.2}", e.tick as f64 * self.dt),
                e.vehicle.to_string(),
                e.key.to_string(),
                e.turn.letter().to_string(),
                format!("{:.2}", e.entry_tick as f64 * self.dt),
                outcome.to_string(),
                reason.to_string(),
                id,
            ])?;
        }
        out.flush()
    }
}
