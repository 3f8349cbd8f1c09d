//! Space-time that human drivers may occupy under the signal.
//!
//! An HV's possible motion on one trajectory is bounded by an envelope of
//! entry times `[a, b]` (ticks): at time `t` its front lies between where a
//! vehicle entering at `b` and one entering at `a` would be, both moving at
//! the trajectory's cap. The lower bound uses a conservative clearing time
//! so that slow-starting vehicles stay inside it.

use std::collections::BTreeSet;

use super::tiles::{Cell, CorridorSet, Tile};
use crate::agents::{travel_time, Limits};
use crate::intersection::{Cardinal, IntersectionModel, TrajectoryKey, VehicleClass};
use crate::signal::Controller;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HvEnvelope {
    /// Corridor index in the owning [`CorridorSet`].
    pub corridor: usize,
    /// Earliest equivalent entry tick.
    pub a: f64,
    /// Latest equivalent entry tick.
    pub b: f64,
    /// Approach lane of the vehicles behind the envelope. Reservations
    /// from the same lane are exempt: those HVs queue behind the CAV, and
    /// one inside the box entered after it.
    pub lane: Option<(Cardinal, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObservedKind {
    /// On the approach, `distance` metres from the stop line.
    Approaching { distance: f64 },
    /// Due to spawn but waiting for room at the start of the approach.
    Pending,
    /// Past the stop line with the front `front` metres along the path.
    Inside { front: f64, speed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HvObservation {
    pub key: TrajectoryKey,
    pub kind: ObservedKind,
    /// Earliest entry tick allowed by a granted CAV ahead in the same lane.
    pub not_before: Option<f64>,
}

/// What the manager knows about human traffic.
#[derive(Debug, Clone, Copy)]
pub enum HvTraffic<'a> {
    /// Assume an HV may enter any HV trajectory at any time its movement
    /// shows green or yellow.
    Unknown,
    /// Use the HVs present in the network.
    Observed {
        vehicles: &'a [HvObservation],
        approach_length: [f64; 4],
    },
}

#[derive(Debug, Clone, Copy)]
pub struct RegionParams {
    pub now: i64,
    pub dt: f64,
    /// Ticks past `now` the region covers; later cells count as blocked.
    pub lookahead: i64,
    pub limits: Limits,
}

#[derive(Debug, Clone, Default)]
pub struct HvRegion {
    pub envelopes: Vec<HvEnvelope>,
    pub until: i64,
    pub dt: f64,
}

/// Seconds for an HV to cover `distance` from `speed` at half the maximum
/// acceleration, plus one second.
fn clearing_time(distance: f64, speed: f64, cap: f64, limits: &Limits) -> f64 {
    travel_time(distance, speed, 0.5 * limits.a_max, cap) + 1.0
}

pub fn hv_blocked_region(
    controller: &Controller,
    model: &IntersectionModel,
    corridors: &CorridorSet,
    traffic: HvTraffic<'_>,
    params: RegionParams,
) -> HvRegion {
    let now = params.now;
    let dt = params.dt;
    let dims = corridors.dims;
    let buffer = corridors.grid.buffer();
    let windows = controller.green_windows(params.lookahead);
    let mut envelopes = Vec::new();
    let hv_keys = |dir: Cardinal, code: crate::config::MovementCode| {
        model
            .mappings()
            .filter(move |m| m.vehicle_class == VehicleClass::Human && m.from_direction == dir)
            .filter(move |m| {
                code.covers(
                    crate::intersection::classify_turn(m.from_direction, m.to_direction).unwrap(),
                )
            })
            .flat_map(|m| {
                m.pairs.into_iter().map(move |(i, o)| TrajectoryKey {
                    from: m.from_direction,
                    in_lane: i,
                    to: m.to_direction,
                    out_lane: o,
                })
            })
    };
    match traffic {
        HvTraffic::Unknown => {
            for w in &windows {
                for key in hv_keys(w.direction, w.code) {
                    let Some(c) = corridors.index_of(&key) else {
                        continue;
                    };
                    envelopes.push(HvEnvelope {
                        corridor: c,
                        a: w.start.max(now) as f64,
                        b: w.end as f64,
                        lane: None,
                    });
                }
            }
        }
        HvTraffic::Observed {
            vehicles,
            approach_length,
        } => {
            for w in &windows {
                for key in hv_keys(w.direction, w.code) {
                    let Some(ci) = corridors.index_of(&key) else {
                        continue;
                    };
                    let road_speed = model.road(key.from).speed_limit;
                    let earliest = vehicles
                        .iter()
                        .filter(|o| o.key == key)
                        .filter_map(|o| {
                            let d = match o.kind {
                                ObservedKind::Approaching { distance } => distance,
                                ObservedKind::Pending => approach_length[key.from.index()],
                                ObservedKind::Inside { .. } => return None,
                            };
                            let t = now as f64 + d.max(0.0) / road_speed / dt;
                            Some(o.not_before.map_or(t, |nb| t.max(nb)))
                        })
                        .fold(f64::INFINITY, f64::min);
                    if !earliest.is_finite() {
                        continue;
                    }
                    let c = corridors.by_index(ci);
                    let span = c.length() + dims.length + buffer;
                    let slack = clearing_time(span, 0.0, c.cap, &params.limits) - span / c.cap;
                    envelopes.push(HvEnvelope {
                        corridor: ci,
                        a: (w.start as f64).max(earliest),
                        b: w.end as f64 + slack / dt,
                        lane: Some((key.from, key.in_lane)),
                    });
                }
            }
            for o in vehicles {
                let ObservedKind::Inside { front, speed } = o.kind else {
                    continue;
                };
                let Some(ci) = corridors.index_of(&o.key) else {
                    continue;
                };
                let c = corridors.by_index(ci);
                let span = c.length() + dims.length + buffer;
                let remaining = (span - front).max(0.0);
                let t_end =
                    now as f64 + clearing_time(remaining, speed, c.cap, &params.limits) / dt;
                envelopes.push(HvEnvelope {
                    corridor: ci,
                    a: now as f64 - front / c.cap / dt,
                    b: t_end - span / c.cap / dt,
                    lane: Some((o.key.from, o.key.in_lane)),
                });
            }
        }
    }
    envelopes.retain(|e| e.a <= e.b);
    HvRegion {
        envelopes,
        until: now + params.lookahead,
        dt,
    }
}

impl HvRegion {
    /// Path range a body following `e` may cover during slot `slot`.
    fn body_range(
        &self,
        e: &HvEnvelope,
        cap: f64,
        slot: i64,
        length: f64,
        buffer: f64,
    ) -> (f64, f64) {
        let lo = cap * ((slot as f64 - e.b) * self.dt);
        let hi = cap * (((slot + 1) as f64 - e.a) * self.dt);
        (lo - length - buffer, hi + buffer)
    }

    pub fn blocks(
        &self,
        corridors: &CorridorSet,
        cell: Cell,
        exempt: Option<(Cardinal, usize)>,
    ) -> bool {
        cell.1 > self.until || self.touches(corridors, cell, exempt)
    }

    /// Like [`blocks`](Self::blocks) but silent past the lookahead.
    pub fn touches(
        &self,
        corridors: &CorridorSet,
        cell: Cell,
        exempt: Option<(Cardinal, usize)>,
    ) -> bool {
        let (tile, slot) = cell;
        let (len, buf) = (corridors.dims.length, corridors.grid.buffer());
        self.envelopes.iter().any(|e| {
            if e.lane.is_some() && e.lane == exempt {
                return false;
            }
            let c = corridors.by_index(e.corridor);
            let (s0, s1) = self.body_range(e, c.cap, slot, len, buf);
            c.touches(tile, s0, s1)
        })
    }

    pub fn first_conflict(
        &self,
        corridors: &CorridorSet,
        cells: &[Cell],
        exempt: Option<(Cardinal, usize)>,
    ) -> Option<Cell> {
        cells
            .iter()
            .copied()
            .find(|&c| self.blocks(corridors, c, exempt))
    }

    /// Tiles blocked during `slot`.
    pub fn tiles_at(&self, corridors: &CorridorSet, slot: i64) -> BTreeSet<Tile> {
        let (len, buf) = (corridors.dims.length, corridors.grid.buffer());
        let mut out = BTreeSet::new();
        let mut v = Vec::new();
        for e in &self.envelopes {
            let c = corridors.by_index(e.corridor);
            let (s0, s1) = self.body_range(e, c.cap, slot, len, buf);
            v.clear();
            c.tiles_in(s0, s1, &mut v);
            out.extend(v.iter().copied());
        }
        out
    }
}
