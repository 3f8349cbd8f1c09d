//! Turns bucketed counts into timestamped, seeded spawn events and feeds
//! them into entry lanes.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::DemandTable;
use crate::intersection::{destination, Cardinal, IntersectionModel, TurnKind, VehicleClass};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpawnEvent {
    /// Seconds after the first timestamp.
    pub scheduled_time: f64,
    pub road: Cardinal,
    pub action: TurnKind,
    pub class: VehicleClass,
    /// Row of the demand table that produced the event.
    pub bucket: usize,
    /// Action column (within the road's group) that produced the event.
    pub column: usize,
    /// Position in generation order; the final tie-breaker.
    pub draw: usize,
}

/// Expand a table into events. Each event draws, in order: its time within
/// the bucket, its action when the column is compound, and a uniform number
/// that makes it AUTO when below `cav_ratio`. The draw sequence does not
/// depend on `cav_ratio`, so runs at different ratios share arrivals and
/// differ only in which vehicles are automated.
pub fn expand_schedule(table: &DemandTable, seed: u64, cav_ratio: f64) -> Vec<SpawnEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bucket = table.bucket_length();
    let mut out = Vec::new();
    for (b, row) in table.rows.iter().enumerate() {
        let t0 = b as f64 * bucket;
        for (ri, road) in table.road_order.iter().enumerate() {
            for (ci, code) in table.action_columns[ri].iter().enumerate() {
                for _ in 0..row.counts[ri][ci] {
                    let scheduled_time = t0 + rng.gen::<f64>() * bucket;
                    let turns = code.turns();
                    let action = if turns.len() > 1 {
                        turns[rng.gen_range(0..turns.len())]
                    } else {
                        turns[0]
                    };
                    let class = if rng.gen::<f64>() < cav_ratio {
                        VehicleClass::Auto
                    } else {
                        VehicleClass::Human
                    };
                    out.push(SpawnEvent {
                        scheduled_time,
                        road: *road,
                        action,
                        class,
                        bucket: b,
                        column: ci,
                        draw: out.len(),
                    });
                }
            }
        }
    }
    let road_rank = |r: Cardinal| table.road_index(r).unwrap_or(usize::MAX);
    out.sort_by(|a, b| {
        a.scheduled_time
            .total_cmp(&b.scheduled_time)
            .then(road_rank(a.road).cmp(&road_rank(b.road)))
            .then(a.action.cmp(&b.action))
            .then(a.draw.cmp(&b.draw))
    });
    out
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("no {class} lane on road {road} allows a {action:?} movement")]
pub struct NoLaneForAction {
    pub class: VehicleClass,
    pub road: Cardinal,
    pub action: TurnKind,
}

/// Pick the eligible incoming lane with the shortest queue, ties to the
/// leftmost.
pub fn resolve_spawn_lane(
    event: &SpawnEvent,
    model: &IntersectionModel,
    queue_len: impl Fn(usize) -> usize,
) -> Result<usize, NoLaneForAction> {
    let to = destination(event.road, event.action);
    model
        .allowed_lanes(event.class, event.road, to)
        .iter()
        .map(|&(lane, _)| (queue_len(lane), lane))
        .min()
        .map(|(_, lane)| lane)
        .ok_or(NoLaneForAction {
            class: event.class,
            road: event.road,
            action: event.action,
        })
}

/// What the spawner needs to know about the road network.
pub trait SpawnSite {
    /// Vehicles currently queued or approaching on a lane.
    fn lane_load(&self, road: Cardinal, lane: usize) -> usize;
    /// Entry speed if the lane's spawn region is clear, `None` otherwise.
    fn spawn_speed(&self, road: Cardinal, lane: usize) -> Option<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spawn {
    pub event: SpawnEvent,
    pub lane: usize,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    event: SpawnEvent,
    lane: usize,
}

/// Seconds a due spawn may wait before the run is flagged for spillback.
pub const DEFAULT_SPILLBACK_WAIT: f64 = 5.0;

#[derive(Debug, Clone)]
pub struct SpawnQueue {
    events: Vec<SpawnEvent>,
    next: usize,
    pending: VecDeque<Pending>,
    spillback: bool,
    spillback_wait: f64,
    deferrals: usize,
    spawned: usize,
    rejected: Vec<(SpawnEvent, NoLaneForAction)>,
}

impl SpawnQueue {
    pub fn new(events: Vec<SpawnEvent>) -> Self {
        SpawnQueue {
            events,
            next: 0,
            pending: VecDeque::new(),
            spillback: false,
            spillback_wait: DEFAULT_SPILLBACK_WAIT,
            deferrals: 0,
            spawned: 0,
            rejected: Vec::new(),
        }
    }

    /// A due event that waits longer than `secs` for room marks spillback.
    /// Shorter waits happen whenever two arrivals fall closer together than
    /// a vehicle length allows.
    pub fn with_spillback_wait(mut self, secs: f64) -> Self {
        self.spillback_wait = secs;
        self
    }

    /// Ticks on which a due event could not be placed.
    pub fn deferrals(&self) -> usize {
        self.deferrals
    }

    pub fn scheduled(&self) -> usize {
        self.events.len()
    }

    pub fn spawned(&self) -> usize {
        self.spawned
    }

    /// Due but not yet placed on the road.
    pub fn waiting(&self) -> usize {
        self.pending.len()
    }

    /// Not yet due.
    pub fn future(&self) -> usize {
        self.events.len() - self.next
    }

    pub fn rejected(&self) -> &[(SpawnEvent, NoLaneForAction)] {
        &self.rejected
    }

    pub fn is_drained(&self) -> bool {
        self.next == self.events.len() && self.pending.is_empty()
    }

    pub fn spillback_occurred(&self) -> bool {
        self.spillback
    }

    /// Roads with vehicles due but still waiting for room.
    pub fn waiting_on(&self, road: Cardinal) -> bool {
        self.pending.iter().any(|p| p.event.road == road)
    }

    /// Due events waiting for room, with their lanes.
    pub fn pending(&self) -> impl Iterator<Item = (&SpawnEvent, usize)> {
        self.pending.iter().map(|p| (&p.event, p.lane))
    }

    /// Scheduled time of the next event not yet due.
    pub fn next_due(&self) -> Option<f64> {
        self.events.get(self.next).map(|e| e.scheduled_time)
    }

    fn pending_on(&self, road: Cardinal, lane: usize) -> usize {
        self.pending
            .iter()
            .filter(|p| p.event.road == road && p.lane == lane)
            .count()
    }

    /// Release every event due by `t`. Lanes are fixed when an event falls
    /// due; events then leave in order per lane, one per lane per tick.
    pub fn step(&mut self, t: f64, model: &IntersectionModel, site: &impl SpawnSite) -> Vec<Spawn> {
        while self.next < self.events.len() && self.events[self.next].scheduled_time <= t {
            let event = self.events[self.next];
            self.next += 1;
            let load = |lane| site.lane_load(event.road, lane) + self.pending_on(event.road, lane);
            match resolve_spawn_lane(&event, model, load) {
                Ok(lane) => self.pending.push_back(Pending { event, lane }),
                Err(e) => self.rejected.push((event, e)),
            }
        }
        let mut out = Vec::new();
        let mut used: Vec<(Cardinal, usize)> = Vec::new();
        let mut keep = VecDeque::with_capacity(self.pending.len());
        while let Some(p) = self.pending.pop_front() {
            let key = (p.event.road, p.lane);
            let speed = if used.contains(&key) {
                None
            } else {
                used.push(key);
                site.spawn_speed(p.event.road, p.lane)
            };
            match speed {
                Some(speed) => {
                    self.spawned += 1;
                    out.push(Spawn {
                        event: p.event,
                        lane: p.lane,
                        speed,
                    });
                }
                None => {
                    self.deferrals += 1;
                    if t - p.event.scheduled_time > self.spillback_wait {
                        self.spillback = true;
                    }
                    keep.push_back(p);
                }
            }
        }
        self.pending = keep;
        out
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum VlhError {
    #[error("window of {window} s is longer than the {span} s table span")]
    WindowExceedsSpan { window: f64, span: f64 },
    #[error("window must cover at least one bucket and lanes must be positive")]
    Degenerate,
}

/// Vehicles per hour per lane: mean over the whole table, and the highest
/// and lowest over sliding windows aligned to bucket boundaries.
pub fn compute_vlh(
    table: &DemandTable,
    incoming_lanes: usize,
    window: f64,
) -> Result<(f64, f64, f64), VlhError> {
    let span = table.span();
    if window > span + 1e-9 {
        return Err(VlhError::WindowExceedsSpan { window, span });
    }
    let bucket = table.bucket_length();
    let w = (window / bucket).round() as usize;
    if w == 0 || incoming_lanes == 0 {
        return Err(VlhError::Degenerate);
    }
    let lanes = incoming_lanes as f64;
    let totals = table.bucket_totals();
    let all: u64 = totals.iter().sum();
    let average = all as f64 / lanes / (span / 3600.0);
    let hours = w as f64 * bucket / 3600.0;
    let mut peak = f64::NEG_INFINITY;
    let mut low = f64::INFINITY;
    let mut sum: u64 = totals[..w].iter().sum();
    for i in 0..=totals.len() - w {
        if i > 0 {
            sum = sum + totals[i + w - 1] - totals[i - 1];
        }
        let rate = sum as f64 / lanes / hours;
        peak = peak.max(rate);
        low = low.min(rate);
    }
    Ok((average, peak, low))
}
