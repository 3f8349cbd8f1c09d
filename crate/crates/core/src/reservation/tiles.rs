use std::collections::BTreeMap;

use crate::agents::{advance, free_accel, Limits, VehicleDims};
use crate::geometry::{Aabb, OrientedRect, Vec2};
use crate::intersection::{IntersectionModel, Trajectory, TrajectoryKey, TurnKind};

pub type Tile = u16;

/// A (tile, tick slot) pair. Slot `j` covers the motion from tick `j` to
/// tick `j + 1`.
pub type Cell = (Tile, i64);

/// Square-count grid laid over the conflict box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileGrid {
    side: usize,
    half_x: f64,
    half_y: f64,
    buffer: f64,
}

impl TileGrid {
    pub fn new(side: usize, half_x: f64, half_y: f64, buffer: f64) -> Self {
        assert!(side >= 1 && side * side <= Tile::MAX as usize);
        TileGrid {
            side,
            half_x,
            half_y,
            buffer,
        }
    }

    /// Two tiles per lane across the widest approach.
    pub fn for_model(model: &IntersectionModel, buffer: f64) -> Self {
        let g = model.geometry();
        TileGrid::new(2 * model.max_lanes().max(1), g.half_x, g.half_y, buffer)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn tile_count(&self) -> usize {
        self.side * self.side
    }

    pub fn buffer(&self) -> f64 {
        self.buffer
    }

    fn tile_size(&self) -> (f64, f64) {
        (
            2.0 * self.half_x / self.side as f64,
            2.0 * self.half_y / self.side as f64,
        )
    }

    pub fn tile_bounds(&self, t: Tile) -> Aabb {
        let (w, h) = self.tile_size();
        let (ix, iy) = (t as usize % self.side, t as usize / self.side);
        let min = Vec2::new(-self.half_x + ix as f64 * w, -self.half_y + iy as f64 * h);
        Aabb {
            min,
            max: Vec2::new(min.x + w, min.y + h),
        }
    }

    /// Tiles whose interior overlaps `rect`.
    pub fn touching(&self, rect: &OrientedRect, out: &mut Vec<Tile>) {
        let (w, h) = self.tile_size();
        let b = rect.bounds();
        let span = |lo: f64, hi: f64, half: f64, size: f64| {
            let a = ((lo + half) / size).floor().max(0.0) as i64;
            let z = ((hi + half) / size).ceil().min(self.side as f64) as i64;
            a..z
        };
        for iy in span(b.min.y, b.max.y, self.half_y, h) {
            for ix in span(b.min.x, b.max.x, self.half_x, w) {
                let t = (iy as usize * self.side + ix as usize) as Tile;
                let mut tb = self.tile_bounds(t);
                // Shared edges are not overlap.
                tb.min = tb.min + Vec2::new(1e-9, 1e-9);
                tb.max = tb.max - Vec2::new(1e-9, 1e-9);
                if rect.intersects(&tb) {
                    out.push(t);
                }
            }
        }
    }
}

/// Length of the pieces a body is cut into along its path.
pub const PIECE: f64 = 1.0;

/// Precomputed tiles for one trajectory. The path (extended straight past
/// both ends) is cut into [`PIECE`]-long pieces; a body covering any part of
/// a piece is taken to cover all of it.
#[derive(Debug, Clone)]
pub struct Corridor {
    pub key: TrajectoryKey,
    pub turn: TurnKind,
    /// Highest speed a vehicle keeps inside the box on this path.
    pub cap: f64,
    length: f64,
    first: i64,
    pieces: Vec<Vec<Tile>>,
    by_tile: Vec<Vec<i64>>,
}

impl Corridor {
    pub fn new(traj: &Trajectory, grid: &TileGrid, dims: VehicleDims, cap: f64) -> Self {
        let reach = dims.length + 2.0 * grid.buffer + 2.0 * PIECE;
        let first = (-reach / PIECE).floor() as i64;
        let last = ((traj.length() + reach) / PIECE).ceil() as i64;
        let r = traj.min_radius();
        let sag = if r.is_finite() {
            r * (1.0 - (PIECE / (2.0 * r)).cos())
        } else {
            0.0
        };
        let hw = 0.5 * dims.width + grid.buffer + sag;
        let mut pieces = Vec::with_capacity((last - first) as usize);
        let mut by_tile = vec![Vec::new(); grid.tile_count()];
        let mut scratch = Vec::new();
        for k in first..last {
            let (p0, h0) = traj.pose_at(k as f64 * PIECE);
            let (p1, _) = traj.pose_at((k + 1) as f64 * PIECE);
            scratch.clear();
            grid.touching(&OrientedRect::from_segment(p0, p1, hw, h0), &mut scratch);
            scratch.sort_unstable();
            scratch.dedup();
            for &t in &scratch {
                by_tile[t as usize].push(k);
            }
            pieces.push(scratch.clone());
        }
        Corridor {
            key: traj.key,
            turn: traj.turn,
            cap,
            length: traj.length(),
            first,
            pieces,
            by_tile,
        }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    fn piece_range(&self, s0: f64, s1: f64) -> Option<(i64, i64)> {
        if s1 < s0 {
            return None;
        }
        let lo = (s0 / PIECE).floor() as i64;
        let hi = (((s1 / PIECE).ceil() as i64) - 1).max(lo);
        let last = self.first + self.pieces.len() as i64 - 1;
        let (lo, hi) = (lo.max(self.first), hi.min(last));
        (lo <= hi).then_some((lo, hi))
    }

    /// Tiles covered by a body spanning path coordinates `[s0, s1]`.
    pub fn tiles_in(&self, s0: f64, s1: f64, out: &mut Vec<Tile>) {
        if let Some((lo, hi)) = self.piece_range(s0, s1) {
            for k in lo..=hi {
                out.extend_from_slice(&self.pieces[(k - self.first) as usize]);
            }
        }
    }

    pub fn touches(&self, tile: Tile, s0: f64, s1: f64) -> bool {
        let Some((lo, hi)) = self.piece_range(s0, s1) else {
            return false;
        };
        let ks = &self.by_tile[tile as usize];
        let i = ks.partition_point(|&k| k < lo);
        i < ks.len() && ks[i] <= hi
    }

    /// Front positions past which a body can no longer touch any tile.
    pub fn front_span(&self, dims: VehicleDims, buffer: f64) -> (f64, f64) {
        let lo = self.first as f64 * PIECE - buffer;
        let hi = (self.first + self.pieces.len() as i64) as f64 * PIECE + dims.length + buffer;
        (lo, hi)
    }
}

/// Every trajectory of a model with its corridor.
#[derive(Debug, Clone)]
pub struct CorridorSet {
    pub grid: TileGrid,
    pub dims: VehicleDims,
    corridors: Vec<Corridor>,
    index: BTreeMap<TrajectoryKey, usize>,
}

impl CorridorSet {
    pub fn new(
        model: &IntersectionModel,
        grid: TileGrid,
        dims: VehicleDims,
        limits: &Limits,
    ) -> Self {
        let mut corridors = Vec::new();
        let mut index = BTreeMap::new();
        for traj in model.trajectories() {
            let limit = model.road(traj.key.from).speed_limit;
            let cap = match traj.turn {
                TurnKind::Through => limit,
                _ => limit.min(limits.turn_speed),
            };
            index.insert(traj.key, corridors.len());
            corridors.push(Corridor::new(traj, &grid, dims, cap));
        }
        CorridorSet {
            grid,
            dims,
            corridors,
            index,
        }
    }

    pub fn get(&self, key: &TrajectoryKey) -> Option<&Corridor> {
        self.index.get(key).map(|&i| &self.corridors[i])
    }

    pub fn index_of(&self, key: &TrajectoryKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn by_index(&self, i: usize) -> &Corridor {
        &self.corridors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Corridor> {
        self.corridors.iter()
    }
}

/// Front positions (path coordinates) at consecutive ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub start_tick: i64,
    pub fronts: Vec<f64>,
}

impl Profile {
    /// First tick at which the front is past the stop line.
    pub fn entry_tick(&self) -> Option<i64> {
        self.fronts
            .iter()
            .position(|&f| f > 0.0)
            .map(|i| self.start_tick + i as i64)
    }
}

/// Cells swept by a body following `profile`, sorted and unique.
pub fn occupancy(
    corridor: &Corridor,
    profile: &Profile,
    dims: VehicleDims,
    buffer: f64,
) -> Vec<Cell> {
    let mut out = Vec::new();
    let mut tiles = Vec::new();
    for (j, w) in profile.fronts.windows(2).enumerate() {
        let (lo, hi) = if w[0] <= w[1] {
            (w[0], w[1])
        } else {
            (w[1], w[0])
        };
        tiles.clear();
        corridor.tiles_in(lo - dims.length - buffer, hi + buffer, &mut tiles);
        let slot = profile.start_tick + j as i64;
        out.extend(tiles.iter().map(|&t| (t, slot)));
    }
    out.sort_unstable_by_key(|&(t, s)| (s, t));
    out.dedup();
    out
}

/// Profile of a vehicle crossing the line at `entry_tick` with
/// `entry_speed`, then accelerating at `a_max` up to the corridor's cap. If
/// the entry speed already reaches the cap it is held at the cap.
pub fn entry_profile(
    corridor: &Corridor,
    entry_tick: i64,
    entry_speed: f64,
    dims: VehicleDims,
    buffer: f64,
    limits: &Limits,
    dt: f64,
) -> Profile {
    let (lo, hi) = corridor.front_span(dims, buffer);
    let v0 = entry_speed.min(corridor.cap);
    let constant = entry_speed >= corridor.cap;
    let pre = if v0 > 0.0 {
        ((-lo) / (v0 * dt)).ceil() as i64 + 1
    } else {
        1
    };
    let mut fronts = Vec::new();
    for k in -pre..0 {
        fronts.push(v0 * (k as f64 * dt));
    }
    let (mut f, mut v) = (0.0, v0);
    let mut k = 0i64;
    loop {
        let front = if constant { v0 * (k as f64 * dt) } else { f };
        fronts.push(front);
        if front - dims.length - buffer > hi {
            break;
        }
        if !constant {
            let a = free_accel(v, corridor.cap, limits, dt);
            (f, v) = advance(f, v, a, dt);
        }
        k += 1;
    }
    Profile {
        start_tick: entry_tick - pre,
        fronts,
    }
}

/// Cells a vehicle needs when it enters at `entry_tick` with `entry_speed`.
pub fn tiles_for(
    corridor: &Corridor,
    entry_tick: i64,
    entry_speed: f64,
    dims: VehicleDims,
    buffer: f64,
    limits: &Limits,
    dt: f64,
) -> Vec<Cell> {
    let p = entry_profile(corridor, entry_tick, entry_speed, dims, buffer, limits, dt);
    occupancy(corridor, &p, dims, buffer)
}
