//! Symmetric 90° cross with per-road lane counts, speed limits, reservation
//! horizons and per-class turning profiles.
//!
//! Coordinates: the box is centred on the origin, x grows eastwards and y
//! northwards. Traffic keeps to the right, so for a road whose direction of
//! travel is `d` the lanes sit on the right-hand side of the median, lane 0
//! being the one nearest the median (leftmost from the driver's seat).

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::IntersectionSpecDoc;
use crate::geometry::Vec2;

/// Lane width used to size the box.
pub const LANE_WIDTH: f64 = 3.7;

/// Direction of travel of a road.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Cardinal {
    North,
    East,
    South,
    West,
}

impl Cardinal {
    pub const ALL: [Cardinal; 4] = [
        Cardinal::North,
        Cardinal::East,
        Cardinal::South,
        Cardinal::West,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn unit(self) -> Vec2 {
        match self {
            Cardinal::North => Vec2::new(0.0, 1.0),
            Cardinal::East => Vec2::new(1.0, 0.0),
            Cardinal::South => Vec2::new(0.0, -1.0),
            Cardinal::West => Vec2::new(-1.0, 0.0),
        }
    }

    pub fn opposite(self) -> Cardinal {
        match self {
            Cardinal::North => Cardinal::South,
            Cardinal::East => Cardinal::West,
            Cardinal::South => Cardinal::North,
            Cardinal::West => Cardinal::East,
        }
    }

    /// Heading after a left turn.
    pub fn left_of(self) -> Cardinal {
        match self {
            Cardinal::North => Cardinal::West,
            Cardinal::East => Cardinal::North,
            Cardinal::South => Cardinal::East,
            Cardinal::West => Cardinal::South,
        }
    }

    /// Heading after a right turn.
    pub fn right_of(self) -> Cardinal {
        match self {
            Cardinal::North => Cardinal::East,
            Cardinal::East => Cardinal::South,
            Cardinal::South => Cardinal::West,
            Cardinal::West => Cardinal::North,
        }
    }

    pub fn is_north_south(self) -> bool {
        matches!(self, Cardinal::North | Cardinal::South)
    }

    pub fn name(self) -> &'static str {
        match self {
            Cardinal::North => "NORTH",
            Cardinal::East => "EAST",
            Cardinal::South => "SOUTH",
            Cardinal::West => "WEST",
        }
    }

    pub fn letter(self) -> char {
        self.name().as_bytes()[0] as char
    }

    pub fn from_name(s: &str) -> Option<Cardinal> {
        Cardinal::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
    }

    pub fn from_letter(s: &str) -> Option<Cardinal> {
        let s = s.trim();
        Cardinal::ALL
            .into_iter()
            .find(|c| s.len() == 1 && c.letter().eq_ignore_ascii_case(&s.chars().next().unwrap()))
    }
}

impl fmt::Display for Cardinal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Left is the crossing turn, right the non-crossing one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TurnKind {
    Left,
    Through,
    Right,
}

impl TurnKind {
    pub const ALL: [TurnKind; 3] = [TurnKind::Left, TurnKind::Through, TurnKind::Right];

    pub fn letter(self) -> char {
        match self {
            TurnKind::Left => 'L',
            TurnKind::Through => 'T',
            TurnKind::Right => 'R',
        }
    }

    pub fn from_letter(c: char) -> Option<TurnKind> {
        match c.to_ascii_uppercase() {
            'L' => Some(TurnKind::Left),
            'T' => Some(TurnKind::Through),
            'R' => Some(TurnKind::Right),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VehicleClass {
    Human,
    Auto,
}

impl VehicleClass {
    pub fn name(self) -> &'static str {
        match self {
            VehicleClass::Human => "HUMAN",
            VehicleClass::Auto => "AUTO",
        }
    }

    pub fn from_name(s: &str) -> Option<VehicleClass> {
        match s.trim() {
            "HUMAN" => Some(VehicleClass::Human),
            "AUTO" => Some(VehicleClass::Auto),
            _ => None,
        }
    }
}

impl fmt::Display for VehicleClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Lane assignment policy used to regenerate turning profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TurnPolicy {
    Current,
    Permissive,
    Restrictive,
}

impl TurnPolicy {
    pub fn letter(self) -> char {
        match self {
            TurnPolicy::Current => 'C',
            TurnPolicy::Permissive => 'P',
            TurnPolicy::Restrictive => 'R',
        }
    }

    pub fn from_letter(s: &str) -> Option<TurnPolicy> {
        match s.trim().to_ascii_lowercase().as_str() {
            "c" | "current" => Some(TurnPolicy::Current),
            "p" | "permissive" => Some(TurnPolicy::Permissive),
            "r" | "restrictive" => Some(TurnPolicy::Restrictive),
            _ => None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("u-turn from {0} is not supported")]
    UTurnUnsupported(Cardinal),
    #[error("no road entry for {0}")]
    MissingRoad(Cardinal),
    #[error("road {0}: speed limit and reservation horizon must be positive")]
    InvalidRoad(Cardinal),
    #[error("intersection has no lanes at all")]
    Degenerate,
    #[error(
        "{class} {from}->{to}: lane pair ({in_lane},{out_lane}) is outside the road's lane counts"
    )]
    InconsistentLaneIndex {
        class: VehicleClass,
        from: Cardinal,
        to: Cardinal,
        in_lane: usize,
        out_lane: usize,
    },
    #[error("{class} {from}->{to}: incoming lane {in_lane} is mapped more than once")]
    DuplicateIncomingLane {
        class: VehicleClass,
        from: Cardinal,
        to: Cardinal,
        in_lane: usize,
    },
    #[error("{class} may not turn {from}->{to} from lane {in_lane}")]
    MovementNotAllowed {
        class: VehicleClass,
        from: Cardinal,
        to: Cardinal,
        in_lane: usize,
    },
}

/// Classify a movement on the 90° cross by the headings before and after.
pub fn classify_turn(from: Cardinal, to: Cardinal) -> Result<TurnKind, ModelError> {
    if to == from {
        Ok(TurnKind::Through)
    } else if to == from.left_of() {
        Ok(TurnKind::Left)
    } else if to == from.right_of() {
        Ok(TurnKind::Right)
    } else {
        Err(ModelError::UTurnUnsupported(from))
    }
}

/// Heading after performing `turn` from a road travelling `from`.
pub fn destination(from: Cardinal, turn: TurnKind) -> Cardinal {
    match turn {
        TurnKind::Left => from.left_of(),
        TurnKind::Through => from,
        TurnKind::Right => from.right_of(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    pub direction: Cardinal,
    pub incoming_lanes: usize,
    pub outgoing_lanes: usize,
    /// m/s
    pub speed_limit: f64,
    /// Seconds into the future a reservation may be requested for.
    pub reservation_horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MovementKey {
    pub class: VehicleClass,
    pub from: Cardinal,
    pub to: Cardinal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaneMapping {
    pub vehicle_class: VehicleClass,
    pub from_direction: Cardinal,
    pub to_direction: Cardinal,
    /// (incoming lane, outgoing lane), both counted from the left.
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TrajectoryKey {
    pub from: Cardinal,
    pub in_lane: usize,
    pub to: Cardinal,
    pub out_lane: usize,
}

impl fmt::Display for TrajectoryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}->{}{}",
            self.from.letter(),
            self.in_lane,
            self.to.letter(),
            self.out_lane
        )
    }
}

/// Extent of the conflict box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxGeometry {
    pub lane_width: f64,
    /// Half extent along x (set by the north/south roads).
    pub half_x: f64,
    /// Half extent along y (set by the east/west roads).
    pub half_y: f64,
}

impl BoxGeometry {
    fn half_along(&self, d: Cardinal) -> f64 {
        if d.is_north_south() {
            self.half_y
        } else {
            self.half_x
        }
    }

    fn lane_offset(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    /// Centre of the stop line of incoming lane `lane` on road `d`.
    pub fn entry_point(&self, d: Cardinal, lane: usize) -> Vec2 {
        d.unit() * -self.half_along(d) + d.unit().right() * self.lane_offset(lane)
    }

    /// Centre of the box edge where outgoing lane `lane` of road `d` starts.
    pub fn exit_point(&self, d: Cardinal, lane: usize) -> Vec2 {
        d.unit() * self.half_along(d) + d.unit().right() * self.lane_offset(lane)
    }

    /// Distance across the box along the travel axis of `d`.
    pub fn depth(&self, d: Cardinal) -> f64 {
        2.0 * self.half_along(d)
    }

    pub fn width(&self) -> f64 {
        2.0 * self.half_x
    }

    pub fn height(&self) -> f64 {
        2.0 * self.half_y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Segment {
    Line {
        start: Vec2,
        dir: Vec2,
        length: f64,
    },
    Arc {
        center: Vec2,
        radius: f64,
        start_angle: f64,
        /// Signed; positive is counter-clockwise.
        sweep: f64,
    },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Line { length, .. } => length,
            Segment::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn pose(&self, s: f64) -> (Vec2, Vec2) {
        match *self {
            Segment::Line { start, dir, .. } => (start + dir * s, dir),
            Segment::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let theta = start_angle + sweep.signum() * s / radius;
                let radial = Vec2::new(theta.cos(), theta.sin());
                let heading = if sweep > 0.0 {
                    radial.left()
                } else {
                    radial.right()
                };
                (center + radial * radius, heading)
            }
        }
    }
}

/// Path through the box from a stop line to an outgoing lane.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub key: TrajectoryKey,
    pub turn: TurnKind,
    segments: Vec<Segment>,
    length: f64,
}

impl Trajectory {
    fn new(key: TrajectoryKey, turn: TurnKind, segments: Vec<Segment>) -> Self {
        let length = segments.iter().map(Segment::length).sum();
        Trajectory {
            key,
            turn,
            segments,
            length,
        }
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn start(&self) -> Vec2 {
        self.pose_at(0.0).0
    }

    pub fn end(&self) -> Vec2 {
        self.pose_at(self.length).0
    }

    /// Position and unit heading at arc length `s`. Outside `[0, length]`
    /// the path is extended straight along the entry / exit heading.
    pub fn pose_at(&self, s: f64) -> (Vec2, Vec2) {
        if s <= 0.0 {
            let (p, h) = self.segments[0].pose(0.0);
            return (p + h * s, h);
        }
        let mut rest = s;
        for seg in &self.segments {
            let len = seg.length();
            if rest <= len {
                return seg.pose(rest);
            }
            rest -= len;
        }
        let last = self.segments.last().expect("trajectory has segments");
        let (p, h) = last.pose(last.length());
        (p + h * rest, h)
    }

    /// Largest arc radius on the path (infinite for straight paths).
    pub fn min_radius(&self) -> f64 {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Arc { radius, .. } => Some(*radius),
                Segment::Line { .. } => None,
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn line(a: Vec2, b: Vec2) -> Option<Segment> {
    let d = b - a;
    let length = d.norm();
    (length > 1e-9).then(|| Segment::Line {
        start: a,
        dir: d * (1.0 / length),
        length,
    })
}

/// Geometric path for a lane pair. Throughs are straight segments; turns
/// are a quarter circle tangent to both lanes, padded with straight pieces
/// when the two legs differ in length.
pub fn build_trajectory(geom: &BoxGeometry, key: TrajectoryKey) -> Result<Trajectory, ModelError> {
    let turn = classify_turn(key.from, key.to)?;
    let p = geom.entry_point(key.from, key.in_lane);
    let q = geom.exit_point(key.to, key.out_lane);
    let segments = match turn {
        TurnKind::Through => vec![line(p, q).expect("entry and exit differ")],
        TurnKind::Left | TurnKind::Right => {
            let u1 = key.from.unit();
            let u2 = key.to.unit();
            // Corner where the entry line meets the exit line.
            let corner = p + u1 * (q - p).dot(u1);
            let leg_in = (corner - p).dot(u1);
            let leg_out = (q - corner).dot(u2);
            let radius = leg_in.min(leg_out);
            let arc_start = corner - u1 * radius;
            let arc_end = corner + u2 * radius;
            let (normal, sweep) = if turn == TurnKind::Left {
                (u1.left(), FRAC_PI_2)
            } else {
                (u1.right(), -FRAC_PI_2)
            };
            let center = arc_start + normal * radius;
            let from_center = arc_start - center;
            let mut segs = Vec::with_capacity(3);
            segs.extend(line(p, arc_start));
            segs.push(Segment::Arc {
                center,
                radius,
                start_angle: from_center.y.atan2(from_center.x),
                sweep,
            });
            segs.extend(line(arc_end, q));
            segs
        }
    };
    Ok(Trajectory::new(key, turn, segments))
}

/// Validated intersection: four roads, turning profiles and trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionModel {
    roads: [RoadSpec; 4],
    mappings: BTreeMap<MovementKey, Vec<(usize, usize)>>,
    geometry: BoxGeometry,
    trajectories: BTreeMap<TrajectoryKey, Trajectory>,
}

/// Build a model from a parsed intersection document.
pub fn build_model(doc: &IntersectionSpecDoc) -> Result<IntersectionModel, ModelError> {
    let mut roads: [Option<RoadSpec>; 4] = [None; 4];
    for r in &doc.roads {
        if !(r.speed_limit > 0.0 && r.reservation_horizon > 0.0) {
            return Err(ModelError::InvalidRoad(r.direction));
        }
        roads[r.direction.index()] = Some(*r);
    }
    let mut full = [roads[0].unwrap_or_else(|| placeholder(Cardinal::North)); 4];
    for d in Cardinal::ALL {
        full[d.index()] = roads[d.index()].ok_or(ModelError::MissingRoad(d))?;
    }
    let mut mappings: BTreeMap<MovementKey, Vec<(usize, usize)>> = BTreeMap::new();
    for block in &doc.directions {
        classify_turn(block.from, block.to)?;
        for v in &block.vehicles {
            let key = MovementKey {
                class: v.class,
                from: block.from,
                to: block.to,
            };
            mappings
                .entry(key)
                .or_default()
                .extend(v.pairs.iter().copied());
        }
    }
    IntersectionModel::from_parts(full, mappings)
}

fn placeholder(d: Cardinal) -> RoadSpec {
    RoadSpec {
        direction: d,
        incoming_lanes: 0,
        outgoing_lanes: 0,
        speed_limit: 1.0,
        reservation_horizon: 1.0,
    }
}

impl IntersectionModel {
    /// Assemble a model from roads (indexed by [`Cardinal::index`]) and
    /// lane mappings, checking every invariant.
    pub fn from_parts(
        roads: [RoadSpec; 4],
        mut mappings: BTreeMap<MovementKey, Vec<(usize, usize)>>,
    ) -> Result<Self, ModelError> {
        if roads
            .iter()
            .all(|r| r.incoming_lanes + r.outgoing_lanes == 0)
        {
            return Err(ModelError::Degenerate);
        }
        for (key, pairs) in mappings.iter_mut() {
            classify_turn(key.from, key.to)?;
            pairs.sort_unstable();
            let k = roads[key.from.index()].incoming_lanes;
            let m = roads[key.to.index()].outgoing_lanes;
            for w in pairs.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(ModelError::DuplicateIncomingLane {
                        class: key.class,
                        from: key.from,
                        to: key.to,
                        in_lane: w[0].0,
                    });
                }
            }
            if let Some(&(i, o)) = pairs.iter().find(|(i, o)| *i >= k || *o >= m) {
                return Err(ModelError::InconsistentLaneIndex {
                    class: key.class,
                    from: key.from,
                    to: key.to,
                    in_lane: i,
                    out_lane: o,
                });
            }
        }
        mappings.retain(|_, p| !p.is_empty());
        let lanes = |pred: &dyn Fn(Cardinal) -> bool| {
            roads
                .iter()
                .filter(|r| pred(r.direction))
                .map(|r| r.incoming_lanes.max(r.outgoing_lanes))
                .max()
                .unwrap_or(0)
                .max(1)
        };
        let geometry = BoxGeometry {
            lane_width: LANE_WIDTH,
            half_x: lanes(&|d| d.is_north_south()) as f64 * LANE_WIDTH,
            half_y: lanes(&|d| !d.is_north_south()) as f64 * LANE_WIDTH,
        };
        let mut model = IntersectionModel {
            roads,
            mappings,
            geometry,
            trajectories: BTreeMap::new(),
        };
        model.rebuild_trajectories()?;
        Ok(model)
    }

    fn rebuild_trajectories(&mut self) -> Result<(), ModelError> {
        let mut trajectories = BTreeMap::new();
        for (key, pairs) in &self.mappings {
            for &(i, o) in pairs {
                let tk = TrajectoryKey {
                    from: key.from,
                    in_lane: i,
                    to: key.to,
                    out_lane: o,
                };
                if let std::collections::btree_map::Entry::Vacant(e) = trajectories.entry(tk) {
                    e.insert(build_trajectory(&self.geometry, tk)?);
                }
            }
        }
        self.trajectories = trajectories;
        Ok(())
    }

    pub fn road(&self, d: Cardinal) -> &RoadSpec {
        &self.roads[d.index()]
    }

    pub fn roads(&self) -> &[RoadSpec; 4] {
        &self.roads
    }

    pub fn geometry(&self) -> &BoxGeometry {
        &self.geometry
    }

    /// Most lanes on any single side of any road.
    pub fn max_lanes(&self) -> usize {
        self.roads
            .iter()
            .map(|r| r.incoming_lanes.max(r.outgoing_lanes))
            .max()
            .unwrap_or(1)
            .max(1)
    }

    pub fn incoming_lane_total(&self) -> usize {
        self.roads.iter().map(|r| r.incoming_lanes).sum()
    }

    pub fn mappings(&self) -> impl Iterator<Item = LaneMapping> + '_ {
        self.mappings.iter().map(|(k, pairs)| LaneMapping {
            vehicle_class: k.class,
            from_direction: k.from,
            to_direction: k.to,
            pairs: pairs.clone(),
        })
    }

    /// Exact lane pairs a class may use for a movement; empty if disallowed.
    pub fn allowed_lanes(
        &self,
        class: VehicleClass,
        from: Cardinal,
        to: Cardinal,
    ) -> Vec<(usize, usize)> {
        self.mappings
            .get(&MovementKey { class, from, to })
            .cloned()
            .unwrap_or_default()
    }

    /// Trajectory a vehicle of `class` takes from `in_lane` for the movement.
    pub fn trajectory(
        &self,
        class: VehicleClass,
        from: Cardinal,
        to: Cardinal,
        in_lane: usize,
    ) -> Result<&Trajectory, ModelError> {
        let out = self
            .mappings
            .get(&MovementKey { class, from, to })
            .and_then(|p| p.iter().find(|(i, _)| *i == in_lane))
            .map(|&(_, o)| o)
            .ok_or(ModelError::MovementNotAllowed {
                class,
                from,
                to,
                in_lane,
            })?;
        Ok(&self.trajectories[&TrajectoryKey {
            from,
            in_lane,
            to,
            out_lane: out,
        }])
    }

    pub fn trajectory_by_key(&self, key: &TrajectoryKey) -> Option<&Trajectory> {
        self.trajectories.get(key)
    }

    /// Every trajectory implied by any mapping, one per lane pair.
    pub fn trajectories(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajectories.values()
    }

    /// Replace the mappings of `class` with those generated by `policy`.
    /// The other class keeps its mappings.
    pub fn apply_turn_policy(&self, policy: TurnPolicy, class: VehicleClass) -> IntersectionModel {
        if policy == TurnPolicy::Current {
            return self.clone();
        }
        let mut mappings: BTreeMap<MovementKey, Vec<(usize, usize)>> = self
            .mappings
            .iter()
            .filter(|(k, _)| k.class != class)
            .map(|(k, v)| (*k, v.clone()))
            .collect();
        for from in Cardinal::ALL {
            let k = self.road(from).incoming_lanes;
            if k == 0 {
                continue;
            }
            for turn in TurnKind::ALL {
                let to = destination(from, turn);
                let m = self.road(to).outgoing_lanes;
                if m == 0 {
                    continue;
                }
                let pairs = match policy {
                    TurnPolicy::Permissive => permissive_pairs(k, m),
                    TurnPolicy::Restrictive => restrictive_pairs(turn, k, m),
                    TurnPolicy::Current => unreachable!(),
                };
                mappings.insert(MovementKey { class, from, to }, pairs);
            }
        }
        let mut model = self.clone();
        model.mappings = mappings;
        model
            .rebuild_trajectories()
            .expect("generated mappings are within lane bounds");
        model
    }
}

/// Every incoming lane takes the movement, paired leftmost-to-leftmost.
pub fn permissive_pairs(incoming: usize, outgoing: usize) -> Vec<(usize, usize)> {
    if outgoing == 0 {
        return Vec::new();
    }
    (0..incoming).map(|i| (i, i.min(outgoing - 1))).collect()
}

/// Incoming lanes dedicated to a single action: the leftmost lane turns
/// left, the rightmost turns right, interior lanes go through. Two-lane
/// approaches share the right lane between through and right; a single lane
/// serves everything.
pub fn restrictive_lanes(turn: TurnKind, incoming: usize) -> Vec<usize> {
    match incoming {
        0 => Vec::new(),
        1 => vec![0],
        2 => match turn {
            TurnKind::Left => vec![0],
            TurnKind::Through | TurnKind::Right => vec![1],
        },
        k => match turn {
            TurnKind::Left => vec![0],
            TurnKind::Right => vec![k - 1],
            TurnKind::Through => (1..k - 1).collect(),
        },
    }
}

pub fn restrictive_pairs(turn: TurnKind, incoming: usize, outgoing: usize) -> Vec<(usize, usize)> {
    if outgoing == 0 {
        return Vec::new();
    }
    let lanes = restrictive_lanes(turn, incoming);
    match turn {
        // Right turns hug the right edge of the outgoing road.
        TurnKind::Right => {
            let n = lanes.len();
            lanes
                .iter()
                .enumerate()
                .map(|(j, &i)| (i, outgoing - 1 - (n - 1 - j).min(outgoing - 1)))
                .collect()
        }
        _ => lanes
            .iter()
            .enumerate()
            .map(|(j, &i)| (i, j.min(outgoing - 1)))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn symmetric(lanes: usize) -> IntersectionModel {
        let roads = Cardinal::ALL.map(|d| RoadSpec {
            direction: d,
            incoming_lanes: lanes,
            outgoing_lanes: lanes,
            speed_limit: 13.4,
            reservation_horizon: 10.0,
        });
        let mut mappings = BTreeMap::new();
        for from in Cardinal::ALL {
            for turn in TurnKind::ALL {
                for class in [VehicleClass::Human, VehicleClass::Auto] {
                    mappings.insert(
                        MovementKey {
                            class,
                            from,
                            to: destination(from, turn),
                        },
                        (0..lanes).map(|i| (i, i)).collect(),
                    );
                }
            }
        }
        IntersectionModel::from_parts(roads, mappings).unwrap()
    }

    #[test]
    fn classify_turn_cases() {
        assert_eq!(
            classify_turn(Cardinal::East, Cardinal::East),
            Ok(TurnKind::Through)
        );
        assert_eq!(
            classify_turn(Cardinal::East, Cardinal::North),
            Ok(TurnKind::Left)
        );
        assert_eq!(
            classify_turn(Cardinal::East, Cardinal::South),
            Ok(TurnKind::Right)
        );
        assert_eq!(
            classify_turn(Cardinal::East, Cardinal::West),
            Err(ModelError::UTurnUnsupported(Cardinal::East))
        );
        for from in Cardinal::ALL {
            for turn in TurnKind::ALL {
                assert_eq!(classify_turn(from, destination(from, turn)), Ok(turn));
            }
        }
    }

    #[test]
    fn symmetric_model_reaches_every_lane() {
        let m = symmetric(2);
        for d in Cardinal::ALL {
            for lane in 0..2 {
                assert!(m
                    .trajectories()
                    .any(|t| t.key.from == d && t.key.in_lane == lane));
                assert!(m
                    .trajectories()
                    .any(|t| t.key.to == d && t.key.out_lane == lane));
            }
        }
        assert_eq!(m.trajectories().count(), 4 * 3 * 2);
    }

    #[test]
    fn aligned_through_spans_box_depth() {
        let m = symmetric(2);
        let t = m
            .trajectory(VehicleClass::Human, Cardinal::East, Cardinal::East, 1)
            .unwrap();
        assert!((t.length() - m.geometry().depth(Cardinal::East)).abs() < 1e-9);
        assert!((t.length() - 4.0 * LANE_WIDTH).abs() < 1e-9);
    }

    #[test]
    fn left_turn_is_quarter_arc_when_legs_match() {
        // Symmetric box, E lane 0 -> N lane 0: legs are half + 0.5 W each.
        let m = symmetric(2);
        let t = m
            .trajectory(VehicleClass::Human, Cardinal::East, Cardinal::North, 0)
            .unwrap();
        let radius = 2.0 * LANE_WIDTH + 0.5 * LANE_WIDTH;
        assert!((t.length() - FRAC_PI_2 * radius).abs() < 1e-9);
        assert!((t.min_radius() - radius).abs() < 1e-9);
    }

    #[test]
    fn trajectory_endpoints_lie_on_lanes() {
        let m = symmetric(3);
        let g = *m.geometry();
        for t in m.trajectories() {
            let k = t.key;
            assert!(
                (t.start() - g.entry_point(k.from, k.in_lane)).norm() < 1e-9,
                "{k}"
            );
            assert!(
                (t.end() - g.exit_point(k.to, k.out_lane)).norm() < 1e-9,
                "{k}"
            );
            assert!(t.length() >= (t.end() - t.start()).norm() - 1e-9);
            let (_, h0) = t.pose_at(0.0);
            let (_, h1) = t.pose_at(t.length());
            assert!((h0 - k.from.unit()).norm() < 1e-9);
            assert!((h1 - k.to.unit()).norm() < 1e-9);
        }
    }

    #[test]
    fn unequal_legs_get_straight_padding() {
        let m = symmetric(3);
        // E lane 2 -> N lane 0: the exit leg is longer than the entry leg.
        let g = *m.geometry();
        let t = build_trajectory(
            &g,
            TrajectoryKey {
                from: Cardinal::East,
                in_lane: 2,
                to: Cardinal::North,
                out_lane: 0,
            },
        )
        .unwrap();
        let leg_in = g.half_x + 0.5 * LANE_WIDTH;
        let leg_out = g.half_y + 2.5 * LANE_WIDTH;
        let r = leg_in.min(leg_out);
        let expected = (leg_in - r) + (leg_out - r) + FRAC_PI_2 * r;
        assert!((t.length() - expected).abs() < 1e-9);
    }

    #[test]
    fn permissive_pairs_cover_every_lane_once() {
        for k in 1..=5 {
            for m in 1..=4 {
                let p = permissive_pairs(k, m);
                let ins: Vec<_> = p.iter().map(|x| x.0).collect();
                assert_eq!(ins, (0..k).collect::<Vec<_>>());
                assert!(p.iter().all(|&(_, o)| o < m));
                // Order preserving.
                assert!(p.windows(2).all(|w| w[0].1 <= w[1].1));
            }
        }
    }

    #[test]
    fn restrictive_three_lanes() {
        assert_eq!(restrictive_lanes(TurnKind::Left, 3), vec![0]);
        assert_eq!(restrictive_lanes(TurnKind::Through, 3), vec![1]);
        assert_eq!(restrictive_lanes(TurnKind::Right, 3), vec![2]);
    }

    #[test]
    fn restrictive_exhaustive_small_cases() {
        for k in 1..=6 {
            let mut served = vec![0usize; k];
            for turn in TurnKind::ALL {
                let lanes = restrictive_lanes(turn, k);
                assert!(!lanes.is_empty(), "every movement keeps a lane (k={k})");
                for l in lanes {
                    served[l] += 1;
                }
            }
            // Every lane gets an action; with three or more lanes exactly one.
            assert!(served.iter().all(|&c| c >= 1));
            if k >= 3 {
                assert!(served.iter().all(|&c| c == 1), "k={k} {served:?}");
            }
            for m in 1..=4 {
                for turn in TurnKind::ALL {
                    let pairs = restrictive_pairs(turn, k, m);
                    assert!(pairs.iter().all(|&(i, o)| i < k && o < m));
                    let mut ins: Vec<_> = pairs.iter().map(|p| p.0).collect();
                    ins.dedup();
                    assert_eq!(ins.len(), pairs.len());
                }
                if k >= 3 {
                    assert_eq!(
                        restrictive_pairs(TurnKind::Right, k, m).last().unwrap().1,
                        m - 1
                    );
                }
            }
        }
    }

    #[test]
    fn policies_keep_mapping_invariants() {
        let base = symmetric(3);
        for policy in [
            TurnPolicy::Current,
            TurnPolicy::Permissive,
            TurnPolicy::Restrictive,
        ] {
            for class in [VehicleClass::Human, VehicleClass::Auto] {
                let m = base.apply_turn_policy(policy, class);
                // Rebuilding through from_parts re-checks bounds and 1-to-1.
                let rebuilt = IntersectionModel::from_parts(
                    *m.roads(),
                    m.mappings()
                        .map(|lm| {
                            (
                                MovementKey {
                                    class: lm.vehicle_class,
                                    from: lm.from_direction,
                                    to: lm.to_direction,
                                },
                                lm.pairs,
                            )
                        })
                        .collect(),
                );
                assert!(rebuilt.is_ok(), "{policy:?} {class:?}");
                let other = match class {
                    VehicleClass::Human => VehicleClass::Auto,
                    VehicleClass::Auto => VehicleClass::Human,
                };
                for from in Cardinal::ALL {
                    for to in [from, from.left_of(), from.right_of()] {
                        assert_eq!(
                            m.allowed_lanes(other, from, to),
                            base.allowed_lanes(other, from, to)
                        );
                    }
                }
            }
        }
        assert_eq!(
            base.apply_turn_policy(TurnPolicy::Current, VehicleClass::Human),
            base
        );
    }

    #[test]
    fn removed_lanes_never_referenced() {
        // Drop one outgoing lane on WEST and incoming lane on SOUTH, as in a
        // lane removed from the symmetric layout.
        let mut roads = symmetric(2).roads;
        roads[Cardinal::West.index()].outgoing_lanes = 1;
        roads[Cardinal::South.index()].incoming_lanes = 1;
        let m = IntersectionModel::from_parts(roads, BTreeMap::new()).unwrap();
        for policy in [TurnPolicy::Permissive, TurnPolicy::Restrictive] {
            let p = m.apply_turn_policy(policy, VehicleClass::Human);
            for t in p.trajectories() {
                if t.key.to == Cardinal::West {
                    assert_eq!(t.key.out_lane, 0);
                }
                if t.key.from == Cardinal::South {
                    assert_eq!(t.key.in_lane, 0);
                }
            }
        }
    }
}
