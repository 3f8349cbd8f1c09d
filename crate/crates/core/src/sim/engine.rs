use std::collections::BTreeMap;

use super::{HvKnowledge, RunError, RunParams, RunSummary, Scenario, VehicleRecord};
use crate::agents::{
    advance, cav_decide, go_accel, hv_decide, travel_time, CavGrant, DriveContext, Leader,
    ReservationAction,
};
use crate::config::MovementCode;
use crate::demand::{compute_vlh, expand_schedule, SpawnEvent, SpawnQueue, SpawnSite};
use crate::intersection::{
    build_model, destination, Cardinal, IntersectionModel, TrajectoryKey, TurnKind, VehicleClass,
};
use crate::reservation::{
    hv_blocked_region, CorridorSet, HvCheck, HvObservation, HvRegion, HvTraffic, ObservedKind,
    Profile, RegionParams, ReleaseReason, ReservationId, ReservationManager, ReservationRequest,
    TileGrid,
};
use crate::signal::{Color, Controller, GreenRecord};

/// Leader index and bumper gap.
type Lead = (usize, f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Gate {
    Open,
    /// Behind a granted CAV entering at this tick.
    After(i64),
    /// Behind a CAV without a reservation; `None` while it waits to spawn.
    Held(Option<usize>),
}

fn observation(key: TrajectoryKey, kind: ObservedKind) -> HvObservation {
    HvObservation {
        key,
        kind,
        not_before: None,
    }
}

/// Safety counters gathered while running. Everything except the request
/// tallies should stay at zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InvariantReport {
    /// A follower's front passed its leader's rear.
    pub rear_end_overlaps: usize,
    /// An HV crossed the stop line on red.
    pub red_entries: usize,
    /// A CAV crossed the stop line without a reservation.
    pub ungranted_entries: usize,
    /// A CAV crossed more than one tick away from its reserved entry.
    pub entry_mismatches: usize,
    /// A CAV's buffered body touched a cell it does not hold.
    pub tile_escapes: usize,
    /// An HV's body touched a cell held by a CAV from another lane.
    pub hv_tile_intrusions: usize,
    /// A signal change put an active reservation inside the HV region.
    pub grant_conflicts: usize,
    /// Granted CAVs pushed off their plan by a leader.
    pub cav_deviations: usize,
    pub requests: usize,
    pub grants: usize,
    pub cancellations: usize,
}

impl InvariantReport {
    pub fn safety_violations(&self) -> usize {
        self.rear_end_overlaps
            + self.red_entries
            + self.ungranted_entries
            + self.entry_mismatches
            + self.tile_escapes
            + self.hv_tile_intrusions
    }
}

/// A movement's indication at the tick it changed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalSample {
    pub tick: i64,
    pub direction: Cardinal,
    pub code: MovementCode,
    pub color: Color,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub vehicles: Vec<VehicleRecord>,
    pub signals: Vec<SignalSample>,
    pub green_log: Vec<GreenRecord>,
    pub reservations: ReservationManager,
    pub invariants: InvariantReport,
}

#[derive(Debug, Clone)]
struct Route {
    key: TrajectoryKey,
    turn: TurnKind,
    corridor: usize,
    /// Approach length; the stop line sits at this route coordinate.
    approach: f64,
    length: f64,
    limit: f64,
    cap: f64,
    horizon: f64,
    free_flow: f64,
}

#[derive(Debug, Clone)]
struct Vehicle {
    id: u32,
    class: VehicleClass,
    event: SpawnEvent,
    lane: usize,
    route: usize,
    s: f64,
    v: f64,
    spawn_time: f64,
    entry_time: Option<f64>,
    exit_time: Option<f64>,
    yellow_go: Option<bool>,
    grant: Option<ReservationId>,
    next_request: i64,
    deviated: bool,
}

struct World<'m> {
    model: &'m IntersectionModel,
    params: RunParams,
    corridors: CorridorSet,
    routes: Vec<Route>,
    route_of: BTreeMap<(VehicleClass, Cardinal, usize, TurnKind), usize>,
    approach: [f64; 4],
    vehicles: Vec<Vehicle>,
    /// Vehicle indices per (road, lane) in arrival order.
    lanes: Vec<Vec<Vec<usize>>>,
    live: Vec<usize>,
}

impl SpawnSite for World<'_> {
    fn lane_load(&self, road: Cardinal, lane: usize) -> usize {
        let a = self.approach[road.index()];
        self.lanes[road.index()][lane]
            .iter()
            .filter(|&&i| self.vehicles[i].s <= a)
            .count()
    }

    fn spawn_speed(&self, road: Cardinal, lane: usize) -> Option<f64> {
        let limit = self.model.road(road).speed_limit;
        let l = &self.params.options.limits;
        match self.lanes[road.index()][lane].last() {
            None => Some(limit),
            Some(&j) => {
                let o = &self.vehicles[j];
                let gap = o.s - self.params.options.dims.length;
                if gap < l.min_gap {
                    None
                } else {
                    Some(limit.min((2.0 * l.b_max * (gap - l.min_gap) + o.v * o.v).sqrt()))
                }
            }
        }
    }
}

fn free_flow_time(route: &Route, params: &RunParams) -> f64 {
    let dt = params.tick;
    let target = route.approach + route.length;
    let mut ctx = DriveContext {
        speed: route.limit,
        to_line: route.approach,
        approach_speed: route.limit,
        inside_speed: route.cap,
        turning: route.turn != TurnKind::Through,
        limits: params.options.limits,
        dt,
    };
    let (mut s, mut k) = (0.0, 0u64);
    loop {
        ctx.speed = ctx.speed.max(0.0);
        ctx.to_line = route.approach - s;
        let a = go_accel(&ctx, None);
        let (ns, nv) = advance(s, ctx.speed, a, dt);
        if ns >= target {
            return (k as f64 + (target - s) / (ns - s)) * dt;
        }
        s = ns;
        ctx.speed = nv;
        k += 1;
    }
}

impl<'m> World<'m> {
    fn new(model: &'m IntersectionModel, params: RunParams) -> Self {
        let o = &params.options;
        let grid = TileGrid::for_model(model, o.buffer);
        let corridors = CorridorSet::new(model, grid, o.dims, &o.limits);
        let max_h = model
            .roads()
            .iter()
            .map(|r| r.reservation_horizon)
            .fold(0.0, f64::max);
        let mut approach = [0.0; 4];
        for d in Cardinal::ALL {
            let v = model.road(d).speed_limit;
            approach[d.index()] = o.min_approach.max(v * (max_h + LOOKAHEAD_MARGIN) + 10.0);
        }
        let mut routes = Vec::new();
        let mut by_key = BTreeMap::new();
        let mut route_of = BTreeMap::new();
        for class in [VehicleClass::Human, VehicleClass::Auto] {
            for from in Cardinal::ALL {
                for turn in TurnKind::ALL {
                    let to = destination(from, turn);
                    for (i, o_lane) in model.allowed_lanes(class, from, to) {
                        let key = TrajectoryKey {
                            from,
                            in_lane: i,
                            to,
                            out_lane: o_lane,
                        };
                        let idx = *by_key.entry(key).or_insert_with(|| {
                            let c = corridors
                                .index_of(&key)
                                .expect("every mapping has a trajectory");
                            let corr = corridors.by_index(c);
                            let road = model.road(from);
                            let mut r = Route {
                                key,
                                turn,
                                corridor: c,
                                approach: approach[from.index()],
                                length: corr.length(),
                                limit: road.speed_limit,
                                cap: corr.cap,
                                horizon: road.reservation_horizon,
                                free_flow: 0.0,
                            };
                            r.free_flow = free_flow_time(&r, &params);
                            routes.push(r);
                            routes.len() - 1
                        });
                        route_of.insert((class, from, i, turn), idx);
                    }
                }
            }
        }
        let lanes = Cardinal::ALL
            .iter()
            .map(|&d| vec![Vec::new(); model.road(d).incoming_lanes])
            .collect();
        World {
            model,
            params,
            corridors,
            routes,
            route_of,
            approach,
            vehicles: Vec::new(),
            lanes,
            live: Vec::new(),
        }
    }

    fn ctx(&self, v: &Vehicle) -> DriveContext {
        let r = &self.routes[v.route];
        DriveContext {
            speed: v.v,
            to_line: r.approach - v.s,
            approach_speed: r.limit,
            inside_speed: r.cap,
            turning: r.turn != TurnKind::Through,
            limits: self.params.options.limits,
            dt: self.params.tick,
        }
    }

    /// Nearest vehicle ahead that constrains `vi`: the next one on the
    /// approach, one on the same path, or one whose rear is still close to
    /// the stop line. Returns its index and the bumper gap.
    fn leader(&self, vi: usize) -> Option<(usize, f64)> {
        let me = &self.vehicles[vi];
        let list = &self.lanes[me.event.road.index()][me.lane];
        let pos = list.iter().position(|&i| i == vi)?;
        let a = self.routes[me.route].approach;
        let len = self.params.options.dims.length;
        let mut best: Option<(usize, f64)> = None;
        for &j in list[..pos].iter().rev() {
            let o = &self.vehicles[j];
            let on_approach = o.s <= a;
            if on_approach || o.route == me.route || o.s - len < a + NEAR_LINE {
                let gap = o.s - len - me.s;
                if best.is_none_or(|(_, g)| gap < g) {
                    best = Some((j, gap));
                }
            }
            if on_approach {
                break;
            }
        }
        best
    }

    /// No vehicle ahead in the lane except granted CAVs already past the
    /// line; an HV ahead must clear the box first.
    fn is_lane_head(&self, vi: usize) -> bool {
        let me = &self.vehicles[vi];
        let list = &self.lanes[me.event.road.index()][me.lane];
        let a = self.routes[me.route].approach;
        list.iter().take_while(|&&i| i != vi).all(|&i| {
            let o = &self.vehicles[i];
            o.s > a && o.class == VehicleClass::Auto
        })
    }

    /// Unhindered motion from the current state until the buffered body has
    /// left every tile; fronts in path coordinates.
    fn plan(&self, vi: usize, now: i64) -> Profile {
        let v = &self.vehicles[vi];
        let r = &self.routes[v.route];
        let corr = self.corridors.by_index(r.corridor);
        let o = &self.params.options;
        let (_, hi) = corr.front_span(o.dims, o.buffer);
        let mut ctx = self.ctx(v);
        let (mut s, mut speed) = (v.s, v.v);
        let mut fronts = vec![s - r.approach];
        let max_steps = ((r.horizon + 120.0) / self.params.tick) as usize;
        while s - r.approach - o.dims.length - o.buffer <= hi && fronts.len() < max_steps {
            ctx.speed = speed;
            ctx.to_line = r.approach - s;
            let a = go_accel(&ctx, None);
            (s, speed) = advance(s, speed, a, self.params.tick);
            fronts.push(s - r.approach);
        }
        Profile {
            start_tick: now,
            fronts,
        }
    }

    /// Every HV with the CAV, if any, that holds it back: the nearest CAV
    /// ahead of it in its lane that has not crossed the line yet.
    fn gated_observations(
        &self,
        spawner: &SpawnQueue,
        manager: &ReservationManager,
    ) -> Vec<(HvObservation, Gate)> {
        let mut out = Vec::new();
        let o = &self.params.options;
        let mut gates: BTreeMap<(usize, usize), Gate> = BTreeMap::new();
        for (road, lanes) in self.lanes.iter().enumerate() {
            for (lane, list) in lanes.iter().enumerate() {
                let mut gate = Gate::Open;
                for &i in list {
                    let v = &self.vehicles[i];
                    let r = &self.routes[v.route];
                    let front = v.s - r.approach;
                    if v.class == VehicleClass::Auto {
                        if front <= 0.0 {
                            gate = match v.grant.and_then(|id| manager.grant(id)) {
                                Some(g) => Gate::After(g.entry_tick),
                                None => Gate::Held(Some(i)),
                            };
                        }
                        continue;
                    }
                    let kind = if front <= 0.0 {
                        ObservedKind::Approaching { distance: -front }
                    } else if front - o.dims.length - o.buffer < r.length {
                        ObservedKind::Inside { front, speed: v.v }
                    } else {
                        continue;
                    };
                    let g = if front <= 0.0 { gate } else { Gate::Open };
                    out.push((observation(r.key, kind), g));
                }
                gates.insert((road, lane), gate);
            }
        }
        for (e, lane) in spawner.pending() {
            let gate = gates.entry((e.road.index(), lane)).or_insert(Gate::Open);
            if e.class == VehicleClass::Auto {
                *gate = Gate::Held(None);
                continue;
            }
            if let Some(&r) = self.route_of.get(&(e.class, e.road, lane, e.action)) {
                out.push((
                    observation(self.routes[r].key, ObservedKind::Pending),
                    *gate,
                ));
            }
        }
        out
    }

    fn region_of(
        &self,
        controller: &Controller,
        traffic: HvTraffic<'_>,
        now: i64,
        lookahead: i64,
    ) -> HvRegion {
        hv_blocked_region(
            controller,
            self.model,
            &self.corridors,
            traffic,
            RegionParams {
                now,
                dt: self.params.tick,
                lookahead,
                limits: self.params.options.limits,
            },
        )
    }

    /// HVs held back by an ungranted CAV cannot reach the box and are left out.
    fn region(
        &self,
        controller: &Controller,
        spawner: &SpawnQueue,
        manager: &ReservationManager,
        now: i64,
        lookahead: i64,
    ) -> HvRegion {
        match self.params.options.hv_knowledge {
            HvKnowledge::Unknown => self.region_of(controller, HvTraffic::Unknown, now, lookahead),
            HvKnowledge::Observed => {
                let obs: Vec<HvObservation> = self
                    .gated_observations(spawner, manager)
                    .into_iter()
                    .filter_map(|(mut ob, g)| match g {
                        Gate::Open => Some(ob),
                        Gate::After(t) => {
                            ob.not_before = Some(t as f64);
                            Some(ob)
                        }
                        Gate::Held(_) => None,
                    })
                    .collect();
                let traffic = HvTraffic::Observed {
                    vehicles: &obs,
                    approach_length: self.approach,
                };
                self.region_of(controller, traffic, now, lookahead)
            }
        }
    }

    /// The HVs `vi` releases once granted entry at `entry`.
    fn followers(
        &self,
        controller: &Controller,
        obs: &[(HvObservation, Gate)],
        vi: usize,
        entry: i64,
        now: i64,
        lookahead: i64,
    ) -> Option<HvRegion> {
        let mine: Vec<HvObservation> = obs
            .iter()
            .filter(|(_, g)| *g == Gate::Held(Some(vi)))
            .map(|(ob, _)| HvObservation {
                not_before: Some(entry as f64),
                ..*ob
            })
            .collect();
        if mine.is_empty() {
            return None;
        }
        let traffic = HvTraffic::Observed {
            vehicles: &mine,
            approach_length: self.approach,
        };
        Some(self.region_of(controller, traffic, now, lookahead))
    }

    /// Tiles touched by the body grown by `margin` while the front moves
    /// `s0 -> s1` (route coordinates).
    fn swept_tiles(&self, route: usize, s0: f64, s1: f64, margin: f64, out: &mut Vec<u16>) {
        let r = &self.routes[route];
        out.clear();
        self.corridors.by_index(r.corridor).tiles_in(
            s0 - r.approach - self.params.options.dims.length - margin,
            s1 - r.approach + margin,
            out,
        );
        out.sort_unstable();
        out.dedup();
    }
}

/// Lookahead past the longest horizon for HV windows, s.
const LOOKAHEAD_MARGIN: f64 = 10.0;
/// A vehicle whose rear is within this distance past the stop line still
/// constrains followers from its lane whatever path it takes.
const NEAR_LINE: f64 = 5.0;

const WATCHED: [(Cardinal, MovementCode); 12] = {
    let mut out = [(Cardinal::North, MovementCode::Cross); 12];
    let dirs = [
        Cardinal::North,
        Cardinal::East,
        Cardinal::South,
        Cardinal::West,
    ];
    let codes = [
        MovementCode::Cross,
        MovementCode::Through,
        MovementCode::CrossThrough,
    ];
    let mut i = 0;
    while i < 12 {
        out[i] = (dirs[i / 3], codes[i % 3]);
        i += 1;
    }
    out
};

/// Run one scenario to completion.
pub fn simulate(scenario: &Scenario, params: &RunParams) -> Result<RunOutput, RunError> {
    params.check()?;
    let base = build_model(&scenario.intersection)?;
    let model = base
        .apply_turn_policy(params.cav_policy, VehicleClass::Auto)
        .apply_turn_policy(params.hv_policy, VehicleClass::Human);
    let dt = params.tick;
    let o = params.options;
    let mut controller = Controller::new(&scenario.signals, params.mode, dt)?;
    controller.set_approach(|d, code| {
        let lanes: std::collections::BTreeSet<usize> = TurnKind::ALL
            .iter()
            .filter(|&&t| code.covers(t))
            .flat_map(|&t| model.allowed_lanes(VehicleClass::Human, d, destination(d, t)))
            .map(|(i, _)| i)
            .collect();
        (model.road(d).speed_limit, lanes.len())
    });

    let events = expand_schedule(&scenario.demand, params.seed, params.cav_ratio);
    let scheduled = events.len();
    let mut spawner = SpawnQueue::new(events).with_spillback_wait(o.spillback_wait);
    let mut world = World::new(&model, *params);
    let mut manager =
        ReservationManager::new(Cardinal::ALL.map(|d| model.road(d).reservation_horizon), dt);
    if !o.record_reservations {
        manager = manager.without_log();
    }
    let max_h = model
        .roads()
        .iter()
        .map(|r| r.reservation_horizon)
        .fold(0.0, f64::max);
    let lookahead = ((max_h + LOOKAHEAD_MARGIN) / dt).ceil() as i64;
    let backoff = (o.request_backoff / dt).round().max(1.0) as i64;
    let end_tick = ((scenario.demand.span() + o.drain_cap) / dt).ceil() as i64;
    let len = o.dims.length;

    let mut inv = InvariantReport::default();
    let mut samples = Vec::new();
    let mut shown: Vec<Color> = WATCHED
        .iter()
        .map(|&(d, c)| controller.indication_code(d, c))
        .collect();
    if o.record_signals {
        samples.extend(
            WATCHED
                .iter()
                .zip(&shown)
                .map(|(&(d, c), &color)| SignalSample {
                    tick: 0,
                    direction: d,
                    code: c,
                    color,
                }),
        );
    }
    let mut accels: Vec<(usize, f64, Option<Lead>)> = Vec::new();
    let mut detections: Vec<(Cardinal, TurnKind)> = Vec::new();
    let mut departed: Vec<usize> = Vec::new();
    let mut scratch = Vec::new();
    let mut k: i64 = 0;

    while k <= end_tick {
        let t = k as f64 * dt;
        if spawner.is_drained() && world.live.is_empty() {
            break;
        }

        for sp in spawner.step(t, &model, &world) {
            let class = sp.event.class;
            let Some(&route) =
                world
                    .route_of
                    .get(&(class, sp.event.road, sp.lane, sp.event.action))
            else {
                continue;
            };
            let idx = world.vehicles.len();
            world.vehicles.push(Vehicle {
                id: idx as u32,
                class,
                event: sp.event,
                lane: sp.lane,
                route,
                s: 0.0,
                v: sp.speed,
                spawn_time: t,
                entry_time: None,
                exit_time: None,
                yellow_go: None,
                grant: None,
                next_request: k,
                deviated: false,
            });
            world.lanes[sp.event.road.index()][sp.lane].push(idx);
            world.live.push(idx);
        }

        // Reservation requests, oldest vehicle first.
        let mut region: Option<HvRegion> = None;
        let mut gated = Vec::new();
        for li in 0..world.live.len() {
            let vi = world.live[li];
            let v = &world.vehicles[vi];
            if v.class != VehicleClass::Auto || v.grant.is_some() || v.next_request > k {
                continue;
            }
            let r = &world.routes[v.route];
            if v.s > r.approach || !world.is_lane_head(vi) {
                continue;
            }
            let soonest = travel_time(r.approach - v.s, v.v, o.limits.a_max, r.limit);
            if soonest > r.horizon + dt {
                continue;
            }
            let profile = world.plan(vi, k);
            let Some(entry) = profile.entry_tick() else {
                continue;
            };
            if (entry - k) as f64 * dt > r.horizon {
                continue;
            }
            let corr = world.corridors.by_index(r.corridor);
            let cells = crate::reservation::occupancy(corr, &profile, o.dims, o.buffer);
            let entry_speed = {
                let i = (entry - profile.start_tick) as usize;
                let (f0, f1) = (profile.fronts[i - 1], profile.fronts[i]);
                (f1 - f0) / dt
            };
            let req = ReservationRequest {
                vehicle: v.id,
                key: r.key,
                turn: r.turn,
                entry_tick: entry,
                entry_speed,
                cells,
            };
            if region.is_none() {
                region = Some(world.region(&controller, &spawner, &manager, k, lookahead));
                gated = match o.hv_knowledge {
                    HvKnowledge::Observed => world.gated_observations(&spawner, &manager),
                    HvKnowledge::Unknown => Vec::new(),
                };
            }
            let followers = world.followers(&controller, &gated, vi, entry, k, lookahead);
            let check = HvCheck {
                region: region.as_ref().expect("built above"),
                corridors: &world.corridors,
                followers: followers.as_ref(),
            };
            inv.requests += 1;
            match manager.request(k, req, Some(check)) {
                Ok(id) => {
                    inv.grants += 1;
                    world.vehicles[vi].grant = Some(id);
                    if followers.is_some() {
                        region = None;
                    }
                }
                Err(_) => world.vehicles[vi].next_request = k + backoff,
            }
        }

        // Decisions from this tick's snapshot.
        accels.clear();
        for &vi in &world.live {
            let v = &world.vehicles[vi];
            let ctx = world.ctx(v);
            let lead = world.leader(vi);
            let leader_of = |j: usize, gap: f64| Leader {
                gap,
                speed: world.vehicles[j].v,
            };
            let a = match v.class {
                VehicleClass::Human => {
                    let r = &world.routes[v.route];
                    let color = controller.indication(r.key.from, r.turn);
                    let mut latch = v.yellow_go;
                    let d = hv_decide(&ctx, lead.map(|(j, g)| leader_of(j, g)), color, &mut latch);
                    world.vehicles[vi].yellow_go = latch;
                    d.accel
                }
                VehicleClass::Auto => {
                    if v.grant.is_some() {
                        let hv_lead = lead
                            .filter(|&(j, _)| world.vehicles[j].class == VehicleClass::Human)
                            .map(|(j, g)| leader_of(j, g));
                        let d = cav_decide(&ctx, hv_lead, CavGrant::Granted);
                        let planned = go_accel(&ctx, None);
                        if d.action == ReservationAction::Cancel {
                            let id = world.vehicles[vi].grant.take().expect("granted");
                            let _ = manager.release(k, id, ReleaseReason::Cancelled);
                            world.vehicles[vi].next_request = k + backoff;
                            inv.cancellations += 1;
                        } else if d.accel < planned - 1e-9 && !world.vehicles[vi].deviated {
                            world.vehicles[vi].deviated = true;
                            inv.cav_deviations += 1;
                        }
                        d.accel
                    } else {
                        let grant = CavGrant::None {
                            entry_in: None,
                            horizon: 0.0,
                        };
                        cav_decide(&ctx, lead.map(|(j, g)| leader_of(j, g)), grant).accel
                    }
                }
            };
            accels.push((vi, a, lead));
        }

        // Integrate and collect crossings.
        detections.clear();
        departed.clear();
        let mut old_s = Vec::with_capacity(accels.len());
        for &(vi, a, _) in &accels {
            let v = &mut world.vehicles[vi];
            old_s.push(v.s);
            let (s, sp) = advance(v.s, v.v, a, dt);
            v.s = s;
            v.v = sp;
        }
        for (n, &(vi, _, lead)) in accels.iter().enumerate() {
            let s0 = old_s[n];
            let v = &world.vehicles[vi];
            let r = &world.routes[v.route];
            let (line, exit) = (r.approach, r.approach + r.length);
            let s1 = v.s;
            if s0 <= line && s1 > line {
                let te = t + dt * (line - s0) / (s1 - s0);
                detections.push((r.key.from, r.turn));
                match v.class {
                    VehicleClass::Human => {
                        if controller.indication(r.key.from, r.turn) == Color::Red {
                            inv.red_entries += 1;
                        }
                    }
                    VehicleClass::Auto => match v.grant.and_then(|g| manager.grant(g)) {
                        None => inv.ungranted_entries += 1,
                        Some(g) => {
                            if (g.entry_tick - (k + 1)).abs() > 1 {
                                inv.entry_mismatches += 1;
                            }
                        }
                    },
                }
                world.vehicles[vi].entry_time = Some(te);
            }
            if s0 < exit && s1 >= exit {
                let tx = t + dt * (exit - s0) / (s1 - s0);
                world.vehicles[vi].exit_time = Some(tx);
            }
            let v = &world.vehicles[vi];
            if v.s - len >= exit {
                departed.push(vi);
            }
            if o.check_invariants {
                if let Some((j, _)) = lead {
                    let gap = world.vehicles[j].s - len - world.vehicles[vi].s;
                    if gap < -1e-6 {
                        inv.rear_end_overlaps += 1;
                    }
                }
                let route = v.route;
                // CAVs must stay inside their buffered cells; an HV's bare body
                // must stay out of them.
                let margin = if v.class == VehicleClass::Auto {
                    o.buffer
                } else {
                    0.0
                };
                world.swept_tiles(route, s0, s1, margin, &mut scratch);
                if !scratch.is_empty() {
                    match v.class {
                        VehicleClass::Auto => {
                            if let Some(id) = v.grant {
                                if scratch
                                    .iter()
                                    .any(|&tile| manager.holder((tile, k)) != Some(id))
                                {
                                    inv.tile_escapes += 1;
                                }
                            }
                        }
                        VehicleClass::Human => {
                            let lane = (v.event.road, v.lane);
                            for &tile in &scratch {
                                if let Some(g) =
                                    manager.holder((tile, k)).and_then(|h| manager.grant(h))
                                {
                                    if (g.key.from, g.key.in_lane) != lane {
                                        inv.hv_tile_intrusions += 1;
                                        break;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        for &vi in &departed {
            if let Some(id) = world.vehicles[vi].grant.take() {
                let _ = manager.release(k + 1, id, ReleaseReason::Completed);
            }
            let v = &world.vehicles[vi];
            world.lanes[v.event.road.index()][v.lane].retain(|&i| i != vi);
            world.live.retain(|&i| i != vi);
        }

        controller.step(&detections);
        k += 1;

        let mut changed = false;
        for (n, &(d, c)) in WATCHED.iter().enumerate() {
            let color = controller.indication_code(d, c);
            if color != shown[n] {
                shown[n] = color;
                changed = true;
                if o.record_signals {
                    samples.push(SignalSample {
                        tick: k,
                        direction: d,
                        code: c,
                        color,
                    });
                }
            }
        }
        if changed && o.check_invariants && manager.active().next().is_some() {
            let region = world.region(&controller, &spawner, &manager, k, lookahead);
            for g in manager.active() {
                let exempt = Some((g.key.from, g.key.in_lane));
                if g.cells
                    .iter()
                    .filter(|c| c.1 >= k)
                    .any(|&c| c.1 <= region.until && region.blocks(&world.corridors, c, exempt))
                {
                    inv.grant_conflicts += 1;
                }
            }
        }
    }

    let records: Vec<VehicleRecord> = world
        .vehicles
        .iter()
        .map(|v| VehicleRecord {
            id: v.id,
            class: v.class,
            road: v.event.road,
            turn: v.event.action,
            lane: v.lane,
            scheduled_time: v.event.scheduled_time,
            spawn_time: v.spawn_time,
            entry_time: v.entry_time,
            exit_time: v.exit_time,
            free_flow_time: world.routes[v.route].free_flow,
        })
        .collect();

    let mean = |class: Option<VehicleClass>| -> (f64, usize) {
        let ds: Vec<f64> = records
            .iter()
            .filter(|r| class.is_none_or(|c| r.class == c))
            .filter_map(|r| super::delay_of(r).ok())
            .collect();
        if ds.is_empty() {
            (0.0, 0)
        } else {
            (ds.iter().sum::<f64>() / ds.len() as f64, ds.len())
        }
    };
    let (mean_delay, completed) = mean(None);
    let (mean_delay_human, completed_human) = mean(Some(VehicleClass::Human));
    let (mean_delay_auto, completed_auto) = mean(Some(VehicleClass::Auto));
    let unroutable = spawner.rejected().len();
    let summary = RunSummary {
        seed: params.seed,
        cav_ratio: params.cav_ratio,
        cav_policy: params.cav_policy,
        hv_policy: params.hv_policy,
        mode: params.mode,
        tick: dt,
        mean_delay,
        mean_delay_human,
        mean_delay_auto,
        scheduled,
        spawned: records.len(),
        completed,
        completed_human,
        completed_auto,
        in_system: records.len() - completed,
        never_spawned: scheduled - records.len(),
        unroutable,
        spillback: spawner.spillback_occurred(),
        vlh: compute_vlh(&scenario.demand, model.incoming_lane_total(), 3600.0).ok(),
        duration: k as f64 * dt,
    };
    Ok(RunOutput {
        summary,
        vehicles: records,
        signals: samples,
        green_log: controller.green_log().to_vec(),
        reservations: manager,
        invariants: inv,
    })
}
