#![allow(dead_code)]

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use hybrid_aim_core::agents::{Limits, VehicleDims};
use hybrid_aim_core::config::{
    parse_demand_table, parse_signal_program, MovementCode, SignalProgramDoc,
};
use hybrid_aim_core::intersection::{
    build_trajectory, BoxGeometry, Cardinal, TrajectoryKey, TurnKind, LANE_WIDTH,
};
use hybrid_aim_core::reservation::{
    tiles_for, Cell, Corridor, ReservationManager, ReservationRequest, TileGrid, DEFAULT_BUFFER,
};
use hybrid_aim_core::signal::{
    codes_conflict, static_conflicts, Color, Controller, ControllerMode,
};
use hybrid_aim_core::sim::{simulate, RunParams, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DT: f64 = 0.02;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn read(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap()
}

/// The synthetic cross with the given demand file.
pub fn synthetic(demand: &str) -> Scenario {
    Scenario::load(
        &fixture("synthetic_intersection.xml"),
        &fixture("synthetic_signals.xml"),
        &fixture(demand),
    )
    .unwrap()
}

pub fn excerpt() -> Scenario {
    Scenario::load(
        &fixture("excerpt_intersection.xml"),
        &fixture("excerpt_signals.xml"),
        &fixture("excerpt_demand.csv"),
    )
    .unwrap()
}

pub fn params(cav_ratio: f64, seed: u64) -> RunParams {
    RunParams {
        cav_ratio,
        seed,
        ..RunParams::default()
    }
}

// ---------------------------------------------------------------- signals

pub const MODES: [ControllerMode; 4] = [
    ControllerMode::FIXED,
    ControllerMode::ACTUATED,
    ControllerMode {
        actuated: false,
        adaptive: true,
    },
    ControllerMode {
        actuated: true,
        adaptive: true,
    },
];

fn green(d: Cardinal, c: MovementCode, rng: &mut ChaCha8Rng) -> String {
    let min = rng.gen_range(2..8) as f64;
    let max = min + rng.gen_range(0..30) as f64;
    let gap = rng.gen_range(1..6) as f64;
    format!(
        "<green>{}, {}, {gap}, {min}, {max}</green>",
        d.letter(),
        c.as_str()
    )
}

fn clearance(d: Cardinal, c: MovementCode, rng: &mut ChaCha8Rng) -> String {
    format!(
        "<yellow>{l}, {c}, {y}</yellow><red>{l}, {c}, {r}</red>",
        l = d.letter(),
        c = c.as_str(),
        y = rng.gen_range(3..6),
        r = rng.gen_range(1..4)
    )
}

/// One barrier group of one ring: the left of `left_from` and the through
/// of its opposite, in random order; the left is sometimes omitted.
fn group(left_from: Cardinal, barrier: &str, rng: &mut ChaCha8Rng) -> String {
    let mut phases = vec![(left_from.opposite(), MovementCode::Through)];
    if rng.gen_bool(0.8) {
        phases.push((left_from, MovementCode::Cross));
    }
    if rng.gen_bool(0.5) {
        phases.reverse();
    }
    let mut s = String::new();
    let n = phases.len();
    for (i, (d, c)) in phases.into_iter().enumerate() {
        s += &green(d, c, rng);
        if i + 1 < n {
            s += &clearance(d, c, rng);
        } else {
            let _ = write!(s, "<barrier id=\"{barrier}\"></barrier>");
        }
    }
    s
}

/// A random dual-ring program: north-south movements before the first
/// barrier, east-west after, with random orders, omissions and timings.
pub fn random_program(rng: &mut ChaCha8Rng) -> SignalProgramDoc {
    let (ns, ew) = if rng.gen_bool(0.5) {
        (Cardinal::North, Cardinal::East)
    } else {
        (Cardinal::South, Cardinal::West)
    };
    let mut xml = String::from("<root>");
    for ring in 0..2 {
        let (a, b) = if ring == 0 {
            (ns, ew)
        } else {
            (ns.opposite(), ew.opposite())
        };
        xml += "<ring>";
        xml += &group(a, "b1", rng);
        xml += &group(b, "b2", rng);
        xml += "</ring>";
    }
    for b in ["b1", "b2"] {
        let _ = write!(
            xml,
            "<barrier id=\"{b}\">{}, {}</barrier>",
            rng.gen_range(3..6),
            rng.gen_range(1..4)
        );
    }
    xml += "</root>";
    let doc = parse_signal_program(&xml).unwrap();
    assert!(static_conflicts(&doc).is_empty(), "{xml}");
    doc
}

/// Step `doc` for `ticks` with random detections and check the safety
/// rules; returns a description of the first failure.
pub fn check_signal_run(
    doc: &SignalProgramDoc,
    mode: ControllerMode,
    ticks: i64,
    rng: &mut ChaCha8Rng,
) -> Result<(), String> {
    let mut c = Controller::new(doc, mode, DT).map_err(|e| e.to_string())?;
    let rate = rng.gen_range(0.0..0.2);
    let movements: Vec<(Cardinal, TurnKind)> = Cardinal::ALL
        .iter()
        .flat_map(|&d| TurnKind::ALL.iter().map(move |&t| (d, t)))
        .collect();
    let mut det = Vec::new();
    for _ in 0..ticks {
        det.clear();
        for &m in &movements {
            if rng.gen_bool(rate) {
                det.push(m);
            }
        }
        c.step(&det);
        let shown: Vec<(Cardinal, MovementCode)> = c
            .active_entries()
            .into_iter()
            .filter(|e| e.2 == Color::Green)
            .map(|e| (e.0, e.1))
            .collect();
        for (i, a) in shown.iter().enumerate() {
            for b in &shown[i + 1..] {
                if codes_conflict(a.0, a.1, b.0, b.1) {
                    return Err(format!("tick {}: {a:?} and {b:?} green together", c.now()));
                }
            }
        }
    }
    for g in c.green_log() {
        let len = g.end - g.start;
        let (lo, hi) = if mode.actuated {
            (g.min_ticks as i64, g.max_ticks as i64)
        } else {
            (g.max_ticks as i64, g.max_ticks as i64)
        };
        if len < lo - 1 || len > hi + 1 {
            return Err(format!(
                "green {g:?} lasted {len} ticks, bounds [{lo}, {hi}]"
            ));
        }
    }
    let rings = c.ring_count();
    for &x in c.barrier_crossings() {
        for r in 0..rings {
            let started = c.green_log().iter().any(|g| g.ring == r && g.start == x);
            let running = !c.green_log().iter().any(|g| g.ring == r && g.start >= x);
            if !started && !running {
                return Err(format!(
                    "ring {r} did not start a green at barrier tick {x}"
                ));
            }
        }
    }
    Ok(())
}

// ------------------------------------------------------------ reservation

pub fn small_geometry() -> BoxGeometry {
    BoxGeometry {
        lane_width: LANE_WIDTH,
        half_x: 2.0 * LANE_WIDTH,
        half_y: 2.0 * LANE_WIDTH,
    }
}

/// Two lanes each way, 4x4 tiles.
pub fn small_corridors() -> Vec<Corridor> {
    let g = small_geometry();
    let grid = TileGrid::new(4, g.half_x, g.half_y, DEFAULT_BUFFER);
    let mut out = Vec::new();
    for from in Cardinal::ALL {
        for turn in TurnKind::ALL {
            let to = hybrid_aim_core::intersection::destination(from, turn);
            let lane = match turn {
                TurnKind::Left => 0,
                TurnKind::Through => 1,
                TurnKind::Right => 1,
            };
            let key = TrajectoryKey {
                from,
                in_lane: lane,
                to,
                out_lane: lane,
            };
            let t = build_trajectory(&g, key).unwrap();
            let cap = if turn == TurnKind::Through { 13.4 } else { 9.0 };
            out.push(Corridor::new(&t, &grid, VehicleDims::default(), cap));
        }
    }
    out
}

pub fn request(vehicle: u32, c: &Corridor, entry: i64, speed: f64) -> ReservationRequest {
    ReservationRequest {
        vehicle,
        key: c.key,
        turn: c.turn,
        entry_tick: entry,
        entry_speed: speed,
        cells: tiles_for(
            c,
            entry,
            speed,
            VehicleDims::default(),
            DEFAULT_BUFFER,
            &Limits::default(),
            DT,
        ),
    }
}

/// Admit `reqs` in order by plain set intersection against everything
/// admitted so far.
pub fn brute_force(horizon: f64, now: i64, reqs: &[&ReservationRequest]) -> Vec<bool> {
    let sets: Vec<HashSet<Cell>> = reqs
        .iter()
        .map(|r| r.cells.iter().copied().collect())
        .collect();
    let order: Vec<usize> = (0..reqs.len()).collect();
    brute_force_sets(horizon, now, reqs, &sets, &order)
}

fn brute_force_sets(
    horizon: f64,
    now: i64,
    reqs: &[&ReservationRequest],
    sets: &[HashSet<Cell>],
    order: &[usize],
) -> Vec<bool> {
    let mut taken: Vec<usize> = Vec::new();
    order
        .iter()
        .map(|&i| {
            if (reqs[i].entry_tick - now) as f64 * DT > horizon + 1e-9 {
                return false;
            }
            if taken.iter().any(|&t| !sets[t].is_disjoint(&sets[i])) {
                return false;
            }
            taken.push(i);
            true
        })
        .collect()
}

pub fn managed(horizon: f64, now: i64, reqs: &[&ReservationRequest]) -> Vec<bool> {
    let mut m = ReservationManager::new([horizon; 4], DT).without_log();
    reqs.iter()
        .map(|r| m.request(now, (*r).clone(), None).is_ok())
        .collect()
}

/// Heap's algorithm over every ordering of `n` items.
pub fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize])) {
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    f(&a);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            f(&a);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Random request sets checked against the brute-force checker in every
/// order; returns the number of orderings compared.
pub fn reservation_oracle(sets: usize, size: usize, seed: u64) -> Result<usize, String> {
    let cs = small_corridors();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut compared = 0;
    for _ in 0..sets {
        let reqs: Vec<ReservationRequest> = (0..size)
            .map(|i| {
                let c = &cs[rng.gen_range(0..cs.len())];
                request(i as u32, c, rng.gen_range(0..160), rng.gen_range(3.0..13.4))
            })
            .collect();
        let all: Vec<&ReservationRequest> = reqs.iter().collect();
        let sets: Vec<HashSet<Cell>> = reqs
            .iter()
            .map(|r| r.cells.iter().copied().collect())
            .collect();
        let mut err = None;
        for_each_permutation(size, |order| {
            if err.is_some() {
                return;
            }
            let want = brute_force_sets(2.5, 0, &all, &sets, order);
            let ordered: Vec<&ReservationRequest> = order.iter().map(|&i| &reqs[i]).collect();
            let got = managed(2.5, 0, &ordered);
            if want != got {
                err = Some(format!(
                    "order {order:?}: manager {got:?}, brute force {want:?}"
                ));
            }
            compared += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
    }
    Ok(compared)
}

// ------------------------------------------------------------- scenarios

/// A demand table with `counts[road][L,T,R]` in each of `rows` buckets of
/// five minutes starting at 7:00 AM; roads in N, E, S, W order.
pub fn demand_csv(rows: &[[[u32; 3]; 4]]) -> String {
    let order = [
        Cardinal::East,
        Cardinal::West,
        Cardinal::North,
        Cardinal::South,
    ];
    let mut s = order
        .iter()
        .map(|d| d.name())
        .collect::<Vec<_>>()
        .join(", ");
    s += "\nL,T,R,Total,L,T,R,Total,L,T,R,Total,L,T,R,Total,Vehicle Total\n";
    for (i, row) in rows.iter().enumerate() {
        let minutes = 5 * i;
        let _ = write!(s, "7:{minutes:02} AM");
        let mut total = 0;
        for d in order {
            let c = row[d.index()];
            let sum: u32 = c.iter().sum();
            total += sum;
            let _ = write!(s, ",{},{},{},{sum}", c[0], c[1], c[2]);
        }
        let _ = writeln!(s, ",{total}");
    }
    s
}

/// The synthetic intersection under `signals` (XML) with `demand` (CSV).
pub fn custom(signals: &str, demand: &str) -> Scenario {
    let mut sc = synthetic("synthetic_demand.csv");
    sc.signals = parse_signal_program(signals).unwrap();
    sc.demand = parse_demand_table(demand).unwrap();
    sc
}

/// Random 30-minute demand on the synthetic intersection.
pub fn random_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let rows: Vec<[[u32; 3]; 4]> = (0..6)
        .map(|_| {
            std::array::from_fn(|_| {
                [
                    rng.gen_range(0..12),
                    rng.gen_range(5..30),
                    rng.gen_range(0..12),
                ]
            })
        })
        .collect();
    let mut sc = synthetic("synthetic_demand.csv");
    sc.demand = parse_demand_table(&demand_csv(&rows)).unwrap();
    sc
}

/// A single through vehicle from the east whose movement is red for the
/// first `red` seconds, or green from the start when `red` is zero.
pub fn red_hold(red: f64) -> Scenario {
    let (first, second) = if red > 0.0 { ("W", "E") } else { ("E", "W") };
    let hold = if red > 0.0 { red - 6.0 } else { 60.0 };
    let signals = format!(
        "<root><ring><green>{first}, t, 1, {hold}, {hold}</green><yellow>{first}, t, 4</yellow><red>{first}, t, 2</red>\
         <green>{second}, t, 1, 900, 900</green><yellow>{second}, t, 4</yellow><red>{second}, t, 2</red></ring></root>"
    );
    let mut row = [[0; 3]; 4];
    row[Cardinal::East.index()] = [0, 1, 0];
    custom(&signals, &demand_csv(&[row, [[0; 3]; 4]]))
}

/// A seed whose single arrival comes early enough to meet the red.
pub fn red_hold_seed(latest: f64) -> u64 {
    let sc = red_hold(60.0);
    (1..)
        .find(|&s| {
            hybrid_aim_core::demand::expand_schedule(&sc.demand, s, 0.0)[0].scheduled_time < latest
        })
        .unwrap()
}

/// (delay on red, hold measured against the green counterfactual).
pub fn red_hold_delay(red: f64, seed: u64) -> (f64, f64) {
    let p = params(0.0, seed);
    let held = simulate(&red_hold(red), &p).unwrap();
    let free = simulate(&red_hold(0.0), &p).unwrap();
    let (h, f) = (held.vehicles[0], free.vehicles[0]);
    let delay = hybrid_aim_core::sim::delay_of(&h).unwrap();
    (delay, h.exit_time.unwrap() - f.exit_time.unwrap())
}

// ----------------------------------------------------------------- config

macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}

/// Parse the three excerpt fixtures, round-trip them and check the values
/// quoted in the excerpts.
pub fn config_fidelity() -> Result<(), String> {
    use hybrid_aim_core::config::{parse_intersection_spec, RingEntry};

    let sig = parse_signal_program(&read("excerpt_signals.xml")).map_err(|e| e.to_string())?;
    let again = parse_signal_program(&sig.to_xml()).map_err(|e| e.to_string())?;
    ensure!(
        again == sig,
        "signal program is not a round-trip fixed point"
    );
    ensure!(
        again.to_xml() == sig.to_xml(),
        "signal serialisation is not stable"
    );
    match &sig.rings[0][0] {
        RingEntry::Green {
            direction,
            code,
            gap,
            min_green,
            max_green,
        } => {
            ensure!(
                *direction == Cardinal::North && *code == MovementCode::Cross,
                "first green is {direction} {code:?}"
            );
            ensure!(
                *gap == 5.0 && *min_green == 4.0 && *max_green == 6.339671678,
                "first green tuple is {gap}/{min_green}/{max_green}"
            );
        }
        e => return Err(format!("first ring entry is {e:?}")),
    }

    let spec =
        parse_intersection_spec(&read("excerpt_intersection.xml")).map_err(|e| e.to_string())?;
    let again = parse_intersection_spec(&spec.to_xml()).map_err(|e| e.to_string())?;
    ensure!(
        again == spec,
        "intersection is not a round-trip fixed point"
    );
    let east = spec.road(Cardinal::East).ok_or("no EAST road")?;
    ensure!(
        east.incoming_lanes == 3 && east.outgoing_lanes == 1,
        "EAST lanes {}/{}",
        east.incoming_lanes,
        east.outgoing_lanes
    );
    ensure!(east.speed_limit == 13.4, "EAST speed {}", east.speed_limit);
    ensure!(
        east.reservation_horizon == 14.925373134328358,
        "EAST horizon {}",
        east.reservation_horizon
    );

    let demand = parse_demand_table(&read("excerpt_demand.csv")).map_err(|e| e.to_string())?;
    let again = parse_demand_table(&demand.to_csv()).map_err(|e| e.to_string())?;
    ensure!(again == demand, "demand is not a round-trip fixed point");
    ensure!(
        demand.bucket_length() == 300.0,
        "bucket length {}",
        demand.bucket_length()
    );

    let report = hybrid_aim_core::validate_cross_references(&spec, &sig, &demand);
    ensure!(report.is_ok(), "fixtures do not cross-validate:\n{report}");
    Ok(())
}

/// Latest accepted entry tick per road for the excerpt horizons at 0.02 s,
/// worked out by hand: 746 x 0.02 = 14.92 <= 14.925..., 747 x 0.02 = 14.94.
pub const EXCERPT_LAST_TICK: [(Cardinal, i64); 4] = [
    (Cardinal::East, 746),
    (Cardinal::South, 497),
    (Cardinal::West, 641),
    (Cardinal::North, 497),
];

/// Requests at and just past each road's horizon, from two clock offsets.
pub fn horizon_rejections() -> Result<usize, String> {
    use hybrid_aim_core::intersection::build_model;
    use hybrid_aim_core::reservation::{CorridorSet, Rejection};

    let sc = excerpt();
    let model = build_model(&sc.intersection).map_err(|e| e.to_string())?;
    let grid = TileGrid::for_model(&model, DEFAULT_BUFFER);
    let cs = CorridorSet::new(&model, grid, VehicleDims::default(), &Limits::default());
    let horizons = Cardinal::ALL.map(|d| model.road(d).reservation_horizon);
    let mut checked = 0;
    for (road, last) in EXCERPT_LAST_TICK {
        let c = cs
            .iter()
            .find(|c| c.key.from == road)
            .ok_or("road without trajectories")?;
        for now in [0, 12_345] {
            for (offset, ok) in [
                (last - 1, true),
                (last, true),
                (last + 1, false),
                (last + 50, false),
            ] {
                let mut m = ReservationManager::new(horizons, DT);
                let got = m.request(now, request(1, c, now + offset, 10.0), None);
                let want_err = if ok {
                    None
                } else {
                    Some(Rejection::HorizonExceeded)
                };
                ensure!(
                    got.err() == want_err,
                    "{road} entry +{offset} ticks at now={now}: got {got:?}"
                );
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Compare the unknown-traffic HV region with the union of single-entry
/// occupancies over every integer entry tick of every window.
pub fn hv_region_oracle(steps: &[i64]) -> Result<usize, String> {
    use hybrid_aim_core::intersection::{build_model, VehicleClass};
    use hybrid_aim_core::reservation::{hv_blocked_region, CorridorSet, HvTraffic, RegionParams};
    use std::collections::{BTreeMap, BTreeSet};

    let sc = synthetic("synthetic_demand.csv");
    let model = build_model(&sc.intersection).map_err(|e| e.to_string())?;
    let limits = Limits::default();
    let dims = VehicleDims::default();
    let cs = CorridorSet::new(
        &model,
        TileGrid::for_model(&model, DEFAULT_BUFFER),
        dims,
        &limits,
    );
    let mut c =
        Controller::new(&sc.signals, ControllerMode::FIXED, DT).map_err(|e| e.to_string())?;
    let lookahead = 600;
    let mut compared = 0;
    for &target in steps {
        while c.now() < target {
            c.step(&[]);
        }
        let now = c.now();
        let region = hv_blocked_region(
            &c,
            &model,
            &cs,
            HvTraffic::Unknown,
            RegionParams {
                now,
                dt: DT,
                lookahead,
                limits,
            },
        );
        let mut want: BTreeMap<i64, BTreeSet<u16>> = BTreeMap::new();
        for w in c.green_windows(lookahead) {
            for corr in cs.iter() {
                let k = corr.key;
                let hv = model
                    .allowed_lanes(VehicleClass::Human, k.from, k.to)
                    .contains(&(k.in_lane, k.out_lane));
                if !hv || k.from != w.direction || !w.code.covers(corr.turn) {
                    continue;
                }
                for e in w.start.max(now)..=w.end {
                    for (tile, slot) in
                        tiles_for(corr, e, corr.cap, dims, DEFAULT_BUFFER, &limits, DT)
                    {
                        want.entry(slot).or_default().insert(tile);
                    }
                }
            }
        }
        for slot in now..=now + lookahead {
            let got = region.tiles_at(&cs, slot);
            let exp = want.remove(&slot).unwrap_or_default();
            ensure!(
                got == exp,
                "now {now} slot {slot}: region {got:?}, union {exp:?}"
            );
            compared += 1;
        }
    }
    Ok(compared)
}
