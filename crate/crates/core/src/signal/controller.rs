use std::collections::HashMap;

use thiserror::Error;

use super::{AdaptiveTables, Color, ControllerMode};
use crate::config::{MovementCode, RingEntry, SignalProgramDoc};
use crate::intersection::{Cardinal, TurnKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("signal program has no rings")]
    NoRings,
    #[error("ring {ring} has no phases")]
    EmptyRing { ring: usize },
    #[error("ring {ring}, entry {entry}: green must be closed by yellow and red or by a barrier")]
    Malformed { ring: usize, entry: usize },
    #[error("barrier \"{id}\" has no definition")]
    MissingBarrierDef { id: String },
    #[error("ring {ring} visits barriers in a different order than ring 1")]
    BarrierOrderMismatch { ring: usize },
    #[error("tick length must be positive")]
    InvalidTick,
}

/// Whole ticks covering `secs`, tolerant of floating-point noise.
pub(crate) fn to_ticks(secs: f64, tick: f64) -> u32 {
    (secs / tick - 1e-9).ceil().max(0.0) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Params {
    gap: u32,
    min: u32,
    max: u32,
}

#[derive(Debug, Clone)]
struct Phase {
    direction: Cardinal,
    code: MovementCode,
    base: Params,
    min_secs: f64,
    yellow: u32,
    red: u32,
    /// Position in the barrier sequence when the phase is closed by a barrier.
    barrier: Option<usize>,
    flat: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Green,
    Yellow,
    Red,
    BarrierYellow,
    BarrierRed,
    Parked,
}

#[derive(Debug, Clone, Copy)]
struct RingState {
    phase: usize,
    stage: Stage,
    in_stage: u32,
    since_detection: u32,
    green_start: i64,
}

/// A finished green interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GreenRecord {
    pub ring: usize,
    pub phase: usize,
    pub start: i64,
    pub end: i64,
    pub min_ticks: u32,
    pub max_ticks: u32,
}

/// Ticks `[start, end)` during which a movement may show green or yellow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GreenWindow {
    pub direction: Cardinal,
    pub code: MovementCode,
    pub start: i64,
    pub end: i64,
}

/// Traffic measured for one phase over an evaluation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseStats {
    pub volume_per_lane: f64,
    pub approach_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Early,
    Late,
}

#[derive(Debug, Clone, Copy)]
struct Projected {
    flat: usize,
    occurrence: u32,
    start: i64,
    clear: i64,
}

#[derive(Debug, Clone)]
pub struct Controller {
    mode: ControllerMode,
    tick: f64,
    rings: Vec<Vec<Phase>>,
    barrier_count: usize,
    state: Vec<RingState>,
    now: i64,
    active: Vec<Params>,
    staged: Vec<Option<Params>>,
    tables: AdaptiveTables,
    /// Per flat phase: (approach speed m/s, lanes served).
    approach: Vec<(f64, f64)>,
    counts: Vec<u32>,
    greens: Vec<GreenRecord>,
    crossings: Vec<i64>,
}

impl Controller {
    pub fn new(
        program: &SignalProgramDoc,
        mode: ControllerMode,
        tick: f64,
    ) -> Result<Self, ControllerError> {
        Self::with_tables(program, mode, tick, AdaptiveTables::default())
    }

    pub fn with_tables(
        program: &SignalProgramDoc,
        mode: ControllerMode,
        tick: f64,
        tables: AdaptiveTables,
    ) -> Result<Self, ControllerError> {
        if !(tick > 0.0 && tick.is_finite()) {
            return Err(ControllerError::InvalidTick);
        }
        if program.rings.is_empty() {
            return Err(ControllerError::NoRings);
        }
        let mut rings = Vec::new();
        let mut sequences: Vec<Vec<String>> = Vec::new();
        let mut flat = 0;
        for (r, ring) in program.rings.iter().enumerate() {
            if ring.is_empty() {
                return Err(ControllerError::EmptyRing { ring: r + 1 });
            }
            let mut phases = Vec::new();
            let mut seq = Vec::new();
            let mut i = 0;
            while i < ring.len() {
                let malformed = ControllerError::Malformed {
                    ring: r + 1,
                    entry: i + 1,
                };
                let RingEntry::Green {
                    direction,
                    code,
                    gap,
                    min_green,
                    max_green,
                } = &ring[i]
                else {
                    return Err(malformed);
                };
                let base = Params {
                    gap: to_ticks(*gap, tick),
                    min: to_ticks(*min_green, tick),
                    max: to_ticks(*max_green, tick).max(1),
                };
                let (yellow, red, barrier, used) = match (ring.get(i + 1), ring.get(i + 2)) {
                    (Some(RingEntry::Barrier { id }), _) => {
                        let (y, rd) = program
                            .barrier_defs
                            .get(id)
                            .ok_or_else(|| ControllerError::MissingBarrierDef { id: id.clone() })?;
                        seq.push(id.clone());
                        (
                            to_ticks(*y, tick),
                            to_ticks(*rd, tick),
                            Some(seq.len() - 1),
                            2,
                        )
                    }
                    (
                        Some(RingEntry::Yellow { duration: y, .. }),
                        Some(RingEntry::Red { duration: rd, .. }),
                    ) => (to_ticks(*y, tick), to_ticks(*rd, tick), None, 3),
                    _ => return Err(malformed),
                };
                phases.push(Phase {
                    direction: *direction,
                    code: *code,
                    base,
                    min_secs: *min_green,
                    yellow,
                    red,
                    barrier,
                    flat,
                });
                flat += 1;
                i += used;
            }
            rings.push(phases);
            sequences.push(seq);
        }
        if let Some(r) = sequences.iter().position(|s| *s != sequences[0]) {
            return Err(ControllerError::BarrierOrderMismatch { ring: r + 1 });
        }
        let active: Vec<Params> = rings.iter().flatten().map(|p| p.base).collect();
        let n = active.len();
        let state = rings
            .iter()
            .map(|_| RingState {
                phase: 0,
                stage: Stage::Green,
                in_stage: 0,
                since_detection: 0,
                green_start: 0,
            })
            .collect();
        Ok(Controller {
            mode,
            tick,
            rings,
            barrier_count: sequences[0].len(),
            state,
            now: 0,
            active,
            staged: vec![None; n],
            tables,
            approach: vec![(13.4, 1.0); n],
            counts: vec![0; n],
            greens: Vec::new(),
            crossings: Vec::new(),
        })
    }

    /// Supply approach speed and lane count per phase for adaptive lookups.
    pub fn set_approach(&mut self, f: impl Fn(Cardinal, MovementCode) -> (f64, usize)) {
        for p in self.rings.iter().flatten() {
            let (speed, lanes) = f(p.direction, p.code);
            self.approach[p.flat] = (speed, lanes.max(1) as f64);
        }
    }

    pub fn mode(&self) -> ControllerMode {
        self.mode
    }

    pub fn tick_length(&self) -> f64 {
        self.tick
    }

    /// Current tick index; tick 0 is the program start.
    pub fn now(&self) -> i64 {
        self.now
    }

    pub fn time(&self) -> f64 {
        self.now as f64 * self.tick
    }

    pub fn ring_count(&self) -> usize {
        self.rings.len()
    }

    /// (direction, code) of every phase in flat order.
    pub fn phases(&self) -> Vec<(usize, Cardinal, MovementCode)> {
        self.rings
            .iter()
            .enumerate()
            .flat_map(|(r, ps)| ps.iter().map(move |p| (r, p.direction, p.code)))
            .collect()
    }

    /// Color shown to vehicles making `turn` from road `direction`.
    pub fn indication(&self, direction: Cardinal, turn: TurnKind) -> Color {
        self.color_where(|p| p.direction == direction && p.code.covers(turn))
    }

    /// Color of the exact (direction, code) entry; red unless it is active.
    pub fn indication_code(&self, direction: Cardinal, code: MovementCode) -> Color {
        self.color_where(|p| p.direction == direction && p.code == code)
    }

    fn color_where(&self, pred: impl Fn(&Phase) -> bool) -> Color {
        let mut c = Color::Red;
        for (r, s) in self.state.iter().enumerate() {
            if !pred(&self.rings[r][s.phase]) {
                continue;
            }
            let here = match s.stage {
                Stage::Green => Color::Green,
                Stage::Yellow | Stage::BarrierYellow => Color::Yellow,
                _ => Color::Red,
            };
            c = c.min(here);
        }
        c
    }

    /// Entries currently showing green or yellow.
    pub fn active_entries(&self) -> Vec<(Cardinal, MovementCode, Color)> {
        self.state
            .iter()
            .enumerate()
            .filter_map(|(r, s)| {
                let p = &self.rings[r][s.phase];
                match s.stage {
                    Stage::Green => Some((p.direction, p.code, Color::Green)),
                    Stage::Yellow | Stage::BarrierYellow => {
                        Some((p.direction, p.code, Color::Yellow))
                    }
                    _ => None,
                }
            })
            .collect()
    }

    pub fn green_log(&self) -> &[GreenRecord] {
        &self.greens
    }

    pub fn barrier_crossings(&self) -> &[i64] {
        &self.crossings
    }

    /// Active (gap, min, max) in seconds, as applied at the phase's last onset.
    pub fn active_params(&self, flat: usize) -> (f64, f64, f64) {
        let p = self.active[flat];
        (
            p.gap as f64 * self.tick,
            p.min as f64 * self.tick,
            p.max as f64 * self.tick,
        )
    }

    /// Parameters waiting for the phase's next onset.
    pub fn staged_params(&self, flat: usize) -> Option<(f64, f64, f64)> {
        self.staged[flat].map(|p| {
            (
                p.gap as f64 * self.tick,
                p.min as f64 * self.tick,
                p.max as f64 * self.tick,
            )
        })
    }

    /// Advance one tick. `detections` are stop-line crossings during the tick.
    pub fn step(&mut self, detections: &[(Cardinal, TurnKind)]) {
        self.now += 1;
        for s in &mut self.state {
            if s.stage != Stage::Parked {
                s.in_stage += 1;
            }
            if s.stage == Stage::Green {
                s.since_detection = s.since_detection.saturating_add(1);
            }
        }
        for &(d, t) in detections {
            for (r, s) in self.state.iter_mut().enumerate() {
                let p = &self.rings[r][s.phase];
                if s.stage == Stage::Green && p.direction == d && p.code.covers(t) {
                    s.since_detection = 0;
                }
            }
            if self.mode.adaptive {
                for p in self.rings.iter().flatten() {
                    if p.direction == d && p.code.covers(t) {
                        self.counts[p.flat] += 1;
                    }
                }
            }
        }
        for r in 0..self.rings.len() {
            self.advance(r);
        }
        self.sync();
    }

    fn green_done(&self, r: usize) -> bool {
        let s = &self.state[r];
        let p = self.active[self.rings[r][s.phase].flat];
        let e = s.in_stage;
        if e == 0 {
            return false;
        }
        if self.mode.actuated {
            (e >= p.min && s.since_detection >= p.gap) || e >= p.max
        } else {
            e >= p.max
        }
    }

    fn advance(&mut self, r: usize) {
        loop {
            let s = self.state[r];
            let phase = &self.rings[r][s.phase];
            let next = match s.stage {
                Stage::Green if self.green_done(r) => {
                    let a = self.active[phase.flat];
                    self.greens.push(GreenRecord {
                        ring: r,
                        phase: s.phase,
                        start: s.green_start,
                        end: self.now,
                        min_ticks: a.min,
                        max_ticks: a.max,
                    });
                    if phase.barrier.is_some() {
                        Stage::BarrierYellow
                    } else {
                        Stage::Yellow
                    }
                }
                Stage::Yellow if s.in_stage >= phase.yellow => Stage::Red,
                Stage::Red if s.in_stage >= phase.red => {
                    let n = (s.phase + 1) % self.rings[r].len();
                    self.onset(r, n);
                    continue;
                }
                Stage::BarrierYellow if s.in_stage >= phase.yellow => Stage::BarrierRed,
                Stage::BarrierRed if s.in_stage >= phase.red => Stage::Parked,
                _ => return,
            };
            let st = &mut self.state[r];
            st.stage = next;
            st.in_stage = 0;
        }
    }

    fn onset(&mut self, r: usize, phase: usize) {
        if self.mode.adaptive && self.barrier_count == 0 && r == 0 && phase == 0 {
            self.evaluate();
        }
        let flat = self.rings[r][phase].flat;
        if let Some(p) = self.staged[flat].take() {
            self.active[flat] = p;
        }
        self.state[r] = RingState {
            phase,
            stage: Stage::Green,
            in_stage: 0,
            since_detection: 0,
            green_start: self.now,
        };
    }

    fn sync(&mut self) {
        if self.barrier_count == 0 || self.state.iter().any(|s| s.stage != Stage::Parked) {
            return;
        }
        let at = self.rings[0][self.state[0].phase].barrier;
        if self.mode.adaptive && at == Some(self.barrier_count - 1) {
            self.evaluate();
        }
        self.crossings.push(self.now);
        for r in 0..self.rings.len() {
            let n = (self.state[r].phase + 1) % self.rings[r].len();
            self.onset(r, n);
        }
    }

    fn evaluate(&mut self) {
        let stats: Vec<PhaseStats> = self
            .approach
            .iter()
            .zip(&self.counts)
            .map(|(&(speed, lanes), &n)| PhaseStats {
                volume_per_lane: n as f64 / lanes,
                approach_speed: speed,
            })
            .collect();
        self.adaptive_update(&stats);
        self.counts.iter_mut().for_each(|c| *c = 0);
    }

    /// Stage new gap and max-green values from the lookup tables; each phase
    /// picks them up at its next green onset.
    pub fn adaptive_update(&mut self, stats: &[PhaseStats]) {
        for p in self.rings.iter().flatten() {
            let Some(st) = stats.get(p.flat) else {
                continue;
            };
            let max = self
                .tables
                .max_green
                .lookup(st.volume_per_lane)
                .max(p.min_secs);
            let gap = self.tables.gap_extension.lookup(st.approach_speed);
            self.staged[p.flat] = Some(Params {
                gap: to_ticks(gap, self.tick),
                min: p.base.min,
                max: to_ticks(max, self.tick).max(1),
            });
        }
    }

    fn future_green(&self, flat: usize, bound: Bound) -> i64 {
        let base = self
            .rings
            .iter()
            .flatten()
            .find(|p| p.flat == flat)
            .expect("phase")
            .base;
        let g = match (self.mode.actuated, self.mode.adaptive, bound) {
            (false, false, _) => base.max,
            (_, _, Bound::Early) => base.min,
            (true, false, Bound::Late) => base.max,
            (_, true, Bound::Late) => {
                let table = to_ticks(self.tables.max_green.max_value(), self.tick);
                let staged = self.staged[flat].map_or(0, |p| p.max);
                self.active[flat].max.max(staged).max(table).max(base.min)
            }
        };
        g.max(1) as i64
    }

    fn current_green_left(&self, r: usize, bound: Bound) -> i64 {
        let s = &self.state[r];
        let p = self.active[self.rings[r][s.phase].flat];
        let e = s.in_stage as i64;
        let left = if self.mode.actuated && bound == Bound::Early {
            (p.min as i64 - e)
                .max(p.gap as i64 - s.since_detection as i64)
                .min(p.max as i64 - e)
        } else {
            p.max as i64 - e
        };
        left.max(1)
    }

    /// Walk every ring forward assuming each green takes its bounding
    /// duration; returns green onsets and clearance ends up to `horizon`.
    fn project(&self, horizon: i64, bound: Bound) -> Vec<Projected> {
        let mut out = Vec::new();
        let mut occ: HashMap<usize, u32> = HashMap::new();
        let mut record = |flat: usize, start: i64, clear: i64, out: &mut Vec<Projected>| {
            let k = occ.entry(flat).or_insert(0);
            out.push(Projected {
                flat,
                occurrence: *k,
                start,
                clear,
            });
            *k += 1;
        };
        // Per ring: time the next phase starts (or the ring parks) and
        // whether it is parked at a barrier.
        let mut cursor: Vec<(usize, i64, bool)> = Vec::new();
        for (r, s) in self.state.iter().enumerate() {
            let p = &self.rings[r][s.phase];
            let k = s.in_stage as i64;
            let (y, rd) = (p.yellow as i64, p.red as i64);
            let end = match s.stage {
                Stage::Green => {
                    let g = self.current_green_left(r, bound);
                    record(p.flat, self.now, self.now + g + y, &mut out);
                    self.now + g + y + rd
                }
                Stage::Yellow | Stage::BarrierYellow => {
                    record(p.flat, self.now, self.now + y - k, &mut out);
                    self.now + y - k + rd
                }
                Stage::Red | Stage::BarrierRed => self.now + rd - k,
                Stage::Parked => self.now,
            };
            cursor.push((s.phase, end, p.barrier.is_some()));
        }
        loop {
            for (r, c) in cursor.iter_mut().enumerate() {
                while !c.2 && c.1 <= horizon {
                    c.0 = (c.0 + 1) % self.rings[r].len();
                    let p = &self.rings[r][c.0];
                    let g = self.future_green(p.flat, bound);
                    record(p.flat, c.1, c.1 + g + p.yellow as i64, &mut out);
                    c.1 += g + p.yellow as i64 + p.red as i64;
                    c.2 = p.barrier.is_some();
                }
            }
            if !cursor.iter().all(|c| c.2) {
                break;
            }
            let cross = cursor.iter().map(|c| c.1).max().unwrap_or(self.now);
            if cross > horizon {
                break;
            }
            for c in &mut cursor {
                c.1 = cross;
                c.2 = false;
            }
        }
        out
    }

    /// Conservative green-or-yellow intervals per phase over the next
    /// `lookahead` ticks, valid whatever detections arrive. Intervals whose
    /// end lies past the lookahead are cut at `now + lookahead`.
    pub fn green_windows(&self, lookahead: i64) -> Vec<GreenWindow> {
        let horizon = self.now + lookahead;
        let early = self.project(horizon, Bound::Early);
        let late: HashMap<(usize, u32), i64> = self
            .project(horizon, Bound::Late)
            .into_iter()
            .map(|p| ((p.flat, p.occurrence), p.clear))
            .collect();
        let phases: Vec<&Phase> = self.rings.iter().flatten().collect();
        early
            .into_iter()
            .filter(|p| p.start <= horizon)
            .map(|p| {
                let ph = phases.iter().find(|x| x.flat == p.flat).expect("phase");
                let end = late
                    .get(&(p.flat, p.occurrence))
                    .copied()
                    .unwrap_or(horizon)
                    .min(horizon);
                GreenWindow {
                    direction: ph.direction,
                    code: ph.code,
                    start: p.start,
                    end: end.max(p.clear.min(horizon)),
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_signal_program;

    const DT: f64 = 0.02;

    fn single(gap: f64, min: f64, max: f64) -> SignalProgramDoc {
        parse_signal_program(&format!(
            "<root><ring><green>N, c, {gap}, {min}, {max}</green><yellow>N, c, 4</yellow><red>N, c, 3</red>\
             <green>N, t, 1, 1, 1</green><yellow>N, t, 1</yellow><red>N, t, 1</red></ring></root>"
        ))
        .unwrap()
    }

    /// Tick at which the first green of ring 0 ends, detecting every `every`
    /// ticks (never when zero).
    fn first_green_end(c: &mut Controller, every: i64) -> i64 {
        for _ in 0..100_000 {
            let det = if every > 0 && c.now() % every == every - 1 {
                vec![(Cardinal::North, TurnKind::Left)]
            } else {
                vec![]
            };
            c.step(&det);
            if c.indication_code(Cardinal::North, MovementCode::Cross) != Color::Green {
                return c.now();
            }
        }
        panic!("green never ended");
    }

    #[test]
    fn gap_out_without_detections() {
        let mut c =
            Controller::new(&single(5.0, 4.0, 6.339671678), ControllerMode::ACTUATED, DT).unwrap();
        assert_eq!(first_green_end(&mut c, 0), 250);
    }

    #[test]
    fn max_out_with_steady_detections() {
        let mut c =
            Controller::new(&single(5.0, 4.0, 6.339671678), ControllerMode::ACTUATED, DT).unwrap();
        assert_eq!(first_green_end(&mut c, 50), 317);
        assert!((317.0 * DT - 6.34).abs() < 1e-9);
    }

    #[test]
    fn short_gap_ends_at_min() {
        let mut c = Controller::new(&single(1.0, 4.0, 10.0), ControllerMode::ACTUATED, DT).unwrap();
        assert_eq!(first_green_end(&mut c, 0), 200);
    }

    #[test]
    fn fixed_mode_yellow_then_red() {
        let mut c = Controller::new(&single(5.0, 4.0, 6.0), ControllerMode::FIXED, DT).unwrap();
        let mut trace = Vec::new();
        for _ in 0..1000 {
            trace.push(c.indication_code(Cardinal::North, MovementCode::Cross));
            c.step(&[]);
        }
        let green = trace.iter().take_while(|c| **c == Color::Green).count();
        let yellow = trace[green..]
            .iter()
            .take_while(|c| **c == Color::Yellow)
            .count();
        assert_eq!((green, yellow), (300, 200));
        // Red for 3 s, then the through phase, then back.
        let red_until = trace[500..].iter().position(|c| *c != Color::Red).unwrap();
        assert_eq!(red_until, 150 + 50 + 50 + 50);
    }

    #[test]
    fn default_red_for_unlisted() {
        let c = Controller::new(&single(5.0, 4.0, 6.0), ControllerMode::FIXED, DT).unwrap();
        assert_eq!(
            c.indication_code(Cardinal::North, MovementCode::Cross),
            Color::Green
        );
        assert_eq!(
            c.indication_code(Cardinal::East, MovementCode::Cross),
            Color::Red
        );
        assert_eq!(c.indication(Cardinal::North, TurnKind::Through), Color::Red);
    }

    #[test]
    fn init_errors() {
        let p = parse_signal_program("<root><ring></ring></root>").unwrap();
        assert_eq!(
            Controller::new(&p, ControllerMode::FIXED, DT).unwrap_err(),
            ControllerError::EmptyRing { ring: 1 }
        );
        let p = parse_signal_program("<root></root>").unwrap();
        assert_eq!(
            Controller::new(&p, ControllerMode::FIXED, DT).unwrap_err(),
            ControllerError::NoRings
        );
    }

    #[test]
    fn adaptive_values_apply_at_next_onset_only() {
        let mut c = Controller::new(
            &single(5.0, 4.0, 6.0),
            ControllerMode {
                actuated: true,
                adaptive: true,
            },
            DT,
        )
        .unwrap();
        c.step(&[]);
        c.adaptive_update(&[
            PhaseStats {
                volume_per_lane: 0.0,
                approach_speed: 13.4,
            },
            PhaseStats {
                volume_per_lane: 0.0,
                approach_speed: 13.4,
            },
        ]);
        assert_eq!(c.active_params(0).2, 6.0);
        let (gap, _, max) = c.staged_params(0).unwrap();
        assert_eq!((gap, max), (3.5, 15.0));
        while c.indication_code(Cardinal::North, MovementCode::Cross) == Color::Green {
            c.step(&[]);
        }
        assert_eq!(c.active_params(0).2, 6.0);
        while c.indication_code(Cardinal::North, MovementCode::Cross) != Color::Green {
            c.step(&[]);
        }
        assert_eq!(c.active_params(0).2, 15.0);
        assert!(c.staged_params(0).is_none());
    }

    #[test]
    fn windows_cover_fixed_schedule_exactly() {
        let c = Controller::new(&single(5.0, 4.0, 6.0), ControllerMode::FIXED, DT).unwrap();
        let w: Vec<_> = c
            .green_windows(2000)
            .into_iter()
            .filter(|w| w.code == MovementCode::Cross)
            .collect();
        // Cycle = 6 + 4 + 3 + 1 + 1 + 1 = 16 s = 800 ticks.
        assert_eq!((w[0].start, w[0].end), (0, 500));
        assert_eq!((w[1].start, w[1].end), (800, 1300));
    }
}
