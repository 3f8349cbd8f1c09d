//! Vehicle kinematics and driver logic.
//!
//! Every vehicle moves along a one-dimensional route: an approach lane that
//! ends at the stop line, the trajectory through the box, and a short exit
//! stub. Decisions are pure functions of the previous tick's state.

use crate::intersection::VehicleClass;
use crate::signal::Color;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleDims {
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleDims {
    fn default() -> Self {
        VehicleDims {
            length: 4.5,
            width: 1.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    /// Maximum acceleration, m/s².
    pub a_max: f64,
    /// Comfortable (and maximum commanded) deceleration, m/s².
    pub b_max: f64,
    /// Standstill gap to the leader, m.
    pub min_gap: f64,
    /// Time headway, s.
    pub headway: f64,
    /// Gain on the gap error of the constant-headway term.
    pub k_gap: f64,
    /// Gain on the speed difference of the constant-headway term.
    pub k_speed: f64,
    /// Speed cap for turning movements inside the box.
    pub turn_speed: f64,
    /// Deceleration used to slow down for a turn before the stop line.
    pub turn_decel: f64,
    /// Vehicles told to stop aim this far short of the line.
    pub stop_margin: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            a_max: 3.0,
            b_max: 4.0,
            min_gap: 2.0,
            headway: 1.0,
            k_gap: 0.3,
            k_speed: 0.8,
            turn_speed: 9.0,
            turn_decel: 2.0,
            stop_margin: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Life {
    Approaching,
    Queued,
    Inside,
    Departed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub id: u32,
    pub class: VehicleClass,
    pub dims: VehicleDims,
    /// Front position along the route, m.
    pub position: f64,
    pub speed: f64,
    pub accel: f64,
    pub life: Life,
    pub reservation: Option<u64>,
}

impl VehicleState {
    pub fn new(id: u32, class: VehicleClass, speed: f64) -> Self {
        VehicleState {
            id,
            class,
            dims: VehicleDims::default(),
            position: 0.0,
            speed,
            accel: 0.0,
            life: Life::Approaching,
            reservation: None,
        }
    }
}

/// Trapezoidal update; speed never goes negative.
pub fn step_kinematics(v: &VehicleState, accel: f64, dt: f64) -> VehicleState {
    let (position, speed) = advance(v.position, v.speed, accel, dt);
    VehicleState {
        position,
        speed,
        accel,
        ..*v
    }
}

/// Position and speed after one trapezoidal step.
#[inline]
pub fn advance(position: f64, speed: f64, accel: f64, dt: f64) -> (f64, f64) {
    let next = (speed + accel * dt).max(0.0);
    (position + 0.5 * (speed + next) * dt, next)
}

pub fn can_stop_before(speed: f64, distance: f64, decel: f64) -> bool {
    speed * speed / (2.0 * decel) <= distance
}

/// Largest speed after one step that still lets the vehicle stop within
/// `room` metres (measured from its current position) while braking at `b`.
fn safe_next_speed(speed: f64, room: f64, b: f64, dt: f64) -> f64 {
    let h = 0.5 * b * dt;
    let disc = h * h + 2.0 * b * (room - 0.5 * speed * dt);
    if disc <= 0.0 {
        return 0.0;
    }
    (disc.sqrt() - h).max(0.0)
}

fn accel_to(speed: f64, next: f64, dt: f64) -> f64 {
    (next - speed) / dt
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leader {
    /// Bumper-to-bumper distance, m.
    pub gap: f64,
    pub speed: f64,
}

/// Accelerate toward `desired` as fast as allowed.
pub fn free_accel(speed: f64, desired: f64, limits: &Limits, dt: f64) -> f64 {
    ((desired - speed) / dt).clamp(-limits.b_max, limits.a_max)
}

/// Constant-headway following with a collision-free bound: the command
/// never lets the gap fall below what is needed to stop behind a leader
/// braking at `b_max`.
pub fn car_follow(
    speed: f64,
    leader: Option<Leader>,
    desired: f64,
    limits: &Limits,
    dt: f64,
) -> f64 {
    let mut a = free_accel(speed, desired, limits, dt);
    if let Some(l) = leader {
        let target = limits.min_gap + speed * limits.headway;
        let a_cth = limits.k_gap * (l.gap - target) + limits.k_speed * (l.speed - speed);
        a = a.min(a_cth).min(safe_accel(speed, l, limits, dt));
    }
    a.clamp(-limits.b_max, limits.a_max)
}

/// Only the collision-free bound of [`car_follow`].
pub fn safe_accel(speed: f64, leader: Leader, limits: &Limits, dt: f64) -> f64 {
    let b = limits.b_max;
    let room = leader.gap + leader.speed * leader.speed / (2.0 * b) - limits.min_gap;
    accel_to(speed, safe_next_speed(speed, room, b, dt), dt)
}

/// Route-relative situation of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveContext {
    pub speed: f64,
    /// Front to stop line; negative once inside the box.
    pub to_line: f64,
    /// Desired speed on the approach.
    pub approach_speed: f64,
    /// Desired speed from the stop line on.
    pub inside_speed: f64,
    /// Turning movements slow to `inside_speed` by the line.
    pub turning: bool,
    pub limits: Limits,
    pub dt: f64,
}

impl DriveContext {
    pub fn entered(&self) -> bool {
        self.to_line < 0.0
    }
}

/// Unhindered driving: cruise, slow for a turn ahead, follow a leader.
pub fn go_accel(ctx: &DriveContext, leader: Option<Leader>) -> f64 {
    let l = &ctx.limits;
    let desired = if ctx.entered() {
        ctx.inside_speed
    } else {
        ctx.approach_speed
    };
    let mut a = car_follow(ctx.speed, leader, desired, l, ctx.dt);
    if ctx.turning && !ctx.entered() {
        let room = ctx.to_line + ctx.inside_speed * ctx.inside_speed / (2.0 * l.turn_decel);
        let next = safe_next_speed(ctx.speed, room, l.turn_decel, ctx.dt);
        a = a.min(accel_to(ctx.speed, next, ctx.dt));
    }
    a.clamp(-l.b_max, l.a_max)
}

/// Bound that brings the vehicle to rest just short of the stop line.
pub fn stop_accel(ctx: &DriveContext) -> f64 {
    let l = &ctx.limits;
    let next = safe_next_speed(ctx.speed, ctx.to_line - l.stop_margin, l.b_max, ctx.dt);
    accel_to(ctx.speed, next, ctx.dt).clamp(-l.b_max, l.a_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriverDecision {
    pub accel: f64,
    pub action: ReservationAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReservationAction {
    None,
    Request,
    Cancel,
}

/// Human driver: green goes, yellow stops when a comfortable stop is
/// possible (decided once per yellow), red stops at the line. Once inside
/// the box the vehicle simply drives on.
pub fn hv_decide(
    ctx: &DriveContext,
    leader: Option<Leader>,
    color: Color,
    yellow_go: &mut Option<bool>,
) -> DriverDecision {
    let go = go_accel(ctx, leader);
    let accel = if ctx.entered() {
        go
    } else {
        match color {
            Color::Green => {
                *yellow_go = None;
                go
            }
            Color::Yellow => {
                let proceed = *yellow_go.get_or_insert_with(|| {
                    !can_stop_before(
                        ctx.speed,
                        ctx.to_line - ctx.limits.stop_margin,
                        ctx.limits.b_max,
                    )
                });
                if proceed {
                    go
                } else {
                    go.min(stop_accel(ctx))
                }
            }
            Color::Red => go.min(stop_accel(ctx)),
        }
    };
    DriverDecision {
        accel,
        action: ReservationAction::None,
    }
}

/// Reservation state as seen by a CAV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CavGrant {
    /// No reservation; `entry_in` is the time to the earliest entry the
    /// vehicle could make, when known.
    None { entry_in: Option<f64>, horizon: f64 },
    /// Holding a reservation; it was planned with the unhindered law.
    Granted,
}

/// Connected vehicle: without a reservation it drives as if the line were a
/// wall and asks for one when its earliest entry falls within the road's
/// horizon. With a reservation it follows the unhindered law the plan was
/// built from; if a leader forces it off that law before the line and it
/// can still stop, it gives the reservation back.
pub fn cav_decide(ctx: &DriveContext, leader: Option<Leader>, grant: CavGrant) -> DriverDecision {
    match grant {
        CavGrant::None { entry_in, horizon } => {
            let accel = if ctx.entered() {
                go_accel(ctx, leader)
            } else {
                go_accel(ctx, leader).min(stop_accel(ctx))
            };
            let action = match entry_in {
                Some(t) if t <= horizon && !ctx.entered() => ReservationAction::Request,
                _ => ReservationAction::None,
            };
            DriverDecision { accel, action }
        }
        CavGrant::Granted => {
            let planned = go_accel(ctx, None);
            let forced =
                leader.map(|l| car_follow(ctx.speed, Some(l), f64::INFINITY, &ctx.limits, ctx.dt));
            match forced {
                Some(a) if a < planned - 1e-9 => {
                    let room = ctx.to_line - ctx.limits.stop_margin;
                    if !ctx.entered() && can_stop_before(ctx.speed, room, ctx.limits.b_max) {
                        DriverDecision {
                            accel: a.min(stop_accel(ctx)),
                            action: ReservationAction::Cancel,
                        }
                    } else {
                        DriverDecision {
                            accel: a,
                            action: ReservationAction::None,
                        }
                    }
                }
                _ => DriverDecision {
                    accel: planned,
                    action: ReservationAction::None,
                },
            }
        }
    }
}

/// Whether a vehicle `distance` metres from the line at `speed` can reach
/// it in exactly `time` seconds without exceeding `limit`.
pub fn entry_feasible(distance: f64, time: f64, speed: f64, limit: f64, limits: &Limits) -> bool {
    if time <= 0.0 {
        return distance <= 0.0;
    }
    // Fastest arrival: accelerate to the limit and hold it.
    let v = speed.min(limit);
    let t_acc = (limit - v) / limits.a_max;
    let d_acc = (v + limit) * 0.5 * t_acc;
    let fastest = if distance <= d_acc {
        let disc = v * v + 2.0 * limits.a_max * distance;
        (disc.sqrt() - v) / limits.a_max
    } else {
        t_acc + (distance - d_acc) / limit
    };
    // Arriving late is always possible if the vehicle can still stop.
    fastest <= time
        && (can_stop_before(speed, distance, limits.b_max) || distance / time >= speed * 0.5)
}

/// Travel time along `length` metres starting at `speed` and accelerating
/// at `accel` up to `cap`.
pub fn travel_time(length: f64, speed: f64, accel: f64, cap: f64) -> f64 {
    if length <= 0.0 {
        return 0.0;
    }
    let v = speed.min(cap);
    let t_acc = ((cap - v) / accel).max(0.0);
    let d_acc = (v + cap) * 0.5 * t_acc;
    if length <= d_acc {
        ((v * v + 2.0 * accel * length).sqrt() - v) / accel
    } else {
        t_acc + (length - d_acc) / cap
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const DT: f64 = 0.02;

    fn ctx(speed: f64, to_line: f64) -> DriveContext {
        DriveContext {
            speed,
            to_line,
            approach_speed: 13.4,
            inside_speed: 13.4,
            turning: false,
            limits: Limits::default(),
            dt: DT,
        }
    }

    #[test]
    fn kinematics_examples() {
        let v = VehicleState::new(1, VehicleClass::Human, 10.0);
        let n = step_kinematics(&v, 0.0, DT);
        assert!((n.position - 0.2).abs() < 1e-12);
        let s = step_kinematics(&VehicleState::new(1, VehicleClass::Human, 0.0), -3.0, DT);
        assert_eq!((s.speed, s.position), (0.0, 0.0));
        let a = step_kinematics(&v, 2.0, DT);
        assert!((a.speed - 10.04).abs() < 1e-12);
        assert!((a.position - 0.2004).abs() < 1e-12);
    }

    #[test]
    fn stopping_rule() {
        assert!(can_stop_before(13.4, 50.0, 4.0));
        assert!((13.4f64 * 13.4 / 8.0 - 22.445).abs() < 1e-9);
        assert!(!can_stop_before(1.0, 0.0, 4.0));
        assert!(can_stop_before(0.0, 0.0, 4.0));
        assert!(!can_stop_before(0.0, -5.0, 4.0));
    }

    #[test]
    fn follow_examples() {
        let l = Limits::default();
        assert_eq!(car_follow(5.0, None, 13.4, &l, DT), l.a_max);
        assert!((car_follow(13.4, None, 13.4, &l, DT)).abs() < 1e-12);
        let stopped = car_follow(
            0.0,
            Some(Leader {
                gap: 2.0,
                speed: 0.0,
            }),
            13.4,
            &l,
            DT,
        );
        assert!(stopped <= 0.0);
        let v = 10.0;
        let eq = car_follow(
            v,
            Some(Leader {
                gap: 2.0 + v,
                speed: v,
            }),
            v,
            &l,
            DT,
        );
        assert!(eq.abs() < 1e-9, "{eq}");
    }

    #[test]
    fn red_stop_lands_at_the_line() {
        let mut c = ctx(13.4, 30.0);
        let mut latch = None;
        for _ in 0..2000 {
            let d = hv_decide(&c, None, Color::Red, &mut latch);
            let (p, v) = advance(0.0, c.speed, d.accel, DT);
            c.to_line -= p;
            c.speed = v;
        }
        assert_eq!(c.speed, 0.0);
        assert!(c.to_line >= 0.0 && c.to_line < 0.5, "{}", c.to_line);
    }

    #[test]
    fn yellow_dilemma() {
        let mut latch = None;
        // 5 m out at 13.4 m/s cannot stop: proceeds.
        let d = hv_decide(&ctx(13.4, 5.0), None, Color::Yellow, &mut latch);
        assert_eq!(latch, Some(true));
        assert!(d.accel >= 0.0);
        let mut latch = None;
        hv_decide(&ctx(13.4, 60.0), None, Color::Yellow, &mut latch);
        assert_eq!(latch, Some(false));
    }

    #[test]
    fn cav_requests_only_inside_horizon() {
        let c = ctx(13.4, 100.0);
        let far = cav_decide(
            &c,
            None,
            CavGrant::None {
                entry_in: Some(20.0),
                horizon: 14.9,
            },
        );
        assert_eq!(far.action, ReservationAction::None);
        let near = cav_decide(
            &c,
            None,
            CavGrant::None {
                entry_in: Some(7.0),
                horizon: 14.9,
            },
        );
        assert_eq!(near.action, ReservationAction::Request);
    }

    #[test]
    fn granted_cav_gives_back_when_blocked() {
        let c = ctx(10.0, 40.0);
        let d = cav_decide(
            &c,
            Some(Leader {
                gap: 5.0,
                speed: 0.0,
            }),
            CavGrant::Granted,
        );
        assert_eq!(d.action, ReservationAction::Cancel);
        let d = cav_decide(&c, None, CavGrant::Granted);
        assert_eq!(d.action, ReservationAction::None);
        assert!(d.accel >= 0.0);
    }

    #[test]
    fn feasibility_arithmetic() {
        let l = Limits::default();
        assert!(entry_feasible(60.0, 5.0, 13.4, 13.4, &l));
        assert!(!entry_feasible(60.0, 4.0, 13.4, 13.4, &l));
    }

    #[test]
    fn turn_speed_reached_by_line() {
        let mut c = ctx(13.4, 80.0);
        c.turning = true;
        c.inside_speed = 9.0;
        while c.to_line > 0.0 {
            let a = go_accel(&c, None);
            let (p, v) = advance(0.0, c.speed, a, DT);
            c.to_line -= p;
            c.speed = v;
        }
        assert!(c.speed <= 9.0 + 0.05, "{}", c.speed);
    }

    #[test]
    fn travel_time_closed_form() {
        assert!((travel_time(134.0, 13.4, 3.0, 13.4) - 10.0).abs() < 1e-12);
        assert!((travel_time(6.0, 0.0, 3.0, 13.4) - 2.0).abs() < 1e-12);
    }

    proptest! {
        // A follower obeying car_follow behind a leader that brakes and
        // accelerates arbitrarily within limits never touches it.
        #[test]
        fn follower_never_overlaps(
            v0 in 0.0f64..20.0, lv0 in 0.0f64..20.0, extra in 0.0f64..30.0,
            plan in proptest::collection::vec(-4.0f64..3.0, 50..400),
        ) {
            let l = Limits::default();
            // Start from a state that satisfies the stopping bound.
            let need = (v0 * v0 - lv0 * lv0) / (2.0 * l.b_max) + l.min_gap + v0 * DT;
            let mut gap = need.max(l.min_gap) + extra;
            let (mut v, mut lv) = (v0, lv0);
            for (i, &la) in plan.iter().enumerate() {
                let la = if i % 7 == 0 { -l.b_max } else { la };
                let a = car_follow(v, Some(Leader { gap, speed: lv }), 20.0, &l, DT);
                prop_assert!(a >= -l.b_max - 1e-12 && a <= l.a_max + 1e-12);
                let (dp, nv) = advance(0.0, v, a, DT);
                let (lp, nlv) = advance(0.0, lv, la, DT);
                gap += lp - dp;
                v = nv;
                lv = nlv;
                prop_assert!(gap > 0.0, "gap {gap}");
            }
        }
    }
}
