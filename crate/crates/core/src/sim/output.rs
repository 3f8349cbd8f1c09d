use std::io;

use super::{delay_of, RunSummary, SignalSample, VehicleRecord};

pub const SUMMARY_HEADER: [&str; 23] = [
    "seed",
    "cav_ratio",
    "cav_policy",
    "hv_policy",
    "mode",
    "tick",
    "delay",
    "delay_exact",
    "delay_human",
    "delay_auto",
    "scheduled",
    "spawned",
    "completed",
    "completed_human",
    "completed_auto",
    "in_system",
    "never_spawned",
    "unroutable",
    "spillback",
    "vlh_avg",
    "vlh_peak",
    "vlh_low",
    "duration",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_default()
}

/// Header plus one row. `delay` is rounded to a tenth of a second and
/// `spillback` holds `*` when a spawn had to wait for room.
pub fn emit_summary<W: io::Write>(s: &RunSummary, w: W) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_HEADER)?;
    out.write_record([
        s.seed.to_string(),
        s.cav_ratio.to_string(),
        s.cav_policy.letter().to_string(),
        s.hv_policy.letter().to_string(),
        s.mode.label().to_string(),
        s.tick.to_string(),
        format!("{:.1}", s.mean_delay),
        s.mean_delay.to_string(),
        s.mean_delay_human.to_string(),
        s.mean_delay_auto.to_string(),
        s.scheduled.to_string(),
        s.spawned.to_string(),
        s.completed.to_string(),
        s.completed_human.to_string(),
        s.completed_auto.to_string(),
        s.in_system.to_string(),
        s.never_spawned.to_string(),
        s.unroutable.to_string(),
        if s.spillback { "*" } else { "" }.to_string(),
        opt(s.vlh.map(|v| v.0)),
        opt(s.vlh.map(|v| v.1)),
        opt(s.vlh.map(|v| v.2)),
        format!("{:.2}", s.duration),
    ])?;
    out.flush()
}

pub fn write_vehicle_log<W: io::Write>(records: &[VehicleRecord], w: W) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "id",
        "class",
        "road",
        "turn",
        "lane",
        "scheduled_time",
        "spawn_time",
        "entry_time",
        "exit_time",
        "free_flow_time",
        "delay",
    ])?;
    let t = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
    for r in records {
        out.write_record([
            r.id.to_string(),
            r.class.name().to_string(),
            r.road.name().to_string(),
            r.turn.letter().to_string(),
            r.lane.to_string(),
            format!("{:.3}", r.scheduled_time),
            format!("{:.3}", r.spawn_time),
            t(r.entry_time),
            t(r.exit_time),
            format!("{:.3}", r.free_flow_time),
            t(delay_of(r).ok()),
        ])?;
    }
    out.flush()
}

/// One row per indication change: the colour holds until the next row for
/// the same direction and movement.
pub fn write_signal_trace<W: io::Write>(
    samples: &[SignalSample],
    tick: f64,
    w: W,
) -> io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["tick", "time", "direction", "movement", "color"])?;
    for s in samples {
        out.write_record([
            s.tick.to_string(),
            format!("{:.2}", s.tick as f64 * tick),
            s.direction.name().to_string(),
            s.code.as_str().to_string(),
            s.color.name().to_string(),
        ])?;
    }
    out.flush()
}
