use std::fmt;

use super::{DemandTable, IntersectionSpecDoc, RingEntry, SignalProgramDoc};
use crate::intersection::{build_model, destination, Cardinal, VehicleClass};
use crate::signal::static_conflicts;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub file: String,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}): {}", self.file, self.location, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub errors: Vec<Diagnostic>,
    pub warnings: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn error(&mut self, file: &str, location: impl Into<String>, message: impl Into<String>) {
        self.errors.push(Diagnostic {
            file: file.to_string(),
            location: location.into(),
            message: message.into(),
        });
    }

    pub fn warning(&mut self, file: &str, location: impl Into<String>, message: impl Into<String>) {
        self.warnings.push(Diagnostic {
            file: file.to_string(),
            location: location.into(),
            message: message.into(),
        });
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.errors.extend(other.errors);
        self.warnings.extend(other.warnings);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.errors {
            writeln!(f, "error: {e}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        write!(
            f,
            "{} error(s), {} warning(s)",
            self.errors.len(),
            self.warnings.len()
        )
    }
}

pub const INTERSECTION_FILE: &str = "intersection";
pub const SIGNAL_FILE: &str = "signals";
pub const DEMAND_FILE: &str = "demand";

/// Check that the three files describe the same intersection.
pub fn validate_cross_references(
    spec: &IntersectionSpecDoc,
    program: &SignalProgramDoc,
    demand: &DemandTable,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    if let Err(e) = build_model(spec) {
        report.error(INTERSECTION_FILE, "model", e.to_string());
    }
    let incoming = |d: Cardinal| spec.road(d).map_or(0, |r| r.incoming_lanes);

    for (i, road) in demand.road_order.iter().enumerate() {
        if spec.road(*road).is_none() {
            report.error(
                DEMAND_FILE,
                format!("line 1, field {}", i + 1),
                format!("road {road} is not declared in the intersection"),
            );
        }
    }

    for (r, ring) in program.rings.iter().enumerate() {
        for (i, e) in ring.iter().enumerate() {
            if let RingEntry::Green {
                direction, code, ..
            } = e
            {
                if incoming(*direction) == 0 {
                    report.error(
                        SIGNAL_FILE,
                        format!("ring {}, entry {}", r + 1, i + 1),
                        format!(
                            "phase {}{} controls road {direction}, which has no incoming lanes",
                            direction.letter(),
                            code.as_str()
                        ),
                    );
                }
            }
        }
    }
    for msg in static_conflicts(program) {
        report.error(SIGNAL_FILE, "rings", msg);
    }

    for (ri, road) in demand.road_order.iter().enumerate() {
        if spec.road(*road).is_none() {
            continue;
        }
        for (ci, code) in demand.action_columns[ri].iter().enumerate() {
            let demanded: u64 = demand
                .rows
                .iter()
                .map(|row| row.counts[ri][ci] as u64)
                .sum();
            for &turn in code.turns() {
                let to = destination(*road, turn);
                if spec.pairs(VehicleClass::Human, *road, to).is_empty() {
                    let loc = format!("road {road}, column {code}");
                    let msg = format!("no lane lets human drivers travel {road} -> {to}");
                    if demanded > 0 {
                        report.error(DEMAND_FILE, loc, msg);
                    } else {
                        report.warning(DEMAND_FILE, loc, msg);
                    }
                }
            }
        }
    }

    for b in &spec.directions {
        let human = spec.pairs(VehicleClass::Human, b.from, b.to);
        let auto = spec.pairs(VehicleClass::Auto, b.from, b.to);
        let only: Vec<usize> = auto
            .iter()
            .map(|p| p.0)
            .filter(|l| !human.iter().any(|h| h.0 == *l))
            .collect();
        if !only.is_empty() {
            report.warning(
                INTERSECTION_FILE,
                format!("{} -> {}", b.from, b.to),
                format!("incoming lane(s) {only:?} are open to AUTO vehicles only"),
            );
        }
    }
    report
}
