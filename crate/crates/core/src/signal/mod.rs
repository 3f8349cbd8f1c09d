//! Ring-and-barrier signal control: fixed-time, actuated (gap extension
//! between min and max green) and table-driven adaptive timing.

mod adaptive;
mod controller;

pub use adaptive::{AdaptiveTables, StepTable};
pub use controller::{Controller, ControllerError, GreenRecord, GreenWindow, PhaseStats};

use serde::{Deserialize, Serialize};

use crate::config::{MovementCode, RingEntry, SignalProgramDoc};
use crate::intersection::{Cardinal, IntersectionModel, TurnKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Color {
    Green,
    Yellow,
    Red,
}

impl Color {
    pub fn name(self) -> &'static str {
        match self {
            Color::Green => "GREEN",
            Color::Yellow => "YELLOW",
            Color::Red => "RED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ControllerMode {
    pub actuated: bool,
    pub adaptive: bool,
}

impl ControllerMode {
    pub const FIXED: ControllerMode = ControllerMode {
        actuated: false,
        adaptive: false,
    };
    pub const ACTUATED: ControllerMode = ControllerMode {
        actuated: true,
        adaptive: false,
    };

    pub fn label(self) -> &'static str {
        match (self.actuated, self.adaptive) {
            (false, false) => "fixed",
            (true, false) => "actuated",
            (false, true) => "A",
            (true, true) => "AA",
        }
    }
}

/// A turning movement from one approach.
pub type Movement = (Cardinal, TurnKind);

/// Whether two movements may be served at the same time.
pub fn movements_conflict(a: Movement, b: Movement) -> bool {
    let ((da, ta), (db, tb)) = (a, b);
    if da == db {
        false
    } else if da.opposite() == db {
        // Opposing flows: lefts clash with anything but the opposing left.
        (ta == TurnKind::Left) != (tb == TurnKind::Left)
    } else {
        true
    }
}

pub fn codes_conflict(da: Cardinal, ca: MovementCode, db: Cardinal, cb: MovementCode) -> bool {
    ca.turns()
        .any(|ta| cb.turns().any(|tb| movements_conflict((da, ta), (db, tb))))
}

/// Symmetric compatibility table over all twelve movements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictMatrix {
    conflict: [[bool; 12]; 12],
}

fn movement_index((d, t): Movement) -> usize {
    d.index() * 3 + t as usize
}

impl ConflictMatrix {
    /// Movements with no lanes in the model never conflict with anything.
    pub fn from_model(model: &IntersectionModel) -> Self {
        let exists = |(d, t): Movement| {
            model
                .trajectories()
                .any(|tr| tr.key.from == d && tr.turn == t)
        };
        let mut conflict = [[false; 12]; 12];
        for a in all_movements() {
            for b in all_movements() {
                conflict[movement_index(a)][movement_index(b)] =
                    exists(a) && exists(b) && movements_conflict(a, b);
            }
        }
        ConflictMatrix { conflict }
    }

    pub fn conflicts(&self, a: Movement, b: Movement) -> bool {
        self.conflict[movement_index(a)][movement_index(b)]
    }
}

pub fn all_movements() -> impl Iterator<Item = Movement> {
    Cardinal::ALL
        .into_iter()
        .flat_map(|d| TurnKind::ALL.into_iter().map(move |t| (d, t)))
}

/// Greens from different rings inside the same barrier group may overlap;
/// report every such pair that conflicts.
pub fn static_conflicts(program: &SignalProgramDoc) -> Vec<String> {
    // (ring, group, direction, code)
    let mut greens = Vec::new();
    for (r, ring) in program.rings.iter().enumerate() {
        let mut group = 0;
        for e in ring {
            match e {
                RingEntry::Green {
                    direction, code, ..
                } => greens.push((r, group, *direction, *code)),
                RingEntry::Barrier { .. } => group += 1,
                _ => {}
            }
        }
        // The tail after the last barrier wraps into the first group.
        if group > 0 {
            for g in greens.iter_mut().filter(|g| g.0 == r && g.1 == group) {
                g.1 = 0;
            }
        }
    }
    let mut out = Vec::new();
    for (i, a) in greens.iter().enumerate() {
        for b in &greens[i + 1..] {
            if a.0 != b.0 && a.1 == b.1 && codes_conflict(a.2, a.3, b.2, b.3) {
                out.push(format!(
                    "ring {} phase {}{} may be green together with conflicting ring {} phase {}{}",
                    a.0 + 1,
                    a.2.letter(),
                    a.3.as_str(),
                    b.0 + 1,
                    b.2.letter(),
                    b.3.as_str()
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use Cardinal::*;
    use TurnKind::*;

    #[test]
    fn conflict_rule_cases() {
        assert!(!movements_conflict((North, Through), (South, Through)));
        assert!(movements_conflict((North, Left), (South, Through)));
        assert!(movements_conflict((East, Through), (North, Through)));
        assert!(!movements_conflict((North, Left), (South, Left)));
        assert!(!movements_conflict((North, Left), (North, Through)));
        assert!(movements_conflict((North, Right), (East, Right)));
    }

    #[test]
    fn conflict_rule_symmetric() {
        for a in all_movements() {
            assert!(!movements_conflict(a, a));
            for b in all_movements() {
                assert_eq!(movements_conflict(a, b), movements_conflict(b, a));
            }
        }
    }

    #[test]
    fn codes() {
        assert!(!codes_conflict(
            North,
            MovementCode::Cross,
            South,
            MovementCode::Cross
        ));
        assert!(codes_conflict(
            North,
            MovementCode::Cross,
            South,
            MovementCode::Through
        ));
        assert!(!codes_conflict(
            North,
            MovementCode::Through,
            South,
            MovementCode::Through
        ));
        assert!(codes_conflict(
            North,
            MovementCode::CrossThrough,
            South,
            MovementCode::CrossThrough
        ));
    }
}
