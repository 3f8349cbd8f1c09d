use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::{elements, line_of, split_fields, stray_text, text_of, xml_line};
use crate::intersection::{Cardinal, TurnKind};

/// Turning movements a signal entry controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MovementCode {
    /// `c`: the crossing turn (left).
    Cross,
    /// `t`: through plus the non-crossing turn (right).
    Through,
    /// `ct`: everything.
    CrossThrough,
}

impl MovementCode {
    pub fn as_str(self) -> &'static str {
        match self {
            MovementCode::Cross => "c",
            MovementCode::Through => "t",
            MovementCode::CrossThrough => "ct",
        }
    }

    pub fn parse(s: &str) -> Option<MovementCode> {
        match s {
            "c" => Some(MovementCode::Cross),
            "t" => Some(MovementCode::Through),
            "ct" => Some(MovementCode::CrossThrough),
            _ => None,
        }
    }

    pub fn covers(self, turn: TurnKind) -> bool {
        match self {
            MovementCode::Cross => turn == TurnKind::Left,
            MovementCode::Through => turn != TurnKind::Left,
            MovementCode::CrossThrough => true,
        }
    }

    /// The code whose green lets `turn` proceed, narrowest first.
    pub fn for_turn(turn: TurnKind) -> MovementCode {
        match turn {
            TurnKind::Left => MovementCode::Cross,
            _ => MovementCode::Through,
        }
    }

    pub fn turns(self) -> impl Iterator<Item = TurnKind> {
        TurnKind::ALL.into_iter().filter(move |t| self.covers(*t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RingEntry {
    Green {
        direction: Cardinal,
        code: MovementCode,
        gap: f64,
        min_green: f64,
        max_green: f64,
    },
    Yellow {
        direction: Cardinal,
        code: MovementCode,
        duration: f64,
    },
    Red {
        direction: Cardinal,
        code: MovementCode,
        duration: f64,
    },
    /// Acts as yellow plus red for the preceding green, then synchronises
    /// all rings.
    Barrier { id: String },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignalProgramDoc {
    pub rings: Vec<Vec<RingEntry>>,
    /// id -> (yellow seconds, red seconds)
    pub barrier_defs: BTreeMap<String, (f64, f64)>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalParseError {
    #[error("line {line}: malformed XML: {message}")]
    Xml { line: usize, message: String },
    #[error("line {line}: unexpected element <{name}>")]
    UnexpectedElement { line: usize, name: String },
    #[error("line {line}: unexpected text inside <{name}>")]
    UnexpectedText { line: usize, name: String },
    #[error("line {line}: barrier without an id attribute")]
    MissingBarrierId { line: usize },
    #[error("line {line}: barrier \"{id}\" is used but never defined")]
    MissingBarrierDef { line: usize, id: String },
    #[error("line {line}: barrier \"{id}\" is defined twice")]
    DuplicateBarrierDef { line: usize, id: String },
    #[error("line {line}: malformed tuple \"{text}\"")]
    MalformedPhaseTuple { line: usize, text: String },
    #[error("line {line}: unknown direction \"{token}\"")]
    UnknownDirection { line: usize, token: String },
    #[error("line {line}: unknown movement code \"{code}\"")]
    UnknownMovementCode { line: usize, code: String },
    #[error("line {line}: negative duration")]
    NegativeDuration { line: usize },
    #[error("line {line}: max green is below min green")]
    MaxBelowMin { line: usize },
    #[error("line {line}: green is not followed by yellow and red or by a barrier")]
    MissingClearance { line: usize },
    #[error("line {line}: clearance names a different movement than its green")]
    ClearanceMismatch { line: usize },
    #[error("line {line}: clearance without a preceding green")]
    UnexpectedClearance { line: usize },
}

fn number(tok: &str, line: usize, text: &str) -> Result<f64, SignalParseError> {
    let v: f64 = tok
        .parse()
        .map_err(|_| SignalParseError::MalformedPhaseTuple {
            line,
            text: text.to_string(),
        })?;
    if !v.is_finite() {
        return Err(SignalParseError::MalformedPhaseTuple {
            line,
            text: text.to_string(),
        });
    }
    if v < 0.0 {
        return Err(SignalParseError::NegativeDuration { line });
    }
    Ok(v)
}

fn head(fields: &[&str], line: usize) -> Result<(Cardinal, MovementCode), SignalParseError> {
    let direction =
        Cardinal::from_letter(fields[0]).ok_or_else(|| SignalParseError::UnknownDirection {
            line,
            token: fields[0].to_string(),
        })?;
    let code =
        MovementCode::parse(fields[1]).ok_or_else(|| SignalParseError::UnknownMovementCode {
            line,
            code: fields[1].to_string(),
        })?;
    Ok((direction, code))
}

fn parse_entry(node: roxmltree::Node<'_, '_>) -> Result<RingEntry, SignalParseError> {
    let line = line_of(node);
    let name = node.tag_name().name();
    if name == "barrier" {
        let id = node
            .attribute("id")
            .ok_or(SignalParseError::MissingBarrierId { line })?;
        if stray_text(node).is_some() || elements(node).next().is_some() {
            return Err(SignalParseError::UnexpectedText {
                line,
                name: name.to_string(),
            });
        }
        return Ok(RingEntry::Barrier { id: id.to_string() });
    }
    if let Some(child) = elements(node).next() {
        return Err(SignalParseError::UnexpectedElement {
            line: line_of(child),
            name: child.tag_name().name().to_string(),
        });
    }
    let text = text_of(node);
    let fields = split_fields(&text);
    let malformed = || SignalParseError::MalformedPhaseTuple {
        line,
        text: text.clone(),
    };
    match name {
        "green" => {
            if fields.len() != 5 {
                return Err(malformed());
            }
            let (direction, code) = head(&fields, line)?;
            let gap = number(fields[2], line, &text)?;
            let min_green = number(fields[3], line, &text)?;
            let max_green = number(fields[4], line, &text)?;
            if max_green < min_green {
                return Err(SignalParseError::MaxBelowMin { line });
            }
            Ok(RingEntry::Green {
                direction,
                code,
                gap,
                min_green,
                max_green,
            })
        }
        "yellow" | "red" => {
            if fields.len() != 3 {
                return Err(malformed());
            }
            let (direction, code) = head(&fields, line)?;
            let duration = number(fields[2], line, &text)?;
            Ok(if name == "yellow" {
                RingEntry::Yellow {
                    direction,
                    code,
                    duration,
                }
            } else {
                RingEntry::Red {
                    direction,
                    code,
                    duration,
                }
            })
        }
        other => Err(SignalParseError::UnexpectedElement {
            line,
            name: other.to_string(),
        }),
    }
}

fn movement(e: &RingEntry) -> Option<(Cardinal, MovementCode)> {
    match *e {
        RingEntry::Green {
            direction, code, ..
        }
        | RingEntry::Yellow {
            direction, code, ..
        }
        | RingEntry::Red {
            direction, code, ..
        } => Some((direction, code)),
        RingEntry::Barrier { .. } => None,
    }
}

/// Each green must be closed by yellow + red for the same movement, or by a
/// barrier reference.
fn check_ring(entries: &[(RingEntry, usize)]) -> Result<(), SignalParseError> {
    let mut i = 0;
    while i < entries.len() {
        let (entry, line) = &entries[i];
        let RingEntry::Green { .. } = entry else {
            return Err(SignalParseError::UnexpectedClearance { line: *line });
        };
        let mv = movement(entry);
        match entries.get(i + 1) {
            Some((RingEntry::Barrier { .. }, _)) => i += 2,
            Some((y @ RingEntry::Yellow { .. }, yl)) => {
                if movement(y) != mv {
                    return Err(SignalParseError::ClearanceMismatch { line: *yl });
                }
                match entries.get(i + 2) {
                    Some((r @ RingEntry::Red { .. }, rl)) => {
                        if movement(r) != mv {
                            return Err(SignalParseError::ClearanceMismatch { line: *rl });
                        }
                    }
                    _ => return Err(SignalParseError::MissingClearance { line: *line }),
                }
                i += 3;
            }
            _ => return Err(SignalParseError::MissingClearance { line: *line }),
        }
    }
    Ok(())
}

/// Parse a ring-and-barrier signal program.
pub fn parse_signal_program(text: &str) -> Result<SignalProgramDoc, SignalParseError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| SignalParseError::Xml {
        line: xml_line(&e),
        message: e.to_string(),
    })?;
    let root = doc.root_element();
    let mut rings = Vec::new();
    let mut refs = Vec::new();
    let mut barrier_defs = BTreeMap::new();
    if let Some(t) = stray_text(root) {
        return Err(SignalParseError::UnexpectedText {
            line: line_of(t),
            name: root.tag_name().name().to_string(),
        });
    }
    for child in elements(root) {
        let line = line_of(child);
        match child.tag_name().name() {
            "ring" => {
                if let Some(t) = stray_text(child) {
                    return Err(SignalParseError::UnexpectedText {
                        line: line_of(t),
                        name: "ring".into(),
                    });
                }
                let mut entries = Vec::new();
                for e in elements(child) {
                    let entry = parse_entry(e)?;
                    if let RingEntry::Barrier { id } = &entry {
                        refs.push((id.clone(), line_of(e)));
                    }
                    entries.push((entry, line_of(e)));
                }
                check_ring(&entries)?;
                rings.push(entries.into_iter().map(|(e, _)| e).collect());
            }
            "barrier" => {
                let id = child
                    .attribute("id")
                    .ok_or(SignalParseError::MissingBarrierId { line })?;
                let text = text_of(child);
                let fields = split_fields(&text);
                if fields.len() != 2 {
                    return Err(SignalParseError::MalformedPhaseTuple { line, text });
                }
                let yellow = number(fields[0], line, &text)?;
                let red = number(fields[1], line, &text)?;
                if barrier_defs.insert(id.to_string(), (yellow, red)).is_some() {
                    return Err(SignalParseError::DuplicateBarrierDef {
                        line,
                        id: id.to_string(),
                    });
                }
            }
            other => {
                return Err(SignalParseError::UnexpectedElement {
                    line,
                    name: other.to_string(),
                })
            }
        }
    }
    for (id, line) in refs {
        if !barrier_defs.contains_key(&id) {
            return Err(SignalParseError::MissingBarrierDef { line, id });
        }
    }
    Ok(SignalProgramDoc {
        rings,
        barrier_defs,
    })
}

impl SignalProgramDoc {
    pub fn to_xml(&self) -> String {
        let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<root>\n");
        for ring in &self.rings {
            out.push_str("    <ring>\n");
            for e in ring {
                let _ = match e {
                    RingEntry::Green {
                        direction,
                        code,
                        gap,
                        min_green,
                        max_green,
                    } => writeln!(
                        out,
                        "        <green>{}, {}, {gap}, {min_green}, {max_green}</green>",
                        direction.letter(),
                        code.as_str()
                    ),
                    RingEntry::Yellow {
                        direction,
                        code,
                        duration,
                    } => writeln!(
                        out,
                        "        <yellow>{}, {}, {duration}</yellow>",
                        direction.letter(),
                        code.as_str()
                    ),
                    RingEntry::Red {
                        direction,
                        code,
                        duration,
                    } => writeln!(
                        out,
                        "        <red>{}, {}, {duration}</red>",
                        direction.letter(),
                        code.as_str()
                    ),
                    RingEntry::Barrier { id } => {
                        writeln!(out, "        <barrier id=\"{}\"></barrier>", escape(id))
                    }
                };
            }
            out.push_str("    </ring>\n");
        }
        for (id, (y, r)) in &self.barrier_defs {
            let _ = writeln!(out, "    <barrier id=\"{}\">{y}, {r}</barrier>", escape(id));
        }
        out.push_str("</root>\n");
        out
    }

    /// Greens in ring order, as (ring, entry index).
    pub fn greens(&self) -> impl Iterator<Item = (usize, usize, &RingEntry)> {
        self.rings.iter().enumerate().flat_map(|(r, ring)| {
            ring.iter()
                .enumerate()
                .filter(|(_, e)| matches!(e, RingEntry::Green { .. }))
                .map(move |(i, e)| (r, i, e))
        })
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('"', "&quot;")
        .replace('<', "&lt;")
}
