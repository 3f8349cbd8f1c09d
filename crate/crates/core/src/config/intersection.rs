use std::fmt::Write as _;

use thiserror::Error;

use super::{elements, line_of, split_fields, stray_text, text_of, xml_line};
use crate::intersection::{classify_turn, Cardinal, RoadSpec, VehicleClass};

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleLanes {
    pub class: VehicleClass,
    pub pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionBlock {
    pub from: Cardinal,
    pub to: Cardinal,
    pub vehicles: Vec<VehicleLanes>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntersectionSpecDoc {
    pub roads: Vec<RoadSpec>,
    pub directions: Vec<DirectionBlock>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntersectionParseError {
    #[error("line {line}: malformed XML: {message}")]
    Xml { line: usize, message: String },
    #[error("line {line}: unexpected element <{name}>")]
    UnexpectedElement { line: usize, name: String },
    #[error("line {line}: unexpected text inside <{name}>")]
    UnexpectedText { line: usize, name: String },
    #[error(
        "line {line}: road entry \"{text}\" needs direction, incoming, outgoing, speed, horizon"
    )]
    MalformedRoad { line: usize, text: String },
    #[error("line {line}: speed limit and reservation horizon must be positive numbers")]
    InvalidRoadValue { line: usize },
    #[error("line {line}: unknown direction \"{token}\"")]
    UnknownDirection { line: usize, token: String },
    #[error("line {line}: road {direction} is declared twice")]
    DuplicateRoadDirection { line: usize, direction: Cardinal },
    #[error("line {line}: <direction> needs exactly one <from_to> of the form \"FROM, TO\"")]
    MalformedFromTo { line: usize },
    #[error("line {line}: u-turns are not supported")]
    UTurnUnsupported { line: usize },
    #[error("line {line}: malformed lane pair list \"{text}\"")]
    MalformedLanePair { line: usize, text: String },
    #[error("line {line}: unknown vehicle type \"{ty}\"")]
    UnknownVehicleType { line: usize, ty: String },
    #[error("line {line}: incoming lane {lane} is mapped twice for this movement")]
    DuplicateIncomingLane { line: usize, lane: usize },
}

type PResult<T> = Result<T, IntersectionParseError>;

fn direction(tok: &str, line: usize) -> PResult<Cardinal> {
    Cardinal::from_name(tok).ok_or_else(|| IntersectionParseError::UnknownDirection {
        line,
        token: tok.to_string(),
    })
}

fn parse_road(text: &str, line: usize) -> PResult<RoadSpec> {
    let f = split_fields(text);
    let malformed = || IntersectionParseError::MalformedRoad {
        line,
        text: text.to_string(),
    };
    if f.len() != 5 {
        return Err(malformed());
    }
    let d = direction(f[0], line)?;
    let incoming: usize = f[1].parse().map_err(|_| malformed())?;
    let outgoing: usize = f[2].parse().map_err(|_| malformed())?;
    let speed_limit: f64 = f[3].parse().map_err(|_| malformed())?;
    let reservation_horizon: f64 = f[4].parse().map_err(|_| malformed())?;
    if !(speed_limit.is_finite()
        && speed_limit > 0.0
        && reservation_horizon.is_finite()
        && reservation_horizon > 0.0)
    {
        return Err(IntersectionParseError::InvalidRoadValue { line });
    }
    Ok(RoadSpec {
        direction: d,
        incoming_lanes: incoming,
        outgoing_lanes: outgoing,
        speed_limit,
        reservation_horizon,
    })
}

/// `(i,j), (k, l)`; whitespace anywhere between tokens.
fn parse_pairs(text: &str, line: usize) -> PResult<Vec<(usize, usize)>> {
    let malformed = || IntersectionParseError::MalformedLanePair {
        line,
        text: text.to_string(),
    };
    let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if compact.is_empty() {
        return Ok(Vec::new());
    }
    let mut pairs = Vec::new();
    let mut rest = compact.as_str();
    loop {
        let body = rest.strip_prefix('(').ok_or_else(malformed)?;
        let close = body.find(')').ok_or_else(malformed)?;
        let (a, b) = body[..close].split_once(',').ok_or_else(malformed)?;
        let i = a.parse().map_err(|_| malformed())?;
        let o = b.parse().map_err(|_| malformed())?;
        if pairs.iter().any(|&(x, _)| x == i) {
            return Err(IntersectionParseError::DuplicateIncomingLane { line, lane: i });
        }
        pairs.push((i, o));
        rest = &body[close + 1..];
        if rest.is_empty() {
            return Ok(pairs);
        }
        rest = rest.strip_prefix(',').ok_or_else(malformed)?;
    }
}

fn parse_direction(node: roxmltree::Node<'_, '_>) -> PResult<DirectionBlock> {
    let line = line_of(node);
    let mut from_to = None;
    let mut vehicles: Vec<VehicleLanes> = Vec::new();
    for child in elements(node) {
        let cl = line_of(child);
        match child.tag_name().name() {
            "from_to" => {
                if from_to.is_some() {
                    return Err(IntersectionParseError::MalformedFromTo { line: cl });
                }
                let text = text_of(child);
                let f = split_fields(&text);
                if f.len() != 2 {
                    return Err(IntersectionParseError::MalformedFromTo { line: cl });
                }
                let from = direction(f[0], cl)?;
                let to = direction(f[1], cl)?;
                classify_turn(from, to)
                    .map_err(|_| IntersectionParseError::UTurnUnsupported { line: cl })?;
                from_to = Some((from, to));
            }
            "vehicle" => {
                let ty = child.attribute("type").unwrap_or("");
                let class = VehicleClass::from_name(ty).ok_or_else(|| {
                    IntersectionParseError::UnknownVehicleType {
                        line: cl,
                        ty: ty.to_string(),
                    }
                })?;
                let pairs = parse_pairs(&text_of(child), cl)?;
                // Repeated tags for one class are merged.
                match vehicles.iter_mut().find(|v| v.class == class) {
                    Some(v) => {
                        for p in pairs {
                            if v.pairs.iter().any(|&(x, _)| x == p.0) {
                                return Err(IntersectionParseError::DuplicateIncomingLane {
                                    line: cl,
                                    lane: p.0,
                                });
                            }
                            v.pairs.push(p);
                        }
                    }
                    None => vehicles.push(VehicleLanes { class, pairs }),
                }
            }
            other => {
                return Err(IntersectionParseError::UnexpectedElement {
                    line: cl,
                    name: other.to_string(),
                })
            }
        }
    }
    let (from, to) = from_to.ok_or(IntersectionParseError::MalformedFromTo { line })?;
    Ok(DirectionBlock { from, to, vehicles })
}

/// Parse an intersection layout document.
pub fn parse_intersection_spec(text: &str) -> Result<IntersectionSpecDoc, IntersectionParseError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| IntersectionParseError::Xml {
        line: xml_line(&e),
        message: e.to_string(),
    })?;
    let root = doc.root_element();
    if root.tag_name().name() != "intersection" {
        return Err(IntersectionParseError::UnexpectedElement {
            line: line_of(root),
            name: root.tag_name().name().to_string(),
        });
    }
    if let Some(t) = stray_text(root) {
        return Err(IntersectionParseError::UnexpectedText {
            line: line_of(t),
            name: "intersection".into(),
        });
    }
    let mut out = IntersectionSpecDoc::default();
    for child in elements(root) {
        let line = line_of(child);
        match child.tag_name().name() {
            "road" => {
                let road = parse_road(&text_of(child), line)?;
                if out.roads.iter().any(|r| r.direction == road.direction) {
                    return Err(IntersectionParseError::DuplicateRoadDirection {
                        line,
                        direction: road.direction,
                    });
                }
                out.roads.push(road);
            }
            "direction" => out.directions.push(parse_direction(child)?),
            other => {
                return Err(IntersectionParseError::UnexpectedElement {
                    line,
                    name: other.to_string(),
                })
            }
        }
    }
    Ok(out)
}

impl IntersectionSpecDoc {
    pub fn road(&self, d: Cardinal) -> Option<&RoadSpec> {
        self.roads.iter().find(|r| r.direction == d)
    }

    /// Lane pairs declared for a class and movement (merged across blocks).
    pub fn pairs(&self, class: VehicleClass, from: Cardinal, to: Cardinal) -> Vec<(usize, usize)> {
        self.directions
            .iter()
            .filter(|b| b.from == from && b.to == to)
            .flat_map(|b| b.vehicles.iter().filter(|v| v.class == class))
            .flat_map(|v| v.pairs.iter().copied())
            .collect()
    }

    pub fn to_xml(&self) -> String {
        let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<intersection>\n");
        out.push_str("    <!--Direction of travel, incoming, outgoing, speed in m/s,-->\n");
        out.push_str("    <!--maximum future time for reservation in seconds-->\n");
        for r in &self.roads {
            let _ = writeln!(
                out,
                "    <road>{}, {}, {}, {}, {}</road>",
                r.direction,
                r.incoming_lanes,
                r.outgoing_lanes,
                r.speed_limit,
                r.reservation_horizon
            );
        }
        out.push_str("\n    <!--Connections-->\n");
        for b in &self.directions {
            out.push_str("    <direction>\n");
            let _ = writeln!(out, "        <from_to>{}, {}</from_to>", b.from, b.to);
            for v in &b.vehicles {
                let pairs = v
                    .pairs
                    .iter()
                    .map(|(i, o)| format!("({i},{o})"))
                    .collect::<Vec<_>>()
                    .join(", ");
                let _ = writeln!(
                    out,
                    "        <vehicle type=\"{}\">{pairs}</vehicle>",
                    v.class
                );
            }
            out.push_str("    </direction>\n");
        }
        out.push_str("</intersection>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn road_line() {
        let r = parse_road("EAST, 3, 1, 13.4, 14.925373134328358208955223880597", 1).unwrap();
        assert_eq!(r.direction, Cardinal::East);
        assert_eq!((r.incoming_lanes, r.outgoing_lanes), (3, 1));
        assert_eq!(r.speed_limit, 13.4);
        assert!((r.reservation_horizon - 200.0 / 13.4).abs() < 1e-12);
    }

    #[test]
    fn lane_pairs() {
        assert_eq!(
            parse_pairs("(1,0), (2,1)", 1).unwrap(),
            vec![(1, 0), (2, 1)]
        );
        assert_eq!(
            parse_pairs("(1, 0),(2, 1)", 1).unwrap(),
            vec![(1, 0), (2, 1)]
        );
        for bad in ["(1,0", "1,0", "(1;0)", "(1,0)(2,1)", "(a,0)", "(1,0),"] {
            assert!(
                matches!(
                    parse_pairs(bad, 7),
                    Err(IntersectionParseError::MalformedLanePair { line: 7, .. })
                ),
                "{bad}"
            );
        }
        assert!(matches!(
            parse_pairs("(1,0), (1,1)", 2),
            Err(IntersectionParseError::DuplicateIncomingLane { lane: 1, .. })
        ));
    }

    #[test]
    fn duplicate_road() {
        let e = parse_intersection_spec(
            "<intersection>\n<road>EAST, 1, 1, 10, 5</road>\n<road>EAST, 2, 1, 10, 5</road>\n</intersection>",
        )
        .unwrap_err();
        assert_eq!(
            e,
            IntersectionParseError::DuplicateRoadDirection {
                line: 3,
                direction: Cardinal::East
            }
        );
    }

    #[test]
    fn bad_vehicle_and_uturn() {
        let e = parse_intersection_spec(
            "<intersection><direction><from_to>EAST, EAST</from_to>\n<vehicle type=\"BUS\">(0,0)</vehicle></direction></intersection>",
        )
        .unwrap_err();
        assert!(matches!(
            e,
            IntersectionParseError::UnknownVehicleType { line: 2, .. }
        ));
        let e = parse_intersection_spec(
            "<intersection><direction><from_to>EAST, WEST</from_to></direction></intersection>",
        )
        .unwrap_err();
        assert!(matches!(e, IntersectionParseError::UTurnUnsupported { .. }));
    }
}
