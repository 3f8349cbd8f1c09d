use std::fmt;

use chrono::{NaiveTime, Timelike};
use thiserror::Error;

use crate::intersection::{Cardinal, TurnKind};

/// One or more turning actions sharing a count column, e.g. `TR`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionCode(Vec<TurnKind>);

impl ActionCode {
    pub fn parse(s: &str) -> Option<ActionCode> {
        let mut turns = Vec::new();
        for c in s.chars() {
            let t = TurnKind::from_letter(c)?;
            if turns.contains(&t) {
                return None;
            }
            turns.push(t);
        }
        (!turns.is_empty()).then_some(ActionCode(turns))
    }

    pub fn single(turn: TurnKind) -> ActionCode {
        ActionCode(vec![turn])
    }

    pub fn turns(&self) -> &[TurnKind] {
        &self.0
    }

    pub fn is_compound(&self) -> bool {
        self.0.len() > 1
    }
}

impl fmt::Display for ActionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.0 {
            write!(f, "{}", t.letter())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemandRow {
    /// Seconds since midnight.
    pub clock: u32,
    /// Indexed like `DemandTable::action_columns`.
    pub counts: Vec<Vec<u32>>,
}

/// Bucketed arrival counts per road and turning action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemandTable {
    pub road_order: Vec<Cardinal>,
    pub action_columns: Vec<Vec<ActionCode>>,
    pub rows: Vec<DemandRow>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DemandParseError {
    #[error("line {row}: {message}")]
    Csv { row: usize, message: String },
    #[error("file has {rows} data rows; at least 2 are needed to infer the bucket length")]
    TooFewRows { rows: usize },
    #[error("line {row}: {message}")]
    BadHeader { row: usize, message: String },
    #[error("line {row}, field {col}: unknown road \"{token}\"")]
    UnknownRoad {
        row: usize,
        col: usize,
        token: String,
    },
    #[error("line {row}, field {col}: road listed twice")]
    DuplicateRoad { row: usize, col: usize },
    #[error("line {row}, field {col}: unknown action code \"{code}\"")]
    UnknownActionCode {
        row: usize,
        col: usize,
        code: String,
    },
    #[error("line {row}: expected {expected} fields, found {found}")]
    WrongFieldCount {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {row}, field {col}: \"{text}\" is not a non-negative integer")]
    NonIntegerCount {
        row: usize,
        col: usize,
        text: String,
    },
    #[error("line {row}: cannot parse timestamp \"{text}\"")]
    TimestampParseError { row: usize, text: String },
    #[error("line {row}: timestamp goes backwards; data spanning several days is not supported")]
    MultiDaySpanUnsupported { row: usize },
    #[error("line {row}: timestamp repeats the previous row")]
    DuplicateTimestamp { row: usize },
    #[error("line {row}: bucket length differs from the first bucket")]
    UnequalBucketLengths { row: usize },
}

fn parse_clock(s: &str) -> Option<u32> {
    let t = NaiveTime::parse_from_str(s.trim(), "%I:%M %p").ok()?;
    Some(t.num_seconds_from_midnight())
}

fn format_clock(secs: u32) -> String {
    NaiveTime::from_num_seconds_from_midnight_opt(secs, 0)
        .map(|t| t.format("%-I:%M %p").to_string())
        .unwrap_or_default()
}

/// Parse an arrival-count CSV export.
pub fn parse_demand_table(text: &str) -> Result<DemandTable, DemandParseError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| DemandParseError::Csv {
            row: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        records.push((row, rec));
    }
    let mut it = records.into_iter();
    let (road_row, roads) = it.next().ok_or(DemandParseError::BadHeader {
        row: 1,
        message: "missing road order row".into(),
    })?;
    let mut road_order = Vec::new();
    for (i, tok) in roads.iter().enumerate() {
        let d = Cardinal::from_name(tok).ok_or_else(|| DemandParseError::UnknownRoad {
            row: road_row,
            col: i + 1,
            token: tok.to_string(),
        })?;
        if road_order.contains(&d) {
            return Err(DemandParseError::DuplicateRoad {
                row: road_row,
                col: i + 1,
            });
        }
        road_order.push(d);
    }

    let (action_row, actions) = it.next().ok_or(DemandParseError::BadHeader {
        row: road_row + 1,
        message: "missing action code row".into(),
    })?;
    let fields: Vec<&str> = actions.iter().collect();
    if fields.last() != Some(&"Vehicle Total") {
        return Err(DemandParseError::BadHeader {
            row: action_row,
            message: "action row must end with \"Vehicle Total\"".into(),
        });
    }
    let mut action_columns = Vec::new();
    let mut group = Vec::new();
    for (i, tok) in fields[..fields.len() - 1].iter().enumerate() {
        if *tok == "Total" {
            action_columns.push(std::mem::take(&mut group));
            continue;
        }
        group.push(
            ActionCode::parse(tok).ok_or_else(|| DemandParseError::UnknownActionCode {
                row: action_row,
                col: i + 1,
                code: tok.to_string(),
            })?,
        );
    }
    if !group.is_empty() || action_columns.len() != road_order.len() {
        return Err(DemandParseError::BadHeader {
            row: action_row,
            message: format!(
                "expected {} \"Total\"-terminated action groups, one per road",
                road_order.len()
            ),
        });
    }
    let expected = 2 + action_columns.iter().map(|g| g.len() + 1).sum::<usize>();

    let mut rows: Vec<DemandRow> = Vec::new();
    let mut bucket = None;
    for (row, rec) in it {
        if rec.len() != expected {
            return Err(DemandParseError::WrongFieldCount {
                row,
                expected,
                found: rec.len(),
            });
        }
        let clock = parse_clock(&rec[0]).ok_or_else(|| DemandParseError::TimestampParseError {
            row,
            text: rec[0].to_string(),
        })?;
        let mut col = 1;
        let mut counts = Vec::with_capacity(action_columns.len());
        for group in &action_columns {
            let mut c = Vec::with_capacity(group.len());
            // Per-road totals and the trailing grand total are ignored.
            for k in 0..=group.len() {
                let field = &rec[col];
                let n: u32 = field
                    .parse()
                    .map_err(|_| DemandParseError::NonIntegerCount {
                        row,
                        col: col + 1,
                        text: field.to_string(),
                    })?;
                if k < group.len() {
                    c.push(n);
                }
                col += 1;
            }
            counts.push(c);
        }
        let last = &rec[col];
        last.parse::<u32>()
            .map_err(|_| DemandParseError::NonIntegerCount {
                row,
                col: col + 1,
                text: last.to_string(),
            })?;
        if let Some(prev) = rows.last() {
            if clock == prev.clock {
                return Err(DemandParseError::DuplicateTimestamp { row });
            }
            if clock < prev.clock {
                return Err(DemandParseError::MultiDaySpanUnsupported { row });
            }
            let step = clock - prev.clock;
            match bucket {
                None => bucket = Some(step),
                Some(b) if b != step => return Err(DemandParseError::UnequalBucketLengths { row }),
                Some(_) => {}
            }
        }
        rows.push(DemandRow { clock, counts });
    }
    if rows.len() < 2 {
        return Err(DemandParseError::TooFewRows { rows: rows.len() });
    }
    Ok(DemandTable {
        road_order,
        action_columns,
        rows,
    })
}

impl DemandTable {
    /// Seconds covered by each row.
    pub fn bucket_length(&self) -> f64 {
        (self.rows[1].clock - self.rows[0].clock) as f64
    }

    /// Total span from the first timestamp to the end of the last bucket.
    pub fn span(&self) -> f64 {
        self.bucket_length() * self.rows.len() as f64
    }

    pub fn road_index(&self, road: Cardinal) -> Option<usize> {
        self.road_order.iter().position(|r| *r == road)
    }

    pub fn total_vehicles(&self) -> u64 {
        self.rows
            .iter()
            .flat_map(|r| r.counts.iter().flatten())
            .map(|&c| c as u64)
            .sum()
    }

    /// Total vehicles per bucket.
    pub fn bucket_totals(&self) -> Vec<u64> {
        self.rows
            .iter()
            .map(|r| r.counts.iter().flatten().map(|&c| c as u64).sum())
            .collect()
    }

    /// Serialise in the same layout the parser reads; totals are recomputed.
    pub fn to_csv(&self) -> String {
        let mut out = self
            .road_order
            .iter()
            .map(|r| r.name())
            .collect::<Vec<_>>()
            .join(", ");
        out.push('\n');
        for g in &self.action_columns {
            for a in g {
                out.push_str(&a.to_string());
                out.push(',');
            }
            out.push_str("Total,");
        }
        out.push_str("Vehicle Total\n");
        for row in &self.rows {
            out.push_str(&format_clock(row.clock));
            let mut grand = 0u64;
            for c in &row.counts {
                let mut total = 0u64;
                for n in c {
                    out.push_str(&format!(",{n}"));
                    total += *n as u64;
                }
                out.push_str(&format!(",{total}"));
                grand += total;
            }
            out.push_str(&format!(",{grand}\n"));
        }
        out
    }
}
