//! Lookup tables for adaptive timing. The row values are configuration
//! data; only the lookup shape is fixed.

/// Step function over sorted keys: a query takes the value of the last row
/// whose key does not exceed it, and the first row below the first key.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTable {
    rows: Vec<(f64, f64)>,
}

impl StepTable {
    /// Rows are sorted by key; panics when empty.
    pub fn new(mut rows: Vec<(f64, f64)>) -> Self {
        assert!(!rows.is_empty(), "lookup table needs at least one row");
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        StepTable { rows }
    }

    pub fn lookup(&self, key: f64) -> f64 {
        let idx = self.rows.partition_point(|r| r.0 <= key);
        self.rows[idx.saturating_sub(1)].1
    }

    pub fn rows(&self) -> &[(f64, f64)] {
        &self.rows
    }

    pub fn max_value(&self) -> f64 {
        self.rows
            .iter()
            .map(|r| r.1)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].1 <= w[1].1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveTables {
    /// Approach speed (m/s) -> gap timeout (s).
    pub gap_extension: StepTable,
    /// Vehicles per lane per cycle -> max green (s).
    pub max_green: StepTable,
}

impl Default for AdaptiveTables {
    fn default() -> Self {
        AdaptiveTables {
            gap_extension: StepTable::new(vec![
                (8.9, 3.0),
                (11.2, 3.0),
                (13.4, 3.5),
                (15.6, 3.5),
                (17.9, 4.0),
                (20.1, 4.5),
                (22.4, 5.0),
            ]),
            max_green: StepTable::new(vec![
                (1.0, 15.0),
                (3.0, 20.0),
                (5.0, 25.0),
                (7.0, 30.0),
                (9.0, 35.0),
                (11.0, 40.0),
                (13.0, 45.0),
                (15.0, 50.0),
            ]),
        }
    }
}
