//! Readers and writers for the three input files (signal program, arrival
//! counts, intersection layout) and the cross-file consistency check.

mod demand;
mod intersection;
mod signal;
mod validate;

pub use demand::{parse_demand_table, ActionCode, DemandParseError, DemandRow, DemandTable};
pub use intersection::{
    parse_intersection_spec, DirectionBlock, IntersectionParseError, IntersectionSpecDoc,
    VehicleLanes,
};
pub use signal::{
    parse_signal_program, MovementCode, RingEntry, SignalParseError, SignalProgramDoc,
};
pub use validate::{validate_cross_references, Diagnostic, ValidationReport};

use roxmltree::Node;

fn line_of(node: Node<'_, '_>) -> usize {
    node.document().text_pos_at(node.range().start).row as usize
}

/// Element children, skipping whitespace text and comments.
fn elements<'a, 'i>(node: Node<'a, 'i>) -> impl Iterator<Item = Node<'a, 'i>> {
    node.children().filter(|c| c.is_element())
}

/// Non-whitespace text directly inside an element.
fn stray_text<'a, 'i>(node: Node<'a, 'i>) -> Option<Node<'a, 'i>> {
    node.children()
        .find(|c| c.is_text() && !c.text().unwrap_or("").trim().is_empty())
}

fn text_of(node: Node<'_, '_>) -> String {
    node.children()
        .filter(|c| c.is_text())
        .filter_map(|c| c.text())
        .collect::<String>()
        .trim()
        .to_string()
}

fn split_fields(s: &str) -> Vec<&str> {
    s.split(',').map(str::trim).collect()
}

fn xml_line(e: &roxmltree::Error) -> usize {
    e.pos().row as usize
}
