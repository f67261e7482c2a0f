//! Bundled example domain used by tests, the simulator demo and the CLI.

use crate::graph::{parse_graph, DialogGraph};

/// A small travel-reimbursement graph covering every node type, templates
/// and logic nodes.
pub const MINI_DOMAIN: &str = include_str!("../assets/mini_domain.json");

pub fn mini_domain() -> DialogGraph {
    parse_graph(MINI_DOMAIN.as_bytes()).expect("bundled mini-domain is valid")
}
