use std::fmt;

use serde::Serialize;

use super::{placeholders, DialogGraph, NodeId, NodeType};

/// A soft problem in an otherwise loadable graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostic {
    Unreachable { node: NodeId },
    UndeclaredVariable { node: NodeId, name: String },
    LogicWithoutSource { node: NodeId, name: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::Unreachable { node } => {
                write!(f, "node {node} is unreachable from the start node")
            }
            Diagnostic::UndeclaredVariable { node, name } => write!(
                f,
                "node {node} uses template variable {name} which no variable node declares"
            ),
            Diagnostic::LogicWithoutSource { node, name } => write!(
                f,
                "logic node {node} tests {name} but no variable node declaring it precedes it"
            ),
        }
    }
}

pub fn validate_graph(graph: &DialogGraph) -> Vec<Diagnostic> {
    let start = graph.index_of(graph.start().as_str()).expect("start exists");
    let from_start = graph.distances_from(start);
    let mut out = Vec::new();

    for (i, node) in graph.nodes().iter().enumerate() {
        if from_start[i].is_none() {
            out.push(Diagnostic::Unreachable {
                node: node.id.clone(),
            });
        }
    }

    for node in graph.nodes() {
        for name in placeholders(&node.text) {
            if graph.variable_declarers(&name).next().is_none() {
                out.push(Diagnostic::UndeclaredVariable {
                    node: node.id.clone(),
                    name,
                });
            }
        }
    }

    for (i, node) in graph.nodes().iter().enumerate() {
        if node.node_type != NodeType::Logic {
            continue;
        }
        let Some(decl) = &node.variable else { continue };
        let has_source = graph.variable_declarers(&decl.name).any(|d| {
            let di = graph.index_of(d.id.as_str()).unwrap();
            from_start[di].is_some() && graph.distances_from(di)[i].is_some()
        });
        if !has_source {
            out.push(Diagnostic::LogicWithoutSource {
                node: node.id.clone(),
                name: decl.name.clone(),
            });
        }
    }
    out
}

/// Maximum number of edges on any simple path starting at the start node.
pub fn tree_depth(graph: &DialogGraph) -> usize {
    let start = graph.index_of(graph.start().as_str()).expect("start exists");
    match longest_path_acyclic(graph, start) {
        Some(d) => d,
        None => {
            let mut on_path = vec![false; graph.len()];
            longest_simple_path(graph, start, &mut on_path)
        }
    }
}

/// Longest path by memoized DFS; `None` if a cycle is reachable.
fn longest_path_acyclic(graph: &DialogGraph, start: usize) -> Option<usize> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done(usize),
    }
    let mut marks = vec![Mark::New; graph.len()];
    // explicit stack: (node, next successor position)
    let mut stack = vec![(start, 0usize)];
    marks[start] = Mark::Active;
    while let Some(&mut (u, ref mut pos)) = stack.last_mut() {
        let succ = graph.successor_indices(u);
        if *pos < succ.len() {
            let v = succ[*pos];
            *pos += 1;
            match marks[v] {
                Mark::Active => return None,
                Mark::New => {
                    marks[v] = Mark::Active;
                    stack.push((v, 0));
                }
                Mark::Done(_) => {}
            }
        } else {
            let best = succ
                .iter()
                .map(|&v| match marks[v] {
                    Mark::Done(d) => d + 1,
                    _ => unreachable!("successor finished before parent"),
                })
                .max()
                .unwrap_or(0);
            marks[u] = Mark::Done(best);
            stack.pop();
        }
    }
    match marks[start] {
        Mark::Done(d) => Some(d),
        _ => unreachable!(),
    }
}

fn longest_simple_path(graph: &DialogGraph, u: usize, on_path: &mut [bool]) -> usize {
    on_path[u] = true;
    let mut best = 0;
    for &v in graph.successor_indices(u) {
        if !on_path[v] {
            best = best.max(1 + longest_simple_path(graph, v, on_path));
        }
    }
    on_path[u] = false;
    best
}
