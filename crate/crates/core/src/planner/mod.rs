//! Dialog planning over the graph: simple-path enumeration, the longest path
//! prefix shared by all goal candidates, and variable-source look-back.
//!
//! The longest shared prefix ends at the first node where the remaining goal
//! candidates diverge (a decision point) or at a goal itself. Walking the
//! prefix silently and asking only at its tail is what keeps free-mode
//! dialogs short.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{tree_depth, DialogGraph, NodeId, NodeType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("no goal candidates to plan for")]
    NoGoals,
    #[error("goal {0} is not reachable from the planning origin")]
    UnreachableGoal(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no visited variable node declares {0}")]
    VariableSourceNotFound(String),
}

/// A simple path `(v1, ..., vn)` through the graph, `v1` being the origin.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Path(Vec<NodeId>);

impl Path {
    pub fn new(nodes: Vec<NodeId>) -> Self {
        Path(nodes)
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.0
    }

    /// Number of nodes on the path.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<&NodeId> {
        self.0.first()
    }

    pub fn last(&self) -> Option<&NodeId> {
        self.0.last()
    }

    pub fn is_prefix_of(&self, other: &Path) -> bool {
        other.0.starts_with(&self.0)
    }

    pub fn into_inner(self) -> Vec<NodeId> {
        self.0
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, n) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" -> ")?;
            }
            write!(f, "{n}")?;
        }
        Ok(())
    }
}

/// Goal node candidates still to be satisfied.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GoalSet(BTreeSet<NodeId>);

impl GoalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: NodeId) -> bool {
        self.0.insert(id)
    }

    pub fn remove(&mut self, id: &str) -> bool {
        self.0.remove(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.0.contains(id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NodeId> {
        self.0.iter()
    }

    pub fn retain(&mut self, f: impl FnMut(&NodeId) -> bool) {
        self.0.retain(f)
    }
}

impl FromIterator<NodeId> for GoalSet {
    fn from_iter<I: IntoIterator<Item = NodeId>>(iter: I) -> Self {
        GoalSet(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a GoalSet {
    type Item = &'a NodeId;
    type IntoIter = std::collections::btree_set::Iter<'a, NodeId>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

/// Caps that keep path enumeration finite on cyclic or very wide graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub max_paths_per_goal: usize,
    /// Maximum number of edges per path; `None` means four times the tree
    /// depth of the graph being planned over.
    pub max_path_length: Option<usize>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            max_paths_per_goal: 256,
            max_path_length: None,
        }
    }
}

impl PlanConfig {
    pub fn path_length_cap(&self, graph: &DialogGraph) -> usize {
        self.max_path_length
            .unwrap_or_else(|| 4 * tree_depth(graph))
            .max(1)
    }
}

/// Simple paths between two nodes, with a flag set when a cap cut the
/// enumeration short.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathSet {
    pub paths: Vec<Path>,
    pub truncated: bool,
}

/// All simple paths `origin -> goal`, depth-first in authored neighbor order.
pub fn enumerate_paths(
    graph: &DialogGraph,
    origin: &str,
    goal: &str,
    config: &PlanConfig,
) -> PathSet {
    let (Some(o), Some(g)) = (graph.index_of(origin), graph.index_of(goal)) else {
        return PathSet {
            paths: Vec::new(),
            truncated: false,
        };
    };
    let (raw, truncated) = enumerate_indices(graph, o, g, config);
    PathSet {
        paths: raw.into_iter().map(|p| to_path(graph, &p)).collect(),
        truncated,
    }
}

fn to_path(graph: &DialogGraph, indices: &[usize]) -> Path {
    Path(indices.iter().map(|&i| graph.node_at(i).id.clone()).collect())
}

pub(crate) fn enumerate_indices(
    graph: &DialogGraph,
    origin: usize,
    goal: usize,
    config: &PlanConfig,
) -> (Vec<Vec<usize>>, bool) {
    let max_edges = config.path_length_cap(graph);
    let max_paths = config.max_paths_per_goal.max(1);
    let reach_goal = reaches(graph, goal);
    let mut out = Vec::new();
    let mut truncated = false;
    if !reach_goal[origin] {
        return (out, false);
    }

    let mut on_path = vec![false; graph.len()];
    let mut path = vec![origin];
    on_path[origin] = true;
    // (node, next successor position)
    let mut stack = vec![(origin, 0usize)];
    while let Some(&mut (u, ref mut pos)) = stack.last_mut() {
        if u == goal && *pos == 0 {
            out.push(path.clone());
            if out.len() >= max_paths {
                truncated = true;
                break;
            }
            // a simple path cannot pass through its own end
            *pos = usize::MAX;
        }
        let succ = graph.successor_indices(u);
        if *pos < succ.len() {
            let v = succ[*pos];
            *pos += 1;
            if on_path[v] || !reach_goal[v] {
                continue;
            }
            if path.len() > max_edges {
                truncated = true;
                continue;
            }
            on_path[v] = true;
            path.push(v);
            stack.push((v, 0));
        } else {
            on_path[u] = false;
            path.pop();
            stack.pop();
        }
    }
    (out, truncated)
}

/// Nodes from which `target` can be reached.
fn reaches(graph: &DialogGraph, target: usize) -> Vec<bool> {
    let mut preds = vec![Vec::new(); graph.len()];
    for u in 0..graph.len() {
        for &v in graph.successor_indices(u) {
            preds[v].push(u);
        }
    }
    let mut seen = vec![false; graph.len()];
    let mut stack = vec![target];
    seen[target] = true;
    while let Some(v) = stack.pop() {
        for &u in &preds[v] {
            if !seen[u] {
                seen[u] = true;
                stack.push(u);
            }
        }
    }
    seen
}

/// The longest node sequence starting at `origin` that is a prefix of some
/// enumerated path to every goal. Among equally long candidates the one that
/// comes first in authored neighbor order wins.
pub fn longest_shared_prefix(
    graph: &DialogGraph,
    origin: &str,
    goals: &GoalSet,
    config: &PlanConfig,
) -> Result<Path, PlanError> {
    if goals.is_empty() {
        return Err(PlanError::NoGoals);
    }
    let o = graph
        .index_of(origin)
        .ok_or_else(|| PlanError::UnknownNode(NodeId::from(origin)))?;
    let mut per_goal = Vec::with_capacity(goals.len());
    for goal in goals {
        let g = graph
            .index_of(goal.as_str())
            .ok_or_else(|| PlanError::UnknownNode(goal.clone()))?;
        let (paths, truncated) = enumerate_indices(graph, o, g, config);
        if paths.is_empty() {
            return Err(PlanError::UnreachableGoal(goal.clone()));
        }
        if truncated {
            tracing::debug!(%goal, "path enumeration truncated by plan caps");
        }
        per_goal.push(paths);
    }

    // iterate the smallest path list, check prefixes against the others
    let reference = (0..per_goal.len())
        .min_by_key(|&i| per_goal[i].len())
        .unwrap();
    let prefix_sets: Vec<HashSet<&[usize]>> = per_goal
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != reference)
        .map(|(_, paths)| {
            paths
                .iter()
                .flat_map(|p| (1..=p.len()).map(move |n| &p[..n]))
                .collect()
        })
        .collect();

    let mut best: &[usize] = &per_goal[reference][0][..1];
    for path in &per_goal[reference] {
        for n in (best.len() + 1..=path.len()).rev() {
            let candidate = &path[..n];
            if prefix_sets.iter().all(|set| set.contains(candidate)) {
                best = candidate;
                break;
            }
        }
    }
    Ok(to_path(graph, best))
}

/// The most recently visited variable node that declares `name`.
pub fn find_variable_source(
    history: &[NodeId],
    graph: &DialogGraph,
    name: &str,
) -> Result<NodeId, PlanError> {
    history
        .iter()
        .rev()
        .find(|id| {
            graph.node(id.as_str()).is_some_and(|n| {
                n.node_type == NodeType::Variable
                    && n.variable.as_ref().is_some_and(|v| v.name == name)
            })
        })
        .cloned()
        .ok_or_else(|| PlanError::VariableSourceNotFound(name.to_string()))
}
