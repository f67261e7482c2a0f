//! User simulator: samples a goal node, a mode and a path, then plays the
//! user side of a dialog with stored FAQ questions and answer paraphrases.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{tree_depth, Beliefstate, Condition, DialogGraph, NodeId, NodeType, Value, ValueKind};
use crate::nlu::ModeLabel;
use crate::planner::{enumerate_paths, Path, PlanConfig};
use crate::policy::{ActionKind, Awaiting, DialogPolicy, LogEntry, SystemAction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSplit {
    Uniform,
    Fixed(ModeLabel),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub num_dialogs: usize,
    pub seed: u64,
    /// A node encountered this many times aborts the dialog.
    pub patience: usize,
    /// Turn cap is this multiple of the graph's tree depth.
    pub turn_cap_multiplier: usize,
    pub mode_split: ModeSplit,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            num_dialogs: 500,
            seed: 0,
            patience: 3,
            turn_cap_multiplier: 4,
            mode_split: ModeSplit::Uniform,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.num_dialogs < 1 {
            return Err(SimError::InvalidConfig("num_dialogs must be at least 1"));
        }
        if self.patience < 2 {
            return Err(SimError::InvalidConfig("patience must be at least 2"));
        }
        if self.turn_cap_multiplier < 1 {
            return Err(SimError::InvalidConfig("turn_cap_multiplier must be at least 1"));
        }
        Ok(())
    }

    pub fn turn_cap(&self, graph: &DialogGraph) -> usize {
        self.turn_cap_multiplier * tree_depth(graph)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("no node has FAQ questions to sample a goal from")]
    NoGoalCandidates,
    #[error("no path to goal {0} admits a consistent variable assignment")]
    NoSatisfiablePath(NodeId),
    #[error("no first edge to phrase an opening utterance for goal {0}")]
    MissingParaphrases(NodeId),
    #[error("invalid simulator config: {0}")]
    InvalidConfig(&'static str),
}

/// What the simulated user wants and how they will answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserGoal {
    pub goal: NodeId,
    pub mode: ModeLabel,
    pub goal_path: Path,
    pub variable_assignment: Beliefstate,
}

/// Answer id of the first answer edge `from -> to`, if any.
fn answer_between<'g>(graph: &'g DialogGraph, from: &str, to: &str) -> Option<&'g crate::graph::Answer> {
    graph.node(from)?.answers.iter().find(|a| a.target == *to)
}

/// Values worth trying for a variable: the literals it is compared against
/// and their neighbours.
fn value_candidates(graph: &DialogGraph, name: &str, kind: ValueKind) -> Vec<Value> {
    let mut out: Vec<Value> = Vec::new();
    fn push(out: &mut Vec<Value>, v: Value) {
        if !out.contains(&v) {
            out.push(v);
        }
    }
    let literals = graph
        .nodes()
        .iter()
        .filter(|n| n.node_type == NodeType::Logic)
        .flat_map(|n| n.branches.iter())
        .filter_map(|b| match &b.condition {
            Condition::Compare { variable, literal, .. } if variable == name => Some(literal.clone()),
            _ => None,
        });
    match kind {
        ValueKind::Number => {
            for lit in literals {
                if let Value::Number(x) = lit {
                    for d in [0.0, -1.0, 1.0, -0.5, 0.5] {
                        push(&mut out, Value::Number(x + d));
                    }
                }
            }
            if out.is_empty() {
                push(&mut out, Value::Number(1.0));
            }
        }
        ValueKind::Text => {
            for lit in literals {
                push(&mut out, lit);
            }
            push(&mut out, Value::Text("Other".into()));
        }
        ValueKind::Boolean => {
            push(&mut out, Value::Bool(true));
            push(&mut out, Value::Bool(false));
        }
    }
    out
}

/// Variable values that send the dialog down `path`, or `None` when the
/// path's logic branches contradict each other.
fn satisfying_assignment(graph: &DialogGraph, path: &Path, rng: &mut impl Rng) -> Option<Beliefstate> {
    // (variable, node, index of the branch the path takes)
    let mut constraints: Vec<(&str, &crate::graph::DialogNode, usize)> = Vec::new();
    for w in path.nodes().windows(2) {
        let node = graph.node(w[0].as_str())?;
        if node.node_type != NodeType::Logic {
            continue;
        }
        let name = node.variable.as_ref()?.name.as_str();
        let taken = node.branches.iter().position(|b| b.target == w[1])?;
        constraints.push((name, node, taken));
    }
    let mut declared: Vec<(&str, ValueKind)> = Vec::new();
    for n in graph.nodes() {
        if let (NodeType::Variable, Some(decl)) = (n.node_type, &n.variable) {
            if !declared.iter().any(|(name, _)| *name == decl.name) {
                declared.push((&decl.name, decl.value_kind));
            }
        }
    }
    let mut assignment = Beliefstate::new();
    for (name, kind) in declared {
        let ok: Vec<Value> = value_candidates(graph, name, kind)
            .into_iter()
            .filter(|v| {
                let single: Beliefstate = [(name, v.clone())].into_iter().collect();
                constraints
                    .iter()
                    .filter(|(var, _, _)| *var == name)
                    .all(|(_, node, taken)| node.resolve_branch(&single) == Ok(Some(*taken)))
            })
            .collect();
        assignment.set(name, ok.choose(rng)?.clone());
    }
    // logic nodes testing undeclared variables cannot be steered
    let all_resolved = constraints
        .iter()
        .all(|(_, node, taken)| node.resolve_branch(&assignment) == Ok(Some(*taken)));
    all_resolved.then_some(assignment)
}

pub fn sample_goal(graph: &DialogGraph, mode_split: ModeSplit, rng: &mut impl Rng) -> Result<UserGoal, SimError> {
    let candidates: Vec<&NodeId> = graph
        .nodes()
        .iter()
        .map(|n| &n.id)
        .filter(|id| !graph.faq(id.as_str()).is_empty())
        .collect();
    let goal = (*candidates.choose(rng).ok_or(SimError::NoGoalCandidates)?).clone();
    let mode = match mode_split {
        ModeSplit::Uniform => {
            if rng.gen_bool(0.5) {
                ModeLabel::Free
            } else {
                ModeLabel::Guided
            }
        }
        ModeSplit::Fixed(m) => m,
    };
    let mut paths = enumerate_paths(graph, graph.start().as_str(), goal.as_str(), &PlanConfig::default()).paths;
    paths.shuffle(rng);
    for path in paths {
        if let Some(variable_assignment) = satisfying_assignment(graph, &path, rng) {
            return Ok(UserGoal {
                goal,
                mode,
                goal_path: path,
                variable_assignment,
            });
        }
    }
    Err(SimError::NoSatisfiablePath(goal))
}

fn paraphrase(graph: &DialogGraph, answer: &crate::graph::Answer, rng: &mut impl Rng) -> String {
    graph
        .paraphrases(&answer.id)
        .choose(rng)
        .cloned()
        .unwrap_or_else(|| answer.intent_text.clone())
}

/// Free: one of the goal's FAQ questions. Guided: a paraphrase of the first
/// answer on the goal path.
pub fn first_utterance(goal: &UserGoal, graph: &DialogGraph, rng: &mut impl Rng) -> Result<String, SimError> {
    match goal.mode {
        ModeLabel::Free => graph
            .faq(goal.goal.as_str())
            .choose(rng)
            .cloned()
            .ok_or_else(|| SimError::MissingParaphrases(goal.goal.clone())),
        ModeLabel::Guided => {
            let nodes = goal.goal_path.nodes();
            let answer = nodes
                .get(1)
                .and_then(|to| answer_between(graph, nodes[0].as_str(), to.as_str()))
                .ok_or_else(|| SimError::MissingParaphrases(goal.goal.clone()))?;
            Ok(paraphrase(graph, answer, rng))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub text: String,
    /// The question was not on the goal path; the answer steers back.
    pub off_path: bool,
}

/// The user's reply after `asked` was output, or `None` for nodes that need
/// no reply.
pub fn respond(asked: &str, goal: &UserGoal, graph: &DialogGraph, rng: &mut impl Rng) -> Option<Response> {
    let node = graph.node(asked)?;
    match node.node_type {
        NodeType::Variable => {
            let name = &node.variable.as_ref()?.name;
            let value = goal.variable_assignment.get(name)?;
            Some(Response {
                text: value.to_string(),
                off_path: false,
            })
        }
        NodeType::Start | NodeType::Question => {
            let nodes = goal.goal_path.nodes();
            let on_path = nodes
                .iter()
                .position(|n| n == asked)
                .and_then(|i| nodes.get(i + 1))
                .and_then(|next| answer_between(graph, asked, next.as_str()));
            if let Some(answer) = on_path {
                return Some(Response {
                    text: paraphrase(graph, answer, rng),
                    off_path: false,
                });
            }
            let goal_idx = graph.index_of(goal.goal.as_str())?;
            let answer = node
                .answers
                .iter()
                .min_by_key(|a| {
                    graph
                        .index_of(a.target.as_str())
                        .and_then(|t| graph.distances_from(t)[goal_idx])
                        .unwrap_or(usize::MAX)
                })?;
            tracing::debug!(node = asked, "off-path question");
            Some(Response {
                text: paraphrase(graph, answer, rng),
                off_path: true,
            })
        }
        NodeType::Information | NodeType::Logic => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Goal,
    Patience,
    TurnCap,
    DeadEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogOutcome {
    pub index: usize,
    pub goal: NodeId,
    pub success: bool,
    /// ASK actions plus user inputs.
    pub length: usize,
    pub true_mode: ModeLabel,
    pub predicted_mode: Option<ModeLabel>,
    /// System actions (ASK and SKIP) taken.
    pub turns_used: usize,
    pub termination: Termination,
    pub degraded: bool,
    pub off_path_events: usize,
    #[serde(default, skip_serializing)]
    pub transcript: Vec<LogEntry>,
}

/// Plays one dialog against `policy`.
pub fn run_dialog(
    graph: &DialogGraph,
    policy: &mut dyn DialogPolicy,
    goal: &UserGoal,
    config: &SimConfig,
    rng: &mut impl Rng,
) -> DialogOutcome {
    run_dialog_capped(graph, policy, goal, config, config.turn_cap(graph), rng)
}

fn run_dialog_capped(
    graph: &DialogGraph,
    policy: &mut dyn DialogPolicy,
    goal: &UserGoal,
    config: &SimConfig,
    turn_cap: usize,
    rng: &mut impl Rng,
) -> DialogOutcome {
    let mut transcript: Vec<LogEntry> = Vec::new();
    let mut visits: HashMap<NodeId, usize> = HashMap::new();
    let mut turns = 0;
    let mut degraded = false;
    let mut off_path_events = 0;
    let mut user_turns = 0;
    let mut last_ask: Option<NodeId> = None;

    let mut turn = policy.start();
    let termination = 'dialog: loop {
        degraded |= turn.degraded();
        for action in &turn.actions {
            if turns == turn_cap {
                break 'dialog Termination::TurnCap;
            }
            turns += 1;
            transcript.push(LogEntry::Action(action.clone()));
            if action.kind == ActionKind::Ask {
                last_ask = Some(action.node.clone());
                if action.node == goal.goal {
                    break 'dialog Termination::Goal;
                }
            }
            let seen = visits.entry(action.node.clone()).or_default();
            *seen += 1;
            if *seen >= config.patience {
                break 'dialog Termination::Patience;
            }
        }
        if turn.done || turn.awaiting == Awaiting::None {
            break Termination::DeadEnd;
        }
        let utterance = if user_turns == 0 {
            match first_utterance(goal, graph, rng) {
                Ok(u) => u,
                Err(e) => {
                    tracing::warn!(error = %e, "no opening utterance");
                    break Termination::DeadEnd;
                }
            }
        } else {
            let Some(asked) = &last_ask else {
                break Termination::DeadEnd;
            };
            match respond(asked.as_str(), goal, graph, rng) {
                Some(r) => {
                    off_path_events += usize::from(r.off_path);
                    r.text
                }
                None => break Termination::DeadEnd,
            }
        };
        user_turns += 1;
        transcript.push(LogEntry::UserInput { text: utterance.clone() });
        turn = match policy.respond(&utterance) {
            Ok(t) => t,
            Err(e) => {
                tracing::warn!(error = %e, "policy error ends simulated dialog");
                degraded = true;
                break Termination::DeadEnd;
            }
        };
    };

    DialogOutcome {
        index: 0,
        goal: goal.goal.clone(),
        success: termination == Termination::Goal,
        length: crate::policy::dialog_length(&transcript),
        true_mode: goal.mode,
        predicted_mode: policy.predicted_mode(),
        turns_used: turns,
        termination,
        degraded: degraded || off_path_events > 0,
        off_path_events,
        transcript,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub tree_depth: usize,
    pub turn_cap: usize,
    pub outcomes: Vec<DialogOutcome>,
}

/// Per-dialog generator: same seed, one stream per dialog index.
pub fn dialog_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Runs `num_dialogs` dialogs, building a fresh policy per dialog.
pub fn run_batch<'g, F>(graph: &'g DialogGraph, mut make_policy: F, config: &SimConfig) -> Result<SimReport, SimError>
where
    F: FnMut(&UserGoal) -> Box<dyn DialogPolicy + 'g>,
{
    config.validate()?;
    let depth = tree_depth(graph);
    let turn_cap = config.turn_cap_multiplier * depth;
    let mut outcomes = Vec::with_capacity(config.num_dialogs);
    for index in 0..config.num_dialogs {
        let mut rng = dialog_rng(config.seed, index);
        let goal = sample_goal(graph, config.mode_split, &mut rng)?;
        let mut policy = make_policy(&goal);
        let mut outcome = run_dialog_capped(graph, policy.as_mut(), &goal, config, turn_cap, &mut rng);
        outcome.index = index;
        outcomes.push(outcome);
    }
    tracing::info!(dialogs = outcomes.len(), turn_cap, "simulation finished");
    Ok(SimReport {
        config: config.clone(),
        tree_depth: depth,
        turn_cap,
        outcomes,
    })
}

/// ASK actions in a transcript, for audits.
pub fn asked(transcript: &[LogEntry]) -> impl Iterator<Item = &SystemAction> {
    transcript.iter().filter_map(|e| match e {
        LogEntry::Action(a) if a.is_ask() => Some(a),
        _ => None,
    })
}
