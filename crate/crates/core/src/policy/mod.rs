//! The per-session dialog state machine.
//!
//! After the start node is shown, the first user utterance fixes the
//! interaction mode. In guided mode every visited node is output and the
//! user picks answers turn by turn. In free mode the engine plans the longest
//! path prefix shared by all goal candidates, traverses its interior silently
//! and only asks at its tail: a goal (answer) or a decision point.
//!
//! Templates and logic nodes that need an unset variable trigger a look-back:
//! the most recently visited node declaring the variable is asked, and the
//! walk resumes where it stopped once the value arrives.

mod transcript;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{fill_template, Beliefstate, DialogGraph, DialogNode, NodeId, NodeType, Value};
use crate::nlu::{IntentCandidate, ModeLabel, Nlu, NluError};
use crate::planner::{find_variable_source, longest_shared_prefix, GoalSet, Path, PlanConfig};

pub use transcript::{read_transcript, transcript_records, write_transcript, RecordKind, TranscriptRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ActionKind {
    Ask,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemAction {
    pub kind: ActionKind,
    pub node: NodeId,
    /// Node text with placeholders filled; `None` for SKIP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rendered_text: Option<String>,
    /// Intent texts offered at question and start nodes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suggestions: Vec<String>,
}

impl SystemAction {
    pub fn skip(node: NodeId) -> Self {
        SystemAction {
            kind: ActionKind::Skip,
            node,
            rendered_text: None,
            suggestions: Vec::new(),
        }
    }

    pub fn is_ask(&self) -> bool {
        self.kind == ActionKind::Ask
    }
}

/// Something the engine had to work around. Degrading flags mark turns whose
/// outcome came from a fallback.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "flag", content = "detail", rename_all = "snake_case")]
pub enum PolicyFlag {
    NluDegraded,
    /// Free mode had no reachable goal; continuing in guided mode.
    PlanningFailed,
    GoalDropped(NodeId),
    /// No visited node declares the variable; asked a graph-wide declarer.
    VariableSourceFallback(String),
    /// The value did not parse as the declared kind.
    CoercionError(String),
    /// Second unparsable value; stored as text.
    CoercionDegraded(String),
    NoMatchingBranch(NodeId),
    StepCapReached,
}

impl PolicyFlag {
    pub fn is_degrading(&self) -> bool {
        matches!(
            self,
            PolicyFlag::NluDegraded
                | PolicyFlag::PlanningFailed
                | PolicyFlag::VariableSourceFallback(_)
                | PolicyFlag::CoercionDegraded(_)
                | PolicyFlag::NoMatchingBranch(_)
                | PolicyFlag::StepCapReached
        )
    }
}

impl fmt::Display for PolicyFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyFlag::NluDegraded => f.write_str("nlu_degraded"),
            PolicyFlag::PlanningFailed => f.write_str("planning_failed"),
            PolicyFlag::GoalDropped(n) => write!(f, "goal_dropped:{n}"),
            PolicyFlag::VariableSourceFallback(v) => write!(f, "variable_source_fallback:{v}"),
            PolicyFlag::CoercionError(v) => write!(f, "coercion_error:{v}"),
            PolicyFlag::CoercionDegraded(v) => write!(f, "coercion_degraded:{v}"),
            PolicyFlag::NoMatchingBranch(n) => write!(f, "no_matching_branch:{n}"),
            PolicyFlag::StepCapReached => f.write_str("step_cap_reached"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "entry", rename_all = "snake_case")]
pub enum LogEntry {
    Action(SystemAction),
    UserInput { text: String },
    Flag { flag: PolicyFlag },
}

/// Number of ASK actions plus user inputs; SKIPs and flags are free.
pub fn dialog_length(log: &[LogEntry]) -> usize {
    log.iter()
        .filter(|e| match e {
            LogEntry::Action(a) => a.is_ask(),
            LogEntry::UserInput { .. } => true,
            LogEntry::Flag { .. } => false,
        })
        .count()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Awaiting {
    Intent,
    Variable,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingVariable {
    pub name: String,
    /// The variable node that was asked.
    pub declarer: NodeId,
    /// Where the walk continues once the value is set; `None` ends the dialog.
    pub resume_at: Option<NodeId>,
    pub failed_attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogState {
    pub current: NodeId,
    /// Effective mode; `None` until the first user utterance.
    pub mode: Option<ModeLabel>,
    /// Mode as classified on the first utterance (kept after a fallback).
    pub predicted_mode: Option<ModeLabel>,
    pub goals: GoalSet,
    pub prefix: Option<Path>,
    pub beliefstate: Beliefstate,
    pub history: Vec<NodeId>,
    pub pending_variable: Option<PendingVariable>,
    pub action_log: Vec<LogEntry>,
    pub done: bool,
    pub awaiting: Awaiting,
    /// Whether the current node's text has been output.
    pub current_emitted: bool,
    /// Goals already output or dropped; never re-admitted.
    pub retired_goals: BTreeSet<NodeId>,
}

impl DialogState {
    pub fn dialog_length(&self) -> usize {
        dialog_length(&self.action_log)
    }

    pub fn actions(&self) -> impl Iterator<Item = &SystemAction> {
        self.action_log.iter().filter_map(|e| match e {
            LogEntry::Action(a) => Some(a),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub plan: PlanConfig,
    /// Walk steps allowed per user turn before the dialog is ended.
    pub max_steps_per_turn: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            plan: PlanConfig::default(),
            max_steps_per_turn: 1000,
        }
    }
}

/// What one user turn (or the session start) produced.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub actions: Vec<SystemAction>,
    pub flags: Vec<PolicyFlag>,
    pub awaiting: Awaiting,
    pub done: bool,
}

impl Turn {
    pub fn degraded(&self) -> bool {
        self.flags.iter().any(PolicyFlag::is_degrading)
    }

    pub fn asks(&self) -> impl Iterator<Item = &SystemAction> {
        self.actions.iter().filter(|a| a.is_ask())
    }
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("the dialog is already finished")]
    Done,
    #[error("empty user input")]
    EmptyInput,
    #[error("no variable value is pending")]
    NoPendingVariable,
    #[error("pending variable is {expected}, not {got}")]
    VariableMismatch { expected: String, got: String },
    #[error("the dialog is not waiting for input")]
    NotAwaitingInput,
    #[error("no node declares variable {0}")]
    NoVariableSource(String),
    #[error(transparent)]
    Nlu(#[from] NluError),
}

fn render(node: &DialogNode, beliefstate: &Beliefstate) -> Result<String, String> {
    fill_template(&node.text, beliefstate).map_err(|m| m.0)
}

fn suggestions(node: &DialogNode) -> Vec<String> {
    node.answers.iter().map(|a| a.intent_text.clone()).collect()
}

/// Creates a session positioned at the start node and returns its ASK.
pub fn start_session(graph: &DialogGraph, _config: &PolicyConfig) -> (DialogState, SystemAction) {
    let start = graph.start_node();
    let action = SystemAction {
        kind: ActionKind::Ask,
        node: start.id.clone(),
        // start text cannot depend on variables nobody was asked for yet
        rendered_text: Some(start.text.clone()),
        suggestions: suggestions(start),
    };
    let done = !graph.has_successors(start.id.as_str());
    let state = DialogState {
        current: start.id.clone(),
        mode: None,
        predicted_mode: None,
        goals: GoalSet::new(),
        prefix: None,
        beliefstate: Beliefstate::new(),
        history: vec![start.id.clone()],
        pending_variable: None,
        action_log: vec![LogEntry::Action(action.clone())],
        done,
        awaiting: if done || !start.node_type.has_answers() { Awaiting::None } else { Awaiting::Intent },
        current_emitted: true,
        retired_goals: BTreeSet::new(),
    };
    (state, action)
}

/// Processes one user utterance: a variable value if one is pending,
/// otherwise the mode decision (first turn) and an intent or goal query.
pub fn handle_user_input<N: Nlu + ?Sized>(
    state: &mut DialogState,
    graph: &DialogGraph,
    utterance: &str,
    nlu: &N,
    config: &PolicyConfig,
) -> Result<Turn, PolicyError> {
    if state.done {
        return Err(PolicyError::Done);
    }
    if utterance.trim().is_empty() {
        return Err(PolicyError::EmptyInput);
    }
    if let Some(p) = &state.pending_variable {
        let name = p.name.clone();
        return provide_variable(state, graph, &name, utterance, config);
    }
    if state.mode.is_some() && state.awaiting != Awaiting::Intent {
        return Err(PolicyError::NotAwaitingInput);
    }

    let mut w = Walker::new(state, graph, config);
    w.state.action_log.push(LogEntry::UserInput {
        text: utterance.to_string(),
    });

    if w.state.mode.is_none() {
        let mode = nlu.classify_mode(utterance)?;
        if mode.degraded {
            w.flag(PolicyFlag::NluDegraded);
        }
        w.state.predicted_mode = Some(mode.value);
        tracing::debug!(mode = %mode.value, "interaction mode");
        if mode.value == ModeLabel::Free {
            let goals = nlu.filter_goals(utterance, graph)?;
            if goals.degraded {
                w.flag(PolicyFlag::NluDegraded);
            }
            w.state.mode = Some(ModeLabel::Free);
            w.state.goals = goals.value;
            if w.retain_reachable_goals() {
                return Ok(w.run());
            }
            w.fall_back_to_guided();
        } else {
            w.state.mode = Some(ModeLabel::Guided);
        }
    }

    // an answer to the question at the current node
    let node = graph.node(w.state.current.as_str()).expect("current node exists");
    let candidates = IntentCandidate::for_node(graph, node.id.as_str());
    if candidates.is_empty() {
        return Err(PolicyError::NotAwaitingInput);
    }
    let intent = nlu.classify_intent(utterance, &candidates)?;
    if intent.degraded {
        w.flag(PolicyFlag::NluDegraded);
    }
    let target = node.answers[intent.value].target.clone();
    w.move_to(target);
    if w.state.mode == Some(ModeLabel::Free) && !w.retain_reachable_goals() {
        w.fall_back_to_guided();
    }
    Ok(w.run())
}

/// Stores a value for the pending variable and resumes the walk.
pub fn provide_variable(
    state: &mut DialogState,
    graph: &DialogGraph,
    name: &str,
    raw_value: &str,
    config: &PolicyConfig,
) -> Result<Turn, PolicyError> {
    if state.done {
        return Err(PolicyError::Done);
    }
    let pending = state.pending_variable.clone().ok_or(PolicyError::NoPendingVariable)?;
    if pending.name != name {
        return Err(PolicyError::VariableMismatch {
            expected: pending.name,
            got: name.to_string(),
        });
    }
    let declarer = graph.node(pending.declarer.as_str()).expect("declarer exists");
    let kind = declarer.variable.as_ref().expect("variable node declares").value_kind;

    let mut w = Walker::new(state, graph, config);
    w.state.action_log.push(LogEntry::UserInput {
        text: raw_value.to_string(),
    });
    let value = match Value::coerce(raw_value, kind) {
        Ok(v) => v,
        Err(e) if pending.failed_attempts == 0 => {
            tracing::info!(error = %e, "re-asking variable");
            w.flag(PolicyFlag::CoercionError(name.to_string()));
            w.state.pending_variable.as_mut().unwrap().failed_attempts += 1;
            w.ask(declarer);
            w.state.awaiting = Awaiting::Variable;
            return Ok(w.finish());
        }
        Err(_) => {
            w.flag(PolicyFlag::CoercionDegraded(name.to_string()));
            Value::Text(raw_value.trim().to_string())
        }
    };
    w.state.beliefstate.set(name, value);
    w.state.pending_variable = None;
    match pending.resume_at {
        Some(r) if r != w.state.current => w.move_to(r),
        Some(_) => {}
        None => {
            w.state.done = true;
            return Ok(w.finish());
        }
    }
    Ok(w.run())
}

enum Step {
    Continue,
    Await(Awaiting),
    Done,
}

/// Mutable view over one session for the duration of a single turn.
struct Walker<'s, 'g> {
    state: &'s mut DialogState,
    graph: &'g DialogGraph,
    config: &'s PolicyConfig,
    turn: Turn,
}

impl<'s, 'g> Walker<'s, 'g> {
    fn new(state: &'s mut DialogState, graph: &'g DialogGraph, config: &'s PolicyConfig) -> Self {
        state.awaiting = Awaiting::None;
        Walker {
            state,
            graph,
            config,
            turn: Turn::default(),
        }
    }

    fn node(&self, id: &str) -> &'g DialogNode {
        self.graph.node(id).expect("walked node exists")
    }

    fn current(&self) -> &'g DialogNode {
        self.node(self.state.current.as_str())
    }

    fn flag(&mut self, flag: PolicyFlag) {
        tracing::debug!(%flag, "policy flag");
        self.state.action_log.push(LogEntry::Flag { flag: flag.clone() });
        self.turn.flags.push(flag);
    }

    fn emit(&mut self, action: SystemAction) {
        self.state.action_log.push(LogEntry::Action(action.clone()));
        self.turn.actions.push(action);
    }

    fn skip(&mut self, node: &DialogNode) {
        self.emit(SystemAction::skip(node.id.clone()));
    }

    /// ASK with the node text as-is where a placeholder cannot be filled;
    /// only used for variable nodes, whose prompts never depend on themselves.
    fn ask(&mut self, node: &DialogNode) {
        let text = render(node, &self.state.beliefstate).unwrap_or_else(|_| node.text.clone());
        self.emit(SystemAction {
            kind: ActionKind::Ask,
            node: node.id.clone(),
            rendered_text: Some(text),
            suggestions: suggestions(node),
        });
    }

    fn move_to(&mut self, target: NodeId) {
        self.state.history.push(target.clone());
        self.state.current = target;
        self.state.current_emitted = false;
    }

    fn finish(self) -> Turn {
        let mut turn = self.turn;
        turn.awaiting = self.state.awaiting;
        turn.done = self.state.done;
        turn
    }

    /// Drops goals that can no longer be reached; false if none remain.
    fn retain_reachable_goals(&mut self) -> bool {
        let from = self.state.current.clone();
        let unreachable: Vec<NodeId> = self
            .state
            .goals
            .iter()
            .filter(|g| !self.graph.is_reachable(from.as_str(), g.as_str()) || self.state.retired_goals.contains(*g))
            .cloned()
            .collect();
        for g in unreachable {
            tracing::info!(goal = %g, "dropping unreachable goal");
            self.state.goals.remove(g.as_str());
            self.state.retired_goals.insert(g.clone());
            self.flag(PolicyFlag::GoalDropped(g));
        }
        !self.state.goals.is_empty()
    }

    fn fall_back_to_guided(&mut self) {
        tracing::info!(node = %self.state.current, "no reachable goals; continuing in guided mode");
        self.flag(PolicyFlag::PlanningFailed);
        self.state.mode = Some(ModeLabel::Guided);
        self.state.prefix = None;
    }

    fn run(mut self) -> Turn {
        let mut steps = 0;
        loop {
            if steps == self.config.max_steps_per_turn {
                self.flag(PolicyFlag::StepCapReached);
                self.state.done = true;
                break;
            }
            steps += 1;
            let step = match self.state.mode {
                Some(ModeLabel::Free) => self.free_step(),
                _ => self.guided_step(),
            };
            match step {
                Step::Continue => {}
                Step::Await(a) => {
                    self.state.awaiting = a;
                    break;
                }
                Step::Done => {
                    self.state.done = true;
                    break;
                }
            }
        }
        self.finish()
    }

    /// Ends the walk here if the current, already output node is a leaf.
    fn leaf_done(&self) -> bool {
        self.state.current_emitted && !self.graph.has_successors(self.state.current.as_str())
    }

    /// Asks the most recent declarer of `name` and parks the walk at the
    /// current node until the value arrives.
    fn request_variable(&mut self, name: String) -> Step {
        let declarer = match find_variable_source(&self.state.history, self.graph, &name) {
            Ok(id) => Some(self.node(id.as_str())),
            Err(_) => {
                self.flag(PolicyFlag::VariableSourceFallback(name.clone()));
                let id = self.graph.variable_declarers(&name).next().map(|n| n.id.clone());
                id.map(|id| self.node(id.as_str()))
            }
        };
        let Some(declarer) = declarer else {
            tracing::error!(variable = %name, "no declaring node; ending dialog");
            return Step::Done;
        };
        self.ask(declarer);
        self.state.pending_variable = Some(PendingVariable {
            name,
            declarer: declarer.id.clone(),
            resume_at: Some(self.state.current.clone()),
            failed_attempts: 0,
        });
        Step::Await(Awaiting::Variable)
    }

    /// Follows the beliefstate-selected branch of a logic node.
    fn resolve_logic(&mut self, node: &'g DialogNode) -> Result<NodeId, Step> {
        match node.resolve_branch(&self.state.beliefstate) {
            Ok(Some(i)) => {
                self.skip(node);
                Ok(node.branches[i].target.clone())
            }
            Ok(None) => {
                self.flag(PolicyFlag::NoMatchingBranch(node.id.clone()));
                Err(Step::Done)
            }
            Err(name) => Err(self.request_variable(name)),
        }
    }

    /// Outputs the current node if it has not been output yet.
    fn emit_current(&mut self) -> Option<Step> {
        if self.state.current_emitted {
            return None;
        }
        let node = self.current();
        match render(node, &self.state.beliefstate) {
            Ok(text) => {
                self.emit(SystemAction {
                    kind: ActionKind::Ask,
                    node: node.id.clone(),
                    rendered_text: Some(text),
                    suggestions: suggestions(node),
                });
                self.state.current_emitted = true;
                None
            }
            Err(name) => Some(self.request_variable(name)),
        }
    }

    /// After outputting a variable node, waits for its value.
    fn await_own_variable(&mut self, node: &DialogNode) -> Step {
        let decl = node.variable.as_ref().expect("variable node declares");
        self.state.pending_variable = Some(PendingVariable {
            name: decl.name.clone(),
            declarer: node.id.clone(),
            resume_at: node.next.clone(),
            failed_attempts: 0,
        });
        Step::Await(Awaiting::Variable)
    }

    fn guided_step(&mut self) -> Step {
        let node = self.current();
        if node.node_type == NodeType::Logic {
            return match self.resolve_logic(node) {
                Ok(target) => {
                    self.move_to(target);
                    Step::Continue
                }
                Err(step) => step,
            };
        }
        if let Some(step) = self.emit_current() {
            return step;
        }
        if node.node_type == NodeType::Variable {
            return self.await_own_variable(node);
        }
        if self.leaf_done() {
            return Step::Done;
        }
        if node.node_type.has_answers() {
            return Step::Await(Awaiting::Intent);
        }
        match &node.next {
            Some(next) => {
                self.move_to(next.clone());
                Step::Continue
            }
            None => Step::Done,
        }
    }

    fn free_step(&mut self) -> Step {
        let here = self.state.current.clone();
        if self.state.current_emitted && self.state.goals.remove(here.as_str()) {
            self.state.retired_goals.insert(here.clone());
        }
        if self.state.goals.is_empty() {
            return Step::Done;
        }
        if !self.retain_reachable_goals() {
            self.fall_back_to_guided();
            return Step::Continue;
        }
        let prefix = match longest_shared_prefix(self.graph, here.as_str(), &self.state.goals, &self.config.plan) {
            Ok(p) => p,
            Err(e) => {
                // path caps can hide goals that are reachable in principle
                tracing::warn!(error = %e, "planning failed");
                self.fall_back_to_guided();
                return Step::Continue;
            }
        };
        tracing::debug!(prefix = %prefix, "planned prefix");
        self.state.prefix = Some(prefix.clone());
        let nodes = prefix.nodes();

        // interior, origin included: traverse silently
        for expected_next in &nodes[1..] {
            let node = self.current();
            let target = if node.node_type == NodeType::Logic {
                match self.resolve_logic(node) {
                    Ok(t) => t,
                    Err(step) => return step,
                }
            } else {
                self.skip(node);
                expected_next.clone()
            };
            let deviated = target != *expected_next;
            self.move_to(target);
            if deviated {
                return Step::Continue;
            }
        }

        // tail: a goal or a decision point
        let tail = self.current();
        if tail.node_type == NodeType::Logic {
            return match self.resolve_logic(tail) {
                Ok(t) => {
                    self.move_to(t);
                    Step::Continue
                }
                Err(step) => step,
            };
        }
        if let Some(step) = self.emit_current() {
            return step;
        }
        let was_goal = self.state.goals.remove(tail.id.as_str());
        if was_goal {
            self.state.retired_goals.insert(tail.id.clone());
        }
        if self.state.goals.is_empty() || self.leaf_done() {
            return Step::Done;
        }
        if tail.node_type == NodeType::Variable {
            return self.await_own_variable(tail);
        }
        if was_goal {
            return Step::Continue;
        }
        if tail.node_type.has_answers() {
            return Step::Await(Awaiting::Intent);
        }
        tracing::warn!(node = %tail.id, "prefix ended at a non-branching node");
        self.fall_back_to_guided();
        Step::Continue
    }
}

/// A dialog policy the simulator can drive.
pub trait DialogPolicy {
    fn start(&mut self) -> Turn;
    fn respond(&mut self, utterance: &str) -> Result<Turn, PolicyError>;
    fn predicted_mode(&self) -> Option<ModeLabel>;
    fn log(&self) -> &[LogEntry];
}

/// The state machine bound to a graph and an NLU backend.
pub struct Engine<'g, N> {
    graph: &'g DialogGraph,
    nlu: N,
    config: PolicyConfig,
    state: Option<DialogState>,
}

impl<'g, N: Nlu> Engine<'g, N> {
    pub fn new(graph: &'g DialogGraph, nlu: N, config: PolicyConfig) -> Self {
        Engine {
            graph,
            nlu,
            config,
            state: None,
        }
    }

    pub fn state(&self) -> Option<&DialogState> {
        self.state.as_ref()
    }
}

impl<N: Nlu> DialogPolicy for Engine<'_, N> {
    fn start(&mut self) -> Turn {
        let (state, action) = start_session(self.graph, &self.config);
        let turn = Turn {
            actions: vec![action],
            flags: Vec::new(),
            awaiting: state.awaiting,
            done: state.done,
        };
        self.state = Some(state);
        turn
    }

    fn respond(&mut self, utterance: &str) -> Result<Turn, PolicyError> {
        let state = self.state.as_mut().ok_or(PolicyError::NotAwaitingInput)?;
        handle_user_input(state, self.graph, utterance, &self.nlu, &self.config)
    }

    fn predicted_mode(&self) -> Option<ModeLabel> {
        self.state.as_ref().and_then(|s| s.predicted_mode)
    }

    fn log(&self) -> &[LogEntry] {
        self.state.as_ref().map(|s| s.action_log.as_slice()).unwrap_or(&[])
    }
}
