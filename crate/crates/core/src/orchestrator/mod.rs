//! The two-agent loop around the shared graph.
//!
//! Every human move is applied to the graph and logged, then the graph agent
//! does its part (answering a new prompt, or regenerating what an edit made
//! stale), interprets the move for the meta agent, and finally the meta agent
//! reviews the canvas. The review is gated by a cooldown counted in human
//! actions and by the relevance the meta agent reports. Agent-authored events
//! never feed back into interpretation or the cooldown.
//!
//! One [`Orchestrator`] owns one session. It is synchronous and expects a
//! single writer; fan-out sibling requests are the only calls made in parallel.

mod affordance;
mod events;
mod intervention;

pub use affordance::{selection_affordances, Affordance};
pub use events::{
    human_actions_since_last_intervention, AgentEvent, EventKind, EventLog, SessionConfig,
    SessionHeader, LOG_FORMAT, LOG_VERSION,
};
pub use intervention::{
    parse_meta_reply, GraphInterpretation, InterventionKind, InterventionPolicy,
    InterventionRecord, InterventionState, MetaGuidance, MetaIntervention, MetaReply,
};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tracing::warn;

use crate::context::{ancestor_closure, linearize, preview, render_outline, topological_order};
use crate::gateway::{ChatGateway, ChatMessage, ChatRequest, GatewayError};
use crate::graph::{Author, ConversationGraph, GraphError, NodeId, NodeKind, NodeStatus};
use crate::persistence::GraphDocument;
use crate::templates::TemplateSet;

/// A user-initiated request against a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    AddRoot { text: String },
    BuildFrom { parent: NodeId, text: String },
    Merge { parents: Vec<NodeId>, text: String },
    EditText { node: NodeId, text: String },
    SetPosition { node: NodeId, x: f64, y: f64 },
    Select { nodes: Vec<NodeId> },
    AcceptIntervention { id: u64 },
    DismissIntervention { id: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ActionOutcome {
    /// Nodes created while handling the action, in creation order.
    pub created: Vec<NodeId>,
    /// Existing nodes whose text, status or position changed.
    pub changed: Vec<NodeId>,
    /// Present for `Select`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub affordances: Option<Vec<Affordance>>,
    /// Everything logged while handling the action.
    pub events: Vec<AgentEvent>,
}

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("event {seq} cannot be interpreted: {reason}")]
    NotInterpretable { seq: u64, reason: &'static str },
    #[error("unknown event {0}")]
    UnknownEvent(u64),
    #[error("fanout must be at least 1")]
    InvalidFanout,
    #[error("an inserted prompt needs response parents or the new-root flag")]
    MissingAttachment,
    #[error("relevance threshold must lie in [0, 1]")]
    InvalidPolicy,
    #[error("starting graph is invalid: {0}")]
    InvalidGraph(String),
}

impl OrchestratorError {
    pub fn code(&self) -> &'static str {
        match self {
            OrchestratorError::Graph(e) => e.code(),
            OrchestratorError::InvalidAction(_) => "invalid_action",
            OrchestratorError::NotInterpretable { .. } => "not_interpretable",
            OrchestratorError::UnknownEvent(_) => "unknown_event",
            OrchestratorError::InvalidFanout => "invalid_fanout",
            OrchestratorError::MissingAttachment => "missing_attachment",
            OrchestratorError::InvalidPolicy => "invalid_policy",
            OrchestratorError::InvalidGraph(_) => "invalid_graph",
        }
    }
}

pub struct Orchestrator {
    graph: ConversationGraph,
    log: EventLog,
    gateway: Arc<dyn ChatGateway>,
    config: SessionConfig,
    templates: TemplateSet,
    guidance: Option<MetaGuidance>,
    mailbox: Vec<GraphInterpretation>,
    pending: BTreeMap<u64, MetaIntervention>,
    /// Seq of the human event currently being handled.
    cause: Option<u64>,
    failures: Vec<GatewayError>,
    sink: Option<EventSink>,
}

/// Observer called with every event as it is logged.
pub type EventSink = Arc<dyn Fn(&AgentEvent) + Send + Sync>;

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator")
            .field("title", &self.graph.title())
            .field("nodes", &self.graph.len())
            .field("events", &self.log.len())
            .field("gateway", &self.gateway.name())
            .field("pending", &self.pending.len())
            .finish()
    }
}

impl Orchestrator {
    pub fn new(
        title: &str,
        gateway: Arc<dyn ChatGateway>,
        config: SessionConfig,
    ) -> Result<Self, OrchestratorError> {
        Self::build(
            ConversationGraph::new(title),
            None,
            gateway,
            config,
            TemplateSet::default(),
        )
    }

    /// Starts a session on an existing graph, which is recorded in the log
    /// header so the session can be replayed.
    pub fn with_graph(
        graph: ConversationGraph,
        gateway: Arc<dyn ChatGateway>,
        config: SessionConfig,
    ) -> Result<Self, OrchestratorError> {
        let violations = graph.validate();
        if let Some(first) = violations.first() {
            return Err(OrchestratorError::InvalidGraph(first.to_string()));
        }
        let base = (!graph.is_empty()).then(|| GraphDocument::from_graph(&graph));
        Self::build(graph, base, gateway, config, TemplateSet::default())
    }

    /// Rebuilds the starting state described by a log header.
    pub fn from_header(
        header: &SessionHeader,
        gateway: Arc<dyn ChatGateway>,
        templates: TemplateSet,
    ) -> Result<Self, OrchestratorError> {
        let graph = match &header.base {
            Some(doc) => doc
                .clone()
                .into_graph()
                .map_err(|e| OrchestratorError::InvalidGraph(e.to_string()))?,
            None => ConversationGraph::new(&header.title),
        };
        let mut orch = Self::build(
            graph,
            header.base.clone(),
            gateway,
            header.config.clone(),
            templates,
        )?;
        orch.log.header.gateway = header.gateway.clone();
        Ok(orch)
    }

    fn build(
        graph: ConversationGraph,
        base: Option<GraphDocument>,
        gateway: Arc<dyn ChatGateway>,
        config: SessionConfig,
        templates: TemplateSet,
    ) -> Result<Self, OrchestratorError> {
        if !config.policy.is_valid() {
            return Err(OrchestratorError::InvalidPolicy);
        }
        if config.fanout == 0 {
            return Err(OrchestratorError::InvalidFanout);
        }
        let header = SessionHeader {
            format: LOG_FORMAT.to_string(),
            version: LOG_VERSION,
            title: graph.title().to_string(),
            gateway: gateway.name().to_string(),
            config: config.clone(),
            templates: templates.versions(),
            base,
        };
        Ok(Self {
            graph,
            log: EventLog::new(header),
            gateway,
            config,
            templates,
            guidance: None,
            mailbox: Vec::new(),
            pending: BTreeMap::new(),
            cause: None,
            failures: Vec::new(),
            sink: None,
        })
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.log.header.templates = templates.versions();
        self.templates = templates;
        self
    }

    /// Registers an observer that sees each event the moment it is logged,
    /// before the action that produced it has finished.
    pub fn set_event_sink(&mut self, sink: EventSink) {
        self.sink = Some(sink);
    }

    pub fn graph(&self) -> &ConversationGraph {
        &self.graph
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn guidance(&self) -> Option<&MetaGuidance> {
        self.guidance.as_ref()
    }

    /// Interpretations forwarded to the meta agent, oldest first.
    pub fn mailbox(&self) -> &[GraphInterpretation] {
        &self.mailbox
    }

    /// Proposed interventions awaiting a decision, keyed by intervention id.
    pub fn pending_interventions(&self) -> &BTreeMap<u64, MetaIntervention> {
        &self.pending
    }

    /// Gateway errors seen since the last call, oldest first.
    pub fn take_gateway_failures(&mut self) -> Vec<GatewayError> {
        std::mem::take(&mut self.failures)
    }

    pub fn affordances(&self, selected: &[NodeId]) -> Result<Vec<Affordance>, GraphError> {
        selection_affordances(&self.graph, selected)
    }

    fn emit(
        &mut self,
        kind: EventKind,
        subject: Vec<NodeId>,
        payload: String,
        actor: Author,
    ) -> u64 {
        let cause = self.cause;
        let event = self.log.append(kind, subject, payload, actor, cause);
        if let Some(sink) = &self.sink {
            sink(event);
        }
        event.seq
    }

    fn gate(&self, selection: &[NodeId], wanted: Affordance) -> Result<(), OrchestratorError> {
        let offered = selection_affordances(&self.graph, selection)?;
        if offered.contains(&wanted) {
            Ok(())
        } else {
            Err(OrchestratorError::InvalidAction(format!(
                "{wanted:?} is not offered for this selection (offered: {offered:?})"
            )))
        }
    }

    /// Applies one user action through the full agent loop.
    pub fn apply(&mut self, action: Action) -> Result<ActionOutcome, OrchestratorError> {
        let first = self.log.next_seq();
        let mut affordances = None;
        let result = self.dispatch(action, &mut affordances);
        self.cause = None;
        result?;

        let events = self.log.since(first - 1).to_vec();
        let created: Vec<NodeId> = events
            .iter()
            .filter(|e| e.kind == EventKind::NodeAdded || e.kind == EventKind::InterventionAccepted)
            .filter_map(|e| e.subject.first().copied())
            .collect();
        let mut changed = Vec::new();
        for e in &events {
            let touched: &[NodeId] = match e.kind {
                EventKind::NodeEdited | EventKind::StatusChanged | EventKind::NodeMoved => {
                    &e.subject
                }
                _ => &[],
            };
            for id in touched {
                if !created.contains(id) && !changed.contains(id) {
                    changed.push(*id);
                }
            }
        }
        Ok(ActionOutcome {
            created,
            changed,
            affordances,
            events,
        })
    }

    fn dispatch(
        &mut self,
        action: Action,
        affordances: &mut Option<Vec<Affordance>>,
    ) -> Result<(), OrchestratorError> {
        match action {
            Action::AddRoot { text } => {
                self.gate(&[], Affordance::AddRoot)?;
                let id = self.graph.add_root_prompt(&text, Author::Human)?;
                self.prompt_added(id, Vec::new(), text);
            }
            Action::BuildFrom { parent, text } => {
                self.gate(&[parent], Affordance::BuildFrom)?;
                let id = self.graph.add_prompt(&[parent], &text, Author::Human)?;
                self.prompt_added(id, vec![parent], text);
            }
            Action::Merge { parents, text } => {
                self.gate(&parents, Affordance::Merge)?;
                let id = self.graph.add_prompt(&parents, &text, Author::Human)?;
                self.prompt_added(id, parents, text);
            }
            Action::EditText { node, text } => {
                self.gate(&[node], Affordance::Edit)?;
                let invalidated = self.graph.edit_text(node, &text)?;
                let mut subject = vec![node];
                subject.extend(invalidated);
                let seq = self.human_event(EventKind::NodeEdited, subject, text);
                self.regenerate_stale();
                self.after_human_move(seq);
            }
            Action::SetPosition { node, x, y } => {
                self.graph.set_position(node, x, y)?;
                self.human_event(EventKind::NodeMoved, vec![node], format!("{x} {y}"));
            }
            Action::Select { nodes } => {
                let offered = selection_affordances(&self.graph, &nodes)?;
                self.human_event(EventKind::SelectionChanged, nodes, String::new());
                *affordances = Some(offered);
            }
            Action::AcceptIntervention { id } => self.accept_intervention(id)?,
            Action::DismissIntervention { id } => {
                if self.pending.remove(&id).is_none() {
                    return Err(OrchestratorError::InvalidAction(format!(
                        "no pending intervention {id}"
                    )));
                }
                self.human_event(EventKind::InterventionDismissed, Vec::new(), id.to_string());
            }
        }
        Ok(())
    }

    fn human_event(&mut self, kind: EventKind, subject: Vec<NodeId>, payload: String) -> u64 {
        self.cause = None;
        let seq = self.emit(kind, subject, payload, Author::Human);
        self.cause = Some(seq);
        seq
    }

    fn prompt_added(&mut self, id: NodeId, parents: Vec<NodeId>, text: String) {
        let mut subject = vec![id];
        subject.extend(parents);
        let seq = self.human_event(EventKind::NodeAdded, subject, text);
        let guidance = self.guidance.clone();
        self.respond(id, self.config.fanout, guidance.as_ref())
            .expect("fresh prompt accepts responses");
        self.after_human_move(seq);
    }

    fn after_human_move(&mut self, seq: u64) {
        if let Err(err) = self.interpret(seq) {
            warn!(%err, seq, "interpretation rejected");
        }
        if let Some(intervention) = self.meta_review() {
            let outcome = if intervention.kind == InterventionKind::Advice
                || self.config.policy.auto_respond_to_inserted
            {
                self.apply_intervention(intervention).map(|_| ())
            } else {
                self.propose_intervention(intervention).map(|_| ())
            };
            if let Err(err) = outcome {
                warn!(%err, "reviewed intervention could not be issued");
            }
        }
    }

    /// `(index, count)` of `response` among its prompt's responses, when the
    /// prompt has more than one.
    fn perspective(&self, response: NodeId) -> Option<(usize, usize)> {
        let prompt = *self.graph.node(response)?.parents.first()?;
        let siblings: Vec<NodeId> = self
            .graph
            .children(prompt)
            .into_iter()
            .filter(|c| self.graph.node(*c).is_some_and(|n| n.kind.is_response()))
            .collect();
        if siblings.len() < 2 {
            return None;
        }
        let index = siblings.iter().position(|s| *s == response)?;
        Some((index + 1, siblings.len()))
    }

    /// Request for (re)generating `response` from its prompt's history.
    fn response_request(
        &self,
        response: NodeId,
        guidance: Option<&MetaGuidance>,
    ) -> Result<ChatRequest, GraphError> {
        let node = self.graph.get(response)?;
        let prompt = node.parents[0];
        let transcript = linearize(&self.graph, prompt)?;

        let mut values = BTreeMap::new();
        if let Some(g) = guidance {
            values.insert(
                "guidance",
                format!(
                    "\nHigh-level guidance from the Meta Agent (apply where relevant):\n{}\n",
                    g.text
                ),
            );
        }
        if let Some((index, count)) = self.perspective(response) {
            values.insert(
                "perspective",
                format!("\nThis is response {index} of {count} to the same prompt; offer a distinct perspective.\n"),
            );
        }
        let mut messages = vec![ChatMessage::system(self.templates.respond.render(&values))];
        messages.extend(Vec::<ChatMessage>::from(&transcript));
        Ok(ChatRequest::new(&self.config.model, messages))
    }

    fn complete_all(&self, requests: &[ChatRequest]) -> Vec<Result<String, GatewayError>> {
        if requests.len() == 1 {
            return vec![self.gateway.complete(&requests[0])];
        }
        thread::scope(|scope| {
            let handles: Vec<_> = requests
                .iter()
                .map(|r| {
                    let gateway = &self.gateway;
                    scope.spawn(move || gateway.complete(r))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join().unwrap_or_else(|_| {
                        Err(GatewayError::Provider {
                            message: "gateway call panicked".into(),
                            retryable: false,
                        })
                    })
                })
                .collect()
        })
    }

    fn finish_response(&mut self, id: NodeId, outcome: Result<String, GatewayError>) {
        let outcome = outcome.and_then(|text| {
            if text.trim().is_empty() {
                Err(GatewayError::Provider {
                    message: "empty completion".into(),
                    retryable: false,
                })
            } else {
                Ok(text)
            }
        });
        let payload = match outcome {
            Ok(text) => {
                let node = self.graph.node_mut(id).expect("response exists");
                node.text = text.clone();
                node.status = NodeStatus::Fresh;
                json!({"status": "fresh", "text": text})
            }
            Err(err) => {
                warn!(%err, node = %id, "response generation failed");
                self.graph.set_status(id, NodeStatus::Error);
                let payload =
                    json!({"status": "error", "code": err.code(), "error": err.to_string()});
                self.failures.push(err);
                payload
            }
        };
        self.emit(
            EventKind::StatusChanged,
            vec![id],
            payload.to_string(),
            Author::GraphAgent,
        );
    }

    /// Creates `fanout` pending responses under `prompt` and fills each from
    /// the gateway. A failed call leaves its node in `Error`; siblings are
    /// unaffected.
    pub fn respond(
        &mut self,
        prompt: NodeId,
        fanout: u32,
        guidance: Option<&MetaGuidance>,
    ) -> Result<Vec<NodeId>, OrchestratorError> {
        if !self.graph.get(prompt)?.kind.is_prompt() {
            return Err(GraphError::TargetNotPrompt(prompt).into());
        }
        if fanout == 0 {
            return Err(OrchestratorError::InvalidFanout);
        }
        let mut ids = Vec::with_capacity(fanout as usize);
        for _ in 0..fanout {
            let id = self.graph.add_response(prompt, "", NodeStatus::Pending)?;
            self.emit(
                EventKind::NodeAdded,
                vec![id, prompt],
                String::new(),
                Author::GraphAgent,
            );
            ids.push(id);
        }
        let requests = ids
            .iter()
            .map(|id| self.response_request(*id, guidance))
            .collect::<Result<Vec<_>, _>>()?;
        let outcomes = self.complete_all(&requests);
        for (id, outcome) in ids.iter().zip(outcomes) {
            self.finish_response(*id, outcome);
        }
        Ok(ids)
    }

    /// Re-sends every stale response, parents first, so later requests see
    /// regenerated text. A response is skipped while any response above it is
    /// not fresh, which keeps the descendants of a failure stale.
    pub fn regenerate_stale(&mut self) -> Vec<NodeId> {
        let everything: BTreeSet<NodeId> = self.graph.nodes().map(|n| n.id).collect();
        let order = topological_order(&self.graph, &everything);
        let mut attempted = Vec::new();
        let mut failed = 0;
        for id in order {
            let Some(node) = self.graph.node(id) else {
                continue;
            };
            if node.kind != NodeKind::AssistantResponse || node.status != NodeStatus::Stale {
                continue;
            }
            let blocked = ancestor_closure(&self.graph, id)
                .unwrap_or_default()
                .iter()
                .filter_map(|a| self.graph.node(*a))
                .any(|a| a.kind.is_response() && a.status != NodeStatus::Fresh);
            if blocked {
                continue;
            }
            let guidance = self.guidance.clone();
            let request = self
                .response_request(id, guidance.as_ref())
                .expect("stale node has a prompt parent");
            let outcome = self.gateway.complete(&request);
            if outcome.is_err() {
                failed += 1;
            }
            self.finish_response(id, outcome);
            attempted.push(id);
        }
        if !attempted.is_empty() {
            let payload = format!("{} regenerated, {failed} failed", attempted.len() - failed);
            self.emit(
                EventKind::ResponsesRegenerated,
                attempted.clone(),
                payload,
                Author::GraphAgent,
            );
        }
        attempted
    }

    fn describe(&self, event: &AgentEvent) -> String {
        let text_of = |id: NodeId| {
            self.graph
                .node(id)
                .map(|n| preview(&n.text))
                .unwrap_or_default()
        };
        let ids = |list: &[NodeId]| {
            list.iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut out = match (event.kind, event.subject.split_first()) {
            (EventKind::NodeAdded, Some((id, []))) => {
                format!(
                    "The user added a new root prompt {id}: \"{}\".",
                    text_of(*id)
                )
            }
            (EventKind::NodeAdded, Some((id, [parent]))) => {
                let siblings = self
                    .graph
                    .children(*parent)
                    .into_iter()
                    .filter(|c| c != id)
                    .count();
                let verb = if siblings > 0 {
                    "branched from"
                } else {
                    "continued from"
                };
                format!(
                    "The user {verb} response {parent} with prompt {id}: \"{}\".",
                    text_of(*id)
                )
            }
            (EventKind::NodeAdded, Some((id, parents))) => format!(
                "The user merged responses {} into prompt {id}: \"{}\".",
                ids(parents),
                text_of(*id)
            ),
            (EventKind::NodeEdited, Some((id, invalidated))) => format!(
                "The user edited {id} to \"{}\"; {} downstream response(s) were invalidated.",
                text_of(*id),
                invalidated.len()
            ),
            (EventKind::InterventionAccepted, Some((id, parents))) => format!(
                "The user accepted the Meta Agent's suggested prompt {id}{}: \"{}\".",
                if parents.is_empty() {
                    " as a new root".to_string()
                } else {
                    format!(" attached to {}", ids(parents))
                },
                text_of(*id)
            ),
            _ => format!("{} on {}", event.kind.as_str(), ids(&event.subject)),
        };
        for e in self
            .log
            .events()
            .iter()
            .filter(|e| e.cause == Some(event.seq) && e.kind == EventKind::StatusChanged)
        {
            if let Some(node) = e.subject.first().and_then(|id| self.graph.node(*id)) {
                out.push_str(&format!(
                    "\nGraph Agent response {} ({}): \"{}\"",
                    node.id,
                    node.status.as_str(),
                    preview(&node.text)
                ));
            }
        }
        out
    }

    /// Summarises a human move for the meta agent and logs the result.
    /// Gateway failures skip the interpretation.
    pub fn interpret(
        &mut self,
        event_seq: u64,
    ) -> Result<Option<GraphInterpretation>, OrchestratorError> {
        let event = self
            .log
            .get(event_seq)
            .cloned()
            .ok_or(OrchestratorError::UnknownEvent(event_seq))?;
        let reason = match event.kind {
            EventKind::MetaIntervention => Some("meta interventions are never interpreted"),
            EventKind::NodeAdded
            | EventKind::NodeEdited
            | EventKind::ResponsesRegenerated
            | EventKind::InterventionAccepted => None,
            _ => Some("not a structural move"),
        }
        .or((event.actor != Author::Human).then_some("agent-authored events are not interpreted"));
        if let Some(reason) = reason {
            return Err(OrchestratorError::NotInterpretable {
                seq: event_seq,
                reason,
            });
        }

        let values = BTreeMap::from([
            ("outline", render_outline(&self.graph).render()),
            ("event_summary", self.describe(&event)),
        ]);
        let request = ChatRequest::new(
            &self.config.model,
            vec![ChatMessage::user(self.templates.interpret.render(&values))],
        );
        let summary = match self.gateway.complete(&request) {
            Ok(reply) if !reply.trim().is_empty() => reply.trim().to_string(),
            Ok(_) => {
                warn!(seq = event_seq, "empty interpretation skipped");
                return Ok(None);
            }
            Err(err) => {
                warn!(%err, seq = event_seq, "interpretation skipped");
                self.failures.push(err);
                return Ok(None);
            }
        };

        let interpretation = GraphInterpretation {
            trigger_seq: event_seq,
            summary,
            affected: event.subject.clone(),
        };
        let saved = self.cause.replace(event_seq);
        self.emit(
            EventKind::GraphInterpretation,
            interpretation.affected.clone(),
            interpretation.summary.clone(),
            Author::GraphAgent,
        );
        self.cause = saved;
        self.mailbox.push(interpretation.clone());
        Ok(Some(interpretation))
    }

    /// Asks the meta agent for an intervention if the cooldown allows one.
    /// Returns `None` when gated, below the relevance threshold, malformed,
    /// or when the gateway fails.
    pub fn meta_review(&mut self) -> Option<MetaIntervention> {
        let policy = &self.config.policy;
        let events = self.log.events();
        if human_actions_since_last_intervention(events) < policy.cooldown_actions as usize {
            return None;
        }
        let trigger_seq = events.iter().rev().find(|e| e.is_human_action())?.seq;

        let recent: Vec<String> = self
            .mailbox
            .iter()
            .rev()
            .take(self.config.recent_interpretations)
            .rev()
            .map(|i| format!("- after event #{}: {}", i.trigger_seq, i.summary))
            .collect();
        let values = BTreeMap::from([
            ("outline", render_outline(&self.graph).render()),
            (
                "event_summary",
                if recent.is_empty() {
                    "(none yet)".to_string()
                } else {
                    recent.join("\n")
                },
            ),
        ]);
        let request = ChatRequest::new(
            &self.config.model,
            vec![ChatMessage::user(self.templates.review.render(&values))],
        );
        let reply = match self.gateway.complete(&request) {
            Ok(reply) => reply,
            Err(err) => {
                warn!(%err, "meta review skipped");
                self.failures.push(err);
                return None;
            }
        };

        let parsed = parse_meta_reply(&reply);
        if parsed.relevance < self.config.policy.relevance_threshold || parsed.text.is_empty() {
            return None;
        }
        let insert = parsed.kind == InterventionKind::InsertPrompt;
        let intervention = MetaIntervention {
            kind: parsed.kind,
            text: parsed.text,
            attach_parents: if insert { parsed.parents } else { Vec::new() },
            new_root: insert && parsed.new_root,
            relevance: parsed.relevance,
            trigger_seq,
            guidance: parsed.guidance,
        };
        match self.check_intervention(&intervention) {
            Ok(()) => Some(intervention),
            Err(err) => {
                warn!(%err, "meta agent proposed an unusable intervention");
                None
            }
        }
    }

    fn check_intervention(&self, intervention: &MetaIntervention) -> Result<(), OrchestratorError> {
        if intervention.text.is_empty() {
            return Err(GraphError::EmptyText.into());
        }
        if intervention.kind == InterventionKind::InsertPrompt {
            if intervention.attach_parents.is_empty() {
                if !intervention.new_root {
                    return Err(OrchestratorError::MissingAttachment);
                }
            } else {
                self.graph
                    .check_prompt_parents(&intervention.attach_parents)?;
            }
        }
        Ok(())
    }

    fn insert_agent_prompt(
        &mut self,
        intervention: &MetaIntervention,
    ) -> Result<NodeId, GraphError> {
        if intervention.attach_parents.is_empty() {
            self.graph
                .add_root_prompt(&intervention.text, Author::MetaAgent)
        } else {
            self.graph.add_prompt(
                &intervention.attach_parents,
                &intervention.text,
                Author::MetaAgent,
            )
        }
    }

    fn log_intervention(
        &mut self,
        intervention: &MetaIntervention,
        state: InterventionState,
        node: Option<NodeId>,
    ) -> u64 {
        let record = InterventionRecord {
            state,
            node,
            intervention: intervention.clone(),
        };
        let subject = node
            .into_iter()
            .chain(intervention.attach_parents.iter().copied())
            .collect();
        let saved = self.cause;
        self.cause = self.log.get(intervention.trigger_seq).map(|e| e.seq);
        let payload = serde_json::to_string(&record).expect("intervention serializes");
        let seq = self.emit(
            EventKind::MetaIntervention,
            subject,
            payload,
            Author::MetaAgent,
        );
        self.cause = saved;
        self.guidance = Some(MetaGuidance {
            text: intervention
                .guidance
                .clone()
                .unwrap_or_else(|| intervention.text.clone()),
            issued_seq: seq,
        });
        seq
    }

    /// Carries out an intervention on the meta agent's own authority: advice
    /// goes to the sidebar, an inserted prompt becomes an agent prompt node
    /// (answered immediately when the policy says so).
    pub fn apply_intervention(
        &mut self,
        intervention: MetaIntervention,
    ) -> Result<Option<NodeId>, OrchestratorError> {
        self.check_intervention(&intervention)?;
        let node = match intervention.kind {
            InterventionKind::Advice => None,
            InterventionKind::InsertPrompt => {
                let id = self.insert_agent_prompt(&intervention)?;
                let mut subject = vec![id];
                subject.extend(intervention.attach_parents.iter().copied());
                let saved = self.cause;
                self.cause = self.log.get(intervention.trigger_seq).map(|e| e.seq);
                self.emit(
                    EventKind::NodeAdded,
                    subject,
                    intervention.text.clone(),
                    Author::MetaAgent,
                );
                self.cause = saved;
                Some(id)
            }
        };
        self.log_intervention(&intervention, InterventionState::Applied, node);
        if let Some(id) = node {
            if self.config.policy.auto_respond_to_inserted {
                let guidance = self.guidance.clone();
                self.respond(id, self.config.fanout, guidance.as_ref())?;
            }
        }
        Ok(node)
    }

    /// Logs an inserted-prompt suggestion and holds it for the user. Returns
    /// the intervention id used to accept or dismiss it.
    pub fn propose_intervention(
        &mut self,
        intervention: MetaIntervention,
    ) -> Result<u64, OrchestratorError> {
        self.check_intervention(&intervention)?;
        let id = self.log_intervention(&intervention, InterventionState::Proposed, None);
        self.pending.insert(id, intervention);
        Ok(id)
    }

    fn accept_intervention(&mut self, id: u64) -> Result<(), OrchestratorError> {
        let intervention = self.pending.get(&id).cloned().ok_or_else(|| {
            OrchestratorError::InvalidAction(format!("no pending intervention {id}"))
        })?;
        self.check_intervention(&intervention)?;
        let node = self.insert_agent_prompt(&intervention)?;
        self.pending.remove(&id);
        let mut subject = vec![node];
        subject.extend(intervention.attach_parents.iter().copied());
        let seq = self.human_event(EventKind::InterventionAccepted, subject, id.to_string());
        let guidance = self.guidance.clone();
        self.respond(node, self.config.fanout, guidance.as_ref())?;
        self.after_human_move(seq);
        Ok(())
    }
}
