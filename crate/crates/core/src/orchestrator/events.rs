use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::gateway::ModelConfig;
use crate::graph::{Author, NodeId};
use crate::orchestrator::InterventionPolicy;
use crate::persistence::GraphDocument;

pub const LOG_FORMAT: &str = "convograph-session";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// subject = [new node, parents...], payload = node text (empty while pending).
    NodeAdded,
    /// subject = [edited node, invalidated responses...], payload = new text.
    NodeEdited,
    /// subject = [node], payload = `"<x> <y>"`.
    NodeMoved,
    /// subject = [node], payload = JSON `{"status", "text"?, "error"?}`.
    StatusChanged,
    /// subject = regenerated responses, in processing order.
    ResponsesRegenerated,
    /// subject = selected nodes.
    SelectionChanged,
    /// subject = affected nodes, payload = summary, cause = interpreted event.
    GraphInterpretation,
    /// payload = JSON intervention record, cause = triggering human event.
    MetaIntervention,
    /// subject = [inserted node, parents...], payload = intervention id.
    InterventionAccepted,
    /// payload = intervention id.
    InterventionDismissed,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::NodeAdded => "node_added",
            EventKind::NodeEdited => "node_edited",
            EventKind::NodeMoved => "node_moved",
            EventKind::StatusChanged => "status_changed",
            EventKind::ResponsesRegenerated => "responses_regenerated",
            EventKind::SelectionChanged => "selection_changed",
            EventKind::GraphInterpretation => "graph_interpretation",
            EventKind::MetaIntervention => "meta_intervention",
            EventKind::InterventionAccepted => "intervention_accepted",
            EventKind::InterventionDismissed => "intervention_dismissed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub subject: Vec<NodeId>,
    pub payload: String,
    pub actor: Author,
    /// Seq of the event whose handling produced this one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<u64>,
}

impl AgentEvent {
    /// Human moves that change the graph. These drive interpretation and meta
    /// review, and are what the intervention cooldown counts.
    pub fn is_human_action(&self) -> bool {
        self.actor == Author::Human
            && matches!(
                self.kind,
                EventKind::NodeAdded | EventKind::NodeEdited | EventKind::InterventionAccepted
            )
    }
}

/// Human actions since the most recent meta intervention (or since the start).
pub fn human_actions_since_last_intervention(events: &[AgentEvent]) -> usize {
    events
        .iter()
        .rev()
        .take_while(|e| e.kind != EventKind::MetaIntervention)
        .filter(|e| e.is_human_action())
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub policy: InterventionPolicy,
    /// Responses generated per new prompt.
    #[serde(default = "default_fanout")]
    pub fanout: u32,
    /// How many of the latest interpretations the meta agent reads.
    #[serde(default = "default_recent")]
    pub recent_interpretations: usize,
}

fn default_fanout() -> u32 {
    1
}

fn default_recent() -> usize {
    5
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            policy: InterventionPolicy::default(),
            fanout: default_fanout(),
            recent_interpretations: default_recent(),
        }
    }
}

/// First line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub format: String,
    pub version: u32,
    pub title: String,
    /// Gateway the session ran against (`mock`, `openai`, `record`, `replay`).
    pub gateway: String,
    pub config: SessionConfig,
    #[serde(default)]
    pub templates: BTreeMap<String, u32>,
    /// Starting document for sessions opened on an existing graph.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<GraphDocument>,
}

/// Append-only, seq-numbered event record of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub header: SessionHeader,
    events: Vec<AgentEvent>,
}

impl EventLog {
    pub fn new(header: SessionHeader) -> Self {
        Self {
            header,
            events: Vec::new(),
        }
    }

    /// Wraps already-numbered events without checking them.
    pub fn from_events(header: SessionHeader, events: Vec<AgentEvent>) -> Self {
        Self { header, events }
    }

    pub fn append(
        &mut self,
        kind: EventKind,
        subject: Vec<NodeId>,
        payload: String,
        actor: Author,
        cause: Option<u64>,
    ) -> &AgentEvent {
        let seq = self.next_seq();
        self.events.push(AgentEvent {
            seq,
            kind,
            subject,
            payload,
            actor,
            cause,
        });
        self.events.last().expect("just pushed")
    }

    pub fn next_seq(&self) -> u64 {
        self.events.len() as u64 + 1
    }

    pub fn events(&self) -> &[AgentEvent] {
        &self.events
    }

    pub fn get(&self, seq: u64) -> Option<&AgentEvent> {
        seq.checked_sub(1)
            .and_then(|i| self.events.get(i as usize))
            .filter(|e| e.seq == seq)
    }

    /// Events with seq strictly greater than `seq`.
    pub fn since(&self, seq: u64) -> &[AgentEvent] {
        let start = (seq as usize).min(self.events.len());
        &self.events[start..]
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// First seq at which numbering stops being contiguous from 1.
    pub fn first_gap(&self) -> Option<u64> {
        self.events
            .iter()
            .enumerate()
            .find(|(i, e)| e.seq != *i as u64 + 1)
            .map(|(i, _)| i as u64 + 1)
    }
}
