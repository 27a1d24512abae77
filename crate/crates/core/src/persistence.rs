//! Graph documents and session logs on disk.
//!
//! A graph is stored as one pretty-printed JSON document with sorted keys and
//! nodes ordered by id, so saving the same graph always yields the same
//! bytes. A session log is NDJSON: a [`SessionHeader`] line followed by one
//! [`AgentEvent`] per line. Replaying a log against a recorded gateway
//! re-executes the human actions and checks that every agent event comes out
//! the same.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatGateway, GatewayError};
use crate::graph::{Author, ConversationGraph, Node, NodeId, Violation, SCHEMA_VERSION};
use crate::orchestrator::{
    Action, AgentEvent, EventKind, EventLog, Orchestrator, SessionHeader, LOG_FORMAT, LOG_VERSION,
};
use crate::templates::TemplateSet;

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("storage error on {path}: {message}")]
    Storage { path: String, message: String },
    #[error("could not parse: {0}")]
    Parse(String),
    #[error("schema version {found} is not supported (expected {expected})")]
    SchemaVersionUnsupported { found: u32, expected: u32 },
    #[error("document violates {} invariant(s); first: {}", .0.len(), .0[0])]
    ValidationFailed(Vec<Violation>),
    #[error("malformed session log: {0}")]
    MalformedLog(String),
    #[error("no recorded reply while replaying event {0}")]
    CacheMiss(u64),
}

impl PersistenceError {
    pub fn code(&self) -> &'static str {
        match self {
            PersistenceError::Storage { .. } => "storage",
            PersistenceError::Parse(_) => "parse",
            PersistenceError::SchemaVersionUnsupported { .. } => "schema_version_unsupported",
            PersistenceError::ValidationFailed(_) => "validation_failed",
            PersistenceError::MalformedLog(_) => "malformed_log",
            PersistenceError::CacheMiss(_) => "cache_miss",
        }
    }

    fn storage(path: &Path, err: impl ToString) -> Self {
        PersistenceError::Storage {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

/// On-disk form of a [`ConversationGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub schema_version: u32,
    pub title: String,
    pub roots: Vec<NodeId>,
    pub nodes: Vec<Node>,
}

impl GraphDocument {
    pub fn from_graph(graph: &ConversationGraph) -> Self {
        Self {
            schema_version: graph.schema_version(),
            title: graph.title().to_string(),
            roots: graph.roots().to_vec(),
            nodes: graph.nodes().cloned().collect(),
        }
    }

    /// Checks the version and every graph invariant.
    pub fn into_graph(self) -> Result<ConversationGraph, PersistenceError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(PersistenceError::SchemaVersionUnsupported {
                found: self.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let graph = ConversationGraph::from_parts(self.title, self.roots, self.nodes);
        let violations = graph.validate();
        if violations.is_empty() {
            Ok(graph)
        } else {
            Err(PersistenceError::ValidationFailed(violations))
        }
    }
}

/// Canonical bytes of `graph`: sorted keys, nodes by id, two-space indent,
/// trailing newline.
pub fn to_canonical_json(graph: &ConversationGraph) -> String {
    // Going through `Value` sorts object keys.
    let value = serde_json::to_value(GraphDocument::from_graph(graph)).expect("graph serializes");
    let mut out = serde_json::to_string_pretty(&value).expect("value serializes");
    out.push('\n');
    out
}

pub fn parse_graph(text: &str) -> Result<ConversationGraph, PersistenceError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| PersistenceError::Parse(e.to_string()))?;
    // Check the version before the shape so future documents get the right error.
    if let Some(found) = value.get("schema_version").and_then(|v| v.as_u64()) {
        if found != u64::from(SCHEMA_VERSION) {
            return Err(PersistenceError::SchemaVersionUnsupported {
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: SCHEMA_VERSION,
            });
        }
    }
    let doc: GraphDocument =
        serde_json::from_value(value).map_err(|e| PersistenceError::Parse(e.to_string()))?;
    doc.into_graph()
}

/// Writes the canonical document through a temporary file and a rename.
pub fn save_graph(graph: &ConversationGraph, path: &Path) -> Result<(), PersistenceError> {
    write_atomically(path, to_canonical_json(graph).as_bytes())
}

pub fn load_graph(path: &Path) -> Result<ConversationGraph, PersistenceError> {
    let text = fs::read_to_string(path).map_err(|e| PersistenceError::storage(path, e))?;
    parse_graph(&text)
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<(), PersistenceError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(|e| PersistenceError::storage(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| PersistenceError::storage(path, e))
}

pub fn log_to_ndjson(log: &EventLog) -> String {
    let mut out = serde_json::to_string(&log.header).expect("header serializes");
    out.push('\n');
    for event in log.events() {
        out.push_str(&serde_json::to_string(event).expect("event serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_log(text: &str) -> Result<EventLog, PersistenceError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines
        .next()
        .ok_or_else(|| PersistenceError::MalformedLog("log has no header".into()))?;
    let header: SessionHeader = serde_json::from_str(first)
        .map_err(|e| PersistenceError::MalformedLog(format!("header: {e}")))?;
    if header.format != LOG_FORMAT {
        return Err(PersistenceError::MalformedLog(format!(
            "unknown log format {:?}",
            header.format
        )));
    }
    if header.version != LOG_VERSION {
        return Err(PersistenceError::SchemaVersionUnsupported {
            found: header.version,
            expected: LOG_VERSION,
        });
    }
    let events = lines
        .map(|(n, line)| {
            serde_json::from_str::<AgentEvent>(line)
                .map_err(|e| PersistenceError::MalformedLog(format!("line {}: {e}", n + 1)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let log = EventLog::from_events(header, events);
    if let Some(seq) = log.first_gap() {
        return Err(PersistenceError::MalformedLog(format!(
            "event seq is not contiguous at position {seq}"
        )));
    }
    Ok(log)
}

pub fn save_log(log: &EventLog, path: &Path) -> Result<(), PersistenceError> {
    write_atomically(path, log_to_ndjson(log).as_bytes())
}

/// Appends events to an existing log file, or writes header and events to a
/// new one.
pub fn append_log(
    log: &EventLog,
    events: &[AgentEvent],
    path: &Path,
) -> Result<(), PersistenceError> {
    if !path.exists() {
        return save_log(log, path);
    }
    let mut file = fs::OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| PersistenceError::storage(path, e))?;
    let mut buf = String::new();
    for event in events {
        buf.push_str(&serde_json::to_string(event).expect("event serializes"));
        buf.push('\n');
    }
    file.write_all(buf.as_bytes())
        .map_err(|e| PersistenceError::storage(path, e))
}

pub fn load_log(path: &Path) -> Result<EventLog, PersistenceError> {
    let text = fs::read_to_string(path).map_err(|e| PersistenceError::storage(path, e))?;
    parse_log(&text)
}

/// Action a logged human event stands for.
pub fn action_for_event(event: &AgentEvent) -> Result<Action, PersistenceError> {
    let bad = |what: &str| PersistenceError::MalformedLog(format!("event {}: {what}", event.seq));
    if event.actor != Author::Human {
        return Err(bad("not a human event"));
    }
    let first = || {
        event
            .subject
            .first()
            .copied()
            .ok_or_else(|| bad("empty subject"))
    };
    let id = || {
        event
            .payload
            .trim()
            .parse::<u64>()
            .map_err(|_| bad("bad intervention id"))
    };
    Ok(match event.kind {
        EventKind::NodeAdded => match event.subject.get(1..).unwrap_or_default() {
            [] => Action::AddRoot {
                text: event.payload.clone(),
            },
            [parent] => Action::BuildFrom {
                parent: *parent,
                text: event.payload.clone(),
            },
            parents => Action::Merge {
                parents: parents.to_vec(),
                text: event.payload.clone(),
            },
        },
        EventKind::NodeEdited => Action::EditText {
            node: first()?,
            text: event.payload.clone(),
        },
        EventKind::NodeMoved => {
            let mut parts = event.payload.split_whitespace().map(str::parse::<f64>);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => Action::SetPosition {
                    node: first()?,
                    x,
                    y,
                },
                _ => return Err(bad("bad position payload")),
            }
        }
        EventKind::SelectionChanged => Action::Select {
            nodes: event.subject.clone(),
        },
        EventKind::InterventionAccepted => Action::AcceptIntervention { id: id()? },
        EventKind::InterventionDismissed => Action::DismissIntervention { id: id()? },
        other => return Err(bad(&format!("{} cannot be a human event", other.as_str()))),
    })
}

/// Replays with the bundled templates.
pub fn replay(
    log: &EventLog,
    gateway: Arc<dyn ChatGateway>,
) -> Result<Orchestrator, PersistenceError> {
    replay_with(log, gateway, TemplateSet::default())
}

/// Rebuilds a session by re-running every human action in `log` against
/// `gateway` (normally a replay store). Fails on the first event that does
/// not come out identical, or on a request the store has never seen.
pub fn replay_with(
    log: &EventLog,
    gateway: Arc<dyn ChatGateway>,
    templates: TemplateSet,
) -> Result<Orchestrator, PersistenceError> {
    if let Some(seq) = log.first_gap() {
        return Err(PersistenceError::MalformedLog(format!(
            "event seq is not contiguous at position {seq}"
        )));
    }
    if templates.versions() != log.header.templates && !log.header.templates.is_empty() {
        return Err(PersistenceError::MalformedLog(format!(
            "log was recorded with template versions {:?}, replaying with {:?}",
            log.header.templates,
            templates.versions()
        )));
    }
    let mut orch = Orchestrator::from_header(&log.header, gateway, templates)
        .map_err(|e| PersistenceError::MalformedLog(e.to_string()))?;

    let logged = log.events();
    let mut at = 0;
    while at < logged.len() {
        let event = &logged[at];
        let action = action_for_event(event)?;
        orch.take_gateway_failures();
        let outcome = orch.apply(action).map_err(|e| {
            PersistenceError::MalformedLog(format!("event {} does not replay: {e}", event.seq))
        })?;
        if orch
            .take_gateway_failures()
            .iter()
            .any(|f| matches!(f, GatewayError::CacheMiss(_)))
        {
            return Err(PersistenceError::CacheMiss(event.seq));
        }
        let end = (at + outcome.events.len()).min(logged.len());
        let expected = &logged[at..end];
        if let Some(i) =
            (0..outcome.events.len()).find(|i| expected.get(*i) != Some(&outcome.events[*i]))
        {
            return Err(PersistenceError::MalformedLog(format!(
                "replay diverged at event {}",
                event.seq + i as u64
            )));
        }
        at = end;
    }
    Ok(orch)
}
