use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::http::StatusCode;
use convograph_core::gateway::ChatGateway;
use convograph_core::orchestrator::{AgentEvent, MetaIntervention, SessionConfig};
use convograph_core::persistence::{append_log, load_graph, save_graph, save_log};
use convograph_core::templates::TemplateSet;
use convograph_core::{Action, ActionOutcome, ConversationGraph, GraphDocument, Orchestrator};
use serde::Serialize;
use tokio::sync::watch;

use crate::error::ApiError;

/// Every event of a session, plus a watch channel carrying the latest seq.
pub struct EventFeed {
    events: RwLock<Vec<AgentEvent>>,
    latest: watch::Sender<u64>,
}

impl EventFeed {
    fn new() -> Self {
        Self {
            events: RwLock::new(Vec::new()),
            latest: watch::channel(0).0,
        }
    }

    fn push(&self, event: &AgentEvent) {
        self.events.write().unwrap().push(event.clone());
        self.latest.send_replace(event.seq);
    }

    /// Events with seq greater than `seq`.
    pub fn after(&self, seq: u64) -> Vec<AgentEvent> {
        let events = self.events.read().unwrap();
        let start = events.partition_point(|e| e.seq <= seq);
        events[start..].to_vec()
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.latest.subscribe()
    }
}

/// A proposed intervention awaiting accept or dismiss.
#[derive(Debug, Clone, Serialize)]
pub struct PendingIntervention {
    pub id: u64,
    #[serde(flatten)]
    pub intervention: MetaIntervention,
}

/// Read-side copy of the session state, refreshed after every action.
struct Snapshot {
    graph: ConversationGraph,
    pending: Vec<PendingIntervention>,
}

impl Snapshot {
    fn of(orchestrator: &Orchestrator) -> Self {
        Self {
            graph: orchestrator.graph().clone(),
            pending: orchestrator
                .pending_interventions()
                .iter()
                .map(|(id, i)| PendingIntervention {
                    id: *id,
                    intervention: i.clone(),
                })
                .collect(),
        }
    }
}

pub struct Session {
    pub id: String,
    orchestrator: Arc<tokio::sync::Mutex<Orchestrator>>,
    feed: Arc<EventFeed>,
    snapshot: RwLock<Snapshot>,
    graph_path: PathBuf,
    log_path: PathBuf,
}

impl Session {
    fn start(
        id: String,
        mut orchestrator: Orchestrator,
        graph_path: PathBuf,
        log_path: PathBuf,
    ) -> Result<Arc<Self>, ApiError> {
        let feed = Arc::new(EventFeed::new());
        let sink = feed.clone();
        orchestrator.set_event_sink(Arc::new(move |e| sink.push(e)));
        save_graph(orchestrator.graph(), &graph_path)?;
        save_log(orchestrator.log(), &log_path)?;
        let snapshot = Snapshot::of(&orchestrator);
        Ok(Arc::new(Self {
            id,
            orchestrator: Arc::new(tokio::sync::Mutex::new(orchestrator)),
            feed,
            snapshot: RwLock::new(snapshot),
            graph_path,
            log_path,
        }))
    }

    pub fn feed(&self) -> Arc<EventFeed> {
        self.feed.clone()
    }

    pub fn document(&self) -> GraphDocument {
        GraphDocument::from_graph(&self.snapshot.read().unwrap().graph)
    }

    pub fn graph(&self) -> ConversationGraph {
        self.snapshot.read().unwrap().graph.clone()
    }

    pub fn pending_interventions(&self) -> Vec<PendingIntervention> {
        self.snapshot.read().unwrap().pending.clone()
    }

    pub fn graph_path(&self) -> &Path {
        &self.graph_path
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    /// Runs one action to completion. Actions on a session are applied one
    /// at a time in arrival order; the model calls run off the async runtime.
    pub async fn apply(self: &Arc<Self>, action: Action) -> Result<ActionOutcome, ApiError> {
        let mut orchestrator = self.orchestrator.clone().lock_owned().await;
        let session = self.clone();
        tokio::task::spawn_blocking(move || {
            let outcome = orchestrator.apply(action)?;
            *session.snapshot.write().unwrap() = Snapshot::of(&orchestrator);
            for failure in orchestrator.take_gateway_failures() {
                tracing::warn!(session = %session.id, code = failure.code(), "model call failed: {failure}");
            }
            save_graph(orchestrator.graph(), &session.graph_path)?;
            append_log(orchestrator.log(), &outcome.events, &session.log_path)?;
            Ok(outcome)
        })
        .await
        .map_err(|e| ApiError::internal(format!("action task failed: {e}")))?
    }
}

pub struct Registry {
    gateway: Arc<dyn ChatGateway>,
    config: SessionConfig,
    templates: TemplateSet,
    data_dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    /// Loaded document path to the session editing it.
    documents: tokio::sync::Mutex<HashMap<PathBuf, String>>,
}

impl Registry {
    pub fn new(
        gateway: Arc<dyn ChatGateway>,
        config: SessionConfig,
        templates: TemplateSet,
        data_dir: PathBuf,
    ) -> std::io::Result<Self> {
        std::fs::create_dir_all(&data_dir)?;
        Ok(Self {
            gateway,
            config,
            templates,
            data_dir,
            sessions: RwLock::new(HashMap::new()),
            documents: tokio::sync::Mutex::new(HashMap::new()),
        })
    }

    pub fn get(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn new_id() -> String {
        uuid::Uuid::new_v4().simple().to_string()
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.data_dir.join(format!("{id}.events.ndjson"))
    }

    fn insert(&self, session: Arc<Session>) {
        self.sessions
            .write()
            .unwrap()
            .insert(session.id.clone(), session);
    }

    pub fn create(&self, title: &str) -> Result<Arc<Session>, ApiError> {
        let id = Self::new_id();
        let orchestrator = Orchestrator::new(title, self.gateway.clone(), self.config.clone())?
            .with_templates(self.templates.clone());
        let graph_path = self.data_dir.join(format!("{id}.graph.json"));
        let session = Session::start(id.clone(), orchestrator, graph_path, self.log_path(&id))?;
        self.insert(session.clone());
        tracing::info!(session = %id, "created session");
        Ok(session)
    }

    /// Opens a graph document. Loading a path that already has a session
    /// returns that session; `false` in the result marks it as existing.
    pub async fn load(&self, path: &Path) -> Result<(Arc<Session>, bool), ApiError> {
        let canonical = path.canonicalize().map_err(|e| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "document_not_found",
                format!("{}: {e}", path.display()),
            )
        })?;
        let mut documents = self.documents.lock().await;
        if let Some(id) = documents.get(&canonical) {
            return Ok((self.get(id)?, false));
        }
        let graph = load_graph(&canonical)?;
        let id = Self::new_id();
        let orchestrator =
            Orchestrator::with_graph(graph, self.gateway.clone(), self.config.clone())?
                .with_templates(self.templates.clone());
        let session = Session::start(
            id.clone(),
            orchestrator,
            canonical.clone(),
            self.log_path(&id),
        )?;
        self.insert(session.clone());
        documents.insert(canonical, id.clone());
        tracing::info!(session = %id, path = %path.display(), "loaded session");
        Ok((session, true))
    }
}
