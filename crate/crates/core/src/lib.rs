//! Conversation graphs that branch and merge, with a graph agent that answers
//! along the selected history and a meta agent that reflects on the whole
//! canvas.

pub mod context;
pub mod gateway;
pub mod graph;
pub mod orchestrator;
pub mod persistence;
pub mod templates;
mod validate;

pub use context::{linearize, render_outline, GraphOutline, Role, Transcript, TranscriptEntry};
pub use graph::{
    Author, ConversationGraph, GraphError, Node, NodeId, NodeKind, NodeStatus, Position, Rule,
    Violation,
};
pub use orchestrator::{Action, ActionOutcome, Orchestrator, OrchestratorError};
pub use persistence::{GraphDocument, PersistenceError};
