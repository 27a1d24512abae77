//! The conversation DAG: prompt and response nodes, branching, merging,
//! multiple roots and edit-driven invalidation.
//!
//! Edges always join a prompt-kind node and a response-kind node. A response
//! has exactly one prompt parent; a prompt has no parents (a root) or any
//! number of response parents (a merge when there are two or more). Nodes are
//! never deleted or re-parented, so a freshly created node has no children and
//! acyclicity holds by construction.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Vertical distance between a programmatically placed node and its first parent.
pub const CHILD_OFFSET_Y: f64 = 120.0;
/// Horizontal spacing between successive roots.
pub const ROOT_SPACING_X: f64 = 400.0;
/// Only document version this build reads and writes.
pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TITLE: &str = "untitled";

/// Identifier of a node. Ordered by creation sequence and rendered as `n<seq>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(u64);

impl NodeId {
    pub fn new(seq: u64) -> Self {
        Self(seq)
    }

    pub fn seq(self) -> u64 {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid node id `{0}` (expected n<number>)")]
pub struct ParseNodeIdError(String);

impl FromStr for NodeId {
    type Err = ParseNodeIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('n')
            .filter(|digits| !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|digits| digits.parse().ok())
            .map(NodeId)
            .ok_or_else(|| ParseNodeIdError(s.to_string()))
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    UserPrompt,
    /// A reflective prompt inserted by the meta agent.
    AgentPrompt,
    AssistantResponse,
}

impl NodeKind {
    pub fn is_prompt(self) -> bool {
        matches!(self, NodeKind::UserPrompt | NodeKind::AgentPrompt)
    }

    pub fn is_response(self) -> bool {
        self == NodeKind::AssistantResponse
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::UserPrompt => "user_prompt",
            NodeKind::AgentPrompt => "agent_prompt",
            NodeKind::AssistantResponse => "assistant_response",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    Human,
    GraphAgent,
    MetaAgent,
}

impl Author {
    pub fn as_str(self) -> &'static str {
        match self {
            Author::Human => "human",
            Author::GraphAgent => "graph_agent",
            Author::MetaAgent => "meta_agent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Fresh,
    Pending,
    Stale,
    Error,
}

impl NodeStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeStatus::Fresh => "fresh",
            NodeStatus::Pending => "pending",
            NodeStatus::Stale => "stale",
            NodeStatus::Error => "error",
        }
    }
}

/// Canvas position in abstract units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub kind: NodeKind,
    pub author: Author,
    /// Latest text. For a response that is stale or errored this is the last
    /// fresh text, or empty if it never completed.
    pub text: String,
    pub created_at: u64,
    pub position: Position,
    pub status: NodeStatus,
    pub parents: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("text must not be empty")]
    EmptyText,
    #[error("unknown parent {0}")]
    UnknownParent(NodeId),
    #[error("parent {0} is not an assistant response")]
    ParentNotResponse(NodeId),
    #[error("parent {0} is not a prompt")]
    ParentNotPrompt(NodeId),
    #[error("parent {0} listed more than once")]
    DuplicateParent(NodeId),
    #[error("a prompt needs at least one parent (use add_root_prompt for roots)")]
    NoParents,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not a prompt")]
    TargetNotPrompt(NodeId),
    #[error("position ({x}, {y}) is not finite")]
    InvalidPosition { x: f64, y: f64 },
    #[error("responses cannot be authored by {0:?}")]
    InvalidAuthor(Author),
    #[error("status {0:?} is not allowed here")]
    InvalidStatus(NodeStatus),
}

impl GraphError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            GraphError::EmptyText => "empty_text",
            GraphError::UnknownParent(_) => "unknown_parent",
            GraphError::ParentNotResponse(_) => "parent_not_response",
            GraphError::ParentNotPrompt(_) => "parent_not_prompt",
            GraphError::DuplicateParent(_) => "duplicate_parent",
            GraphError::NoParents => "no_parents",
            GraphError::UnknownNode(_) => "unknown_node",
            GraphError::TargetNotPrompt(_) => "target_not_prompt",
            GraphError::InvalidPosition { .. } => "invalid_position",
            GraphError::InvalidAuthor(_) => "invalid_author",
            GraphError::InvalidStatus(_) => "invalid_status",
        }
    }
}

/// Which invariant a [`Violation`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// Map key and node id disagree.
    IdMismatch,
    DanglingParent,
    DuplicateParent,
    ResponseParentCount,
    ResponseParentKind,
    PromptParentKind,
    AgentPromptAuthor,
    ResponseAuthor,
    EmptyFreshText,
    StatusOnPrompt,
    /// A parent was not created strictly before its child.
    CreationOrder,
    DuplicateCreatedAt,
    Cycle,
    Roots,
    SequenceCounter,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub nodes: Vec<NodeId>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.rule, self.message)?;
        if !self.nodes.is_empty() {
            let ids: Vec<String> = self.nodes.iter().map(ToString::to_string).collect();
            write!(f, " [{}]", ids.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversationGraph {
    pub(crate) nodes: BTreeMap<NodeId, Node>,
    pub(crate) roots: Vec<NodeId>,
    pub(crate) next_seq: u64,
    pub(crate) title: String,
    pub(crate) schema_version: u32,
}

impl Default for ConversationGraph {
    fn default() -> Self {
        Self::new("")
    }
}

impl ConversationGraph {
    pub fn new(title: &str) -> Self {
        let title = if title.trim().is_empty() {
            DEFAULT_TITLE.to_string()
        } else {
            title.to_string()
        };
        Self {
            nodes: BTreeMap::new(),
            roots: Vec::new(),
            next_seq: 1,
            title,
            schema_version: SCHEMA_VERSION,
        }
    }

    /// Assembles a graph from raw parts without checking invariants. Callers
    /// are expected to run [`ConversationGraph::validate`] on the result.
    pub fn from_parts(title: String, roots: Vec<NodeId>, nodes: Vec<Node>) -> Self {
        let next_seq = nodes.iter().map(|n| n.created_at).max().unwrap_or(0) + 1;
        let nodes = nodes.into_iter().map(|n| (n.id, n)).collect();
        Self {
            nodes,
            roots,
            next_seq,
            title,
            schema_version: SCHEMA_VERSION,
        }
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn schema_version(&self) -> u32 {
        self.schema_version
    }

    pub fn roots(&self) -> &[NodeId] {
        &self.roots
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.values().map(|n| n.parents.len()).sum()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> Option<&mut Node> {
        self.nodes.get_mut(&id)
    }

    pub fn get(&self, id: NodeId) -> Result<&Node, GraphError> {
        self.nodes.get(&id).ok_or(GraphError::UnknownNode(id))
    }

    /// Nodes in id (creation) order.
    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    /// Children of `id` in creation order.
    pub fn children(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|n| n.parents.contains(&id))
            .map(|n| n.id)
            .collect()
    }

    fn child_index(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut index: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for node in self.nodes.values() {
            for parent in &node.parents {
                index.entry(*parent).or_default().push(node.id);
            }
        }
        index
    }

    fn allocate(&mut self) -> (NodeId, u64) {
        let seq = self.next_seq;
        self.next_seq += 1;
        (NodeId(seq), seq)
    }

    fn placement_below(&self, parent: NodeId) -> Position {
        let base = self.nodes[&parent].position;
        Position::new(base.x, base.y + CHILD_OFFSET_Y)
    }

    /// Adds a parentless prompt. Meta-agent roots become agent prompts.
    pub fn add_root_prompt(&mut self, text: &str, author: Author) -> Result<NodeId, GraphError> {
        if text.is_empty() {
            return Err(GraphError::EmptyText);
        }
        let kind = prompt_kind_for(author)?;
        let position = Position::new(ROOT_SPACING_X * self.roots.len() as f64, 0.0);
        let (id, created_at) = self.allocate();
        self.nodes.insert(
            id,
            Node {
                id,
                kind,
                author,
                text: text.to_string(),
                created_at,
                position,
                status: NodeStatus::Fresh,
                parents: Vec::new(),
            },
        );
        self.roots.push(id);
        Ok(id)
    }

    /// Adds a prompt under one or more responses. Two or more parents make a
    /// merge; a parent that already has a prompt child gains a sibling branch.
    pub fn add_prompt(
        &mut self,
        parents: &[NodeId],
        text: &str,
        author: Author,
    ) -> Result<NodeId, GraphError> {
        self.check_prompt_parents(parents)?;
        if text.is_empty() {
            return Err(GraphError::EmptyText);
        }
        let kind = prompt_kind_for(author)?;
        let position = self.placement_below(parents[0]);
        let (id, created_at) = self.allocate();
        self.nodes.insert(
            id,
            Node {
                id,
                kind,
                author,
                text: text.to_string(),
                created_at,
                position,
                status: NodeStatus::Fresh,
                parents: parents.to_vec(),
            },
        );
        Ok(id)
    }

    pub(crate) fn check_prompt_parents(&self, parents: &[NodeId]) -> Result<(), GraphError> {
        if parents.is_empty() {
            return Err(GraphError::NoParents);
        }
        let mut seen = BTreeSet::new();
        for parent in parents {
            let node = self
                .nodes
                .get(parent)
                .ok_or(GraphError::UnknownParent(*parent))?;
            if !node.kind.is_response() {
                return Err(GraphError::ParentNotResponse(*parent));
            }
            if !seen.insert(*parent) {
                return Err(GraphError::DuplicateParent(*parent));
            }
        }
        Ok(())
    }

    /// Adds a response under `prompt`. A prompt may collect several responses.
    pub fn add_response(
        &mut self,
        prompt: NodeId,
        text: &str,
        status: NodeStatus,
    ) -> Result<NodeId, GraphError> {
        let parent = self
            .nodes
            .get(&prompt)
            .ok_or(GraphError::UnknownParent(prompt))?;
        if !parent.kind.is_prompt() {
            return Err(GraphError::ParentNotPrompt(prompt));
        }
        match status {
            NodeStatus::Fresh if text.is_empty() => return Err(GraphError::EmptyText),
            NodeStatus::Fresh | NodeStatus::Pending => {}
            other => return Err(GraphError::InvalidStatus(other)),
        }
        let position = self.placement_below(prompt);
        let (id, created_at) = self.allocate();
        self.nodes.insert(
            id,
            Node {
                id,
                kind: NodeKind::AssistantResponse,
                author: Author::GraphAgent,
                text: text.to_string(),
                created_at,
                position,
                status,
                parents: vec![prompt],
            },
        );
        Ok(id)
    }

    /// Replaces the text of `node` and marks every response strictly
    /// downstream of it stale. Returns those responses parents-first.
    ///
    /// An edited response is itself fresh afterwards, since the new text is
    /// authoritative.
    pub fn edit_text(&mut self, node: NodeId, new_text: &str) -> Result<Vec<NodeId>, GraphError> {
        if !self.nodes.contains_key(&node) {
            return Err(GraphError::UnknownNode(node));
        }
        if new_text.is_empty() {
            return Err(GraphError::EmptyText);
        }
        let below = self.descendants(node)?;
        let invalidated: Vec<NodeId> = crate::context::topological_order(self, &below)
            .into_iter()
            .filter(|id| self.nodes[id].kind.is_response())
            .collect();

        let edited = self.nodes.get_mut(&node).expect("checked above");
        edited.text = new_text.to_string();
        if edited.kind.is_response() {
            edited.status = NodeStatus::Fresh;
        }
        for id in &invalidated {
            self.nodes.get_mut(id).expect("descendant exists").status = NodeStatus::Stale;
        }
        Ok(invalidated)
    }

    pub fn set_position(&mut self, node: NodeId, x: f64, y: f64) -> Result<(), GraphError> {
        if !x.is_finite() || !y.is_finite() {
            return Err(GraphError::InvalidPosition { x, y });
        }
        let target = self
            .nodes
            .get_mut(&node)
            .ok_or(GraphError::UnknownNode(node))?;
        target.position = Position::new(x, y);
        Ok(())
    }

    /// Strict transitive closure over child edges.
    pub fn descendants(&self, node: NodeId) -> Result<BTreeSet<NodeId>, GraphError> {
        if !self.nodes.contains_key(&node) {
            return Err(GraphError::UnknownNode(node));
        }
        let children = self.child_index();
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([node]);
        while let Some(current) = queue.pop_front() {
            for child in children.get(&current).into_iter().flatten() {
                if seen.insert(*child) {
                    queue.push_back(*child);
                }
            }
        }
        seen.remove(&node);
        Ok(seen)
    }

    /// Checks every structural invariant, returning one entry per breach.
    pub fn validate(&self) -> Vec<Violation> {
        crate::validate::validate(self)
    }

    pub fn is_valid(&self) -> bool {
        self.validate().is_empty()
    }

    pub(crate) fn set_status(&mut self, node: NodeId, status: NodeStatus) {
        if let Some(n) = self.nodes.get_mut(&node) {
            n.status = status;
        }
    }
}

fn prompt_kind_for(author: Author) -> Result<NodeKind, GraphError> {
    match author {
        Author::Human => Ok(NodeKind::UserPrompt),
        Author::MetaAgent => Ok(NodeKind::AgentPrompt),
        Author::GraphAgent => Err(GraphError::InvalidAuthor(Author::GraphAgent)),
    }
}
