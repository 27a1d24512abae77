//! Context assembly: the dialogue history sent for a prompt, and the compact
//! whole-canvas outline the agents read.
//!
//! A prompt's history is its ancestor closure plus itself, ordered by the
//! topological sort that breaks ties by `(created_at, id)`. Sibling branches
//! never see each other; a merge sees the union of all its parents' histories
//! with shared ancestors listed once.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::graph::{Author, ConversationGraph, GraphError, NodeId, NodeKind};

/// Prefix marking meta-agent prompts inside a transcript.
pub const REFLECTIVE_PREFIX: &str = "[reflective prompt] ";
/// Maximum preview length in characters, before the ellipsis.
pub const PREVIEW_CHARS: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub role: Role,
    pub text: String,
    pub source: NodeId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn sources(&self) -> Vec<NodeId> {
        self.entries.iter().map(|e| e.source).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Plain-text rendering, one `role: text` block per entry.
    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|e| {
                let role = match e.role {
                    Role::User => "user",
                    Role::Assistant => "assistant",
                };
                format!("{role}: {}", e.text)
            })
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Strict transitive closure over parent edges.
pub fn ancestor_closure(
    graph: &ConversationGraph,
    node: NodeId,
) -> Result<BTreeSet<NodeId>, GraphError> {
    let start = graph.get(node)?;
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<NodeId> = start.parents.iter().copied().collect();
    while let Some(current) = queue.pop_front() {
        if !seen.insert(current) {
            continue;
        }
        if let Some(n) = graph.node(current) {
            queue.extend(n.parents.iter().copied());
        }
    }
    Ok(seen)
}

/// Orders `members` so that parents precede children, choosing the smallest
/// `(created_at, id)` among ready nodes at each step. Edges leaving the set
/// are ignored. Unknown ids are dropped.
pub fn topological_order(graph: &ConversationGraph, members: &BTreeSet<NodeId>) -> Vec<NodeId> {
    let mut indegree: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for id in members {
        let Some(node) = graph.node(*id) else {
            continue;
        };
        let inside: Vec<NodeId> = node
            .parents
            .iter()
            .filter(|p| members.contains(p) && graph.contains(**p))
            .copied()
            .collect();
        indegree.insert(*id, inside.len());
        for parent in inside {
            children.entry(parent).or_default().push(*id);
        }
    }

    let key = |id: NodeId| (graph.node(id).map_or(u64::MAX, |n| n.created_at), id);
    let mut ready: BinaryHeap<Reverse<(u64, NodeId)>> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(id, _)| Reverse(key(*id)))
        .collect();

    let mut order = Vec::with_capacity(indegree.len());
    while let Some(Reverse((_, id))) = ready.pop() {
        order.push(id);
        for child in children.get(&id).into_iter().flatten() {
            let d = indegree.get_mut(child).expect("child is a member");
            *d -= 1;
            if *d == 0 {
                ready.push(Reverse(key(*child)));
            }
        }
    }
    order
}

/// The history sent to the model when answering `target`.
///
/// Meta-agent prompts appear as user turns carrying [`REFLECTIVE_PREFIX`].
/// Responses without any completed text (pending, or failed before ever
/// completing) are left out.
pub fn linearize(graph: &ConversationGraph, target: NodeId) -> Result<Transcript, GraphError> {
    let node = graph.get(target)?;
    if !node.kind.is_prompt() {
        return Err(GraphError::TargetNotPrompt(target));
    }
    let mut members = ancestor_closure(graph, target)?;
    members.insert(target);

    let entries = topological_order(graph, &members)
        .into_iter()
        .filter_map(|id| {
            let n = graph.node(id)?;
            match n.kind {
                NodeKind::UserPrompt => Some(TranscriptEntry {
                    role: Role::User,
                    text: n.text.clone(),
                    source: id,
                }),
                NodeKind::AgentPrompt => Some(TranscriptEntry {
                    role: Role::User,
                    text: format!("{REFLECTIVE_PREFIX}{}", n.text),
                    source: id,
                }),
                NodeKind::AssistantResponse if n.text.is_empty() => None,
                NodeKind::AssistantResponse => Some(TranscriptEntry {
                    role: Role::Assistant,
                    text: n.text.clone(),
                    source: id,
                }),
            }
        })
        .collect();
    Ok(Transcript { entries })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlineLine {
    pub id: NodeId,
    pub kind: NodeKind,
    pub author: Author,
    pub text_preview: String,
    pub parent_ids: Vec<NodeId>,
}

impl OutlineLine {
    pub fn render(&self) -> String {
        let parents = if self.parent_ids.is_empty() {
            "root".to_string()
        } else {
            let ids: Vec<String> = self.parent_ids.iter().map(ToString::to_string).collect();
            format!("parents={}", ids.join(","))
        };
        format!(
            "{} {}/{} {} | {}",
            self.id,
            self.kind.as_str(),
            self.author.as_str(),
            parents,
            self.text_preview
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphOutline {
    pub lines: Vec<OutlineLine>,
}

impl GraphOutline {
    pub fn render(&self) -> String {
        if self.lines.is_empty() {
            return "(empty canvas)".to_string();
        }
        self.lines
            .iter()
            .map(OutlineLine::render)
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Shortens `text` to at most [`PREVIEW_CHARS`] characters plus `…`, with
/// line breaks flattened to spaces.
pub fn preview(text: &str) -> String {
    let flat: String = text
        .chars()
        .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
        .collect();
    if flat.chars().count() <= PREVIEW_CHARS {
        flat
    } else {
        let mut cut: String = flat.chars().take(PREVIEW_CHARS).collect();
        cut.push('…');
        cut
    }
}

/// Lists every node once: roots in creation order, each followed by the not
/// yet listed part of its subtree in linearization order.
pub fn render_outline(graph: &ConversationGraph) -> GraphOutline {
    let mut listed: BTreeSet<NodeId> = BTreeSet::new();
    let mut lines = Vec::with_capacity(graph.len());
    let mut emit = |ids: Vec<NodeId>, listed: &mut BTreeSet<NodeId>| {
        for id in ids {
            if !listed.insert(id) {
                continue;
            }
            let n = graph.node(id).expect("member of graph");
            lines.push(OutlineLine {
                id,
                kind: n.kind,
                author: n.author,
                text_preview: preview(&n.text),
                parent_ids: n.parents.clone(),
            });
        }
    };

    for root in graph.roots() {
        let Ok(mut members) = graph.descendants(*root) else {
            continue;
        };
        members.insert(*root);
        members.retain(|id| !listed.contains(id));
        emit(topological_order(graph, &members), &mut listed);
    }
    // Anything unreachable from the root list (only possible in hand-built graphs).
    let rest: BTreeSet<NodeId> = graph
        .nodes()
        .map(|n| n.id)
        .filter(|id| !listed.contains(id))
        .collect();
    emit(topological_order(graph, &rest), &mut listed);
    GraphOutline { lines }
}
