use std::collections::{BTreeMap, BTreeSet};

use crate::graph::{Author, ConversationGraph, NodeId, NodeKind, NodeStatus, Rule, Violation};

pub(crate) fn validate(graph: &ConversationGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |rule: Rule, nodes: Vec<NodeId>, message: String| {
        out.push(Violation {
            rule,
            nodes,
            message,
        })
    };

    let mut created: BTreeMap<u64, NodeId> = BTreeMap::new();
    for (key, node) in &graph.nodes {
        if *key != node.id {
            push(
                Rule::IdMismatch,
                vec![*key, node.id],
                format!("stored under {key} but carries id {}", node.id),
            );
        }
        if let Some(other) = created.insert(node.created_at, node.id) {
            push(
                Rule::DuplicateCreatedAt,
                vec![other, node.id],
                format!("created_at {} used twice", node.created_at),
            );
        }

        let distinct: BTreeSet<NodeId> = node.parents.iter().copied().collect();
        if distinct.len() != node.parents.len() {
            push(
                Rule::DuplicateParent,
                vec![node.id],
                "parent listed more than once".into(),
            );
        }

        let mut known_parents = Vec::new();
        for parent in &node.parents {
            match graph.nodes.get(parent) {
                None => push(
                    Rule::DanglingParent,
                    vec![node.id, *parent],
                    format!("parent {parent} does not exist"),
                ),
                Some(p) => known_parents.push(p),
            }
        }

        match node.kind {
            NodeKind::AssistantResponse => {
                if node.parents.len() != 1 {
                    push(
                        Rule::ResponseParentCount,
                        vec![node.id],
                        format!("response has {} parents, expected 1", node.parents.len()),
                    );
                }
                for p in known_parents.iter().filter(|p| !p.kind.is_prompt()) {
                    push(
                        Rule::ResponseParentKind,
                        vec![node.id, p.id],
                        "response parent must be a prompt".into(),
                    );
                }
                if node.author != Author::GraphAgent {
                    push(
                        Rule::ResponseAuthor,
                        vec![node.id],
                        "responses are authored by the graph agent".into(),
                    );
                }
            }
            NodeKind::UserPrompt | NodeKind::AgentPrompt => {
                for p in known_parents.iter().filter(|p| !p.kind.is_response()) {
                    push(
                        Rule::PromptParentKind,
                        vec![node.id, p.id],
                        "prompt parent must be a response".into(),
                    );
                }
                if node.status != NodeStatus::Fresh {
                    push(
                        Rule::StatusOnPrompt,
                        vec![node.id],
                        format!("prompt has status {:?}", node.status),
                    );
                }
                let expected = if node.kind == NodeKind::AgentPrompt {
                    Author::MetaAgent
                } else {
                    Author::Human
                };
                if node.author != expected {
                    push(
                        Rule::AgentPromptAuthor,
                        vec![node.id],
                        format!(
                            "{} must be authored by {}",
                            node.kind.as_str(),
                            expected.as_str()
                        ),
                    );
                }
            }
        }

        if node.status == NodeStatus::Fresh && node.text.is_empty() {
            push(
                Rule::EmptyFreshText,
                vec![node.id],
                "fresh node has empty text".into(),
            );
        }

        for p in &known_parents {
            if p.created_at >= node.created_at {
                push(
                    Rule::CreationOrder,
                    vec![p.id, node.id],
                    "parent not created before child".into(),
                );
            }
        }

        if node.created_at >= graph.next_seq {
            push(
                Rule::SequenceCounter,
                vec![node.id],
                format!(
                    "created_at {} not below next_seq {}",
                    node.created_at, graph.next_seq
                ),
            );
        }
    }

    for cycle in find_cycles(graph) {
        push(Rule::Cycle, cycle, "parent edges form a cycle".into());
    }

    let mut parentless: Vec<&crate::graph::Node> = graph
        .nodes
        .values()
        .filter(|n| n.parents.is_empty())
        .collect();
    parentless.sort_by_key(|n| (n.created_at, n.id));
    let expected_roots: Vec<NodeId> = parentless.iter().map(|n| n.id).collect();
    if expected_roots != graph.roots {
        push(
            Rule::Roots,
            graph.roots.clone(),
            "roots must list exactly the parentless nodes in creation order".into(),
        );
    }

    out
}

/// Returns one node list per cycle found by depth-first search over parent
/// edges. Dangling parents are ignored here; they are reported separately.
fn find_cycles(graph: &ConversationGraph) -> Vec<Vec<NodeId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Unseen,
        OnStack,
        Done,
    }

    let mut marks: BTreeMap<NodeId, Mark> =
        graph.nodes.keys().map(|id| (*id, Mark::Unseen)).collect();
    let mut cycles = Vec::new();

    for start in graph.nodes.keys() {
        if marks[start] != Mark::Unseen {
            continue;
        }
        // (node, index of next parent to visit)
        let mut stack: Vec<(NodeId, usize)> = vec![(*start, 0)];
        marks.insert(*start, Mark::OnStack);
        while let Some((current, next)) = stack.last_mut() {
            let parents = &graph.nodes[current].parents;
            if *next < parents.len() {
                let parent = parents[*next];
                *next += 1;
                match marks.get(&parent) {
                    Some(Mark::Unseen) => {
                        marks.insert(parent, Mark::OnStack);
                        stack.push((parent, 0));
                    }
                    Some(Mark::OnStack) => {
                        let from = stack.iter().position(|(id, _)| *id == parent).unwrap_or(0);
                        cycles.push(stack[from..].iter().map(|(id, _)| *id).collect());
                    }
                    _ => {}
                }
            } else {
                marks.insert(*current, Mark::Done);
                stack.pop();
            }
        }
    }
    cycles
}
