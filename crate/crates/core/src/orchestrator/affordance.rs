use serde::{Deserialize, Serialize};

use crate::graph::{ConversationGraph, GraphError, NodeId};

/// Something the user can do with the current selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Affordance {
    AddRoot,
    BuildFrom,
    Merge,
    Edit,
    ShowFullText,
}

/// Actions offered for a selection:
///
/// | selection                        | actions                         |
/// |----------------------------------|---------------------------------|
/// | nothing                          | add root                        |
/// | one prompt                       | edit, show full text            |
/// | one response                     | build from, edit, show full text|
/// | two or more distinct responses   | merge                           |
/// | anything else                    | nothing                         |
pub fn selection_affordances(
    graph: &ConversationGraph,
    selected: &[NodeId],
) -> Result<Vec<Affordance>, GraphError> {
    let nodes = selected
        .iter()
        .map(|id| graph.get(*id))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(match nodes.as_slice() {
        [] => vec![Affordance::AddRoot],
        [one] if one.kind.is_prompt() => vec![Affordance::Edit, Affordance::ShowFullText],
        [_] => vec![
            Affordance::BuildFrom,
            Affordance::Edit,
            Affordance::ShowFullText,
        ],
        many => {
            let all_responses = many.iter().all(|n| n.kind.is_response());
            let mut ids: Vec<NodeId> = many.iter().map(|n| n.id).collect();
            ids.sort();
            ids.dedup();
            if all_responses && ids.len() == many.len() {
                vec![Affordance::Merge]
            } else {
                Vec::new()
            }
        }
    })
}
