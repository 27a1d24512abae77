use serde::{Deserialize, Serialize};

use crate::graph::NodeId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InterventionPolicy {
    /// Human actions required between two interventions.
    pub cooldown_actions: u32,
    /// Minimum self-reported relevance for an intervention to surface.
    pub relevance_threshold: f64,
    /// Apply inserted prompts without confirmation and answer them right away.
    pub auto_respond_to_inserted: bool,
}

impl Default for InterventionPolicy {
    fn default() -> Self {
        Self {
            cooldown_actions: 3,
            relevance_threshold: 0.5,
            auto_respond_to_inserted: false,
        }
    }
}

impl InterventionPolicy {
    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.relevance_threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaGuidance {
    pub text: String,
    pub issued_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphInterpretation {
    pub trigger_seq: u64,
    pub summary: String,
    pub affected: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    Advice,
    InsertPrompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaIntervention {
    pub kind: InterventionKind,
    pub text: String,
    /// Responses an inserted prompt hangs from. Empty only with `new_root`.
    #[serde(default)]
    pub attach_parents: Vec<NodeId>,
    #[serde(default)]
    pub new_root: bool,
    pub relevance: f64,
    pub trigger_seq: u64,
    /// Guidance handed to the graph agent alongside this intervention.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guidance: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionState {
    /// Shown in the sidebar, or inserted by the agent itself.
    Applied,
    /// Waiting for the user to accept or dismiss.
    Proposed,
}

/// Payload of a `MetaIntervention` event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub state: InterventionState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<NodeId>,
    pub intervention: MetaIntervention,
}

/// Parsed meta-agent reply, before gating and validation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaReply {
    pub relevance: f64,
    pub kind: InterventionKind,
    pub parents: Vec<NodeId>,
    pub new_root: bool,
    pub guidance: Option<String>,
    pub text: String,
}

const HEADER_KEYS: [&str; 5] = ["relevance", "kind", "parents", "guidance", "text"];

fn header_line(line: &str) -> Option<(&'static str, &str)> {
    let (key, value) = line.split_once(':')?;
    let key = key.trim().to_ascii_lowercase();
    HEADER_KEYS
        .iter()
        .find(|k| **k == key)
        .map(|k| (*k, value.trim()))
}

/// Reads the `key: value` reply format the review template asks for.
///
/// A relevance that is missing, unparsable or outside `[0, 1]` reads as 0,
/// which suppresses the intervention. Lines after `text:` that are not
/// headers continue the text; with no `text:` header, stray lines form it.
pub fn parse_meta_reply(reply: &str) -> MetaReply {
    let mut relevance = 0.0;
    let mut kind = InterventionKind::Advice;
    let mut parents = Vec::new();
    let mut new_root = false;
    let mut guidance = None;
    let mut text_lines: Vec<&str> = Vec::new();
    let mut stray: Vec<&str> = Vec::new();
    let mut in_text = false;

    for line in reply.lines() {
        match header_line(line) {
            Some(("relevance", v)) => {
                relevance = v
                    .parse::<f64>()
                    .ok()
                    .filter(|r| (0.0..=1.0).contains(r))
                    .unwrap_or(0.0);
                in_text = false;
            }
            Some(("kind", v)) => {
                kind = match v.to_ascii_lowercase().replace('-', "_").as_str() {
                    "insert_prompt" | "insert" | "prompt" => InterventionKind::InsertPrompt,
                    _ => InterventionKind::Advice,
                };
                in_text = false;
            }
            Some(("parents", v)) => {
                for token in v.split(|c: char| c.is_whitespace() || c == ',') {
                    match token.trim() {
                        "" => {}
                        "new_root" | "none" => new_root = true,
                        t => {
                            if let Ok(id) = t.parse() {
                                parents.push(id);
                            }
                        }
                    }
                }
                in_text = false;
            }
            Some(("guidance", v)) => {
                guidance = Some(v.to_string()).filter(|g| !g.is_empty());
                in_text = false;
            }
            Some(("text", v)) => {
                text_lines.push(v);
                in_text = true;
            }
            _ if in_text => text_lines.push(line),
            _ => stray.push(line),
        }
    }

    let body = if text_lines.is_empty() {
        stray
    } else {
        text_lines
    };
    MetaReply {
        relevance,
        kind,
        parents,
        new_root,
        guidance,
        text: body.join("\n").trim().to_string(),
    }
}
