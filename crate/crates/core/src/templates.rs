//! Prompt templates for the two agents.
//!
//! Templates are plain text files with named placeholders: `{outline}`,
//! `{transcript}`, `{guidance}`, `{event_summary}` and `{perspective}`. An
//! optional first line `#! template-version: N` carries the template version
//! and is stripped before use. Defaults are compiled in from `templates/`; a
//! directory holding files with the same names overrides them one by one.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

pub const RESPOND_FILE: &str = "graph_agent_respond.txt";
pub const INTERPRET_FILE: &str = "graph_agent_interpret.txt";
pub const REVIEW_FILE: &str = "meta_agent_review.txt";

const PLACEHOLDERS: [&str; 5] = [
    "outline",
    "transcript",
    "guidance",
    "event_summary",
    "perspective",
];

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("reading template {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("template {name} has a malformed version line")]
    BadVersion { name: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub name: String,
    pub version: u32,
    body: String,
}

impl Template {
    pub fn parse(name: &str, raw: &str) -> Result<Self, TemplateError> {
        let (version, body) = match raw.strip_prefix("#!") {
            Some(rest) => {
                let (header, body) = rest.split_once('\n').unwrap_or((rest, ""));
                let version = header
                    .trim()
                    .strip_prefix("template-version:")
                    .and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| TemplateError::BadVersion {
                        name: name.to_string(),
                    })?;
                (version, body)
            }
            None => (0, raw),
        };
        Ok(Self {
            name: name.to_string(),
            version,
            body: body.to_string(),
        })
    }

    /// Substitutes known placeholders; missing values become empty strings
    /// and any other brace text is left alone.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> String {
        let mut out = self.body.clone();
        for key in PLACEHOLDERS {
            let value = values.get(key).map(String::as_str).unwrap_or("");
            out = out.replace(&format!("{{{key}}}"), value);
        }
        out.trim_end().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub respond: Template,
    pub interpret: Template,
    pub review: Template,
}

impl Default for TemplateSet {
    fn default() -> Self {
        let parse = |name: &str, raw: &str| Template::parse(name, raw).expect("bundled template");
        Self {
            respond: parse(
                RESPOND_FILE,
                include_str!("../templates/graph_agent_respond.txt"),
            ),
            interpret: parse(
                INTERPRET_FILE,
                include_str!("../templates/graph_agent_interpret.txt"),
            ),
            review: parse(
                REVIEW_FILE,
                include_str!("../templates/meta_agent_review.txt"),
            ),
        }
    }
}

impl TemplateSet {
    /// Bundled templates, replaced by any same-named file found in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::default();
        for (file, slot) in [
            (RESPOND_FILE, &mut set.respond),
            (INTERPRET_FILE, &mut set.interpret),
            (REVIEW_FILE, &mut set.review),
        ] {
            let path = dir.join(file);
            if path.exists() {
                let raw = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                *slot = Template::parse(file, &raw)?;
            }
        }
        Ok(set)
    }

    pub fn versions(&self) -> BTreeMap<String, u32> {
        [&self.respond, &self.interpret, &self.review]
            .into_iter()
            .map(|t| (t.name.clone(), t.version))
            .collect()
    }
}
