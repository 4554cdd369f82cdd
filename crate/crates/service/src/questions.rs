//! Instructor question sets and their LaTeX-like source format.
//!
//! ```text
//! % comment
//! \question{sqrt2}
//! \workflow{ms_w_example_final}
//! Prove that $\sqrt{2}$ is irrational.
//! \context You may use unique prime factorisation.
//! ```
//!
//! Plain lines after `\question{id}` form the text students see. `\context`
//! lines are shown to the model only. `\workflow{name}` picks the directive
//! config; without it the service default applies.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::is_valid_key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecomputeStatus {
    Pending,
    Ready,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionEntry {
    pub question_id: String,
    pub display_text: String,
    /// Extra conventions given to the model after the question text.
    pub model_context: String,
    pub workflow_ref: String,
    pub precompute_status: PrecomputeStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precompute_error: Option<String>,
}

impl QuestionEntry {
    /// The question as the model sees it.
    pub fn model_text(&self) -> String {
        if self.model_context.trim().is_empty() {
            self.display_text.clone()
        } else {
            format!("{}\n\n{}", self.display_text, self.model_context)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct SourceError {
    pub line: usize,
    pub message: String,
}

/// A parsed question before precomputation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionDraft {
    pub question_id: String,
    pub display_text: String,
    pub model_context: String,
    pub workflow_ref: Option<String>,
    pub line: usize,
}

fn braced_argument<'a>(rest: &'a str, directive: &str, line: usize) -> Result<&'a str, SourceError> {
    let err = |message: String| SourceError { line, message };
    let inner = rest
        .strip_prefix('{')
        .and_then(|r| r.strip_suffix('}'))
        .ok_or_else(|| err(format!("expected `\\{directive}{{...}}`")))?;
    if !is_valid_key(inner) {
        return Err(err(format!(
            "`{inner}` is not a valid {directive} name (letters, digits, `-`, `_`, `.`)"
        )));
    }
    Ok(inner)
}

pub fn parse_question_source(source: &str) -> Result<Vec<QuestionDraft>, SourceError> {
    let mut drafts: Vec<QuestionDraft> = Vec::new();
    let mut seen = HashSet::new();
    for (index, raw) in source.lines().enumerate() {
        let line = index + 1;
        let trimmed = raw.trim();
        if trimmed.starts_with('%') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix("\\question") {
            let id = braced_argument(rest.trim(), "question", line)?;
            if !seen.insert(id.to_string()) {
                return Err(SourceError {
                    line,
                    message: format!("duplicate question id `{id}`"),
                });
            }
            drafts.push(QuestionDraft {
                question_id: id.to_string(),
                display_text: String::new(),
                model_context: String::new(),
                workflow_ref: None,
                line,
            });
            continue;
        }
        let Some(current) = drafts.last_mut() else {
            if trimmed.is_empty() {
                continue;
            }
            return Err(SourceError {
                line,
                message: "text before the first \\question".into(),
            });
        };
        if let Some(rest) = trimmed.strip_prefix("\\workflow") {
            if current.workflow_ref.is_some() {
                return Err(SourceError {
                    line,
                    message: format!("question `{}` names two workflows", current.question_id),
                });
            }
            current.workflow_ref = Some(braced_argument(rest.trim(), "workflow", line)?.to_string());
        } else if let Some(rest) = trimmed.strip_prefix("\\context") {
            if !current.model_context.is_empty() {
                current.model_context.push('\n');
            }
            current.model_context.push_str(rest.trim());
        } else {
            if !current.display_text.is_empty() || !trimmed.is_empty() {
                current.display_text.push_str(raw.trim_end());
                current.display_text.push('\n');
            }
        }
    }
    for draft in &mut drafts {
        draft.display_text = draft.display_text.trim_end().to_string();
        if draft.display_text.is_empty() {
            return Err(SourceError {
                line: draft.line,
                message: format!("question `{}` has no display text", draft.question_id),
            });
        }
    }
    Ok(drafts)
}
