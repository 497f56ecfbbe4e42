//! Trace files: one JSON object per line, each holding a page snapshot and
//! the action taken on it.
//!
//! ```text
//! {"step":0,"url":"http://shop/","action":"click('a12')","axtree":"[r] RootWebArea ...","task":"..."}
//! ```
//!
//! `task` is optional and only read from the first record that carries it.
//! Blank lines are ignored.

use serde::{Deserialize, Serialize};

use super::{parse_axtree, AXTree, ParseError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub url: String,
    pub action: String,
    pub axtree: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
}

/// A trace record with its snapshot parsed.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub step: usize,
    pub url: String,
    pub action: String,
    pub tree: AXTree,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub task: String,
    pub steps: Vec<TraceStep>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace line {line}: {reason}")]
    Record { line: usize, reason: String },
    #[error("trace line {line}: snapshot: {source}")]
    Snapshot { line: usize, source: ParseError },
    #[error("trace line {line}: step {found} out of order (expected > {previous})")]
    OutOfOrder { line: usize, previous: usize, found: usize },
}

impl TraceError {
    pub fn line(&self) -> usize {
        match self {
            TraceError::Record { line, .. }
            | TraceError::Snapshot { line, .. }
            | TraceError::OutOfOrder { line, .. } => *line,
        }
    }
}

pub fn parse_trace(text: &str) -> Result<Trace, TraceError> {
    let mut task = None;
    let mut steps: Vec<TraceStep> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(raw).map_err(|e| TraceError::Record {
            line,
            reason: e.to_string(),
        })?;
        if let Some(prev) = steps.last() {
            if rec.step <= prev.step {
                return Err(TraceError::OutOfOrder {
                    line,
                    previous: prev.step,
                    found: rec.step,
                });
            }
        }
        if task.is_none() {
            task = rec.task.clone();
        }
        let tree = parse_axtree(&rec.axtree, &rec.url).map_err(|source| TraceError::Snapshot { line, source })?;
        steps.push(TraceStep {
            step: rec.step,
            url: rec.url,
            action: rec.action,
            tree,
        });
    }
    Ok(Trace {
        task: task.unwrap_or_default(),
        steps,
    })
}

pub fn write_trace(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec).expect("trace record serializes"));
        out.push('\n');
    }
    out
}

/// Extracts the first quoted argument of an action string, e.g. `click('a12')` → `a12`.
pub fn action_target(action: &str) -> Option<&str> {
    let open = action.find('(')?;
    let args = &action[open + 1..];
    let q = args.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let rest = &args[1..];
    let end = rest.find(q)?;
    Some(&rest[..end]).filter(|s| !s.is_empty())
}
