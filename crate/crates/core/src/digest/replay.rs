//! Replays a recorded trace through page sessions and accounts for tokens.
//!
//! Token shares split the task total three ways:
//! the actor observation (digests as they would render without `view_all`),
//! the selection prompt paid at each page entry, and the extra digest
//! tokens caused by `view_all`.

use serde::Serialize;

use super::{PageSession, Pipeline, StepOutcome};
use crate::axtree::trace::{parse_trace, Trace, TraceError};
use crate::axtree::{preprocess, serialize_axtree};
use crate::decomposer::{DecomposeError, EdgeScorer};
use crate::metrics::{ApproxCounter, TokenCounter};

pub const REPORT_SCHEMA: &str = "axregion.replay.v1";
pub const VIEW_ALL_ACTION: &str = "view_all()";

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error("trace has no steps")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRow {
    pub step: usize,
    pub url: String,
    pub page: usize,
    pub page_entry: bool,
    pub action: String,
    pub selected: Vec<String>,
    pub view_all_active: bool,
    pub digest_tokens: usize,
    pub baseline_tokens: usize,
    pub reduction_pct: f64,
    pub selection_tokens: usize,
    pub view_all_tokens: usize,
    pub added: usize,
    pub removed: usize,
    pub modified: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Totals {
    pub baseline: usize,
    pub digest: usize,
    pub actor_observation: usize,
    pub selection: usize,
    pub view_all: usize,
    pub total: usize,
    pub actor_share: f64,
    pub selection_share: f64,
    pub view_all_share: f64,
    /// Digest tokens versus the full trees, over all steps.
    pub observation_reduction_pct: f64,
    /// Everything above (selection included) versus the full trees.
    pub task_reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub schema: &'static str,
    pub task: String,
    pub pages: usize,
    pub decompose_calls: usize,
    pub view_all_calls: usize,
    pub steps: Vec<StepRow>,
    pub totals: Totals,
    /// Steps where the digest was not smaller than the full tree.
    pub flags: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ReplayRun {
    pub report: ReplayReport,
    /// Rendered digest per step.
    pub digests: Vec<String>,
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

fn reduction(baseline: usize, digest: usize) -> f64 {
    if baseline == 0 {
        0.0
    } else {
        100.0 * (baseline as f64 - digest as f64) / baseline as f64
    }
}

pub fn replay<S: EdgeScorer>(trace: &Trace, pipeline: &Pipeline<'_, S>) -> Result<ReplayRun, ReplayError> {
    replay_with(trace, pipeline, &ApproxCounter)
}

/// `replay` with a caller-supplied token counter, used for every count in
/// the report.
pub fn replay_with<S: EdgeScorer>(
    trace: &Trace,
    pipeline: &Pipeline<'_, S>,
    counter: &dyn TokenCounter,
) -> Result<ReplayRun, ReplayError> {
    if trace.steps.is_empty() {
        return Err(ReplayError::Empty);
    }
    let calls_before = pipeline.decompose_calls();
    let mut session: Option<PageSession> = None;
    let mut history: Vec<String> = Vec::new();
    let mut rows = Vec::with_capacity(trace.steps.len());
    let mut digests = Vec::with_capacity(trace.steps.len());
    let mut pages = 0usize;
    let mut view_all_calls = 0usize;

    for step in &trace.steps {
        let tree = preprocess(&step.tree);
        let entry = match session.as_mut() {
            None => true,
            Some(s) => s.step(tree.clone(), &step.url) == StepOutcome::NewPage,
        };
        if entry {
            session = Some(pipeline.open(&tree, &trace.task, &history)?);
            pages += 1;
        }
        let s = session.as_mut().expect("session opened above");
        let digest = s.render_digest();
        let digest_tokens = counter.count(&digest);
        let without = if s.view_all_active() {
            counter.count(&s.render_with(|r| s.selected().contains(&r)))
        } else {
            digest_tokens
        };
        let baseline_tokens = counter.count(&serialize_axtree(&tree));
        let delta = s.delta();
        rows.push(StepRow {
            step: step.step,
            url: step.url.clone(),
            page: pages - 1,
            page_entry: entry,
            action: step.action.clone(),
            selected: s.selected().iter().map(|r| format!("R{r}")).collect(),
            view_all_active: s.view_all_active(),
            digest_tokens,
            baseline_tokens,
            reduction_pct: reduction(baseline_tokens, digest_tokens),
            selection_tokens: if entry { counter.count(s.selection_prompt()) } else { 0 },
            view_all_tokens: digest_tokens.saturating_sub(without),
            added: delta.added_ids().len(),
            removed: delta.removed.len() + delta.collisions.len(),
            modified: delta.modified_ids().len(),
        });
        digests.push(digest);
        if step.action.trim() == VIEW_ALL_ACTION {
            s.view_all();
            view_all_calls += 1;
        }
        history.push(step.action.clone());
    }

    let baseline: usize = rows.iter().map(|r| r.baseline_tokens).sum();
    let digest: usize = rows.iter().map(|r| r.digest_tokens).sum();
    let view_all: usize = rows.iter().map(|r| r.view_all_tokens).sum();
    let selection: usize = rows.iter().map(|r| r.selection_tokens).sum();
    let actor_observation = digest - view_all;
    let total = actor_observation + selection + view_all;
    let flags = rows
        .iter()
        .filter(|r| r.digest_tokens >= r.baseline_tokens)
        .map(|r| format!("step {}: digest ({}) is not smaller than the full tree ({})", r.step, r.digest_tokens, r.baseline_tokens))
        .collect();
    Ok(ReplayRun {
        report: ReplayReport {
            schema: REPORT_SCHEMA,
            task: trace.task.clone(),
            pages,
            decompose_calls: pipeline.decompose_calls() - calls_before,
            view_all_calls,
            steps: rows,
            totals: Totals {
                baseline,
                digest,
                actor_observation,
                selection,
                view_all,
                total,
                actor_share: pct(actor_observation, total),
                selection_share: pct(selection, total),
                view_all_share: pct(view_all, total),
                observation_reduction_pct: reduction(baseline, digest),
                task_reduction_pct: reduction(baseline, total),
            },
            flags,
        },
        digests,
    })
}

pub fn replay_text<S: EdgeScorer>(text: &str, pipeline: &Pipeline<'_, S>) -> Result<ReplayRun, ReplayError> {
    replay(&parse_trace(text)?, pipeline)
}

/// Replays several traces, in parallel when the `parallel` feature is on.
pub fn replay_many<S: EdgeScorer + Sync>(traces: &[Trace], pipeline: &Pipeline<'_, S>) -> Vec<Result<ReplayRun, ReplayError>> {
    crate::par::map(traces, |t| replay(t, pipeline))
}

impl ReplayReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "# {REPORT_SCHEMA}");
        let _ = writeln!(out, "task: {}", self.task);
        let _ = writeln!(
            out,
            "pages: {}  decompositions: {}  view_all calls: {}",
            self.pages, self.decompose_calls, self.view_all_calls
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:>5} {:>4} {:>6} {:>8} {:>8} {:>8} {:>9} {:>8}  selected",
            "step", "page", "entry", "digest", "full", "reduct%", "select", "view_all"
        );
        for r in &self.steps {
            let _ = writeln!(
                out,
                "{:>5} {:>4} {:>6} {:>8} {:>8} {:>8.1} {:>9} {:>8}  {}",
                r.step,
                r.page,
                if r.page_entry { "yes" } else { "" },
                r.digest_tokens,
                r.baseline_tokens,
                r.reduction_pct,
                r.selection_tokens,
                r.view_all_tokens,
                r.selected.join(",")
            );
        }
        let t = &self.totals;
        let _ = writeln!(out);
        let _ = writeln!(out, "full-tree tokens:     {}", t.baseline);
        let _ = writeln!(out, "digest tokens:        {} ({:.1}% reduction)", t.digest, t.observation_reduction_pct);
        let _ = writeln!(out, "task total:           {} ({:.1}% reduction)", t.total, t.task_reduction_pct);
        let _ = writeln!(out, "  actor observation:  {} ({:.1}%)", t.actor_observation, t.actor_share);
        let _ = writeln!(out, "  region selection:   {} ({:.1}%)", t.selection, t.selection_share);
        let _ = writeln!(out, "  view_all:           {} ({:.1}%)", t.view_all, t.view_all_share);
        for f in &self.flags {
            let _ = writeln!(out, "warning: {f}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstraction::Backend;
    use crate::axtree::trace::{write_trace, TraceRecord};
    use crate::decomposer::RoleRuleScorer;
    use crate::digest::{FixedSelector, KeywordSelector};

    const PAGE: &str = "[r] RootWebArea\n\t[n] navigation\n\t\t[a] link 'Home'\n\t\t[b] link 'Deals'\n\t[m] main\n\t\t[h] heading 'Green tea'\n\t\t[c] button 'Add to Cart'\n";

    fn rec(step: usize, url: &str, action: &str, tree: &str) -> TraceRecord {
        TraceRecord {
            step,
            url: url.into(),
            action: action.into(),
            axtree: tree.into(),
            task: (step == 0).then(|| "buy green tea".to_string()),
        }
    }

    #[test]
    fn one_step() {
        let text = write_trace(&[rec(0, "http://s/", "click('c')", PAGE)]);
        let rule = RoleRuleScorer::new(&["navigation", "main"]);
        let sel = KeywordSelector::default();
        let p = Pipeline::new(&rule, 0.5, Backend::Heuristic, &sel);
        let run = replay_text(&text, &p).unwrap();
        let r = &run.report;
        assert_eq!(r.steps.len(), 1);
        assert_eq!(r.pages, 1);
        assert_eq!(r.decompose_calls, 1);
        assert!(r.steps[0].selection_tokens > 0);
        assert_eq!(r.totals.total, r.totals.actor_observation + r.totals.selection + r.totals.view_all);
        let expected = 100.0 * (r.steps[0].baseline_tokens as f64 - r.steps[0].digest_tokens as f64) / r.steps[0].baseline_tokens as f64;
        assert_eq!(r.steps[0].reduction_pct, expected);
        assert!(r.to_text().starts_with("# axregion.replay.v1\n"));
        assert!(r.to_json().contains("\"schema\": \"axregion.replay.v1\""));
    }

    #[test]
    fn everything_selected_is_flagged() {
        let text = write_trace(&[rec(0, "http://s/", "noop()", PAGE)]);
        let rule = RoleRuleScorer::new(&["navigation", "main"]);
        let sel = FixedSelector((0..3).collect());
        let p = Pipeline::new(&rule, 0.5, Backend::Heuristic, &sel);
        let r = replay_text(&text, &p).unwrap().report;
        assert!(r.steps[0].digest_tokens >= r.steps[0].baseline_tokens);
        assert!(r.steps[0].reduction_pct <= 0.0);
        assert_eq!(r.flags.len(), 1);
    }

    #[test]
    fn view_all_is_counted_and_sticky() {
        let text = write_trace(&[
            rec(0, "http://s/", "view_all()", PAGE),
            rec(1, "http://s/", "click('a')", PAGE),
            rec(2, "http://s/x", "noop()", PAGE),
        ]);
        let rule = RoleRuleScorer::new(&["navigation", "main"]);
        let sel = FixedSelector([2].into());
        let p = Pipeline::new(&rule, 0.5, Backend::Heuristic, &sel);
        let r = replay_text(&text, &p).unwrap().report;
        assert_eq!(r.view_all_calls, 1);
        assert_eq!(
            r.steps.iter().map(|s| s.view_all_active).collect::<Vec<_>>(),
            [false, true, false]
        );
        assert!(r.steps[1].view_all_tokens > 0);
        assert_eq!(r.pages, 2);
        assert_eq!(r.decompose_calls, 2);
    }

    #[test]
    fn empty_trace() {
        let rule = RoleRuleScorer::new(&["navigation"]);
        let sel = KeywordSelector::default();
        let p = Pipeline::new(&rule, 0.5, Backend::Heuristic, &sel);
        assert!(matches!(replay_text("", &p), Err(ReplayError::Empty)));
        assert!(replay_text("{bad", &p).unwrap_err().to_string().contains("line 1"));
    }
}
