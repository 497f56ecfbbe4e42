#![allow(clippy::tabs_in_doc_comments)]
//! Per-page observation state.
//!
//! A page is decomposed and abstracted once, on entry. Later snapshots of
//! the same URL are diffed against the entry snapshot by node id: removed
//! and modified nodes are updated in place inside their regions, and new
//! nodes are listed separately at the end of the digest.
//!
//! Digest layout, one block per region in document order:
//!
//! ```text
//! <R0 purpose="site navigation links">
//! [n1] navigation
//! 	[l1] link 'Home'
//! </R0>
//! <R1 purpose="search form">
//! <added_elements>
//! [o1] option 'Small'
//! </added_elements>
//! ```
//!
//! Selected regions (all of them once `view_all` is active) carry their
//! member lines, indented relative to the region root; the others are the
//! opening tag alone.

pub mod diff;
pub mod replay;
pub mod select;

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::abstraction::{abstract_partition, Backend, RegionAbstraction};
use crate::axtree::{write_node_line, AXNode, AXTree};
use crate::decomposer::{decompose, DecomposeError, EdgeScorer, RegionPartition};
use crate::metrics::token_count;

pub use diff::{diff, AddedGroup, Field, Modification, TransitionDelta};
pub use replay::{replay, replay_with, ReplayError, ReplayReport, ReplayRun, StepRow};
pub use select::{
    parse_selection, render_selection_prompt, FixedSelector, KeywordSelector, LmSelector, Selection,
    SelectionParseError, Selector,
};

pub const ACTION_PROMPT_ADDITIONS: &str = include_str!("../../prompts/digest_actions.txt");

#[derive(Debug, Clone)]
pub struct PageSession {
    url: String,
    entry_tree: AXTree,
    partition: RegionPartition,
    abstractions: Vec<RegionAbstraction>,
    selected: BTreeSet<usize>,
    view_all_active: bool,
    step_index: usize,
    current_tree: AXTree,
    delta: TransitionDelta,
    /// Per region: (member id, depth below the region root), document order.
    layout: Vec<Vec<(String, usize)>>,
    selection_prompt: String,
    selection_fallback: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    SamePage(TransitionDelta),
    NewPage,
}

fn region_layout(tree: &AXTree, partition: &RegionPartition) -> Vec<Vec<(String, usize)>> {
    let index = tree.index();
    let assignment = partition.assignment();
    let mut layout: Vec<Vec<(String, usize)>> = vec![Vec::new(); partition.len()];
    for pos in 0..index.len() {
        let id = index.node(pos).id.as_str();
        let r = assignment[id];
        let root_depth = index.depth(index.position(&partition.regions[r].root_id).expect("root in tree"));
        layout[r].push((id.to_string(), index.depth(pos) - root_depth));
    }
    layout
}

/// Decomposes, abstracts and selects for a freshly entered page.
pub fn open_session<S: EdgeScorer>(
    tree: &AXTree,
    task: &str,
    history: &[String],
    scorer: &S,
    tau: f64,
    abstraction: &Backend<'_>,
    selector: &dyn Selector,
) -> Result<PageSession, DecomposeError> {
    let mut partition = decompose(tree, scorer, tau)?;
    let abstractions = abstract_partition(&partition, tree, abstraction);
    for (r, a) in partition.regions.iter_mut().zip(&abstractions) {
        r.purpose = Some(a.purpose.clone());
        r.state_summary = Some(a.state_summary.clone());
    }
    let selection = selector.select(task, history, &abstractions);
    let selection_prompt = render_selection_prompt(task, history, &abstractions);
    Ok(PageSession {
        url: tree.url().to_string(),
        layout: region_layout(tree, &partition),
        entry_tree: tree.clone(),
        current_tree: tree.clone(),
        partition,
        abstractions,
        selected: selection.selected,
        view_all_active: false,
        step_index: 0,
        delta: TransitionDelta::default(),
        selection_prompt,
        selection_fallback: selection.fallback,
    })
}

fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '\n' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

fn push_line(out: &mut String, node: &AXNode, depth: usize) {
    for _ in 0..depth {
        out.push('\t');
    }
    write_node_line(out, node);
    out.push('\n');
}

fn push_added(out: &mut String, node: &AXNode, depth: usize) {
    push_line(out, node, depth);
    for c in &node.children {
        push_added(out, c, depth + 1);
    }
}

impl PageSession {
    pub fn url(&self) -> &str {
        &self.url
    }
    pub fn entry_tree(&self) -> &AXTree {
        &self.entry_tree
    }
    pub fn current_tree(&self) -> &AXTree {
        &self.current_tree
    }
    pub fn partition(&self) -> &RegionPartition {
        &self.partition
    }
    pub fn abstractions(&self) -> &[RegionAbstraction] {
        &self.abstractions
    }
    pub fn selected(&self) -> &BTreeSet<usize> {
        &self.selected
    }
    pub fn view_all_active(&self) -> bool {
        self.view_all_active
    }
    pub fn step_index(&self) -> usize {
        self.step_index
    }
    /// Changes of the current snapshot relative to page entry.
    pub fn delta(&self) -> &TransitionDelta {
        &self.delta
    }
    /// The selection prompt built from this page's abstractions.
    pub fn selection_prompt(&self) -> &str {
        &self.selection_prompt
    }
    pub fn selection_fallback(&self) -> Option<&str> {
        self.selection_fallback.as_deref()
    }

    /// Reveals every region for the rest of this page.
    pub fn view_all(&mut self) {
        self.view_all_active = true;
    }

    /// Advances to `new_tree`. A different URL means a new page; the session
    /// is left untouched and the caller opens a fresh one.
    pub fn step(&mut self, new_tree: AXTree, new_url: &str) -> StepOutcome {
        if new_url != self.url {
            return StepOutcome::NewPage;
        }
        self.delta = diff(&self.entry_tree, &new_tree, &self.partition);
        self.current_tree = new_tree;
        self.step_index += 1;
        StepOutcome::SamePage(self.delta.clone())
    }

    /// Member ids of region `r` still rendered inside it.
    pub fn surviving_members(&self, r: usize) -> impl Iterator<Item = &str> {
        self.layout[r]
            .iter()
            .map(|(id, _)| id.as_str())
            .filter(|id| !self.delta.is_gone(id))
    }

    pub fn is_rendered_in_full(&self, r: usize) -> bool {
        self.view_all_active || self.selected.contains(&r)
    }

    pub fn render_with(&self, full: impl Fn(usize) -> bool) -> String {
        let current: HashMap<&str, &AXNode> = self.current_tree.nodes().map(|n| (n.id.as_str(), n)).collect();
        let mut out = String::new();
        for (r, region) in self.partition.regions.iter().enumerate() {
            let purpose = self.abstractions.get(r).map(|a| a.purpose.as_str()).unwrap_or("");
            out.push_str(&format!("<R{} purpose=\"{}\">\n", region.region_id, escape_attr(purpose)));
            if !full(r) {
                continue;
            }
            // a removed region root empties the whole block
            if !self.delta.is_gone(&region.root_id) {
                for (id, depth) in &self.layout[r] {
                    if self.delta.is_gone(id) {
                        continue;
                    }
                    push_line(&mut out, current[id.as_str()], *depth);
                }
            }
            out.push_str(&format!("</R{}>\n", region.region_id));
        }
        if !self.delta.added.is_empty() {
            out.push_str("<added_elements>\n");
            for group in &self.delta.added {
                for root in &group.roots {
                    push_added(&mut out, root, 0);
                }
            }
            out.push_str("</added_elements>\n");
        }
        out
    }

    pub fn render_digest(&self) -> String {
        self.render_with(|r| self.is_rendered_in_full(r))
    }
}

pub fn render_digest(session: &PageSession) -> String {
    session.render_digest()
}

pub fn digest_tokens(session: &PageSession) -> usize {
    token_count(&session.render_digest())
}

/// Scorer, backends and a decomposition counter bundled for repeated page
/// entries.
pub struct Pipeline<'a, S> {
    pub scorer: &'a S,
    pub tau: f64,
    pub abstraction: Backend<'a>,
    pub selector: &'a dyn Selector,
    decompositions: AtomicUsize,
}

impl<'a, S: EdgeScorer> Pipeline<'a, S> {
    pub fn new(scorer: &'a S, tau: f64, abstraction: Backend<'a>, selector: &'a dyn Selector) -> Self {
        Pipeline {
            scorer,
            tau,
            abstraction,
            selector,
            decompositions: AtomicUsize::new(0),
        }
    }

    pub fn open(&self, tree: &AXTree, task: &str, history: &[String]) -> Result<PageSession, DecomposeError> {
        self.decompositions.fetch_add(1, Ordering::SeqCst);
        open_session(tree, task, history, self.scorer, self.tau, &self.abstraction, self.selector)
    }

    /// How many times a page has been decomposed through this pipeline.
    pub fn decompose_calls(&self) -> usize {
        self.decompositions.load(Ordering::SeqCst)
    }
}
