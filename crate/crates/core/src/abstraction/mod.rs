//! Per-region purpose and state summary.
//!
//! Two backends: a deterministic heuristic over the region's role pattern,
//! and a chat-completion model prompted with the region's serialized subtree.
//! A model failure on one region falls back to the heuristic for that region
//! only.

pub mod heuristic;
pub mod lm;

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::axtree::{serialize_axtree, AXNode, AXTree};
use crate::decomposer::{Region, RegionPartition};
pub use lm::{extract_json_object, ChatClient, HttpChatClient, LmEndpointConfig, LmError};

pub const ABSTRACTION_PROMPT: &str = include_str!("../../prompts/abstraction.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Heuristic,
    Lm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAbstraction {
    pub region_id: usize,
    pub purpose: String,
    pub state_summary: String,
    pub backend: BackendKind,
    pub latency_ms: u64,
    /// Why the model path was abandoned, when it was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

#[derive(Clone, Copy)]
pub enum Backend<'a> {
    Heuristic,
    Lm {
        client: &'a dyn ChatClient,
        max_retries: u32,
        concurrency: usize,
    },
}

impl<'a> Backend<'a> {
    pub fn lm(client: &'a dyn ChatClient) -> Self {
        Backend::Lm {
            client,
            max_retries: 2,
            concurrency: 4,
        }
    }
}

impl std::fmt::Debug for Backend<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Backend::Heuristic => f.write_str("Heuristic"),
            Backend::Lm {
                max_retries,
                concurrency,
                ..
            } => write!(f, "Lm {{ max_retries: {max_retries}, concurrency: {concurrency} }}"),
        }
    }
}

/// The region's members as a standalone tree (nodes of other regions are dropped).
pub fn region_subtree(tree: &AXTree, region: &Region) -> AXTree {
    fn copy(node: &AXNode, keep: &HashSet<&str>) -> AXNode {
        AXNode {
            id: node.id.clone(),
            role: node.role.clone(),
            name: node.name.clone(),
            value: node.value.clone(),
            attrs: node.attrs.clone(),
            children: node
                .children
                .iter()
                .filter(|c| keep.contains(c.id.as_str()))
                .map(|c| copy(c, keep))
                .collect(),
        }
    }
    let keep: HashSet<&str> = region.members.iter().map(String::as_str).collect();
    let root = tree
        .nodes()
        .find(|n| n.id == region.root_id)
        .expect("region root belongs to the tree");
    AXTree::new(copy(root, &keep), tree.url()).expect("subtree of a valid tree")
}

pub fn render_abstraction_prompt(subtree: &AXTree) -> String {
    ABSTRACTION_PROMPT.replace("{region_axtree}", serialize_axtree(subtree).trim_end())
}

/// Reads `{"purpose": ..., "state_summary": ...}` out of a model reply.
pub fn parse_abstraction_reply(reply: &str) -> Result<(String, String), LmError> {
    let obj = extract_json_object(reply).ok_or_else(|| LmError::MalformedReply("no JSON object".into()))?;
    let field = |k: &str| {
        obj.get(k)
            .and_then(|v| v.as_str())
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .ok_or_else(|| LmError::MalformedReply(format!("missing `{k}`")))
    };
    Ok((field("purpose")?, field("state_summary")?))
}

/// `latency_ms` is only non-zero after a failed model attempt, so offline
/// results stay byte-identical.
fn heuristic_abstraction(region_id: usize, subtree: &AXTree, latency_ms: u64, fallback: Option<String>) -> RegionAbstraction {
    let members: Vec<&AXNode> = subtree.nodes().collect();
    RegionAbstraction {
        region_id,
        purpose: heuristic::purpose(&members),
        state_summary: heuristic::state_summary(&members),
        backend: BackendKind::Heuristic,
        latency_ms,
        fallback,
    }
}

/// Model path only; errors once retries are exhausted.
pub fn try_lm_abstraction(subtree: &AXTree, client: &dyn ChatClient, max_retries: u32) -> Result<(String, String), LmError> {
    let prompt = render_abstraction_prompt(subtree);
    let mut last = LmError::Unavailable("no attempt made".into());
    for attempt in 0..=max_retries {
        match client.complete(&prompt).and_then(|r| parse_abstraction_reply(&r)) {
            Ok(v) => return Ok(v),
            Err(e) => {
                log::debug!("abstraction attempt {} failed: {e}", attempt + 1);
                last = e;
            }
        }
    }
    Err(last)
}

fn abstract_one(region_id: usize, subtree: &AXTree, backend: &Backend<'_>) -> RegionAbstraction {
    if subtree.nodes().all(heuristic::is_content_free) {
        return heuristic_abstraction(region_id, subtree, 0, None);
    }
    let started = Instant::now();
    match *backend {
        Backend::Heuristic => heuristic_abstraction(region_id, subtree, 0, None),
        Backend::Lm { client, max_retries, .. } => match try_lm_abstraction(subtree, client, max_retries) {
            Ok((purpose, state_summary)) => RegionAbstraction {
                region_id,
                purpose,
                state_summary,
                backend: BackendKind::Lm,
                latency_ms: started.elapsed().as_millis() as u64,
                fallback: None,
            },
            Err(e) => {
                log::warn!("region R{region_id}: {e}; using heuristic");
                heuristic_abstraction(region_id, subtree, started.elapsed().as_millis() as u64, Some(e.to_string()))
            }
        },
    }
}

/// Abstracts a standalone region subtree. Never fails: model errors fall
/// back to the heuristic with `backend = Heuristic` and `fallback` set.
pub fn abstract_region(subtree: &AXTree, backend: &Backend<'_>) -> RegionAbstraction {
    abstract_one(0, subtree, backend)
}

/// One abstraction per region, in region order. Model requests run on at
/// most `concurrency` threads.
pub fn abstract_partition(partition: &RegionPartition, tree: &AXTree, backend: &Backend<'_>) -> Vec<RegionAbstraction> {
    let subtrees: Vec<AXTree> = partition.regions.iter().map(|r| region_subtree(tree, r)).collect();
    let workers = match *backend {
        Backend::Heuristic => 1,
        Backend::Lm { concurrency, .. } => concurrency.clamp(1, subtrees.len().max(1)),
    };
    if workers == 1 {
        return subtrees
            .iter()
            .zip(&partition.regions)
            .map(|(s, r)| abstract_one(r.region_id, s, backend))
            .collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RegionAbstraction>>> = Mutex::new(vec![None; subtrees.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= subtrees.len() {
                    break;
                }
                let a = abstract_one(partition.regions[i].region_id, &subtrees[i], backend);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(a);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|a| a.expect("every slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::axtree::parse_axtree;
    use crate::decomposer::partition_from_roots;

    const PAGE: &str = "[r] RootWebArea 'Shop'\n\t[g] generic\n\t\t[nav] navigation\n\t\t\t[l1] link 'Home'\n\t\t\t[l2] link 'Deals'\n\t\t[s] search\n\t\t\t[q] combobox 'Search'\n\t\t\t[b] button 'Go'\n";

    fn page() -> (AXTree, RegionPartition) {
        let t = parse_axtree(PAGE, "http://shop").unwrap();
        let p = partition_from_roots(&t, &["r", "g", "nav", "s"]).unwrap();
        (t, p)
    }

    #[test]
    fn subtree_keeps_only_members() {
        let (t, p) = page();
        let sub = region_subtree(&t, &p.regions[1]);
        assert_eq!(serialize_axtree(&sub), "[g] generic\n");
        let sub = region_subtree(&t, &p.regions[3]);
        assert_eq!(sub.node_count(), 3);
    }

    #[test]
    fn heuristic_batch() {
        let (t, p) = page();
        let out = abstract_partition(&p, &t, &Backend::Heuristic);
        let purposes: Vec<&str> = out.iter().map(|a| a.purpose.as_str()).collect();
        assert_eq!(purposes, ["RootWebArea content", "structural wrapper", "site navigation links", "search form"]);
        assert!(out.iter().all(|a| a.backend == BackendKind::Heuristic && !a.state_summary.is_empty()));
        assert_eq!(out.iter().map(|a| a.region_id).collect::<Vec<_>>(), [0, 1, 2, 3]);
    }

    #[test]
    fn prompt_embeds_subtree() {
        let (t, p) = page();
        let prompt = render_abstraction_prompt(&region_subtree(&t, &p.regions[3]));
        assert!(prompt.ends_with("</guidelines>\n\n[s] search\n\t[q] combobox 'Search'\n\t[b] button 'Go'\n"));
        assert!(!prompt.contains("{region_axtree}"));
    }

    #[test]
    fn unreachable_model_falls_back() {
        let (t, p) = page();
        let down = |_: &str| -> Result<String, LmError> { Err(LmError::Unavailable("connection refused".into())) };
        let out = abstract_region(&region_subtree(&t, &p.regions[3]), &Backend::lm(&down));
        assert_eq!(out.backend, BackendKind::Heuristic);
        assert_eq!(out.purpose, "search form");
        assert!(out.fallback.is_some());
    }

    #[test]
    fn retries_then_succeeds() {
        let (t, p) = page();
        let calls = AtomicUsize::new(0);
        let flaky = |_: &str| -> Result<String, LmError> {
            if calls.fetch_add(1, Ordering::SeqCst) < 2 {
                Ok("I think it is a search box".into())
            } else {
                Ok(r#"{"purpose": "Search form", "state_summary": "Combobox is empty."}"#.into())
            }
        };
        let out = abstract_region(&region_subtree(&t, &p.regions[3]), &Backend::lm(&flaky));
        assert_eq!(out.backend, BackendKind::Lm);
        assert_eq!(out.purpose, "Search form");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn reply_parsing() {
        assert!(parse_abstraction_reply(r#"{"purpose": "", "state_summary": "x"}"#).is_err());
        assert!(parse_abstraction_reply(r#"{"purpose": "p"}"#).is_err());
        assert_eq!(
            parse_abstraction_reply("```json\n{\"purpose\": \" p \", \"state_summary\": \"s\"}\n```").unwrap(),
            ("p".to_string(), "s".to_string())
        );
    }
}
