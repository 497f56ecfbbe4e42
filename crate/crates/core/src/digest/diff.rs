//! Id-based comparison of a page snapshot against the page-entry snapshot.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::axtree::{AXNode, AXTree};
use crate::decomposer::RegionPartition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Role,
    Name,
    Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modification {
    pub id: String,
    pub field: Field,
    pub old: String,
    pub new: String,
}

/// Top-level added subtrees that share the nearest surviving ancestor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AddedGroup {
    /// Nearest surviving ancestor; `None` when the root itself is new.
    pub anchor: Option<String>,
    /// Region of the anchor at page entry.
    pub region: Option<usize>,
    #[serde(serialize_with = "serialize_ids")]
    pub roots: Vec<AXNode>,
}

fn serialize_ids<S: serde::Serializer>(roots: &[AXNode], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(roots.iter().flat_map(|r| r.iter().map(|n| n.id.as_str())))
}

impl AddedGroup {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.roots.iter().flat_map(|r| r.iter().map(|n| n.id.as_str()))
    }

    pub fn node_count(&self) -> usize {
        self.roots.iter().map(AXNode::subtree_size).sum()
    }
}

/// Changes since page entry.
///
/// `removed`, the ids in `added`, and the ids in `modified` are pairwise
/// disjoint. An id that survives under a different parent is a collision: it
/// is listed in `collisions`, dropped from its entry region, and shows up
/// again in `added`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TransitionDelta {
    pub added: Vec<AddedGroup>,
    pub removed: BTreeSet<String>,
    pub modified: Vec<Modification>,
    pub collisions: BTreeSet<String>,
}

impl TransitionDelta {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.modified.is_empty() && self.collisions.is_empty()
    }

    pub fn added_ids(&self) -> BTreeSet<&str> {
        self.added.iter().flat_map(AddedGroup::ids).collect()
    }

    pub fn modified_ids(&self) -> BTreeSet<&str> {
        self.modified.iter().map(|m| m.id.as_str()).collect()
    }

    /// Entry-tree ids no longer rendered inside their region.
    pub fn is_gone(&self, id: &str) -> bool {
        self.removed.contains(id) || self.collisions.contains(id)
    }
}

fn parents(tree: &AXTree) -> HashMap<&str, (Option<&str>, &AXNode)> {
    let mut out = HashMap::with_capacity(tree.node_count());
    let mut stack: Vec<(Option<&str>, &AXNode)> = vec![(None, tree.root())];
    while let Some((parent, node)) = stack.pop() {
        out.insert(node.id.as_str(), (parent, node));
        for c in &node.children {
            stack.push((Some(node.id.as_str()), c));
        }
    }
    out
}

pub fn diff(entry: &AXTree, current: &AXTree, partition: &RegionPartition) -> TransitionDelta {
    let before = parents(entry);
    let after = parents(current);
    let mut delta = TransitionDelta::default();

    for node in entry.nodes() {
        let id = node.id.as_str();
        match after.get(id) {
            None => {
                delta.removed.insert(id.to_string());
            }
            Some((new_parent, new_node)) => {
                let (old_parent, _) = before[id];
                if old_parent != *new_parent {
                    log::debug!("node {id} moved from {old_parent:?} to {new_parent:?}; treating as remove + add");
                    delta.collisions.insert(id.to_string());
                    continue;
                }
                for (field, old, new) in [
                    (Field::Role, &node.role, &new_node.role),
                    (Field::Name, &node.name, &new_node.name),
                    (Field::Value, &node.value, &new_node.value),
                ] {
                    if old != new {
                        delta.modified.push(Modification {
                            id: id.to_string(),
                            field,
                            old: old.clone(),
                            new: new.clone(),
                        });
                    }
                }
            }
        }
    }

    let is_added = |id: &str| !before.contains_key(id) || delta.collisions.contains(id);
    let assignment = partition.assignment();
    let mut groups: Vec<AddedGroup> = Vec::new();
    let mut group_of: HashMap<Option<String>, usize> = HashMap::new();
    // pre-order over the current tree keeps document order within and across groups
    let mut stack: Vec<(Option<&str>, &AXNode)> = vec![(None, current.root())];
    while let Some((parent, node)) = stack.pop() {
        if is_added(&node.id) && parent.is_none_or(|p| !is_added(p)) {
            let anchor = parent.map(str::to_string);
            let g = *group_of.entry(anchor.clone()).or_insert_with(|| {
                groups.push(AddedGroup {
                    region: anchor.as_deref().and_then(|a| assignment.get(a).copied()),
                    anchor,
                    roots: Vec::new(),
                });
                groups.len() - 1
            });
            groups[g].roots.push(node.clone());
            continue;
        }
        for c in node.children.iter().rev() {
            stack.push((Some(node.id.as_str()), c));
        }
    }
    delta.added = groups;
    delta
}
