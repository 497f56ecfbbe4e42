use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::axtree::{AXTree, TreeIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeLabel {
    Cut,
    Merge,
}

impl EdgeLabel {
    pub fn is_cut(self) -> bool {
        self == EdgeLabel::Cut
    }
}

/// One label per (parent id, child id) tree edge.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeLabelSet {
    pub labels: BTreeMap<(String, String), EdgeLabel>,
}

impl EdgeLabelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, parent: &str, child: &str, label: EdgeLabel) {
        self.labels.insert((parent.to_string(), child.to_string()), label);
    }

    pub fn get(&self, parent: &str, child: &str) -> Option<EdgeLabel> {
        // BTreeMap<(String, String)> cannot be queried by (&str, &str)
        self.labels.get(&(parent.to_string(), child.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn cut_count(&self) -> usize {
        self.labels.values().filter(|l| l.is_cut()).count()
    }

    /// Labels every edge of `tree` with `f(parent_pos, child_pos)`.
    pub fn from_fn(index: &TreeIndex<'_>, mut f: impl FnMut(usize, usize) -> EdgeLabel) -> Self {
        let mut set = Self::new();
        for (p, c) in index.edges() {
            set.insert(&index.node(p).id, &index.node(c).id, f(p, c));
        }
        set
    }
}

/// A subtree-shaped group of nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub region_id: usize,
    pub root_id: String,
    /// Member ids in document order; the root comes first.
    pub members: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub purpose: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_summary: Option<String>,
}

impl Region {
    pub fn label(&self) -> String {
        format!("R{}", self.region_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionPartition {
    pub url: String,
    pub node_count: usize,
    pub regions: Vec<Region>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PartitionError {
    #[error("edge ({parent}, {child}) has no label")]
    MissingLabel { parent: String, child: String },
    #[error("label set has {extra} labels for edges not in the tree")]
    LabelMismatch { extra: usize },
    #[error("unknown region root id `{0}`")]
    UnknownRoot(String),
    #[error("partition does not cover the tree: {0}")]
    Invalid(String),
}

impl RegionPartition {
    /// Builds a partition from member groups given as pre-order positions;
    /// the first position of each group is its root. Regions are numbered in
    /// document order of their roots.
    pub fn from_position_groups(index: &TreeIndex<'_>, url: &str, mut groups: Vec<Vec<usize>>) -> Self {
        for g in &mut groups {
            g.sort_unstable();
        }
        groups.sort_unstable_by_key(|g| g[0]);
        let regions = groups
            .into_iter()
            .enumerate()
            .map(|(i, g)| Region {
                region_id: i,
                root_id: index.node(g[0]).id.clone(),
                members: g.iter().map(|&p| index.node(p).id.clone()).collect(),
                purpose: None,
                state_summary: None,
            })
            .collect();
        RegionPartition {
            url: url.to_string(),
            node_count: index.len(),
            regions,
        }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    /// node id → region index
    pub fn assignment(&self) -> HashMap<&str, usize> {
        let mut map = HashMap::with_capacity(self.node_count);
        for (i, r) in self.regions.iter().enumerate() {
            for m in &r.members {
                map.insert(m.as_str(), i);
            }
        }
        map
    }

    pub fn region_of(&self, id: &str) -> Option<&Region> {
        self.regions.iter().find(|r| r.members.iter().any(|m| m == id))
    }

    /// Checks disjointness, coverage, and that each region is a connected
    /// subtree hanging from its root.
    pub fn validate(&self, tree: &AXTree) -> Result<(), PartitionError> {
        let index = tree.index();
        let mut seen = HashSet::new();
        for r in &self.regions {
            if r.members.first() != Some(&r.root_id) {
                return Err(PartitionError::Invalid(format!("region {} does not start at its root", r.label())));
            }
            for m in &r.members {
                if index.position(m).is_none() {
                    return Err(PartitionError::Invalid(format!("unknown node `{m}`")));
                }
                if !seen.insert(m.as_str()) {
                    return Err(PartitionError::Invalid(format!("node `{m}` in two regions")));
                }
            }
        }
        if seen.len() != index.len() || self.node_count != index.len() {
            return Err(PartitionError::Invalid(format!(
                "{} of {} nodes covered",
                seen.len(),
                index.len()
            )));
        }
        let assign = self.assignment();
        for r in &self.regions {
            for m in &r.members[1..] {
                let pos = index.position(m).expect("checked above");
                let parent = index.parent(pos).map(|p| index.node(p).id.as_str());
                if parent.and_then(|p| assign.get(p)) != assign.get(m.as_str()) {
                    return Err(PartitionError::Invalid(format!("node `{m}` is detached from region {}", r.label())));
                }
            }
        }
        Ok(())
    }

    /// Edge labels implied by this partition: cut iff the endpoints differ.
    pub fn edge_labels(&self, tree: &AXTree) -> EdgeLabelSet {
        let index = tree.index();
        let assign = self.assignment();
        EdgeLabelSet::from_fn(&index, |p, c| {
            if assign.get(index.node(p).id.as_str()) == assign.get(index.node(c).id.as_str()) {
                EdgeLabel::Merge
            } else {
                EdgeLabel::Cut
            }
        })
    }

    pub fn cut_edges(&self) -> usize {
        self.regions.len().saturating_sub(1)
    }
}

/// Regions are the components left after deleting every cut edge.
pub fn partition_from_labels(tree: &AXTree, labels: &EdgeLabelSet) -> Result<RegionPartition, PartitionError> {
    let index = tree.index();
    let mut owner = vec![0usize; index.len()];
    let mut used = 0;
    for pos in 0..index.len() {
        owner[pos] = match index.parent(pos) {
            None => pos,
            Some(p) => {
                let (pid, cid) = (&index.node(p).id, &index.node(pos).id);
                used += 1;
                match labels.get(pid, cid) {
                    Some(EdgeLabel::Cut) => pos,
                    Some(EdgeLabel::Merge) => owner[p],
                    None => {
                        return Err(PartitionError::MissingLabel {
                            parent: pid.clone(),
                            child: cid.clone(),
                        })
                    }
                }
            }
        };
    }
    if labels.len() != used {
        return Err(PartitionError::LabelMismatch {
            extra: labels.len() - used,
        });
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, &o) in owner.iter().enumerate() {
        groups.entry(o).or_default().push(pos);
    }
    Ok(RegionPartition::from_position_groups(
        &index,
        tree.url(),
        groups.into_values().collect(),
    ))
}

/// Each node joins the region of its nearest ancestor-or-self listed in
/// `roots`; the tree root is always a region root.
pub fn partition_from_roots<S: AsRef<str>>(tree: &AXTree, roots: &[S]) -> Result<RegionPartition, PartitionError> {
    let index = tree.index();
    let mut is_root = vec![false; index.len()];
    is_root[0] = true;
    for r in roots {
        let pos = index
            .position(r.as_ref())
            .ok_or_else(|| PartitionError::UnknownRoot(r.as_ref().to_string()))?;
        is_root[pos] = true;
    }
    let labels = EdgeLabelSet::from_fn(&index, |_, c| if is_root[c] { EdgeLabel::Cut } else { EdgeLabel::Merge });
    partition_from_labels(tree, &labels)
}
