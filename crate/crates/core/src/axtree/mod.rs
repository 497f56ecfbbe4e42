//! Accessibility-tree data model and its indentation-based text format.
//!
//! A tree is written one node per line:
//!
//! ```text
//! <indent>[id] role 'name'? 'value'? (key=value)*
//! ```
//!
//! Depth is given by indentation (a tab, or a fixed number of spaces detected
//! from the first indented line). Names and values are single-quoted with
//! backslash escapes. An empty name or value is the same as an absent one.

mod parse;
mod preprocess;
pub mod trace;

use std::collections::{BTreeMap, HashMap};

pub use parse::{parse_axtree, serialize_axtree, serialize_subtree, write_node_line, ParseError};
pub use preprocess::{is_visible, preprocess, INTERACTIVE_ROLES};

/// A single element of the page observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AXNode {
    pub id: String,
    pub role: String,
    /// Accessible name; empty means absent.
    pub name: String,
    /// Empty means absent.
    pub value: String,
    pub attrs: BTreeMap<String, String>,
    pub children: Vec<AXNode>,
}

impl AXNode {
    pub fn new(id: impl Into<String>, role: impl Into<String>) -> Self {
        AXNode {
            id: id.into(),
            role: role.into(),
            name: String::new(),
            value: String::new(),
            attrs: BTreeMap::new(),
            children: Vec::new(),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_value(mut self, value: impl Into<String>) -> Self {
        self.value = value.into();
        self
    }

    pub fn with_attr(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attrs.insert(key.into(), value.into());
        self
    }

    pub fn with_children(mut self, children: Vec<AXNode>) -> Self {
        self.children = children;
        self
    }

    pub fn push(&mut self, child: AXNode) {
        self.children.push(child);
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Number of nodes in this subtree, including self.
    pub fn subtree_size(&self) -> usize {
        1 + self.children.iter().map(AXNode::subtree_size).sum::<usize>()
    }

    /// Pre-order iterator over this subtree.
    pub fn iter(&self) -> PreOrder<'_> {
        PreOrder { stack: vec![self] }
    }

    /// Same element content, ignoring children.
    pub fn same_content(&self, other: &AXNode) -> bool {
        self.role == other.role && self.name == other.name && self.value == other.value
    }
}

pub struct PreOrder<'a> {
    stack: Vec<&'a AXNode>,
}

impl<'a> Iterator for PreOrder<'a> {
    type Item = &'a AXNode;

    fn next(&mut self) -> Option<&'a AXNode> {
        let node = self.stack.pop()?;
        self.stack.extend(node.children.iter().rev());
        Some(node)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TreeError {
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("node `{0}` has an empty role")]
    EmptyRole(String),
}

/// A page observation: a rooted tree plus the URL it was captured at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AXTree {
    root: AXNode,
    url: String,
    node_count: usize,
}

impl AXTree {
    /// Builds a tree, checking that ids are unique and roles non-empty.
    pub fn new(root: AXNode, url: impl Into<String>) -> Result<Self, TreeError> {
        let mut seen = std::collections::HashSet::new();
        let mut count = 0;
        for node in root.iter() {
            if node.role.is_empty() {
                return Err(TreeError::EmptyRole(node.id.clone()));
            }
            if !seen.insert(node.id.as_str()) {
                return Err(TreeError::DuplicateId(node.id.clone()));
            }
            count += 1;
        }
        Ok(AXTree {
            root,
            url: url.into(),
            node_count: count,
        })
    }

    pub fn root(&self) -> &AXNode {
        &self.root
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn into_root(self) -> AXNode {
        self.root
    }

    pub fn nodes(&self) -> PreOrder<'_> {
        self.root.iter()
    }

    pub fn index(&self) -> TreeIndex<'_> {
        TreeIndex::new(self)
    }
}

/// Flat pre-order view of a tree with parent/child links by position.
///
/// Every parent precedes its children, so iterating positions in reverse
/// visits each node after all of its descendants.
pub struct TreeIndex<'a> {
    nodes: Vec<&'a AXNode>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    by_id: HashMap<&'a str, usize>,
}

impl<'a> TreeIndex<'a> {
    pub fn new(tree: &'a AXTree) -> Self {
        let n = tree.node_count();
        let mut index = TreeIndex {
            nodes: Vec::with_capacity(n),
            parent: Vec::with_capacity(n),
            children: Vec::with_capacity(n),
            depth: Vec::with_capacity(n),
            by_id: HashMap::with_capacity(n),
        };
        let mut stack: Vec<(&'a AXNode, Option<usize>, usize)> = vec![(tree.root(), None, 0)];
        while let Some((node, parent, depth)) = stack.pop() {
            let pos = index.nodes.len();
            index.nodes.push(node);
            index.parent.push(parent);
            index.children.push(Vec::with_capacity(node.children.len()));
            index.depth.push(depth);
            index.by_id.insert(node.id.as_str(), pos);
            if let Some(p) = parent {
                index.children[p].push(pos);
            }
            for child in node.children.iter().rev() {
                stack.push((child, Some(pos), depth + 1));
            }
        }
        index
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, pos: usize) -> &'a AXNode {
        self.nodes[pos]
    }

    pub fn parent(&self, pos: usize) -> Option<usize> {
        self.parent[pos]
    }

    pub fn children(&self, pos: usize) -> &[usize] {
        &self.children[pos]
    }

    pub fn depth(&self, pos: usize) -> usize {
        self.depth[pos]
    }

    pub fn max_depth(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// All (parent, child) position pairs, in pre-order of the child.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.len()).filter_map(move |c| self.parent[c].map(|p| (p, c)))
    }

    pub fn ancestors(&self, pos: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(Some(pos), move |&p| self.parent[p])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> AXTree {
        let root = AXNode::new("r", "RootWebArea").with_children(vec![
            AXNode::new("a", "link").with_name("A"),
            AXNode::new("b", "list").with_children(vec![AXNode::new("c", "listitem")]),
        ]);
        AXTree::new(root, "http://x").unwrap()
    }

    #[test]
    fn index_is_preorder() {
        let t = sample();
        let ix = t.index();
        let ids: Vec<_> = (0..ix.len()).map(|p| ix.node(p).id.as_str()).collect();
        assert_eq!(ids, ["r", "a", "b", "c"]);
        assert_eq!(ix.parent(3), Some(2));
        assert_eq!(ix.children(0), &[1, 2]);
        assert_eq!(ix.depth(3), 2);
        assert_eq!(ix.max_depth(), 2);
        assert_eq!(ix.edges().count(), 3);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let root = AXNode::new("x", "generic").with_children(vec![AXNode::new("x", "link")]);
        assert_eq!(
            AXTree::new(root, "").unwrap_err(),
            TreeError::DuplicateId("x".into())
        );
    }

    #[test]
    fn node_count_cached() {
        assert_eq!(sample().node_count(), 4);
    }
}
