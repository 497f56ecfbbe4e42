//! Structural node features: a role index into a fixed vocabulary plus five
//! numeric scalars, concatenated with a learned role embedding to form the
//! 16-dimensional node input.

use std::collections::{HashMap, HashSet};

use sha2::{Digest, Sha256};

use crate::axtree::{AXTree, TreeIndex};

pub const VOCAB_SIZE: usize = 204;
pub const ROLE_EMBED_DIM: usize = 11;
pub const NUMERIC_DIM: usize = 5;
pub const FEATURE_DIM: usize = ROLE_EMBED_DIM + NUMERIC_DIM;
pub const UNKNOWN_ROLE: &str = "<unk>";

const BUNDLED_ROLES: &str = include_str!("../data/roles.txt");

// Role strings as they appear in serialized trees, mapped onto vocabulary
// entries whose names differ by more than letter case.
const ALIASES: &[(&str, &str)] = &[
    ("generic", "genericContainer"),
    ("textbox", "textField"),
    ("combobox", "textFieldWithComboBox"),
    ("img", "image"),
    ("option", "listBoxOption"),
    ("presentation", "none"),
    ("radio", "radioButton"),
    ("progressbar", "progressIndicator"),
    ("gridcell", "cell"),
    ("listbox", "listBox"),
    ("separator", "splitter"),
    ("Iframe", "iframe"),
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabError {
    #[error("role vocabulary has {0} entries, expected {VOCAB_SIZE}")]
    WrongSize(usize),
    #[error("role vocabulary repeats `{0}`")]
    Duplicate(String),
    #[error("role vocabulary must end with the `{UNKNOWN_ROLE}` slot")]
    MissingUnknown,
}

/// Ordered role list; line order defines indices, the last slot is unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct RoleVocabulary {
    roles: Vec<String>,
    index: HashMap<String, usize>,
    folded: HashMap<String, usize>,
}

impl RoleVocabulary {
    /// Parses one role per line; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self, VocabError> {
        let roles: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from)
            .collect();
        if roles.len() != VOCAB_SIZE {
            return Err(VocabError::WrongSize(roles.len()));
        }
        if roles.last().map(String::as_str) != Some(UNKNOWN_ROLE) {
            return Err(VocabError::MissingUnknown);
        }
        let mut index = HashMap::new();
        let mut folded = HashMap::new();
        for (i, r) in roles.iter().enumerate() {
            if index.insert(r.clone(), i).is_some() {
                return Err(VocabError::Duplicate(r.clone()));
            }
            folded.entry(r.to_ascii_lowercase()).or_insert(i);
        }
        for (alias, target) in ALIASES {
            if let Some(&i) = index.get(*target) {
                folded.entry(alias.to_ascii_lowercase()).or_insert(i);
            }
        }
        Ok(RoleVocabulary { roles, index, folded })
    }

    pub fn bundled() -> Self {
        Self::from_text(BUNDLED_ROLES).expect("bundled vocabulary is well-formed")
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn unknown_index(&self) -> usize {
        self.roles.len() - 1
    }

    pub fn role(&self, index: usize) -> &str {
        &self.roles[index]
    }

    /// Exact match, then case-insensitive match, then alias table; anything
    /// else maps to the unknown slot.
    pub fn lookup(&self, role: &str) -> usize {
        if let Some(&i) = self.index.get(role) {
            return i;
        }
        self.folded
            .get(&role.to_ascii_lowercase())
            .copied()
            .unwrap_or_else(|| self.unknown_index())
    }

    /// Hex SHA-256 of the newline-joined role list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for r in &self.roles {
            h.update(r.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeFeatures {
    pub role_index: usize,
    /// depth, subtree_size, num_children, name_presence, child_role_diversity
    pub numeric: [f64; NUMERIC_DIM],
}

impl NodeFeatures {
    pub fn depth(&self) -> f64 {
        self.numeric[0]
    }
    pub fn subtree_size(&self) -> f64 {
        self.numeric[1]
    }
    pub fn num_children(&self) -> f64 {
        self.numeric[2]
    }
    pub fn name_presence(&self) -> f64 {
        self.numeric[3]
    }
    pub fn child_role_diversity(&self) -> f64 {
        self.numeric[4]
    }
}

/// Features for every node, aligned with the pre-order positions of `index`.
pub fn features_by_position(index: &TreeIndex<'_>, vocab: &RoleVocabulary) -> Vec<NodeFeatures> {
    let n = index.len();
    let mut size = vec![1usize; n];
    for pos in (1..n).rev() {
        let p = index.parent(pos).expect("non-root has a parent");
        size[p] += size[pos];
    }
    (0..n)
        .map(|pos| {
            let node = index.node(pos);
            let kids = index.children(pos);
            let diversity = if kids.is_empty() {
                0.0
            } else {
                let roles: HashSet<&str> = kids.iter().map(|&c| index.node(c).role.as_str()).collect();
                roles.len() as f64 / kids.len() as f64
            };
            NodeFeatures {
                role_index: vocab.lookup(&node.role),
                numeric: [
                    index.depth(pos) as f64,
                    size[pos] as f64,
                    kids.len() as f64,
                    if node.name.is_empty() { 0.0 } else { 1.0 },
                    diversity,
                ],
            }
        })
        .collect()
}

/// Features keyed by node id.
pub fn compute_features(tree: &AXTree, vocab: &RoleVocabulary) -> HashMap<String, NodeFeatures> {
    let index = tree.index();
    features_by_position(&index, vocab)
        .into_iter()
        .enumerate()
        .map(|(pos, f)| (index.node(pos).id.clone(), f))
        .collect()
}

/// Learned role embedding table, `VOCAB_SIZE` rows of `ROLE_EMBED_DIM`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoleEmbedding {
    pub weights: Vec<f64>,
}

impl RoleEmbedding {
    pub fn zeros() -> Self {
        RoleEmbedding {
            weights: vec![0.0; VOCAB_SIZE * ROLE_EMBED_DIM],
        }
    }

    pub fn row(&self, role_index: usize) -> &[f64] {
        &self.weights[role_index * ROLE_EMBED_DIM..(role_index + 1) * ROLE_EMBED_DIM]
    }
}

/// Node input vector: embedding row followed by the numeric features.
pub fn embed(features: &NodeFeatures, table: &RoleEmbedding) -> [f64; FEATURE_DIM] {
    let mut out = [0.0; FEATURE_DIM];
    out[..ROLE_EMBED_DIM].copy_from_slice(table.row(features.role_index));
    out[ROLE_EMBED_DIM..].copy_from_slice(&features.numeric);
    out
}
