//! Seeded random page trees for training and tests, labeled by a role rule.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::partition::{partition_from_labels, partition_from_roots, RegionPartition};
use super::train::LabeledTree;
use super::traverse::RoleRuleScorer;
use crate::axtree::{serialize_axtree, AXNode, AXTree};

/// Roles cut by the default labeling rule.
pub const RULE_ROLES: [&str; 3] = ["navigation", "list", "form"];

const CONTAINERS: &[&str] = &["generic", "navigation", "list", "form", "main", "region", "group", "article"];
const LEAVES: &[&str] = &["link", "button", "StaticText", "heading", "textbox", "image", "checkbox", "paragraph"];
const WORDS: &[&str] = &[
    "home", "cart", "search", "account", "orders", "help", "sale", "new", "books", "music", "price", "reviews", "login",
    "contact", "about", "next", "submit", "filter",
];

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub max_children: usize,
    pub max_depth: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 7,
            min_nodes: 8,
            max_nodes: 28,
            max_children: 5,
            max_depth: 6,
        }
    }
}

struct Builder<'a> {
    rng: ChaCha8Rng,
    next: usize,
    budget: usize,
    cfg: &'a SyntheticConfig,
}

impl Builder<'_> {
    fn node(&mut self, role: &str) -> AXNode {
        let id = format!("n{}", self.next);
        self.next += 1;
        self.budget = self.budget.saturating_sub(1);
        let mut node = AXNode::new(id, role);
        let named = match role {
            "link" | "button" | "heading" | "StaticText" | "paragraph" | "checkbox" => true,
            "generic" | "group" => false,
            _ => self.rng.random_bool(0.4),
        };
        if named {
            let n = self.rng.random_range(1..=3);
            let words: Vec<&str> = (0..n).map(|_| *WORDS.choose(&mut self.rng).expect("non-empty")).collect();
            node = node.with_name(words.join(" "));
        }
        if role == "textbox" && self.rng.random_bool(0.5) {
            node = node.with_value(*WORDS.choose(&mut self.rng).expect("non-empty"));
        }
        node
    }

    fn grow(&mut self, parent: &mut AXNode, depth: usize) {
        if depth >= self.cfg.max_depth {
            return;
        }
        let k = self.rng.random_range(1..=self.cfg.max_children);
        for _ in 0..k {
            if self.budget == 0 {
                return;
            }
            let container = depth + 1 < self.cfg.max_depth && self.rng.random_bool(0.45);
            let role = if container {
                *CONTAINERS.choose(&mut self.rng).expect("non-empty")
            } else {
                *LEAVES.choose(&mut self.rng).expect("non-empty")
            };
            let mut child = self.node(role);
            if container {
                self.grow(&mut child, depth + 1);
            }
            parent.push(child);
        }
    }
}

/// One random tree with between `min_nodes` and `max_nodes` nodes (the upper
/// bound is exact; the lower bound is a target the generator tops up toward).
pub fn random_tree(rng_seed: u64, url: &str, cfg: &SyntheticConfig) -> AXTree {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let target = rng.random_range(cfg.min_nodes.max(1)..=cfg.max_nodes.max(cfg.min_nodes.max(1)));
    let mut b = Builder {
        rng,
        next: 0,
        budget: target,
        cfg,
    };
    let mut root = b.node("RootWebArea");
    while b.budget > 0 {
        let before = b.budget;
        b.grow(&mut root, 0);
        if b.budget == before {
            break;
        }
    }
    AXTree::new(root, url).expect("generated ids are unique")
}

/// `count` labeled trees under the rule "cut iff the child's role is in `cut_roles`".
pub fn rule_corpus(count: usize, cfg: &SyntheticConfig, cut_roles: &[&str]) -> Vec<LabeledTree> {
    let rule = RoleRuleScorer::new(cut_roles);
    let mut seeder = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..count)
        .map(|i| {
            let tree = random_tree(seeder.random(), &format!("synthetic://page/{i}"), cfg);
            let labels = rule.labels(&tree.index());
            LabeledTree { tree, labels }
        })
        .collect()
}

pub fn truth_partition(item: &LabeledTree) -> RegionPartition {
    partition_from_labels(&item.tree, &item.labels).expect("corpus labels cover every edge")
}

/// Writes `<name>.axtree` and `<name>.regions` (one region root id per line) per tree.
pub fn write_corpus(dir: &Path, items: &[LabeledTree]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, item) in items.iter().enumerate() {
        let stem = format!("page{i:04}");
        std::fs::write(dir.join(format!("{stem}.axtree")), serialize_axtree(&item.tree))?;
        let roots: Vec<String> = truth_partition(item).regions.iter().map(|r| r.root_id.clone()).collect();
        std::fs::write(dir.join(format!("{stem}.regions")), roots.join("\n") + "\n")?;
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: {reason}")]
    Invalid { path: String, reason: String },
}

/// Reads `<name>.axtree` files and their `<name>.regions` companions, in
/// file-name order. A tree without a companion is an error.
pub fn read_corpus(dir: &Path) -> Result<Vec<LabeledTree>, CorpusError> {
    let mut stems: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "axtree"))
        .collect();
    stems.sort();
    stems
        .into_iter()
        .map(|path| {
            let invalid = |reason: String| CorpusError::Invalid {
                path: path.display().to_string(),
                reason,
            };
            let text = std::fs::read_to_string(&path)?;
            let tree = crate::axtree::parse_axtree(&text, &path.display().to_string()).map_err(|e| invalid(e.to_string()))?;
            let roots_text = std::fs::read_to_string(path.with_extension("regions"))
                .map_err(|e| invalid(format!("regions file: {e}")))?;
            let roots: Vec<&str> = roots_text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            let partition = partition_from_roots(&tree, &roots).map_err(|e| invalid(e.to_string()))?;
            let labels = partition.edge_labels(&tree);
            Ok(LabeledTree { tree, labels })
        })
        .collect()
}
