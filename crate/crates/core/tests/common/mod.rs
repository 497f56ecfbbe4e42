#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use axregion::axtree::trace::parse_trace;
use axregion::decomposer::checkpoint::{self, Scorer};
use axregion::decomposer::{EdgeScorer, NodeCtx};
use axregion::features::RoleVocabulary;
use axregion::{parse_axtree, AXNode, AXTree};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn landmark_rule() -> Scorer {
    checkpoint::load(&fixtures().join("rules/landmark.toml")).expect("rule fixture loads")
}

fn sorted_files(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|rd| rd.map(|e| e.unwrap().path()).collect())
        .unwrap_or_default();
    out.retain(|p| p.extension().is_some_and(|e| e == ext));
    out.sort();
    out
}

/// (file label, raw text) for every standalone tree fixture.
pub fn tree_texts() -> Vec<(String, String)> {
    let mut out = Vec::new();
    for dir in ["pages", "synthetic"] {
        for p in sorted_files(&fixtures().join(dir), "axtree") {
            let label = format!("{dir}/{}", p.file_name().unwrap().to_string_lossy());
            out.push((label, std::fs::read_to_string(&p).unwrap()));
        }
    }
    out
}

/// Every snapshot in the trace fixtures.
pub fn trace_snapshot_texts() -> Vec<(String, String)> {
    let mut out = Vec::new();
    for p in sorted_files(&fixtures().join("traces"), "jsonl") {
        let text = std::fs::read_to_string(&p).unwrap();
        for (i, line) in text.lines().enumerate() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let label = format!("{}#{i}", p.file_name().unwrap().to_string_lossy());
            out.push((label, v["axtree"].as_str().unwrap().to_string()));
        }
        parse_trace(&text).expect("trace fixture parses");
    }
    out
}

pub fn all_tree_texts() -> Vec<(String, String)> {
    let mut v = tree_texts();
    v.extend(trace_snapshot_texts());
    v
}

pub fn page(name: &str) -> AXTree {
    let text = std::fs::read_to_string(fixtures().join("pages").join(format!("{name}.axtree"))).unwrap();
    parse_axtree(&text, &format!("http://fixture/{name}")).unwrap()
}

pub fn fixture_trees() -> Vec<AXTree> {
    tree_texts()
        .into_iter()
        .map(|(label, text)| parse_axtree(&text, &label).unwrap())
        .collect()
}

const ROLES: &[&str] = &[
    "generic", "navigation", "list", "listitem", "link", "button", "main", "form", "textbox", "heading", "StaticText",
    "region", "banner", "image", "table", "row", "cell",
];

/// Random tree with `n` nodes grown by attaching each new node to a uniformly
/// chosen earlier one, then laid out in pre-order.
pub fn random_tree(rng: &mut ChaCha8Rng, n: usize, url: &str) -> AXTree {
    let mut parent = vec![usize::MAX; n];
    for (i, p) in parent.iter_mut().enumerate().skip(1) {
        *p = rng.random_range(0..i);
    }
    let nodes: Vec<AXNode> = (0..n)
        .map(|i| {
            let role = ROLES[rng.random_range(0..ROLES.len())];
            let mut node = AXNode::new(format!("v{i}"), role);
            if rng.random_bool(0.5) {
                node.name = format!("label {i}");
            }
            node
        })
        .collect();
    fn build(i: usize, nodes: &[AXNode], kids: &[Vec<usize>]) -> AXNode {
        let mut node = nodes[i].clone();
        node.children = kids[i].iter().map(|&c| build(c, nodes, kids)).collect();
        node
    }
    let mut kids = vec![Vec::new(); n];
    for i in 1..n {
        kids[parent[i]].push(i);
    }
    AXTree::new(build(0, &nodes, &kids), url).unwrap()
}

/// Cut probability drawn per (parent, child) id pair, independent of
/// anything the traversal computes.
pub struct StubScorer {
    pub logits: HashMap<(String, String), f64>,
    vocab: RoleVocabulary,
}

impl StubScorer {
    pub fn random(tree: &AXTree, rng: &mut ChaCha8Rng) -> Self {
        let mut logits = HashMap::new();
        let index = tree.index();
        for (p, c) in index.edges() {
            logits.insert((index.node(p).id.clone(), index.node(c).id.clone()), rng.random_range(-4.0..4.0));
        }
        StubScorer {
            logits,
            vocab: RoleVocabulary::bundled(),
        }
    }

    pub fn cut_edges(&self, tau: f64) -> BTreeSet<(String, String)> {
        self.logits
            .iter()
            .filter(|(_, &z)| 1.0 / (1.0 + (-z).exp()) >= tau)
            .map(|(k, _)| k.clone())
            .collect()
    }
}

impl EdgeScorer for StubScorer {
    fn vocabulary(&self) -> &RoleVocabulary {
        &self.vocab
    }
    fn represent(&self, node: &NodeCtx<'_>, _merged_mean: Option<&[f64]>) -> Vec<f64> {
        vec![node.pos as f64]
    }
    fn edge_logit(&self, parent: &NodeCtx<'_>, child: &NodeCtx<'_>, _: &[f64], _: &[f64]) -> f64 {
        self.logits[&(parent.node.id.clone(), child.node.id.clone())]
    }
}

/// Connected components of the tree after deleting `cuts`, via union-find.
/// Each component is a sorted id list; the outer list is sorted too.
pub fn union_find_regions(tree: &AXTree, cuts: &BTreeSet<(String, String)>) -> Vec<Vec<String>> {
    let ids: Vec<String> = tree.nodes().map(|n| n.id.clone()).collect();
    let at: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut up: Vec<usize> = (0..ids.len()).collect();
    fn find(up: &mut [usize], mut x: usize) -> usize {
        while up[x] != x {
            up[x] = up[up[x]];
            x = up[x];
        }
        x
    }
    fn edges(n: &AXNode, out: &mut Vec<(String, String)>) {
        for c in &n.children {
            out.push((n.id.clone(), c.id.clone()));
            edges(c, out);
        }
    }
    let mut all = Vec::new();
    edges(tree.root(), &mut all);
    for e in all {
        if !cuts.contains(&e) {
            let (a, b) = (find(&mut up, at[e.0.as_str()]), find(&mut up, at[e.1.as_str()]));
            up[a] = b;
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        let r = find(&mut up, i);
        groups.entry(r).or_default().push(id.clone());
    }
    let mut out: Vec<Vec<String>> = groups
        .into_values()
        .map(|mut g| {
            g.sort();
            g
        })
        .collect();
    out.sort();
    out
}

pub fn regions_as_sets(p: &axregion::RegionPartition) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = p
        .regions
        .iter()
        .map(|r| {
            let mut m = r.members.clone();
            m.sort();
            m
        })
        .collect();
    out.sort();
    out
}

/// Writes straight to the process stdout so the line shows up even when the
/// test harness captures output.
pub fn report(n: usize, name: &str, pass: bool, detail: impl AsRef<str>) {
    use std::io::Write;
    let line = format!("criterion {n:>2} {name}: {} ({})\n", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}
