//! Edge- and region-level evaluation, plus the page-structure measurements
//! used by `analyze` (LCA depth ratio, change ratio) and token counting.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::axtree::AXTree;
use crate::decomposer::{EdgeLabelSet, RegionPartition};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("edge label sets cover different edges")]
    DomainMismatch,
    #[error("partitions cover different node sets")]
    NodeSetMismatch,
    #[error("unknown node id `{0}`")]
    UnknownId(String),
    #[error("the earlier snapshot has no nodes")]
    EmptyBefore,
}

/// Binary confusion counts with cut as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn merge(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }

    /// (precision, recall, F1). With no positives on either side all three
    /// are 1; otherwise an empty denominator gives 0.
    pub fn prf(&self) -> (f64, f64, f64) {
        if self.tp + self.fp + self.fn_ == 0 {
            return (1.0, 1.0, 1.0);
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(self.tp, self.tp + self.fp);
        let r = ratio(self.tp, self.tp + self.fn_);
        (p, r, harmonic(p, r))
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn edge_confusion(predictions: &EdgeLabelSet, truth: &EdgeLabelSet) -> Result<Confusion, MetricsError> {
    if predictions.len() != truth.len() {
        return Err(MetricsError::DomainMismatch);
    }
    let mut c = Confusion::default();
    for (edge, t) in &truth.labels {
        let p = predictions.labels.get(edge).ok_or(MetricsError::DomainMismatch)?;
        c.add(p.is_cut(), t.is_cut());
    }
    Ok(c)
}

pub fn edge_f1(predictions: &EdgeLabelSet, truth: &EdgeLabelSet) -> Result<(f64, f64, f64), MetricsError> {
    edge_confusion(predictions, truth).map(|c| c.prf())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub matched: usize,
    pub predicted: usize,
    pub truth: usize,
}

impl MatchCounts {
    pub fn merge(self, o: MatchCounts) -> MatchCounts {
        MatchCounts {
            matched: self.matched + o.matched,
            predicted: self.predicted + o.predicted,
            truth: self.truth + o.truth,
        }
    }

    /// precision = matched / predicted, recall = matched / truth.
    pub fn prf(&self) -> (f64, f64, f64) {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let p = ratio(self.matched, self.predicted);
        let r = ratio(self.matched, self.truth);
        (p, r, harmonic(p, r))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMatchReport {
    /// (truth region id, predicted region id, IoU)
    pub matched: Vec<(usize, usize, f64)>,
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou_threshold: f64,
}

/// Matches truth regions to predicted regions by member-set IoU.
///
/// Candidate pairs are taken greedily in descending IoU, each region on
/// either side used at most once; a pair counts when its IoU reaches the
/// threshold.
pub fn region_prf(
    pred: &RegionPartition,
    truth: &RegionPartition,
    iou_threshold: f64,
) -> Result<RegionMatchReport, MetricsError> {
    let pred_of = pred.assignment();
    let truth_of = truth.assignment();
    if pred_of.len() != truth_of.len() || truth_of.keys().any(|k| !pred_of.contains_key(k)) {
        return Err(MetricsError::NodeSetMismatch);
    }
    let mut inter: HashMap<(usize, usize), usize> = HashMap::new();
    for (id, &t) in &truth_of {
        *inter.entry((t, pred_of[id])).or_default() += 1;
    }
    let mut pairs: Vec<(usize, usize, f64)> = inter
        .into_iter()
        .map(|((t, p), n)| {
            let union = truth.regions[t].members.len() + pred.regions[p].members.len() - n;
            (t, p, n as f64 / union as f64)
        })
        .collect();
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));

    let mut used_t = vec![false; truth.regions.len()];
    let mut used_p = vec![false; pred.regions.len()];
    let mut matched = Vec::new();
    for (t, p, iou) in pairs {
        if iou < iou_threshold {
            break;
        }
        if !used_t[t] && !used_p[p] {
            used_t[t] = true;
            used_p[p] = true;
            matched.push((truth.regions[t].region_id, pred.regions[p].region_id, iou));
        }
    }
    let counts = MatchCounts {
        matched: matched.len(),
        predicted: pred.regions.len(),
        truth: truth.regions.len(),
    };
    let (precision, recall, f1) = counts.prf();
    Ok(RegionMatchReport {
        matched,
        counts,
        precision,
        recall,
        f1,
        iou_threshold,
    })
}

/// Depth of the lowest common ancestor over the tree's maximum depth
/// (root depth 0); 0 for a single-node tree.
pub fn lca_depth_ratio(tree: &AXTree, id_a: &str, id_b: &str) -> Result<f64, MetricsError> {
    let index = tree.index();
    let a = index.position(id_a).ok_or_else(|| MetricsError::UnknownId(id_a.into()))?;
    let b = index.position(id_b).ok_or_else(|| MetricsError::UnknownId(id_b.into()))?;
    let max = index.max_depth();
    if max == 0 {
        return Ok(0.0);
    }
    let ancestors: HashSet<usize> = index.ancestors(a).collect();
    let lca = index
        .ancestors(b)
        .find(|p| ancestors.contains(p))
        .expect("root is a common ancestor");
    Ok(index.depth(lca) as f64 / max as f64)
}

/// Nodes added plus nodes removed, over the node count of `before`.
/// Content changes to surviving ids do not count.
pub fn change_ratio(before: &AXTree, after: &AXTree) -> Result<f64, MetricsError> {
    let b: HashSet<&str> = before.nodes().map(|n| n.id.as_str()).collect();
    if b.is_empty() {
        return Err(MetricsError::EmptyBefore);
    }
    let a: HashSet<&str> = after.nodes().map(|n| n.id.as_str()).collect();
    let changed = a.difference(&b).count() + b.difference(&a).count();
    Ok(changed as f64 / b.len() as f64)
}

/// Token counting for observation-length comparisons.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Approximate count: `ceil((ceil(bytes / 4) + whitespace_words) / 2)`.
///
/// Averages a byte-rate estimate with a word count, which tracks BPE
/// tokenizers on serialized trees better than either alone. It is an
/// approximation, applied identically to both sides of every comparison.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxCounter;

impl TokenCounter for ApproxCounter {
    fn count(&self, text: &str) -> usize {
        let by_bytes = text.len().div_ceil(4);
        let words = text.split_whitespace().count();
        (by_bytes + words).div_ceil(2)
    }
}

impl<F: Fn(&str) -> usize + Send + Sync> TokenCounter for F {
    fn count(&self, text: &str) -> usize {
        self(text)
    }
}

pub fn token_count(text: &str) -> usize {
    ApproxCounter.count(text)
}

/// Fixed-edge histogram; `edges` are ascending upper bounds, values above the
/// last edge fall in the final bucket.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub labels: Vec<String>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn fraction(&self, bucket: usize) -> f64 {
        let t = self.total();
        if t == 0 {
            0.0
        } else {
            self.counts[bucket] as f64 / t as f64
        }
    }
}

/// Change-ratio buckets: exactly 0, then (0, 5%), [5%, 10%), [10%, 25%),
/// [25%, 50%), [50%, 90%), and >= 90%.
pub fn change_histogram(values: &[f64]) -> Histogram {
    let labels = ["0", "(0,5%)", "[5%,10%)", "[10%,25%)", "[25%,50%)", "[50%,90%)", ">=90%"];
    let bounds = [0.05, 0.10, 0.25, 0.50, 0.90];
    let mut counts = vec![0; labels.len()];
    for &v in values {
        let b = if v == 0.0 {
            0
        } else {
            1 + bounds.iter().position(|&u| v < u).unwrap_or(bounds.len())
        };
        counts[b] += 1;
    }
    Histogram {
        labels: labels.iter().map(|s| s.to_string()).collect(),
        counts,
    }
}

/// Ten equal-width buckets over [0, 1]; 1.0 lands in the last one.
pub fn ratio_histogram(values: &[f64]) -> Histogram {
    let mut counts = vec![0; 10];
    for &v in values {
        let b = ((v * 10.0).floor() as usize).min(9);
        counts[b] += 1;
    }
    Histogram {
        labels: (0..10).map(|i| format!("[{:.1},{:.1}{}", i as f64 / 10.0, (i + 1) as f64 / 10.0, if i == 9 { "]" } else { ")" })).collect(),
        counts,
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}
