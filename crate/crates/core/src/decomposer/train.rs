//! Teacher-forced training of the decomposition model.
//!
//! Ground-truth labels decide which children merge during the bottom-up pass;
//! the classifier's logits are only scored with focal loss. Gradients flow
//! back through the whole tree: every child representation feeds its
//! parent's edge classifier (as the child input and through the sibling
//! mean) and, when merged, the parent's region encoder.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{focal_loss, LossError};
use super::mlp::MlpCache;
use super::model::{DecompositionModel, CLASSIFIER_IN, ENCODER_IN, REPR_DIM};
use super::partition::{EdgeLabel, EdgeLabelSet};
use super::traverse::{decompose_detailed, mean_of};
use crate::axtree::AXTree;
use crate::features::{features_by_position, NodeFeatures, RoleVocabulary, FEATURE_DIM, ROLE_EMBED_DIM};
use crate::metrics::Confusion;

fn default_epochs() -> usize {
    140
}
fn default_lr() -> f64 {
    1e-4
}
fn default_alpha() -> f64 {
    0.75
}
fn default_gamma() -> f64 {
    2.0
}
fn default_clip() -> f64 {
    1.0
}
fn default_seed() -> u64 {
    42
}
fn default_val_fraction() -> f64 {
    0.1
}
fn default_batch() -> usize {
    1
}
fn default_tau() -> f64 {
    0.5
}
fn default_taus() -> Vec<f64> {
    vec![0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Global gradient-norm clip.
    #[serde(default = "default_clip")]
    pub clip: f64,
    /// Seeds initialization, the train/validation split, and shuffling.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Trees per optimizer step.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Threshold used for validation edge-F1.
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Candidate thresholds for region-level tuning after training.
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    /// Stop once validation edge-F1 reaches this value (1.0 never stops early).
    #[serde(default)]
    pub target_val_f1: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: default_epochs(),
            lr: default_lr(),
            alpha: default_alpha(),
            gamma: default_gamma(),
            clip: default_clip(),
            seed: default_seed(),
            val_fraction: default_val_fraction(),
            batch_size: default_batch(),
            tau: default_tau(),
            taus: default_taus(),
            target_val_f1: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("tree {index} ({url}): {reason}")]
    LabelMismatch { index: usize, url: String, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Debug, Clone)]
pub struct LabeledTree {
    pub tree: AXTree,
    pub labels: EdgeLabelSet,
}

/// A tree flattened for training: features and a cut flag per position.
#[derive(Debug, Clone)]
pub struct PreparedTree {
    pub features: Vec<NodeFeatures>,
    pub children: Vec<Vec<usize>>,
    /// Label of the edge into each position; `false` for the root.
    pub cut: Vec<bool>,
}

impl PreparedTree {
    pub fn new(item: &LabeledTree, vocab: &RoleVocabulary) -> Result<Self, String> {
        let index = item.tree.index();
        let mut cut = vec![false; index.len()];
        let mut used = 0;
        for (p, c) in index.edges() {
            match item.labels.get(&index.node(p).id, &index.node(c).id) {
                Some(l) => {
                    cut[c] = l == EdgeLabel::Cut;
                    used += 1;
                }
                None => return Err(format!("edge ({}, {}) is unlabeled", index.node(p).id, index.node(c).id)),
            }
        }
        if used != item.labels.len() {
            return Err(format!("{} labels refer to edges not in the tree", item.labels.len() - used));
        }
        Ok(PreparedTree {
            features: features_by_position(&index, vocab),
            children: (0..index.len()).map(|p| index.children(p).to_vec()).collect(),
            cut,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.len().saturating_sub(1)
    }

    /// Children merged into each node, from the labels alone.
    pub fn merged(&self, pos: usize) -> Vec<usize> {
        self.children[pos].iter().copied().filter(|&c| !self.cut[c]).collect()
    }
}

struct EdgeRecord {
    child: usize,
    logit: f64,
    cache: MlpCache,
}

struct NodeRecord {
    merged: Vec<usize>,
    encoder_cache: MlpCache,
    edges: Vec<EdgeRecord>,
}

/// Result of one teacher-forced forward pass.
pub struct ForwardPass {
    nodes: Vec<NodeRecord>,
}

impl ForwardPass {
    /// Children merged at each position, as used by the pass.
    pub fn merges(&self) -> Vec<Vec<usize>> {
        self.nodes.iter().map(|n| n.merged.clone()).collect()
    }

    /// (child position, logit) for every edge.
    pub fn logits(&self) -> Vec<(usize, f64)> {
        self.nodes
            .iter()
            .flat_map(|n| n.edges.iter().map(|e| (e.child, e.logit)))
            .collect()
    }
}

fn node_input(model: &DecompositionModel, f: &NodeFeatures) -> [f64; FEATURE_DIM] {
    let mut x = [0.0; FEATURE_DIM];
    let r = f.role_index * ROLE_EMBED_DIM;
    x[..ROLE_EMBED_DIM].copy_from_slice(&model.params[r..r + ROLE_EMBED_DIM]);
    x[ROLE_EMBED_DIM..].copy_from_slice(&f.numeric);
    x
}

/// Bottom-up pass where ground-truth labels decide merges.
pub fn teacher_forced_pass(model: &DecompositionModel, tree: &PreparedTree) -> ForwardPass {
    let n = tree.len();
    let params = &model.params;
    let mut reprs: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut nodes: Vec<Option<NodeRecord>> = (0..n).map(|_| None).collect();
    for pos in (0..n).rev() {
        let x = node_input(model, &tree.features[pos]);
        let kids = &tree.children[pos];
        // fixed before any logit is computed
        let merged = tree.merged(pos);
        let mut edges = Vec::with_capacity(kids.len());
        if !kids.is_empty() {
            let sibling_mean = mean_of(kids.iter().map(|&c| reprs[c].as_slice())).expect("non-empty");
            for &c in kids {
                let mut input = Vec::with_capacity(CLASSIFIER_IN);
                input.extend_from_slice(&x);
                input.extend_from_slice(&reprs[c]);
                input.extend_from_slice(&sibling_mean);
                let (out, cache) = model.classifier().forward_cached(params, input);
                edges.push(EdgeRecord {
                    child: c,
                    logit: out[0],
                    cache,
                });
            }
        }
        debug_assert_eq!(merged, tree.merged(pos));
        let mut input = Vec::with_capacity(ENCODER_IN);
        input.extend_from_slice(&x);
        match mean_of(merged.iter().map(|&c| reprs[c].as_slice())) {
            Some(m) => input.extend_from_slice(&m),
            None => input.resize(ENCODER_IN, 0.0),
        }
        let (r, encoder_cache) = model.encoder().forward_cached(params, input);
        reprs[pos] = r;
        nodes[pos] = Some(NodeRecord {
            merged,
            encoder_cache,
            edges,
        });
    }
    ForwardPass {
        nodes: nodes.into_iter().map(|n| n.expect("every node visited")).collect(),
    }
}

/// Loss contribution of one tree plus the edge confusion counts.
pub struct TreeLoss {
    pub loss: f64,
    pub edges: usize,
    pub confusion: Confusion,
}

/// Accumulates `scale * d(sum of edge losses)/d(params)` into `grad`.
pub fn tree_gradient(
    model: &DecompositionModel,
    tree: &PreparedTree,
    alpha: f64,
    gamma: f64,
    scale: f64,
    tau: f64,
    grad: &mut [f64],
) -> Result<TreeLoss, LossError> {
    let pass = teacher_forced_pass(model, tree);
    let params = &model.params;
    let n = tree.len();
    let mut loss = 0.0;
    let mut confusion = Confusion::default();
    let mut dlogit = vec![0.0; n];
    for node in &pass.nodes {
        for e in &node.edges {
            let label = tree.cut[e.child];
            let (l, g) = focal_loss(e.logit, label, alpha, gamma)?;
            loss += l;
            dlogit[e.child] = g * scale;
            confusion.add(super::traverse::sigmoid(e.logit) >= tau, label);
        }
    }

    // parents precede children in pre-order, so each dr is complete when reached
    let mut dr: Vec<Vec<f64>> = vec![Vec::new(); n];
    for pos in 0..n {
        let node = &pass.nodes[pos];
        let mut dx = [0.0; FEATURE_DIM];
        let kids = &tree.children[pos];
        if !kids.is_empty() {
            let mut dmean = vec![0.0; REPR_DIM];
            for e in &node.edges {
                let din = model.classifier().backward(params, &e.cache, &[dlogit[e.child]], grad);
                dx.iter_mut().zip(&din[..FEATURE_DIM]).for_each(|(a, b)| *a += b);
                add_into(&mut dr[e.child], &din[FEATURE_DIM..FEATURE_DIM + REPR_DIM]);
                dmean.iter_mut().zip(&din[FEATURE_DIM + REPR_DIM..]).for_each(|(a, b)| *a += b);
            }
            let share = 1.0 / kids.len() as f64;
            dmean.iter_mut().for_each(|v| *v *= share);
            for &c in kids {
                add_into(&mut dr[c], &dmean);
            }
        }
        let own = std::mem::take(&mut dr[pos]);
        if !own.is_empty() {
            let din = model.encoder().backward(params, &node.encoder_cache, &own, grad);
            dx.iter_mut().zip(&din[..FEATURE_DIM]).for_each(|(a, b)| *a += b);
            if !node.merged.is_empty() {
                let share = 1.0 / node.merged.len() as f64;
                let dagg: Vec<f64> = din[FEATURE_DIM..].iter().map(|v| v * share).collect();
                for &m in &node.merged {
                    add_into(&mut dr[m], &dagg);
                }
            }
        }
        let r = tree.features[pos].role_index * ROLE_EMBED_DIM;
        grad[r..r + ROLE_EMBED_DIM]
            .iter_mut()
            .zip(&dx[..ROLE_EMBED_DIM])
            .for_each(|(g, d)| *g += d);
    }
    Ok(TreeLoss {
        loss,
        edges: tree.edge_count(),
        confusion,
    })
}

fn add_into(acc: &mut Vec<f64>, v: &[f64]) {
    if acc.is_empty() {
        acc.extend_from_slice(v);
    } else {
        acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + Self::EPS);
        }
    }
}

/// Scales `grad` so its L2 norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_edge_f1: f64,
    pub val_edge_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: DecompositionModel,
    pub log: Vec<EpochLog>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Deterministic page-level split: shuffles indices with `seed` and holds out
/// `ceil(fraction * n)` of them (at least one when there are two or more items).
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut held = (fraction * n as f64).ceil() as usize;
    if n >= 2 {
        held = held.clamp(1, n - 1);
    } else {
        held = 0;
    }
    let val = idx.split_off(n - held);
    (idx, val)
}

/// Edge-F1 of free-running decomposition at `tau` against the labels.
pub fn validation_edge_f1(model: &DecompositionModel, items: &[&LabeledTree], tau: f64) -> f64 {
    let per_tree = crate::par::map(items, |item| {
        let d = decompose_detailed(&item.tree, model, tau).expect("model matches bundled vocabulary");
        let mut c = Confusion::default();
        for (edge, truth) in &item.labels.labels {
            let pred = d.labels.labels.get(edge).copied().unwrap_or(EdgeLabel::Merge);
            c.add(pred.is_cut(), truth.is_cut());
        }
        c
    });
    let total = per_tree.into_iter().fold(Confusion::default(), |a, b| a.merge(b));
    total.prf().2
}

pub fn train(dataset: &[LabeledTree], config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if !(config.lr > 0.0 && config.clip > 0.0) || config.batch_size == 0 {
        return Err(TrainError::Config("lr and clip must be positive, batch_size non-zero".into()));
    }
    if !(config.alpha > 0.0 && config.alpha < 1.0 && config.gamma >= 0.0) {
        return Err(TrainError::Config("alpha must be in (0, 1) and gamma >= 0".into()));
    }
    if !(config.tau > 0.0 && config.tau < 1.0) {
        return Err(TrainError::Config(format!("tau {} outside (0, 1)", config.tau)));
    }
    let vocab = RoleVocabulary::bundled();
    let prepared = dataset
        .iter()
        .enumerate()
        .map(|(i, item)| {
            PreparedTree::new(item, &vocab).map_err(|reason| TrainError::LabelMismatch {
                index: i,
                url: item.tree.url().to_string(),
                reason,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let (mut train_idx, val_idx) = split_indices(dataset.len(), config.val_fraction, config.seed);
    let mut model = DecompositionModel::init(config.seed).with_tau(config.tau).expect("tau checked");
    model.metadata.train_config = Some(config.clone());

    let val_items: Vec<&LabeledTree> = val_idx.iter().map(|&i| &dataset[i]).collect();
    let mut best: Option<(f64, f64, usize, Vec<f64>)> = None;
    let mut log = Vec::new();
    let mut adam = Adam::new(model.params.len(), config.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));

    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_edges = 0usize;
        let mut confusion = Confusion::default();
        for batch in train_idx.chunks(config.batch_size) {
            let edges: usize = batch.iter().map(|&i| prepared[i].edge_count()).sum();
            if edges == 0 {
                continue;
            }
            let scale = 1.0 / edges as f64;
            let results = crate::par::map(batch, |&i| {
                let mut g = vec![0.0; model.params.len()];
                tree_gradient(&model, &prepared[i], config.alpha, config.gamma, scale, config.tau, &mut g)
                    .map(|l| (g, l))
            });
            let mut grad = vec![0.0; model.params.len()];
            // fixed-order reduction
            for r in results {
                let (g, l) = r?;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                epoch_loss += l.loss;
                epoch_edges += l.edges;
                confusion = confusion.merge(l.confusion);
            }
            clip_global_norm(&mut grad, config.clip);
            adam.step(&mut model.params, &grad);
        }
        let val_f1 = if val_items.is_empty() {
            confusion.prf().2
        } else {
            validation_edge_f1(&model, &val_items, config.tau)
        };
        let train_f1 = confusion.prf().2;
        log::info!("epoch {epoch}: loss {:.5} train F1 {train_f1:.4} val F1 {val_f1:.4}", epoch_loss / epoch_edges.max(1) as f64);
        log.push(EpochLog {
            epoch,
            train_loss: epoch_loss / epoch_edges.max(1) as f64,
            train_edge_f1: train_f1,
            val_edge_f1: val_f1,
        });
        let gap = (train_f1 - val_f1).abs();
        let better = match &best {
            None => true,
            Some((bf1, bgap, _, _)) => val_f1 > *bf1 || (val_f1 == *bf1 && gap < *bgap),
        };
        if better {
            best = Some((val_f1, gap, epoch, model.params.clone()));
        }
        if config.target_val_f1.is_some_and(|t| val_f1 >= t) {
            break;
        }
    }

    model.metadata.epochs_run = log.len();
    if let Some((f1, _, epoch, params)) = best {
        model.params = params;
        model.metadata.best_epoch = Some(epoch);
        model.metadata.val_edge_f1 = Some(f1);
    }
    Ok(TrainOutcome {
        model,
        log,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

/// Convenience wrapper returning only the selected model.
pub fn train_model(dataset: &[LabeledTree], config: &TrainConfig) -> Result<DecompositionModel, TrainError> {
    train(dataset, config).map(|o| o.model)
}
