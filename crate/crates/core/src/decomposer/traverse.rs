use crate::axtree::{AXNode, AXTree, TreeIndex};
use crate::features::{features_by_position, NodeFeatures, RoleVocabulary};

use super::partition::{EdgeLabel, EdgeLabelSet, RegionPartition};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecomposeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("threshold {0} is outside (0, 1)")]
    InvalidTau(f64),
}

/// What a scorer sees of a node during the traversal.
pub struct NodeCtx<'a> {
    pub pos: usize,
    pub node: &'a AXNode,
    pub features: &'a NodeFeatures,
}

/// Boundary model driven by the bottom-up traversal.
///
/// `represent` is called exactly once per node, after every edge to its
/// children has been scored and decided. `edge_logit` returns a raw logit;
/// an edge is cut when its sigmoid reaches the threshold.
pub trait EdgeScorer {
    fn vocabulary(&self) -> &RoleVocabulary;

    fn check(&self, _vocab: &RoleVocabulary) -> Result<(), DecomposeError> {
        Ok(())
    }

    /// `merged_mean` is `None` for leaves and for nodes whose children were all cut.
    fn represent(&self, node: &NodeCtx<'_>, merged_mean: Option<&[f64]>) -> Vec<f64>;

    fn edge_logit(&self, parent: &NodeCtx<'_>, child: &NodeCtx<'_>, child_repr: &[f64], sibling_mean: &[f64]) -> f64;
}

impl<S: EdgeScorer + ?Sized> EdgeScorer for &S {
    fn vocabulary(&self) -> &RoleVocabulary {
        (**self).vocabulary()
    }
    fn check(&self, vocab: &RoleVocabulary) -> Result<(), DecomposeError> {
        (**self).check(vocab)
    }
    fn represent(&self, node: &NodeCtx<'_>, merged_mean: Option<&[f64]>) -> Vec<f64> {
        (**self).represent(node, merged_mean)
    }
    fn edge_logit(&self, parent: &NodeCtx<'_>, child: &NodeCtx<'_>, child_repr: &[f64], sibling_mean: &[f64]) -> f64 {
        (**self).edge_logit(parent, child, child_repr, sibling_mean)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn mean_of<'a>(vectors: impl Iterator<Item = &'a [f64]>) -> Option<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for v in vectors {
        match &mut acc {
            None => acc = Some(v.to_vec()),
            Some(a) => a.iter_mut().zip(v).for_each(|(x, y)| *x += y),
        }
        n += 1;
    }
    acc.map(|mut a| {
        let inv = 1.0 / n as f64;
        a.iter_mut().for_each(|x| *x *= inv);
        a
    })
}

/// A decomposition together with the per-edge decisions that produced it.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub partition: RegionPartition,
    pub labels: EdgeLabelSet,
    /// (parent id, child id, cut probability) in traversal order.
    pub probabilities: Vec<(String, String, f64)>,
}

/// Single bottom-up pass: score every child edge against the mean of all
/// sibling representations, cut where the probability reaches `tau`, then
/// encode the node from the mean of its merged children.
pub fn decompose_detailed<S: EdgeScorer>(tree: &AXTree, scorer: &S, tau: f64) -> Result<Decomposition, DecomposeError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(DecomposeError::InvalidTau(tau));
    }
    let vocab = scorer.vocabulary();
    scorer.check(vocab)?;
    let index = tree.index();
    let features = features_by_position(&index, vocab);
    let ctx = |pos: usize| NodeCtx {
        pos,
        node: index.node(pos),
        features: &features[pos],
    };

    let n = index.len();
    let mut reprs: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut regions: Vec<Vec<usize>> = Vec::new();
    let mut labels = EdgeLabelSet::new();
    let mut probabilities = Vec::new();

    // reverse pre-order visits children before parents
    for pos in (0..n).rev() {
        let node_ctx = ctx(pos);
        let mut region = vec![pos];
        let kids = index.children(pos);
        let repr = if kids.is_empty() {
            scorer.represent(&node_ctx, None)
        } else {
            let sibling_mean = mean_of(kids.iter().map(|&c| reprs[c].as_slice())).expect("non-empty children");
            let mut merged = Vec::with_capacity(kids.len());
            for &c in kids {
                let logit = scorer.edge_logit(&node_ctx, &ctx(c), &reprs[c], &sibling_mean);
                let prob = sigmoid(logit);
                let cut = prob >= tau;
                labels.insert(
                    &index.node(pos).id,
                    &index.node(c).id,
                    if cut { EdgeLabel::Cut } else { EdgeLabel::Merge },
                );
                probabilities.push((index.node(pos).id.clone(), index.node(c).id.clone(), prob));
                if cut {
                    regions.push(std::mem::take(&mut members[c]));
                } else {
                    merged.push(c);
                    region.append(&mut members[c]);
                }
            }
            let merged_mean = mean_of(merged.iter().map(|&c| reprs[c].as_slice()));
            scorer.represent(&node_ctx, merged_mean.as_deref())
        };
        reprs[pos] = repr;
        members[pos] = region;
        // children representations are no longer needed
        for &c in kids {
            reprs[c] = Vec::new();
        }
    }
    regions.push(std::mem::take(&mut members[0]));

    Ok(Decomposition {
        partition: RegionPartition::from_position_groups(&index, tree.url(), regions),
        labels,
        probabilities,
    })
}

pub fn decompose<S: EdgeScorer>(tree: &AXTree, scorer: &S, tau: f64) -> Result<RegionPartition, DecomposeError> {
    decompose_detailed(tree, scorer, tau).map(|d| d.partition)
}

/// Decomposes many trees, in parallel when the `parallel` feature is on.
pub fn decompose_many<S: EdgeScorer + Sync>(
    trees: &[AXTree],
    scorer: &S,
    tau: f64,
) -> Result<Vec<RegionPartition>, DecomposeError> {
    crate::par::map(trees, |t| decompose(t, scorer, tau)).into_iter().collect()
}

/// Scorer that cuts an edge whenever the child's role is in a fixed set.
///
/// Logits are ±`margin`, so with the default margin any threshold in (0, 1)
/// short of the extremes gives the same decisions.
#[derive(Debug, Clone)]
pub struct RoleRuleScorer {
    pub cut_roles: Vec<String>,
    pub margin: f64,
    vocab: RoleVocabulary,
}

impl RoleRuleScorer {
    pub fn new<S: AsRef<str>>(cut_roles: &[S]) -> Self {
        RoleRuleScorer {
            cut_roles: cut_roles.iter().map(|s| s.as_ref().to_string()).collect(),
            margin: 20.0,
            vocab: RoleVocabulary::bundled(),
        }
    }

    pub fn cuts(&self, role: &str) -> bool {
        self.cut_roles.iter().any(|r| r == role)
    }

    /// Labels induced directly by the rule.
    pub fn labels(&self, index: &TreeIndex<'_>) -> EdgeLabelSet {
        EdgeLabelSet::from_fn(index, |_, c| {
            if self.cuts(&index.node(c).role) {
                EdgeLabel::Cut
            } else {
                EdgeLabel::Merge
            }
        })
    }
}

impl EdgeScorer for RoleRuleScorer {
    fn vocabulary(&self) -> &RoleVocabulary {
        &self.vocab
    }

    fn represent(&self, _node: &NodeCtx<'_>, _merged_mean: Option<&[f64]>) -> Vec<f64> {
        Vec::new()
    }

    fn edge_logit(&self, _parent: &NodeCtx<'_>, child: &NodeCtx<'_>, _child_repr: &[f64], _sibling_mean: &[f64]) -> f64 {
        if self.cuts(&child.node.role) {
            self.margin
        } else {
            -self.margin
        }
    }
}
