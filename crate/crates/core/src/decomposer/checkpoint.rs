//! Checkpoint files.
//!
//! Learned models use a binary layout:
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"AXRGCKPT"
//! 8       4     format version, u32 little-endian (currently 1)
//! 12      8     header length H, u64 little-endian
//! 20      H     UTF-8 JSON header (segments, shapes, tau, vocabulary hash, metadata)
//! 20+H    8*N   N parameters as f64 little-endian, segments in header order
//! ```
//!
//! A role-rule scorer is stored as a small TOML file instead:
//!
//! ```toml
//! kind = "role-rule"
//! cut_roles = ["navigation", "list", "form"]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{edge_classifier, param_count, region_encoder, DecompositionModel, ModelMetadata, EMBEDDING_LEN};
use super::traverse::{DecomposeError, EdgeScorer, NodeCtx, RoleRuleScorer};
use crate::features::{RoleVocabulary, ROLE_EMBED_DIM, VOCAB_SIZE};

pub const MAGIC: &[u8; 8] = b"AXRGCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error(transparent)]
    Shape(#[from] DecomposeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    param_count: usize,
    segments: Vec<Segment>,
    tau: f64,
    vocab_size: usize,
    vocab_hash: String,
    metadata: ModelMetadata,
}

fn segments() -> Vec<Segment> {
    let mut out = vec![Segment {
        name: "role_embedding".into(),
        shape: vec![VOCAB_SIZE, ROLE_EMBED_DIM],
    }];
    for (prefix, mlp) in [("region_encoder", region_encoder()), ("edge_classifier", edge_classifier())] {
        for (i, l) in mlp.layers.iter().enumerate() {
            out.push(Segment {
                name: format!("{prefix}.{i}.weight"),
                shape: vec![l.in_dim, l.out_dim],
            });
            out.push(Segment {
                name: format!("{prefix}.{i}.bias"),
                shape: vec![l.out_dim],
            });
        }
    }
    out
}

pub fn to_bytes(model: &DecompositionModel) -> Vec<u8> {
    let header = Header {
        param_count: model.params.len(),
        segments: segments(),
        tau: model.tau,
        vocab_size: VOCAB_SIZE,
        vocab_hash: model.vocab_hash.clone(),
        metadata: model.metadata.clone(),
    };
    let json = serde_json::to_vec_pretty(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + 8 * model.params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<DecompositionModel, CheckpointError> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = 20usize
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| CheckpointError::Format("truncated header".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[20..body]).map_err(|e| CheckpointError::Format(e.to_string()))?;
    if header.segments != segments() || header.param_count != param_count() || header.vocab_size != VOCAB_SIZE {
        return Err(DecomposeError::ShapeMismatch("checkpoint layout differs from this build".into()).into());
    }
    let data = &bytes[body..];
    if data.len() != 8 * header.param_count {
        return Err(CheckpointError::Format(format!(
            "expected {} parameter bytes, found {}",
            8 * header.param_count,
            data.len()
        )));
    }
    let params = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let model = DecompositionModel::from_params(params, header.tau, header.metadata)?;
    if model.vocab_hash != header.vocab_hash {
        return Err(DecomposeError::ShapeMismatch("checkpoint was trained with a different role vocabulary".into()).into());
    }
    debug_assert_eq!(EMBEDDING_LEN, VOCAB_SIZE * ROLE_EMBED_DIM);
    Ok(model)
}

pub fn save(model: &DecompositionModel, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, to_bytes(model))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RuleFile {
    kind: String,
    cut_roles: Vec<String>,
    #[serde(default)]
    tau: Option<f64>,
}

/// Either a learned model or a role-rule scorer, as loaded from disk.
#[derive(Debug, Clone)]
pub enum Scorer {
    Learned(Box<DecompositionModel>),
    Rule { rule: RoleRuleScorer, tau: f64 },
}

impl Scorer {
    pub fn tau(&self) -> f64 {
        match self {
            Scorer::Learned(m) => m.tau,
            Scorer::Rule { tau, .. } => *tau,
        }
    }
}

impl EdgeScorer for Scorer {
    fn vocabulary(&self) -> &RoleVocabulary {
        match self {
            Scorer::Learned(m) => m.vocabulary(),
            Scorer::Rule { rule, .. } => rule.vocabulary(),
        }
    }
    fn check(&self, vocab: &RoleVocabulary) -> Result<(), DecomposeError> {
        match self {
            Scorer::Learned(m) => m.check(vocab),
            Scorer::Rule { rule, .. } => rule.check(vocab),
        }
    }
    fn represent(&self, node: &NodeCtx<'_>, merged_mean: Option<&[f64]>) -> Vec<f64> {
        match self {
            Scorer::Learned(m) => m.represent(node, merged_mean),
            Scorer::Rule { rule, .. } => rule.represent(node, merged_mean),
        }
    }
    fn edge_logit(&self, parent: &NodeCtx<'_>, child: &NodeCtx<'_>, child_repr: &[f64], sibling_mean: &[f64]) -> f64 {
        match self {
            Scorer::Learned(m) => m.edge_logit(parent, child, child_repr, sibling_mean),
            Scorer::Rule { rule, .. } => rule.edge_logit(parent, child, child_repr, sibling_mean),
        }
    }
}

pub fn rule_to_toml(rule: &RoleRuleScorer, tau: f64) -> String {
    toml::to_string(&RuleFile {
        kind: "role-rule".into(),
        cut_roles: rule.cut_roles.clone(),
        tau: Some(tau),
    })
    .expect("rule serializes")
}

pub fn load(path: &Path) -> Result<Scorer, CheckpointError> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        return Ok(Scorer::Learned(Box::new(from_bytes(&bytes)?)));
    }
    let text = std::str::from_utf8(&bytes).map_err(|_| CheckpointError::Format("neither binary nor text".into()))?;
    let rule: RuleFile = toml::from_str(text).map_err(|e| CheckpointError::Format(e.to_string()))?;
    if rule.kind != "role-rule" {
        return Err(CheckpointError::Format(format!("unknown checkpoint kind `{}`", rule.kind)));
    }
    let tau = rule.tau.unwrap_or(0.5);
    if !(tau > 0.0 && tau < 1.0) {
        return Err(DecomposeError::InvalidTau(tau).into());
    }
    Ok(Scorer::Rule {
        rule: RoleRuleScorer::new(&rule.cut_roles),
        tau,
    })
}
