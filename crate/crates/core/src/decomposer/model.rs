use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::traverse::{DecomposeError, EdgeScorer, NodeCtx};
use super::train::TrainConfig;
use crate::features::{embed, RoleEmbedding, RoleVocabulary, FEATURE_DIM, ROLE_EMBED_DIM, VOCAB_SIZE};

pub const REPR_DIM: usize = 256;
pub const HIDDEN_DIM: usize = 256;
pub const ENCODER_IN: usize = FEATURE_DIM + REPR_DIM;
pub const CLASSIFIER_IN: usize = FEATURE_DIM + 2 * REPR_DIM;
pub const EMBEDDING_LEN: usize = VOCAB_SIZE * ROLE_EMBED_DIM;

/// Parameter layout: role embedding, then the region encoder, then the edge
/// classifier, all in one flat buffer.
pub fn region_encoder() -> Mlp {
    Mlp::at(EMBEDDING_LEN, [ENCODER_IN, HIDDEN_DIM, HIDDEN_DIM, HIDDEN_DIM, REPR_DIM])
}

pub fn edge_classifier() -> Mlp {
    Mlp::at(region_encoder().end(), [CLASSIFIER_IN, HIDDEN_DIM, HIDDEN_DIM, HIDDEN_DIM, 1])
}

pub fn param_count() -> usize {
    edge_classifier().end()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub version: String,
    pub seed: u64,
    pub init: String,
    pub feature_scaling: String,
    pub loss_reduction: String,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
    #[serde(default)]
    pub epochs_run: usize,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    #[serde(default)]
    pub val_edge_f1: Option<f64>,
}

impl ModelMetadata {
    fn fresh(seed: u64) -> Self {
        ModelMetadata {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            init: "he-uniform weights, zero biases, role embedding normal(0, 0.02)".into(),
            feature_scaling: "raw".into(),
            loss_reduction: "mean over edges per batch".into(),
            train_config: None,
            epochs_run: 0,
            best_epoch: None,
            val_edge_f1: None,
        }
    }
}

/// Role embedding plus region-encoder and edge-classifier MLPs.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionModel {
    pub params: Vec<f64>,
    pub tau: f64,
    pub vocab_hash: String,
    pub metadata: ModelMetadata,
    encoder: Mlp,
    classifier: Mlp,
    vocab: RoleVocabulary,
}

impl DecompositionModel {
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; param_count()];
        let normal = Normal::new(0.0, 0.02).expect("valid normal");
        for p in &mut params[..EMBEDDING_LEN] {
            *p = normal.sample(&mut rng);
        }
        for mlp in [region_encoder(), edge_classifier()] {
            for l in mlp.layers {
                let bound = (6.0 / l.in_dim as f64).sqrt();
                for p in &mut params[l.w_off..l.w_off + l.in_dim * l.out_dim] {
                    *p = rng.random_range(-bound..bound);
                }
            }
        }
        Self::from_params(params, 0.5, ModelMetadata::fresh(seed)).expect("fresh parameters have the right length")
    }

    pub fn from_params(params: Vec<f64>, tau: f64, metadata: ModelMetadata) -> Result<Self, DecomposeError> {
        if params.len() != param_count() {
            return Err(DecomposeError::ShapeMismatch(format!(
                "expected {} parameters, found {}",
                param_count(),
                params.len()
            )));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(DecomposeError::InvalidTau(tau));
        }
        let vocab = RoleVocabulary::bundled();
        Ok(DecompositionModel {
            params,
            tau,
            vocab_hash: vocab.hash(),
            metadata,
            encoder: region_encoder(),
            classifier: edge_classifier(),
            vocab,
        })
    }

    pub fn with_tau(mut self, tau: f64) -> Result<Self, DecomposeError> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(DecomposeError::InvalidTau(tau));
        }
        self.tau = tau;
        Ok(self)
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn classifier(&self) -> &Mlp {
        &self.classifier
    }

    pub fn embedding(&self) -> RoleEmbedding {
        RoleEmbedding {
            weights: self.params[..EMBEDDING_LEN].to_vec(),
        }
    }

    pub fn node_input(&self, ctx: &NodeCtx<'_>) -> [f64; FEATURE_DIM] {
        let mut x = [0.0; FEATURE_DIM];
        x[..ROLE_EMBED_DIM].copy_from_slice(
            &self.params[ctx.features.role_index * ROLE_EMBED_DIM..(ctx.features.role_index + 1) * ROLE_EMBED_DIM],
        );
        x[ROLE_EMBED_DIM..].copy_from_slice(&ctx.features.numeric);
        x
    }

    pub fn embed(&self, features: &crate::features::NodeFeatures) -> [f64; FEATURE_DIM] {
        embed(features, &self.embedding())
    }
}

impl EdgeScorer for DecompositionModel {
    fn vocabulary(&self) -> &RoleVocabulary {
        &self.vocab
    }

    fn check(&self, vocab: &RoleVocabulary) -> Result<(), DecomposeError> {
        if vocab.len() != VOCAB_SIZE || vocab.hash() != self.vocab_hash {
            return Err(DecomposeError::ShapeMismatch(
                "role vocabulary does not match the model".into(),
            ));
        }
        Ok(())
    }

    fn represent(&self, node: &NodeCtx<'_>, merged_mean: Option<&[f64]>) -> Vec<f64> {
        let mut input = Vec::with_capacity(ENCODER_IN);
        input.extend_from_slice(&self.node_input(node));
        match merged_mean {
            Some(m) => input.extend_from_slice(m),
            None => input.resize(ENCODER_IN, 0.0),
        }
        self.encoder.forward(&self.params, &input)
    }

    fn edge_logit(&self, parent: &NodeCtx<'_>, _child: &NodeCtx<'_>, child_repr: &[f64], sibling_mean: &[f64]) -> f64 {
        let mut input = Vec::with_capacity(CLASSIFIER_IN);
        input.extend_from_slice(&self.node_input(parent));
        input.extend_from_slice(child_repr);
        input.extend_from_slice(sibling_mean);
        self.classifier.forward(&self.params, &input)[0]
    }
}
