//! Bottom-up region decomposition: partitions, the traversal, the model,
//! and its teacher-forced trainer.

pub mod checkpoint;
pub mod loss;
pub mod mlp;
pub mod model;
pub mod partition;
pub mod synthetic;
pub mod train;
pub mod traverse;
pub mod tune;

pub use checkpoint::{CheckpointError, Scorer};
pub use loss::{focal_loss, LossError};
pub use model::{param_count, DecompositionModel, ModelMetadata};
pub use partition::{
    partition_from_labels, partition_from_roots, EdgeLabel, EdgeLabelSet, PartitionError, Region, RegionPartition,
};
pub use train::{train, train_model, LabeledTree, TrainConfig, TrainError, TrainOutcome};
pub use traverse::{
    decompose, decompose_detailed, decompose_many, sigmoid, DecomposeError, Decomposition, EdgeScorer, NodeCtx,
    RoleRuleScorer,
};
pub use tune::{sweep, tune_threshold, TauRow, TuneError, TuneReport};
