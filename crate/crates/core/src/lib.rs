//! Functional-region decomposition of accessibility trees and a compact
//! per-page observation digest built on top of it.

pub mod abstraction;
pub mod axtree;
pub mod decomposer;
pub mod digest;
pub mod features;
pub mod metrics;
pub mod par;

pub use axtree::{parse_axtree, preprocess, serialize_axtree, AXNode, AXTree, ParseError};
pub use decomposer::{decompose, DecompositionModel, RegionPartition};
