//! Region-level threshold selection.

use serde::{Deserialize, Serialize};

use super::partition::RegionPartition;
use super::traverse::{decompose, DecomposeError, EdgeScorer};
use crate::axtree::AXTree;
use crate::metrics::{region_prf, MatchCounts, MetricsError};

#[derive(Debug, thiserror::Error)]
pub enum TuneError {
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("no candidate thresholds")]
    NoCandidates,
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauRow {
    pub tau: f64,
    pub counts: MatchCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub rows: Vec<TauRow>,
    pub best_tau: f64,
}

/// Micro-averaged region P/R/F1 of `scorer` at each candidate threshold.
pub fn sweep<S: EdgeScorer + Sync>(
    scorer: &S,
    validation: &[(AXTree, RegionPartition)],
    taus: &[f64],
    iou_threshold: f64,
) -> Result<TuneReport, TuneError> {
    if validation.is_empty() {
        return Err(TuneError::EmptyValidation);
    }
    if taus.is_empty() {
        return Err(TuneError::NoCandidates);
    }
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        let per_tree = crate::par::map(validation, |(tree, truth)| -> Result<MatchCounts, TuneError> {
            let pred = decompose(tree, scorer, tau)?;
            Ok(region_prf(&pred, truth, iou_threshold)?.counts)
        });
        let mut counts = MatchCounts::default();
        for c in per_tree {
            counts = counts.merge(c?);
        }
        let (precision, recall, f1) = counts.prf();
        rows.push(TauRow {
            tau,
            counts,
            precision,
            recall,
            f1,
        });
    }
    let best_tau = rows
        .iter()
        .fold(None::<&TauRow>, |best, r| match best {
            Some(b) if b.f1 > r.f1 || (b.f1 == r.f1 && b.tau >= r.tau) => Some(b),
            _ => Some(r),
        })
        .map(|r| r.tau)
        .expect("non-empty");
    Ok(TuneReport { rows, best_tau })
}

/// The candidate with the highest region F1 at IoU 0.5; ties go to the larger tau.
pub fn tune_threshold<S: EdgeScorer + Sync>(
    scorer: &S,
    validation: &[(AXTree, RegionPartition)],
    taus: &[f64],
) -> Result<f64, TuneError> {
    sweep(scorer, validation, taus, 0.5).map(|r| r.best_tau)
}
