//! Cross-run comparison: dissimilarities, the minimum distance index,
//! constrained clustering, MDS projections, lag histograms and component
//! matching.

pub mod assignment;
pub mod cluster;
pub mod compare;
pub mod dissim;
pub mod doi;
pub mod histogram;
pub mod md_index;
pub mod mds;

use serde::{Deserialize, Serialize};

use crate::solver::RunId;

/// A component of a run's ensemble.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComponentRef {
    pub run_id: RunId,
    pub index: usize,
}

impl ComponentRef {
    pub fn new(run_id: impl Into<RunId>, index: usize) -> Self {
        ComponentRef { run_id: run_id.into(), index }
    }
}

impl From<String> for RunId {
    fn from(s: String) -> Self {
        RunId(s)
    }
}
